//! Command-line pipeline: embed, ensemble, filter, consensus, evaluate, plot.
//!
//! Configuration comes from an optional TOML file plus flags (flags win).
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod config;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use config::{DeltaRule, EpsilonRule, RunConfig};
use rashomon_dr::consensus::{
    calibration_stats, calibration_test_split, certify_edge_pair, consensus_embedding,
    select_trustworthy_mean, select_trustworthy_rank, write_certificates, write_refined_tsv,
    SelectionMethod, TrustCertificate,
};
use rashomon_dr::data::{load_dataset, mask_concepts, Dataset, DatasetFormat};
use rashomon_dr::embedding::{read_embedding, write_embedding, Embedding};
use rashomon_dr::engine::write_loss_history;
use rashomon_dr::graph::{build_knn_graph, read_graph_tsv, write_graph_tsv, NeighborGraph};
use rashomon_dr::metrics::{evaluate, write_batch_csv, write_report_json, EvalContext, SvmSettings};
use rashomon_dr::pairs::sample_pairs;
use rashomon_dr::pca::{pca_project, PcaProjection};
use rashomon_dr::optimize_embedding;
use rashomon_dr::rashomon::{
    calibrate_epsilon, filter_by_loss, knee_delta, pairwise_soft_jaccard, read_manifest,
    reference_dr_loss, relative_delta, write_distance_matrix, write_manifest, EnsembleManifest,
    EnsembleSet, ManifestEntry, ManifestStatus, RashomonSet, REFERENCE_PAIR_SEED,
};

#[derive(Parser)]
#[command(
    name = "rashomon-dr",
    version,
    about = "Rashomon sets for 2-D embeddings: alignment-steered dimension reduction and trustworthy-neighbor consensus"
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dataset file (overrides [dataset].path).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Dataset format: csv or raw-f32.
    #[arg(long, global = true)]
    format: Option<String>,

    /// Column index holding class labels.
    #[arg(long, global = true)]
    label_column: Option<usize>,

    /// Column index holding concept values.
    #[arg(long, global = true)]
    concept_column: Option<usize>,

    /// Mode: plain, pca-align or concept-align.
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Hide a seeded fraction of concept values before processing.
    #[arg(long, global = true)]
    mask_concepts: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One optimization run; writes the embedding and its loss history.
    Embed {
        /// Alignment weight for the configured mode.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One run per (lambda, seed) grid cell; writes members and a manifest.
    Ensemble,
    /// Applies the loss criterion to a manifest; writes the Rashomon set.
    Filter {
        /// Manifest path (default: OUT/manifest.json).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write the pairwise soft-Jaccard distance matrix.
        #[arg(long)]
        distances: bool,
    },
    /// Calibration/test split, trustworthy-neighbor selection, consensus
    /// embedding and paired before/after metric reports.
    Consensus {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Selection method: mean-score or average-rank.
        #[arg(long)]
        method: Option<String>,
        /// Certify a triplet "i,j_star,j_prime" (repeatable).
        #[arg(long)]
        certify: Vec<String>,
    },
    /// Metric report for one embedding file or for every manifest member.
    Evaluate {
        #[arg(long)]
        embedding: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Reference embedding for the soft-Jaccard column.
        #[arg(long)]
        reference_embedding: Option<PathBuf>,
    },
    /// SVG scatter of a 2-D embedding, colored by dataset labels when
    /// available.
    Plot {
        #[arg(long)]
        embedding: PathBuf,
        /// Output file (default: OUT/plot.svg).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl From<rashomon_dr::Error> for CliError {
    fn from(e: rashomon_dr::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot configure {jobs} worker threads: {e}")))?;
    }

    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(p) = cli.dataset {
        cfg.dataset.path = Some(p);
    }
    if let Some(f) = cli.format {
        cfg.dataset.format = f;
    }
    if let Some(c) = cli.label_column {
        cfg.dataset.label_column = Some(c);
    }
    if let Some(c) = cli.concept_column {
        cfg.dataset.concept_column = Some(c);
    }
    if let Some(m) = cli.mode {
        cfg.mode.kind = m;
    }
    if let Some(o) = cli.out {
        cfg.output.dir = o;
    }
    if let Some(r) = cli.mask_concepts {
        cfg.dataset.mask_concepts = Some(r);
    }

    match cli.command {
        Command::Plot { embedding, output } => cmd_plot(&cfg, &embedding, output.as_deref()),
        command => {
            cfg.validate()?;
            fs::create_dir_all(&cfg.output.dir)
                .map_err(|e| CliError::runtime(format!("cannot create output dir: {e}")))?;
            match command {
                Command::Embed { lambda, seed } => cmd_embed(&cfg, lambda, seed),
                Command::Ensemble => cmd_ensemble(&cfg),
                Command::Filter {
                    manifest,
                    distances,
                } => cmd_filter(&cfg, manifest.as_deref(), distances).map(|_| ()),
                Command::Consensus {
                    manifest,
                    method,
                    certify,
                } => cmd_consensus(&cfg, manifest.as_deref(), method.as_deref(), &certify),
                Command::Evaluate {
                    embedding,
                    manifest,
                    reference_embedding,
                } => cmd_evaluate(
                    &cfg,
                    embedding.as_deref(),
                    manifest.as_deref(),
                    reference_embedding.as_deref(),
                ),
                Command::Plot { .. } => unreachable!("handled above"),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

fn load_configured_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg
        .dataset
        .path
        .as_ref()
        .ok_or_else(|| CliError::usage("no dataset configured"))?;
    if !path.exists() {
        return Err(CliError::usage(format!("dataset file {path:?} does not exist")));
    }
    let format: DatasetFormat = cfg.dataset.format.parse()?;
    let mut d = load_dataset(
        path,
        format,
        cfg.dataset.label_column,
        cfg.dataset.concept_column,
    )?;
    if let Some(ratio) = cfg.dataset.mask_concepts {
        d = mask_concepts(&d, ratio, cfg.dataset.mask_seed)?;
    }
    Ok(d)
}

/// Candidate/evaluation graph: loaded from the persisted TSV when its
/// dimensions match, otherwise rebuilt (and persisted by `ensemble`).
fn load_or_build_graph(cfg: &RunConfig, d: &Dataset) -> Result<NeighborGraph, CliError> {
    let path = cfg.output.dir.join("graph.tsv");
    if path.exists() {
        if let Ok(g) = read_graph_tsv(&path, d.id()) {
            if g.n() == d.n() && g.m() == cfg.pairs.m {
                return Ok(g);
            }
        }
    }
    Ok(build_knn_graph(d, cfg.pairs.m)?)
}

/// (lambda_pca, lambda_axis) for a swept weight under the configured mode.
fn lambdas_for_mode(cfg: &RunConfig, lambda: f64) -> (f64, f64) {
    match cfg.mode.kind.as_str() {
        "pca-align" => (lambda, 0.0),
        "concept-align" => (0.0, lambda),
        _ => (0.0, 0.0),
    }
}

fn reference_for_mode(
    cfg: &RunConfig,
    d: &Dataset,
) -> Result<Option<PcaProjection>, CliError> {
    if cfg.mode.kind == "pca-align" {
        Ok(Some(pca_project(d, 2)?))
    } else {
        Ok(None)
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    config_hash: String,
}

/// Writes the self-description sidecar `<file>.meta.json`.
fn write_meta(path: &Path, cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    let meta = Meta {
        command,
        config_hash: cfg.hash(),
    };
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".meta.json");
    fs::write(
        PathBuf::from(sidecar),
        serde_json::to_string_pretty(&meta).expect("serializable"),
    )
    .map_err(|e| CliError::runtime(format!("cannot write sidecar for {path:?}: {e}")))
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

fn cmd_embed(cfg: &RunConfig, lambda: Option<f64>, seed: Option<u64>) -> Result<(), CliError> {
    let d = load_configured_dataset(cfg)?;
    let g = load_or_build_graph(cfg, &d)?;
    let seed = seed.unwrap_or_else(|| cfg.grid.seeds.first().copied().unwrap_or(1));
    let lambda = lambda.unwrap_or(0.0);
    let (lambda_pca, lambda_axis) = lambdas_for_mode(cfg, lambda);
    let loss_cfg = cfg.optimizer.loss_config(lambda_pca, lambda_axis);
    let reference = reference_for_mode(cfg, &d)?;

    let pairs = sample_pairs(&g, &d, cfg.pairs.k, cfg.pairs.mn_ratio, cfg.pairs.fp_ratio, seed)?;
    let (embedding, history) =
        optimize_embedding(&d, &pairs, reference.as_ref(), &loss_cfg, seed)?;

    let emb_path = cfg.output.dir.join("embedding.csv");
    write_embedding(&emb_path, &embedding)?;
    write_meta(&emb_path, cfg, "embed")?;
    let hist_path = cfg.output.dir.join("loss_history.csv");
    write_loss_history(&hist_path, &history)?;
    write_meta(&hist_path, cfg, "embed")?;
    println!(
        "embed: wrote {} ({} points, final loss {:.6})",
        emb_path.display(),
        embedding.n(),
        embedding.provenance().final_loss
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ensemble
// ---------------------------------------------------------------------------

fn cmd_ensemble(cfg: &RunConfig) -> Result<(), CliError> {
    let d = load_configured_dataset(cfg)?;
    let g = build_knn_graph(&d, cfg.pairs.m)?;
    let graph_path = cfg.output.dir.join("graph.tsv");
    write_graph_tsv(&graph_path, &g)?;
    write_meta(&graph_path, cfg, "ensemble")?;

    let reference = reference_for_mode(cfg, &d)?;
    let shared_pairs = sample_pairs(
        &g,
        &d,
        cfg.pairs.k,
        cfg.pairs.mn_ratio,
        cfg.pairs.fp_ratio,
        REFERENCE_PAIR_SEED,
    )?;

    let lambdas = if cfg.mode.kind == "plain" {
        vec![0.0]
    } else {
        cfg.grid.lambdas.clone()
    };
    let cells: Vec<(usize, f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| cfg.grid.seeds.iter().map(move |&s| (l, s)))
        .enumerate()
        .map(|(idx, (l, s))| (idx, l, s))
        .collect();

    let manifest_path = cfg.output.dir.join("manifest.json");
    let state = Mutex::new(EnsembleManifest {
        dataset_id: d.id().to_owned(),
        status: ManifestStatus::Partial,
        members: Vec::new(),
        failures: Vec::new(),
    });
    // Seed the partial manifest so an interruption at any point leaves a
    // parseable file behind.
    write_manifest(&manifest_path, &state.lock().unwrap())?;

    cells
        .par_iter()
        .map(|&(idx, lambda, seed)| -> Result<(), CliError> {
            let (lambda_pca, lambda_axis) = lambdas_for_mode(cfg, lambda);
            let loss_cfg = cfg.optimizer.loss_config(lambda_pca, lambda_axis);
            let result = sample_pairs(
                &g,
                &d,
                cfg.pairs.k,
                cfg.pairs.mn_ratio,
                cfg.pairs.fp_ratio,
                seed,
            )
            .and_then(|pairs| optimize_embedding(&d, &pairs, reference.as_ref(), &loss_cfg, seed));

            let mut manifest = state.lock().unwrap();
            match result {
                Ok((embedding, _)) => {
                    let file = format!("member_{idx:03}.csv");
                    write_embedding(&cfg.output.dir.join(&file), &embedding)?;
                    manifest.members.push(ManifestEntry {
                        id: idx,
                        lambda_pca,
                        lambda_axis,
                        seed,
                        dr_loss: reference_dr_loss(&embedding, &shared_pairs),
                        file,
                    });
                }
                Err(e) => {
                    manifest
                        .failures
                        .push(rashomon_dr::rashomon::EnsembleFailure {
                            lambda,
                            seed,
                            message: e.to_string(),
                        });
                }
            }
            write_manifest(&manifest_path, &manifest)?;
            Ok(())
        })
        .collect::<Result<Vec<()>, CliError>>()?;

    let mut manifest = state.into_inner().unwrap();
    if manifest.members.is_empty() {
        return Err(CliError::runtime("every ensemble member failed"));
    }
    manifest
        .members
        .sort_by(|a, b| a.dr_loss.partial_cmp(&b.dr_loss).unwrap().then(a.id.cmp(&b.id)));
    manifest.status = ManifestStatus::Complete;
    write_manifest(&manifest_path, &manifest)?;
    write_meta(&manifest_path, cfg, "ensemble")?;
    println!(
        "ensemble: {} members ({} failures) -> {}",
        manifest.members.len(),
        manifest.failures.len(),
        manifest_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

/// Loaded manifest members in manifest order.
struct LoadedEnsemble {
    manifest: EnsembleManifest,
    ensemble: EnsembleSet,
}

fn load_ensemble(cfg: &RunConfig, manifest_path: Option<&Path>) -> Result<LoadedEnsemble, CliError> {
    let path = manifest_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.join("manifest.json"));
    if !path.exists() {
        return Err(CliError::usage(format!("manifest {path:?} does not exist")));
    }
    let manifest = read_manifest(&path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut members = Vec::with_capacity(manifest.members.len());
    for entry in &manifest.members {
        members.push(read_embedding(&base.join(&entry.file))?);
    }
    let losses = manifest.members.iter().map(|m| m.dr_loss).collect();
    let seeds = manifest.members.iter().map(|m| m.seed).collect();
    let ensemble = EnsembleSet {
        members,
        grid: Vec::new(),
        seeds,
        losses,
        failures: manifest.failures.clone(),
    };
    Ok(LoadedEnsemble { manifest, ensemble })
}

#[derive(Serialize)]
struct RashomonRecord {
    dataset_id: String,
    /// Manifest member ids, ascending by loss.
    member_ids: Vec<usize>,
    reference_loss: f64,
    threshold: f64,
    delta: f64,
    epsilon: f64,
}

fn cmd_filter(
    cfg: &RunConfig,
    manifest_path: Option<&Path>,
    distances: bool,
) -> Result<RashomonSet, CliError> {
    let loaded = load_ensemble(cfg, manifest_path)?;
    let delta = match cfg.parse_delta()? {
        DeltaRule::Relative(frac) => relative_delta(&loaded.ensemble, frac)?,
        DeltaRule::Absolute(v) => v,
        DeltaRule::Knee => knee_delta(&loaded.ensemble)?,
    };
    let rset = filter_by_loss(&loaded.ensemble, delta)?;

    let d = load_configured_dataset(cfg)?;
    if d.id() != loaded.manifest.dataset_id {
        return Err(CliError::runtime(format!(
            "manifest was built from dataset {}, current dataset is {}",
            loaded.manifest.dataset_id,
            d.id()
        )));
    }
    let g = load_or_build_graph(cfg, &d)?;
    let selected: Vec<&Embedding> = rset
        .member_ids
        .iter()
        .map(|&i| &loaded.ensemble.members[i])
        .collect();
    let epsilon = match cfg.parse_epsilon()? {
        EpsilonRule::Auto => calibrate_epsilon(&selected, &g, cfg.rashomon.gamma)?,
        EpsilonRule::Fixed(v) => v,
    };

    let record = RashomonRecord {
        dataset_id: loaded.manifest.dataset_id.clone(),
        member_ids: rset
            .member_ids
            .iter()
            .map(|&i| loaded.manifest.members[i].id)
            .collect(),
        reference_loss: rset.reference_loss,
        threshold: rset.threshold,
        delta,
        epsilon,
    };
    let out = cfg.output.dir.join("rashomon.json");
    fs::write(&out, serde_json::to_string_pretty(&record).expect("serializable"))
        .map_err(|e| CliError::runtime(format!("cannot write {out:?}: {e}")))?;
    write_meta(&out, cfg, "filter")?;

    if distances {
        let all: Vec<&Embedding> = loaded.ensemble.members.iter().collect();
        let matrix = pairwise_soft_jaccard(&all, &g, cfg.rashomon.gamma)?;
        let dist_path = cfg.output.dir.join("distances.csv");
        write_distance_matrix(&dist_path, &matrix)?;
        write_meta(&dist_path, cfg, "filter")?;
    }

    println!(
        "filter: {} of {} members within delta {:.6} (epsilon {:.6}) -> {}",
        rset.member_ids.len(),
        loaded.ensemble.members.len(),
        delta,
        epsilon,
        out.display()
    );
    Ok(rset)
}

// ---------------------------------------------------------------------------
// consensus
// ---------------------------------------------------------------------------

fn cmd_consensus(
    cfg: &RunConfig,
    manifest_path: Option<&Path>,
    method: Option<&str>,
    certify: &[String],
) -> Result<(), CliError> {
    let loaded = load_ensemble(cfg, manifest_path)?;
    let d = load_configured_dataset(cfg)?;
    if d.id() != loaded.manifest.dataset_id {
        return Err(CliError::runtime(format!(
            "manifest was built from dataset {}, current dataset is {}",
            loaded.manifest.dataset_id,
            d.id()
        )));
    }
    let g = load_or_build_graph(cfg, &d)?;

    let delta = match cfg.parse_delta()? {
        DeltaRule::Relative(frac) => relative_delta(&loaded.ensemble, frac)?,
        DeltaRule::Absolute(v) => v,
        DeltaRule::Knee => knee_delta(&loaded.ensemble)?,
    };
    let rset = filter_by_loss(&loaded.ensemble, delta)?;
    if rset.member_ids.len() < 5 {
        return Err(CliError::runtime(format!(
            "Rashomon set holds {} members, need at least 5",
            rset.member_ids.len()
        )));
    }
    let (calib, test) = calibration_test_split(&loaded.ensemble, &rset)?;
    let stats = calibration_stats(&calib, &g)?;

    let method = method.unwrap_or(cfg.consensus.method.as_str());
    let selection = match method {
        "mean-score" => SelectionMethod::MeanScore,
        "average-rank" => SelectionMethod::AverageRank,
        other => {
            return Err(CliError::usage(format!(
                "unknown selection method {other:?} (expected mean-score or average-rank)"
            )))
        }
    };
    let refined = match selection {
        SelectionMethod::MeanScore => {
            select_trustworthy_mean(&test, &stats, &g, cfg.consensus.k, cfg.consensus.lambda_pen)?
        }
        SelectionMethod::AverageRank => {
            select_trustworthy_rank(&test, &stats, &g, cfg.consensus.k, cfg.consensus.lambda_pen)?
        }
    };
    let refined_path = cfg.output.dir.join("refined.tsv");
    write_refined_tsv(&refined_path, &refined, &g)?;
    write_meta(&refined_path, cfg, "consensus")?;

    let run_seed = cfg.grid.seeds.first().copied().unwrap_or(1);
    let loss_cfg = cfg.optimizer.loss_config(0.0, 0.0);
    let (consensus, _) = consensus_embedding(
        &d,
        &refined,
        &g,
        &loss_cfg,
        cfg.pairs.mn_ratio,
        cfg.pairs.fp_ratio,
        run_seed,
    )?;
    let consensus_path = cfg.output.dir.join("consensus.csv");
    write_embedding(&consensus_path, &consensus)?;
    write_meta(&consensus_path, cfg, "consensus")?;

    // Paired reports: the best original member vs the consensus embedding.
    let before = &loaded.ensemble.members[rset.member_ids[0]];
    let labels = d.complete_labels();
    let reference = if labels
        .as_ref()
        .is_some_and(|l| l.iter().copied().max().map_or(0, |m| m + 1) >= 3)
        && d.p() >= 2
    {
        Some(pca_project(&d, 2)?)
    } else {
        None
    };
    let shared_pairs = sample_pairs(
        &g,
        &d,
        cfg.pairs.k,
        cfg.pairs.mn_ratio,
        cfg.pairs.fp_ratio,
        REFERENCE_PAIR_SEED,
    )?;
    let ctx = EvalContext {
        reference: reference.as_ref(),
        labels: labels.as_deref(),
        eval_graph: Some(&g),
        reference_embedding: Some(before),
        dr_pairs: Some(&shared_pairs),
        gamma: cfg.rashomon.gamma,
        knn_k: cfg.metrics.knn_k,
        random_triplet_trials: cfg.metrics.random_triplet_trials,
        svm: cfg.metrics.svm.then(|| SvmSettings {
            nystroem_dim: cfg.metrics.svm_nystroem_dim,
            folds: cfg.metrics.svm_folds,
        }),
        seed: cfg.metrics.seed,
    };
    let report_before = evaluate(before, &ctx)?;
    let report_after = evaluate(&consensus, &ctx)?;
    let before_path = cfg.output.dir.join("report_before.json");
    write_report_json(&before_path, &report_before)?;
    write_meta(&before_path, cfg, "consensus")?;
    let after_path = cfg.output.dir.join("report_after.json");
    write_report_json(&after_path, &report_after)?;
    write_meta(&after_path, cfg, "consensus")?;
    let comparison_path = cfg.output.dir.join("comparison.csv");
    write_batch_csv(
        &comparison_path,
        &[
            ("before".to_owned(), report_before),
            ("after".to_owned(), report_after),
        ],
    )?;
    write_meta(&comparison_path, cfg, "consensus")?;

    if !certify.is_empty() {
        let certs: Vec<TrustCertificate> = certify
            .iter()
            .map(|spec| -> Result<TrustCertificate, CliError> {
                let parts: Vec<usize> = spec
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| CliError::usage(format!("bad certify triplet {spec:?}")))
                    })
                    .collect::<Result<_, _>>()?;
                if parts.len() != 3 {
                    return Err(CliError::usage(format!(
                        "certify expects i,j_star,j_prime, got {spec:?}"
                    )));
                }
                Ok(certify_edge_pair(
                    &test,
                    &stats,
                    parts[0],
                    parts[1],
                    parts[2],
                    cfg.consensus.lambda_pen,
                    0.05,
                    None,
                )?)
            })
            .collect::<Result<_, _>>()?;
        let cert_path = cfg.output.dir.join("certificates.json");
        write_certificates(&cert_path, &certs)?;
        write_meta(&cert_path, cfg, "consensus")?;
    }

    println!(
        "consensus: {} calibration + {} test members, method {method}, wrote {} and {}",
        calib.len(),
        test.len(),
        refined_path.display(),
        consensus_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn cmd_evaluate(
    cfg: &RunConfig,
    embedding: Option<&Path>,
    manifest_path: Option<&Path>,
    reference_embedding: Option<&Path>,
) -> Result<(), CliError> {
    let d = load_configured_dataset(cfg)?;
    let g = load_or_build_graph(cfg, &d)?;
    let labels = d.complete_labels();
    let reference = if labels
        .as_ref()
        .is_some_and(|l| l.iter().copied().max().map_or(0, |m| m + 1) >= 3)
        && d.p() >= 2
    {
        Some(pca_project(&d, 2)?)
    } else {
        None
    };
    let shared_pairs = sample_pairs(
        &g,
        &d,
        cfg.pairs.k,
        cfg.pairs.mn_ratio,
        cfg.pairs.fp_ratio,
        REFERENCE_PAIR_SEED,
    )?;
    let reference_embedding = reference_embedding
        .map(read_embedding)
        .transpose()?;
    let ctx = EvalContext {
        reference: reference.as_ref(),
        labels: labels.as_deref(),
        eval_graph: Some(&g),
        reference_embedding: reference_embedding.as_ref(),
        dr_pairs: Some(&shared_pairs),
        gamma: cfg.rashomon.gamma,
        knn_k: cfg.metrics.knn_k,
        random_triplet_trials: cfg.metrics.random_triplet_trials,
        svm: cfg.metrics.svm.then(|| SvmSettings {
            nystroem_dim: cfg.metrics.svm_nystroem_dim,
            folds: cfg.metrics.svm_folds,
        }),
        seed: cfg.metrics.seed,
    };

    match (embedding, manifest_path) {
        (Some(path), None) => {
            let e = read_embedding(path)?;
            let report = evaluate(&e, &ctx)?;
            let out = cfg.output.dir.join("report.json");
            write_report_json(&out, &report)?;
            write_meta(&out, cfg, "evaluate")?;
            println!("evaluate: wrote {}", out.display());
        }
        (None, manifest) => {
            let loaded = load_ensemble(cfg, manifest)?;
            let rows: Vec<(String, rashomon_dr::metrics::MetricReport)> = loaded
                .manifest
                .members
                .iter()
                .zip(loaded.ensemble.members.iter())
                .map(|(entry, member)| Ok((entry.file.clone(), evaluate(member, &ctx)?)))
                .collect::<Result<_, CliError>>()?;
            let out = cfg.output.dir.join("reports.csv");
            write_batch_csv(&out, &rows)?;
            write_meta(&out, cfg, "evaluate")?;
            println!("evaluate: {} reports -> {}", rows.len(), out.display());
        }
        (Some(_), Some(_)) => {
            return Err(CliError::usage(
                "pass either --embedding or --manifest, not both",
            ))
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

fn cmd_plot(cfg: &RunConfig, embedding: &Path, output: Option<&Path>) -> Result<(), CliError> {
    if !embedding.exists() {
        return Err(CliError::usage(format!(
            "embedding file {embedding:?} does not exist"
        )));
    }
    let e = read_embedding(embedding)?;
    let labels = match &cfg.dataset.path {
        Some(_) => load_configured_dataset(cfg)?.complete_labels(),
        None => None,
    };
    let svg = plot::render_scatter(&e, labels.as_deref()).map_err(CliError::usage)?;
    let out = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.join("plot.svg"));
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::runtime(format!("cannot create {parent:?}: {e}")))?;
        }
    }
    fs::write(&out, svg).map_err(|e| CliError::runtime(format!("cannot write {out:?}: {e}")))?;
    write_meta(&out, cfg, "plot")?;
    println!("plot: wrote {}", out.display());
    Ok(())
}
