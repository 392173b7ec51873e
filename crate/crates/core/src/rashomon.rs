//! Rashomon sets over embedding ensembles.
//!
//! An ensemble is one optimization run per (lambda, seed) grid cell. Members
//! whose neighborhood loss sits within a tolerance of the best form the
//! loss-based Rashomon set; the graph-based variant instead asks that a
//! member's induced neighbor-weight matrix stay close (in soft Jaccard
//! distance) to the weight matrices of a reference set.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embedding::Embedding;
use crate::engine::{dr_loss_and_grad, final_phase_weights, optimize_embedding, LossConfig};
use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::pairs::{sample_pairs, PairSets};
use crate::pca::PcaProjection;

/// Scale constant in the edge-weight map; small relative to standardized
/// squared distances so near-coincident points keep informative weights.
pub const DEFAULT_GAMMA: f64 = 1e-3;

/// Desk-scale default lambda grid spanning the same decades as a dense sweep.
pub const DEFAULT_GRID: [f64; 9] = [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 10.0, 100.0];

/// Pair-sampling seed for the shared loss-comparison pair set.
pub const REFERENCE_PAIR_SEED: u64 = 0;

/// Which lambda the ensemble grid sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignMode {
    /// Grid values drive `lambda_pca`; members initialize from the reference
    /// projection.
    Pca,
    /// Grid values drive `lambda_axis`.
    Concept,
}

/// Grid and per-member optimization settings for ensemble generation.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub mode: AlignMode,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Per-member settings; the swept lambda field is overridden per cell.
    pub base: LossConfig,
    pub k: usize,
    pub mn_ratio: f64,
    pub fp_ratio: f64,
}

/// A member that failed to optimize; kept out of the ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleFailure {
    pub lambda: f64,
    pub seed: u64,
    pub message: String,
}

/// Embeddings over the (lambda, seed) grid with comparable losses.
#[derive(Debug, Clone)]
pub struct EnsembleSet {
    pub members: Vec<Embedding>,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Neighborhood loss of each member, re-evaluated on one shared pair set
    /// with the final-phase weights so values are comparable.
    pub losses: Vec<f64>,
    pub failures: Vec<EnsembleFailure>,
}

/// Runs one optimization per (lambda, seed) cell, in parallel.
///
/// Every member's loss is re-evaluated on a single reference pair set sampled
/// with [`REFERENCE_PAIR_SEED`]. Failed members are reported in `failures`
/// and excluded; generation only errors when every member fails.
pub fn generate_ensemble(
    d: &Dataset,
    g: &NeighborGraph,
    cfg: &EnsembleConfig,
    reference: Option<&PcaProjection>,
) -> Result<EnsembleSet> {
    if cfg.grid.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if cfg.mode == AlignMode::Pca && reference.is_none() {
        return Err(Error::MissingReference {
            what: "pca-mode ensemble".into(),
        });
    }
    let reference_pairs = sample_pairs(
        g,
        d,
        cfg.k,
        cfg.mn_ratio,
        cfg.fp_ratio,
        REFERENCE_PAIR_SEED,
    )?;

    let cells: Vec<(f64, u64)> = cfg
        .grid
        .iter()
        .flat_map(|&lambda| cfg.seeds.iter().map(move |&seed| (lambda, seed)))
        .collect();

    let runs: Vec<std::result::Result<Embedding, EnsembleFailure>> = cells
        .par_iter()
        .map(|&(lambda, seed)| {
            let run = || -> Result<Embedding> {
                let pairs = sample_pairs(g, d, cfg.k, cfg.mn_ratio, cfg.fp_ratio, seed)?;
                let mut member_cfg = cfg.base.clone();
                let member_reference = match cfg.mode {
                    AlignMode::Pca => {
                        member_cfg.lambda_pca = lambda;
                        member_cfg.lambda_axis = 0.0;
                        reference
                    }
                    AlignMode::Concept => {
                        member_cfg.lambda_axis = lambda;
                        member_cfg.lambda_pca = 0.0;
                        None
                    }
                };
                let (embedding, _) =
                    optimize_embedding(d, &pairs, member_reference, &member_cfg, seed)?;
                Ok(embedding)
            };
            run().map_err(|e| EnsembleFailure {
                lambda,
                seed,
                message: e.to_string(),
            })
        })
        .collect();

    let mut members = Vec::new();
    let mut failures = Vec::new();
    for run in runs {
        match run {
            Ok(e) => members.push(e),
            Err(f) => failures.push(f),
        }
    }
    if members.is_empty() {
        return Err(Error::AllMembersFailed {
            first: failures
                .first()
                .map(|f| f.message.clone())
                .unwrap_or_default(),
        });
    }

    let weights = final_phase_weights();
    let losses = members
        .par_iter()
        .map(|m| dr_loss_and_grad(&m.coords().view(), &reference_pairs, &weights).0)
        .collect();

    Ok(EnsembleSet {
        members,
        grid: cfg.grid.clone(),
        seeds: cfg.seeds.clone(),
        losses,
        failures,
    })
}

/// Re-evaluates one embedding's neighborhood loss on a pair set with the
/// final-phase weights; the comparison functional used for ensemble losses.
pub fn reference_dr_loss(e: &Embedding, pairs: &PairSets) -> f64 {
    dr_loss_and_grad(&e.coords().view(), pairs, &final_phase_weights()).0
}

/// Per-edge saturating weights induced by an embedding over a fixed
/// high-dimensional adjacency. Off-adjacency ordered pairs implicitly carry
/// weight one and are only counted.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    /// n * m edge weights in adjacency order.
    weights: Vec<f64>,
    non_edge_count: usize,
    gamma: f64,
    n: usize,
    m: usize,
    fingerprint: u64,
}

impl WeightMatrix {
    pub fn non_edge_count(&self) -> usize {
        self.non_edge_count
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Weight of the edge at `slot` within point `i`'s adjacency list.
    pub fn edge_weight(&self, i: usize, slot: usize) -> f64 {
        self.weights[i * self.m + slot]
    }
}

/// Computes `W_ij = (d2 + gamma) / (d2 + gamma + 1)` for every candidate
/// edge, with `d2` the squared embedding distance. The embedding must be
/// standardized so weights are comparable across embeddings.
pub fn weight_matrix(e: &Embedding, g: &NeighborGraph, gamma: f64) -> Result<WeightMatrix> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::NonPositiveGamma { value: gamma });
    }
    if e.n() != g.n() {
        return Err(Error::RowCountMismatch {
            rows: e.n(),
            expected: g.n(),
        });
    }
    if !e.dataset_id().is_empty() && e.dataset_id() != g.dataset_id() {
        return Err(Error::DatasetMismatch {
            expected: g.dataset_id().to_owned(),
            got: e.dataset_id().to_owned(),
        });
    }
    if !e.is_standardized() {
        return Err(Error::NotStandardized);
    }

    let n = g.n();
    let m = g.m();
    let coords = e.coords();
    let mut weights = Vec::with_capacity(n * m);
    for i in 0..n {
        for &j in g.neighbors(i) {
            let mut d2 = 0.0;
            for d in 0..coords.ncols() {
                let v = coords[[i, d]] - coords[[j, d]];
                d2 += v * v;
            }
            let shifted = d2 + gamma;
            weights.push(shifted / (shifted + 1.0));
        }
    }
    Ok(WeightMatrix {
        weights,
        non_edge_count: n * (n - 1) - n * m,
        gamma,
        n,
        m,
        fingerprint: g.adjacency_fingerprint(),
    })
}

/// Soft Jaccard distance between two weight matrices over the same adjacency.
///
/// `1 - (sum min/(a+b)) / (sum max/(a+b))` over all ordered pairs; the
/// off-adjacency block contributes `non_edge_count / 2` to numerator and
/// denominator analytically (min = max = 1 there). Result lies in [0, 1].
pub fn soft_jaccard(a: &WeightMatrix, b: &WeightMatrix) -> Result<f64> {
    let (num, den) = edge_ratio_sums(a, b)?;
    let half_non_edges = a.non_edge_count as f64 / 2.0;
    Ok(1.0 - (num + half_non_edges) / (den + half_non_edges))
}

/// Soft Jaccard restricted to the candidate edges, for sensitivity analysis.
pub fn soft_jaccard_edges_only(a: &WeightMatrix, b: &WeightMatrix) -> Result<f64> {
    let (num, den) = edge_ratio_sums(a, b)?;
    Ok(1.0 - num / den)
}

fn edge_ratio_sums(a: &WeightMatrix, b: &WeightMatrix) -> Result<(f64, f64)> {
    if a.fingerprint != b.fingerprint
        || a.n != b.n
        || a.m != b.m
        || a.gamma != b.gamma
    {
        return Err(Error::AdjacencyMismatch);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&wa, &wb) in a.weights.iter().zip(b.weights.iter()) {
        let sum = wa + wb;
        num += wa.min(wb) / sum;
        den += wa.max(wb) / sum;
    }
    Ok((num, den))
}

/// How a Rashomon set was cut out of its ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RashomonCriterion {
    /// Loss within `delta` of the minimum.
    Loss { delta: f64 },
    /// Mean soft Jaccard distance to a reference set within `epsilon`.
    Graph { epsilon: f64 },
}

/// Indices into an ensemble that met the membership criterion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RashomonSet {
    /// Member indices, ascending by (loss, index).
    pub member_ids: Vec<usize>,
    pub criterion: RashomonCriterion,
    /// Minimum loss over the ensemble.
    pub reference_loss: f64,
    /// Numeric cutoff applied (reference_loss + delta for the loss criterion).
    pub threshold: f64,
}

/// Keeps members whose loss is within `delta` of the ensemble minimum.
pub fn filter_by_loss(ens: &EnsembleSet, delta: f64) -> Result<RashomonSet> {
    if delta < 0.0 || delta.is_nan() {
        return Err(Error::InvalidInput {
            msg: format!("loss tolerance must be >= 0, got {delta}"),
        });
    }
    if ens.members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let reference_loss = ens.losses.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = reference_loss + delta;
    let mut ids: Vec<usize> = (0..ens.members.len())
        .filter(|&i| ens.losses[i] <= threshold)
        .collect();
    ids.sort_by(|&a, &b| {
        ens.losses[a]
            .partial_cmp(&ens.losses[b])
            .expect("finite losses")
            .then(a.cmp(&b))
    });
    Ok(RashomonSet {
        member_ids: ids,
        criterion: RashomonCriterion::Loss { delta },
        reference_loss,
        threshold,
    })
}

/// Loss tolerance as a fraction of the minimum loss (the default rule uses
/// 5%).
pub fn relative_delta(ens: &EnsembleSet, fraction: f64) -> Result<f64> {
    if ens.members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let min = ens.losses.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(fraction * min.abs())
}

/// Knee-based loss tolerance: the largest positive second difference of the
/// per-lambda mean loss curve marks the knee; the tolerance is the gap from
/// the minimum loss up to that curve point.
pub fn knee_delta(ens: &EnsembleSet) -> Result<f64> {
    let mut lambdas: Vec<f64> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (member, &loss) in ens.members.iter().zip(ens.losses.iter()) {
        let p = member.provenance();
        let lambda = if p.lambda_pca != 0.0 || p.lambda_axis == 0.0 {
            p.lambda_pca
        } else {
            p.lambda_axis
        };
        match lambdas.iter().position(|&l| l == lambda) {
            Some(idx) => {
                sums[idx].0 += loss;
                sums[idx].1 += 1;
            }
            None => {
                lambdas.push(lambda);
                sums.push((loss, 1));
            }
        }
    }
    if lambdas.len() < 3 {
        return Err(Error::InvalidInput {
            msg: format!(
                "knee detection needs at least 3 distinct lambda values, got {}",
                lambdas.len()
            ),
        });
    }
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[a].partial_cmp(&lambdas[b]).expect("finite"));
    let means: Vec<f64> = order.iter().map(|&i| sums[i].0 / sums[i].1 as f64).collect();
    let mut knee = 1usize;
    let mut best = f64::NEG_INFINITY;
    for i in 1..means.len() - 1 {
        let second = means[i + 1] - 2.0 * means[i] + means[i - 1];
        if second > best {
            best = second;
            knee = i;
        }
    }
    let min = ens.losses.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((means[knee] - min).max(0.0))
}

/// Graph-based membership test: mean soft Jaccard distance from `e` to the
/// reference members, compared against `epsilon`. Returns the verdict and the
/// mean distance.
pub fn graph_membership(
    e: &Embedding,
    reference_members: &[&Embedding],
    g: &NeighborGraph,
    gamma: f64,
    epsilon: f64,
) -> Result<(bool, f64)> {
    if reference_members.is_empty() {
        return Err(Error::InvalidInput {
            msg: "graph membership needs a non-empty reference set".into(),
        });
    }
    let w_e = weight_matrix(e, g, gamma)?;
    let mut total = 0.0;
    for member in reference_members {
        let w_m = weight_matrix(member, g, gamma)?;
        total += soft_jaccard(&w_e, &w_m)?;
    }
    let mean = total / reference_members.len() as f64;
    Ok((mean <= epsilon, mean))
}

/// Self-calibrating epsilon: the largest pairwise soft Jaccard distance
/// observed within a reference set.
pub fn calibrate_epsilon(
    members: &[&Embedding],
    g: &NeighborGraph,
    gamma: f64,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::InvalidInput {
            msg: "epsilon calibration needs a non-empty member set".into(),
        });
    }
    let mats: Vec<WeightMatrix> = members
        .iter()
        .map(|m| weight_matrix(m, g, gamma))
        .collect::<Result<_>>()?;
    let mut max = 0.0f64;
    for i in 0..mats.len() {
        for j in (i + 1)..mats.len() {
            max = max.max(soft_jaccard(&mats[i], &mats[j])?);
        }
    }
    Ok(max)
}

/// Full pairwise soft Jaccard distance matrix over a member list.
pub fn pairwise_soft_jaccard(
    members: &[&Embedding],
    g: &NeighborGraph,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    let mats: Vec<WeightMatrix> = members
        .iter()
        .map(|m| weight_matrix(m, g, gamma))
        .collect::<Result<_>>()?;
    let k = mats.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = soft_jaccard(&mats[i], &mats[j])?;
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

/// Writes a square distance matrix as CSV.
pub fn write_distance_matrix(path: &Path, matrix: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Whether every planned ensemble member has been persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestStatus {
    Partial,
    Complete,
}

/// One persisted ensemble member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub lambda_pca: f64,
    pub lambda_axis: f64,
    pub seed: u64,
    pub dr_loss: f64,
    /// Path of the member's embedding CSV, relative to the manifest.
    pub file: String,
}

/// On-disk index of a generated ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub dataset_id: String,
    pub status: ManifestStatus,
    pub members: Vec<ManifestEntry>,
    #[serde(default)]
    pub failures: Vec<EnsembleFailure>,
}

pub fn write_manifest(path: &Path, manifest: &EnsembleManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest).expect("serializable");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<EnsembleManifest> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Parse {
        row: 0,
        col: 0,
        msg: format!("bad manifest JSON: {e}"),
    })
}
