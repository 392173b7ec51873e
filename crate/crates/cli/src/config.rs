//! Run configuration: a TOML file plus command-line overrides (flags win).

use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rashomon_dr::engine::{AdamParams, LossConfig};
use rashomon_dr::rashomon::DEFAULT_GRID;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub mode: ModeSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub pairs: PairsSection,
    #[serde(default)]
    pub rashomon: RashomonSection,
    #[serde(default)]
    pub consensus: ConsensusSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: String,
    pub label_column: Option<usize>,
    pub concept_column: Option<usize>,
    /// Seeded fraction of concepts to hide before any processing.
    pub mask_concepts: Option<f64>,
    #[serde(default)]
    pub mask_seed: u64,
}

fn default_format() -> String {
    "csv".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    /// plain | pca-align | concept-align
    #[serde(default = "default_mode")]
    pub kind: String,
}

fn default_mode() -> String {
    "plain".into()
}

impl Default for ModeSection {
    fn default() -> Self {
        ModeSection {
            kind: default_mode(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_lambdas() -> Vec<f64> {
    DEFAULT_GRID.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            lambdas: default_lambdas(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_gamma_init")]
    pub gamma_init: f64,
}

fn d_iterations() -> usize {
    450
}
fn d_lr() -> f64 {
    1.0
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-7
}
fn d_gamma_init() -> f64 {
    0.1
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            iterations: d_iterations(),
            learning_rate: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            epsilon: d_eps(),
            gamma_init: d_gamma_init(),
        }
    }
}

impl OptimizerSection {
    /// Settings with the swept lambda applied per mode.
    pub fn loss_config(&self, lambda_pca: f64, lambda_axis: f64) -> LossConfig {
        LossConfig {
            lambda_pca,
            lambda_axis,
            iterations: self.iterations,
            adam: AdamParams {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            gamma_init: self.gamma_init,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsSection {
    /// Candidate / evaluation graph size.
    #[serde(default = "d_m")]
    pub m: usize,
    /// Neighbor pairs per point in the embedding objective.
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_mn_ratio")]
    pub mn_ratio: f64,
    #[serde(default = "d_fp_ratio")]
    pub fp_ratio: f64,
}

fn d_m() -> usize {
    50
}
fn d_k() -> usize {
    10
}
fn d_mn_ratio() -> f64 {
    0.5
}
fn d_fp_ratio() -> f64 {
    2.0
}

impl Default for PairsSection {
    fn default() -> Self {
        PairsSection {
            m: d_m(),
            k: d_k(),
            mn_ratio: d_mn_ratio(),
            fp_ratio: d_fp_ratio(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RashomonSection {
    /// Loss tolerance rule: "relative:FRAC", "absolute:VALUE" or "knee".
    #[serde(default = "d_delta")]
    pub delta: String,
    /// Graph-membership tolerance: "auto" (largest in-set pairwise distance)
    /// or a number.
    #[serde(default = "d_epsilon")]
    pub epsilon: String,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
}

fn d_delta() -> String {
    "relative:0.05".into()
}
fn d_epsilon() -> String {
    "auto".into()
}
fn d_gamma() -> f64 {
    rashomon_dr::rashomon::DEFAULT_GAMMA
}

impl Default for RashomonSection {
    fn default() -> Self {
        RashomonSection {
            delta: d_delta(),
            epsilon: d_epsilon(),
            gamma: d_gamma(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSection {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_lambda_pen")]
    pub lambda_pen: f64,
    /// "mean-score" or "average-rank".
    #[serde(default = "d_method")]
    pub method: String,
}

fn d_lambda_pen() -> f64 {
    1.0
}
fn d_method() -> String {
    "mean-score".into()
}

impl Default for ConsensusSection {
    fn default() -> Self {
        ConsensusSection {
            k: d_k(),
            lambda_pen: d_lambda_pen(),
            method: d_method(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_knn_k")]
    pub knn_k: usize,
    #[serde(default = "d_trials")]
    pub random_triplet_trials: usize,
    #[serde(default)]
    pub svm: bool,
    #[serde(default = "d_nystroem")]
    pub svm_nystroem_dim: usize,
    #[serde(default = "d_folds")]
    pub svm_folds: usize,
}

fn d_knn_k() -> usize {
    5
}
fn d_trials() -> usize {
    10_000
}
fn d_nystroem() -> usize {
    100
}
fn d_folds() -> usize {
    5
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            seed: 0,
            knn_k: d_knn_k(),
            random_triplet_trials: d_trials(),
            svm: false,
            svm_nystroem_dim: d_nystroem(),
            svm_folds: d_folds(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "d_out")]
    pub dir: PathBuf,
}

fn d_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: d_out() }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let raw = fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {p:?}: {e}")))?;
                toml::from_str(&raw)
                    .map_err(|e| CliError::usage(format!("bad config {p:?}: {e}")))
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.dataset.path.is_none() {
            return Err(CliError::usage(
                "no dataset: set [dataset].path in the config or pass --dataset",
            ));
        }
        match self.mode.kind.as_str() {
            "plain" | "pca-align" | "concept-align" => {}
            other => {
                return Err(CliError::usage(format!(
                    "unknown mode {other:?} (expected plain, pca-align or concept-align)"
                )))
            }
        }
        if self.mode.kind == "concept-align" && self.dataset.concept_column.is_none() {
            return Err(CliError::usage(
                "concept-align mode needs [dataset].concept_column",
            ));
        }
        match self.dataset.format.as_str() {
            "csv" | "raw-f32" => {}
            other => {
                return Err(CliError::usage(format!(
                    "unknown dataset format {other:?} (expected csv or raw-f32)"
                )))
            }
        }
        if let Some(ratio) = self.dataset.mask_concepts {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(CliError::usage(format!(
                    "mask-concepts ratio must lie in [0, 1], got {ratio}"
                )));
            }
        }
        if self.pairs.k > self.pairs.m || self.consensus.k > self.pairs.m {
            return Err(CliError::usage(format!(
                "k ({} / consensus {}) must not exceed m ({})",
                self.pairs.k, self.consensus.k, self.pairs.m
            )));
        }
        match self.consensus.method.as_str() {
            "mean-score" | "average-rank" => {}
            other => {
                return Err(CliError::usage(format!(
                    "unknown selection method {other:?} (expected mean-score or average-rank)"
                )))
            }
        }
        self.parse_delta()?;
        self.parse_epsilon()?;
        Ok(())
    }

    /// Loss-tolerance rule parsed from the config string.
    pub fn parse_delta(&self) -> Result<DeltaRule, CliError> {
        let raw = self.rashomon.delta.as_str();
        if raw == "knee" {
            return Ok(DeltaRule::Knee);
        }
        if let Some(frac) = raw.strip_prefix("relative:") {
            let f: f64 = frac
                .parse()
                .map_err(|_| CliError::usage(format!("bad relative delta {frac:?}")))?;
            return Ok(DeltaRule::Relative(f));
        }
        if let Some(v) = raw.strip_prefix("absolute:") {
            let f: f64 = v
                .parse()
                .map_err(|_| CliError::usage(format!("bad absolute delta {v:?}")))?;
            return Ok(DeltaRule::Absolute(f));
        }
        Err(CliError::usage(format!(
            "bad delta rule {raw:?} (expected relative:FRAC, absolute:VALUE or knee)"
        )))
    }

    pub fn parse_epsilon(&self) -> Result<EpsilonRule, CliError> {
        let raw = self.rashomon.epsilon.as_str();
        if raw == "auto" {
            return Ok(EpsilonRule::Auto);
        }
        raw.parse::<f64>()
            .map(EpsilonRule::Fixed)
            .map_err(|_| CliError::usage(format!("bad epsilon {raw:?} (expected auto or a number)")))
    }

    /// Stable hash of the effective configuration, recorded in output
    /// sidecars.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable");
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        h.write(json.as_bytes());
        format!("{:016x}", h.finish())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DeltaRule {
    Relative(f64),
    Absolute(f64),
    Knee,
}

#[derive(Debug, Clone, Copy)]
pub enum EpsilonRule {
    Auto,
    Fixed(f64),
}

struct Fnv(u64);

impl Hasher for Fnv {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}
