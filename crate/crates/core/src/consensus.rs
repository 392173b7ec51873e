//! Trustworthy-neighbor extraction across a Rashomon set.
//!
//! A calibration subset of embeddings fixes per-edge statistics (mean, std
//! and max of the edge's embedding-space distance, plus the global mean of
//! means). Each candidate edge is then scored on the held-out test subset:
//!
//! ```text
//! psi = d + lambda * sigma   if mu < M_global
//! psi = max_d + lambda * sigma   otherwise
//! ```
//!
//! so edges that were far on average during calibration are charged their
//! worst observed distance regardless of where the test embedding puts them.
//! Per point, the k candidates with the lowest mean score (or lowest average
//! rank) form the refined graph; an empirical Bernstein bound certifies
//! "edge a is strictly better than edge b" comparisons.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embedding::Embedding;
use crate::engine::{optimize_embedding, LossConfig, LossRecord};
use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::pairs::{sample_pairs_with_neighbors, PairCounts};
use crate::rashomon::{EnsembleSet, RashomonSet};

/// Per-edge calibration statistics over a candidate graph.
#[derive(Debug, Clone)]
pub struct CalibStats {
    /// Mean edge distance over the calibration set, n * m in adjacency order.
    mu: Vec<f64>,
    /// Population standard deviation (divisor M).
    sigma: Vec<f64>,
    /// Maximum observed edge distance.
    max_d: Vec<f64>,
    /// Mean of `mu` over all edges.
    m_global: f64,
    calib_size: usize,
    adjacency: Vec<Vec<usize>>,
    m: usize,
    fingerprint: u64,
}

impl CalibStats {
    pub fn m_global(&self) -> f64 {
        self.m_global
    }

    pub fn calib_size(&self) -> usize {
        self.calib_size
    }

    fn slot_of(&self, i: usize, j: usize) -> Result<usize> {
        self.adjacency
            .get(i)
            .and_then(|nbrs| nbrs.iter().position(|&x| x == j))
            .ok_or(Error::UnknownEdge { i, j })
    }

    /// (mu, sigma, max) for edge (i, j); errors when the edge is not in the
    /// candidate graph.
    pub fn edge_stats(&self, i: usize, j: usize) -> Result<(f64, f64, f64)> {
        let slot = self.slot_of(i, j)?;
        let idx = i * self.m + slot;
        Ok((self.mu[idx], self.sigma[idx], self.max_d[idx]))
    }
}

fn check_member(e: &Embedding, g: &NeighborGraph) -> Result<()> {
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
    Ok(())
}

/// Estimates per-edge mean, std (population convention) and max embedding
/// distance over a calibration set, plus the global mean-of-means threshold.
pub fn calibration_stats(calib: &[&Embedding], g: &NeighborGraph) -> Result<CalibStats> {
    if calib.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    for e in calib {
        check_member(e, g)?;
    }
    let n = g.n();
    let m = g.m();
    let count = calib.len() as f64;

    let mut mu = vec![0.0; n * m];
    let mut sigma = vec![0.0; n * m];
    let mut max_d = vec![f64::NEG_INFINITY; n * m];

    for i in 0..n {
        for (slot, &j) in g.neighbors(i).iter().enumerate() {
            let idx = i * m + slot;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for e in calib {
                let d = e.distance(i, j);
                sum += d;
                sum_sq += d * d;
                if d > max_d[idx] {
                    max_d[idx] = d;
                }
            }
            let mean = sum / count;
            mu[idx] = mean;
            sigma[idx] = (sum_sq / count - mean * mean).max(0.0).sqrt();
        }
    }
    let m_global = mu.iter().sum::<f64>() / mu.len() as f64;

    Ok(CalibStats {
        mu,
        sigma,
        max_d,
        m_global,
        calib_size: calib.len(),
        adjacency: (0..n).map(|i| g.neighbors(i).to_vec()).collect(),
        m,
        fingerprint: g.adjacency_fingerprint(),
    })
}

#[inline]
fn psi(d: f64, mu: f64, sigma: f64, max_d: f64, m_global: f64, lambda: f64) -> f64 {
    if mu < m_global {
        d + lambda * sigma
    } else {
        max_d + lambda * sigma
    }
}

/// Variance-penalized trust score for one edge at observed distance `d_ij`.
pub fn edge_score(
    d_ij: f64,
    stats: &CalibStats,
    edge: (usize, usize),
    lambda_pen: f64,
) -> Result<f64> {
    if lambda_pen < 0.0 {
        return Err(Error::InvalidInput {
            msg: format!("penalty weight must be >= 0, got {lambda_pen}"),
        });
    }
    let (mu, sigma, max_d) = stats.edge_stats(edge.0, edge.1)?;
    Ok(psi(d_ij, mu, sigma, max_d, stats.m_global, lambda_pen))
}

/// Aggregation rule used to pick trustworthy neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMethod {
    MeanScore,
    AverageRank,
}

/// The k most trustworthy neighbors per point, drawn from the candidate
/// graph. Selections are stored in candidate-adjacency order with their
/// aggregate score (mean psi or mean rank).
#[derive(Debug, Clone)]
pub struct RefinedGraph {
    pub k: usize,
    pub method: SelectionMethod,
    selected: Vec<Vec<usize>>,
    scores: Vec<Vec<f64>>,
    dataset_id: String,
    fingerprint: u64,
}

impl RefinedGraph {
    pub fn n(&self) -> usize {
        self.selected.len()
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    /// Selected neighbor ids of point `i`, in candidate-adjacency order.
    pub fn selected(&self, i: usize) -> &[usize] {
        &self.selected[i]
    }

    /// Aggregate scores parallel to [`Self::selected`].
    pub fn scores(&self, i: usize) -> &[f64] {
        &self.scores[i]
    }

    /// Plain top-k of the candidate graph, scored by candidate distance; the
    /// "no refinement" baseline.
    pub fn from_topk(g: &NeighborGraph, k: usize) -> Result<Self> {
        if k == 0 || k > g.m() {
            return Err(Error::KExceedsCandidates { k, m: g.m() });
        }
        Ok(RefinedGraph {
            k,
            method: SelectionMethod::MeanScore,
            selected: (0..g.n()).map(|i| g.neighbors(i)[..k].to_vec()).collect(),
            scores: (0..g.n())
                .map(|i| g.neighbor_distances(i)[..k].to_vec())
                .collect(),
            dataset_id: g.dataset_id().to_owned(),
            fingerprint: g.adjacency_fingerprint(),
        })
    }

    /// Fraction of selected edges for which `is_bad(i, j)` holds; used to
    /// audit e.g. cross-cluster leakage.
    pub fn edge_fraction<F>(&self, is_bad: F) -> f64
    where
        F: Fn(usize, usize) -> bool,
    {
        let mut bad = 0usize;
        let mut total = 0usize;
        for (i, nbrs) in self.selected.iter().enumerate() {
            for &j in nbrs {
                total += 1;
                if is_bad(i, j) {
                    bad += 1;
                }
            }
        }
        bad as f64 / total.max(1) as f64
    }
}

fn validate_selection_inputs(
    test: &[&Embedding],
    stats: &CalibStats,
    g: &NeighborGraph,
    k: usize,
    lambda_pen: f64,
) -> Result<()> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if k == 0 || k > g.m() {
        return Err(Error::KExceedsCandidates { k, m: g.m() });
    }
    if lambda_pen < 0.0 {
        return Err(Error::InvalidInput {
            msg: format!("penalty weight must be >= 0, got {lambda_pen}"),
        });
    }
    if stats.fingerprint != g.adjacency_fingerprint() {
        return Err(Error::AdjacencyMismatch);
    }
    for e in test {
        check_member(e, g)?;
    }
    Ok(())
}

/// Mean-score selection: per candidate edge, average psi over the test
/// embeddings; keep the k lowest means (ties toward the lower neighbor id).
pub fn select_trustworthy_mean(
    test: &[&Embedding],
    stats: &CalibStats,
    g: &NeighborGraph,
    k: usize,
    lambda_pen: f64,
) -> Result<RefinedGraph> {
    validate_selection_inputs(test, stats, g, k, lambda_pen)?;
    let m = g.m();
    let t = test.len() as f64;

    let per_point: Vec<(Vec<usize>, Vec<f64>)> = (0..g.n())
        .into_par_iter()
        .map(|i| {
            let nbrs = g.neighbors(i);
            let mut mean_psi = vec![0.0; m];
            for e in test {
                for (slot, &j) in nbrs.iter().enumerate() {
                    let idx = i * m + slot;
                    mean_psi[slot] += psi(
                        e.distance(i, j),
                        stats.mu[idx],
                        stats.sigma[idx],
                        stats.max_d[idx],
                        stats.m_global,
                        lambda_pen,
                    );
                }
            }
            for v in &mut mean_psi {
                *v /= t;
            }
            pick_lowest(nbrs, &mean_psi, k)
        })
        .collect();

    Ok(assemble(per_point, k, SelectionMethod::MeanScore, g))
}

/// Average-rank selection: within each test embedding, rank each point's
/// candidates by psi (ties toward the lower neighbor id); keep the k lowest
/// average ranks.
pub fn select_trustworthy_rank(
    test: &[&Embedding],
    stats: &CalibStats,
    g: &NeighborGraph,
    k: usize,
    lambda_pen: f64,
) -> Result<RefinedGraph> {
    validate_selection_inputs(test, stats, g, k, lambda_pen)?;
    let m = g.m();
    let t = test.len() as f64;

    let per_point: Vec<(Vec<usize>, Vec<f64>)> = (0..g.n())
        .into_par_iter()
        .map(|i| {
            let nbrs = g.neighbors(i);
            let mut rank_sum = vec![0.0; m];
            let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(m);
            for e in test {
                scored.clear();
                for (slot, &j) in nbrs.iter().enumerate() {
                    let idx = i * m + slot;
                    let score = psi(
                        e.distance(i, j),
                        stats.mu[idx],
                        stats.sigma[idx],
                        stats.max_d[idx],
                        stats.m_global,
                        lambda_pen,
                    );
                    scored.push((score, j, slot));
                }
                scored.sort_by(|a, b| {
                    a.0.partial_cmp(&b.0).expect("finite psi").then(a.1.cmp(&b.1))
                });
                for (rank, &(_, _, slot)) in scored.iter().enumerate() {
                    rank_sum[slot] += (rank + 1) as f64;
                }
            }
            for v in &mut rank_sum {
                *v /= t;
            }
            pick_lowest(nbrs, &rank_sum, k)
        })
        .collect();

    Ok(assemble(per_point, k, SelectionMethod::AverageRank, g))
}

/// Keeps the k slots with the lowest aggregate value (ties toward lower
/// neighbor id), returned in candidate-adjacency order.
fn pick_lowest(nbrs: &[usize], aggregate: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..nbrs.len()).collect();
    order.sort_by(|&a, &b| {
        aggregate[a]
            .partial_cmp(&aggregate[b])
            .expect("finite aggregate")
            .then(nbrs[a].cmp(&nbrs[b]))
    });
    let mut kept: Vec<usize> = order[..k].to_vec();
    kept.sort_unstable();
    let ids = kept.iter().map(|&slot| nbrs[slot]).collect();
    let scores = kept.iter().map(|&slot| aggregate[slot]).collect();
    (ids, scores)
}

fn assemble(
    per_point: Vec<(Vec<usize>, Vec<f64>)>,
    k: usize,
    method: SelectionMethod,
    g: &NeighborGraph,
) -> RefinedGraph {
    let (selected, scores) = per_point.into_iter().unzip();
    RefinedGraph {
        k,
        method,
        selected,
        scores,
        dataset_id: g.dataset_id().to_owned(),
        fingerprint: g.adjacency_fingerprint(),
    }
}

/// Splits a Rashomon set into calibration and test members: the first
/// ceil(R/3) members by ascending loss calibrate, the rest are scored.
/// Requires at least 5 members.
pub fn calibration_test_split<'a>(
    ens: &'a EnsembleSet,
    rset: &RashomonSet,
) -> Result<(Vec<&'a Embedding>, Vec<&'a Embedding>)> {
    let r = rset.member_ids.len();
    if r < 5 {
        return Err(Error::TooFewMembers { got: r, min: 5 });
    }
    let calib_size = r.div_ceil(3);
    let calib = rset.member_ids[..calib_size]
        .iter()
        .map(|&id| &ens.members[id])
        .collect();
    let test = rset.member_ids[calib_size..]
        .iter()
        .map(|&id| &ens.members[id])
        .collect();
    Ok((calib, test))
}

/// Outcome of a Bernstein-margin comparison between two candidate edges
/// (i, j_star) and (i, j_prime).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustCertificate {
    pub triplet: (usize, usize, usize),
    /// Mean margin psi(i, j_star) - psi(i, j_prime) over the test embeddings.
    pub empirical_margin: f64,
    /// Population variance of the margins.
    pub variance: f64,
    /// Almost-sure upper bound on the margin used by the bound.
    pub bound: f64,
    pub confidence_delta: f64,
    /// One-sided upper confidence bound on the true expected margin.
    pub upper_bound: f64,
    /// True when the upper bound is negative: j_star is strictly more
    /// trustworthy than j_prime at confidence 1 - delta.
    pub certified: bool,
    pub samples: usize,
}

/// Certifies whether the first edge's expected score is strictly below the
/// second's, from per-embedding score lists.
///
/// `upper = mean + B ln(1/delta) / (3T) + sqrt(2 V ln(1/delta) / T)`; the
/// comparison is certified when `upper < 0`. When `bound` is absent it
/// defaults to `1.05 * max |margin|`. The score lists must come from
/// embeddings drawn independently of the calibration statistics.
pub fn certify_margin(
    triplet: (usize, usize, usize),
    psi_star: &[f64],
    psi_prime: &[f64],
    confidence_delta: f64,
    bound: Option<f64>,
) -> Result<TrustCertificate> {
    if psi_star.len() != psi_prime.len() {
        return Err(Error::MarginLengthMismatch {
            left: psi_star.len(),
            right: psi_prime.len(),
        });
    }
    let t = psi_star.len();
    if t < 2 {
        return Err(Error::TooFewMarginSamples { got: t });
    }
    if !(confidence_delta > 0.0 && confidence_delta < 1.0) {
        return Err(Error::InvalidConfidence {
            value: confidence_delta,
        });
    }

    let margins: Vec<f64> = psi_star
        .iter()
        .zip(psi_prime.iter())
        .map(|(a, b)| a - b)
        .collect();
    let mean = margins.iter().sum::<f64>() / t as f64;
    let variance = margins.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / t as f64;
    let max_z = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_abs = margins.iter().fold(0.0f64, |a, z| a.max(z.abs()));

    let b = bound.unwrap_or(1.05 * max_abs);
    if b < 0.0 {
        return Err(Error::NegativeBound { bound: b });
    }
    if b < max_z {
        return Err(Error::BoundTooSmall {
            bound: b,
            max_observed: max_z,
        });
    }

    let log_term = (1.0 / confidence_delta).ln();
    let t_f = t as f64;
    let upper = mean + b * log_term / (3.0 * t_f) + (2.0 * variance * log_term / t_f).sqrt();

    Ok(TrustCertificate {
        triplet,
        empirical_margin: mean,
        variance,
        bound: b,
        confidence_delta,
        upper_bound: upper,
        certified: upper < 0.0,
        samples: t,
    })
}

/// Assembles the per-embedding score lists for a triplet and certifies it.
#[allow(clippy::too_many_arguments)]
pub fn certify_edge_pair(
    test: &[&Embedding],
    stats: &CalibStats,
    i: usize,
    j_star: usize,
    j_prime: usize,
    lambda_pen: f64,
    confidence_delta: f64,
    bound: Option<f64>,
) -> Result<TrustCertificate> {
    let star: Vec<f64> = test
        .iter()
        .map(|e| edge_score(e.distance(i, j_star), stats, (i, j_star), lambda_pen))
        .collect::<Result<_>>()?;
    let prime: Vec<f64> = test
        .iter()
        .map(|e| edge_score(e.distance(i, j_prime), stats, (i, j_prime), lambda_pen))
        .collect::<Result<_>>()?;
    certify_margin((i, j_star, j_prime), &star, &prime, confidence_delta, bound)
}

/// Writes certificates as a JSON array.
pub fn write_certificates(path: &Path, certs: &[TrustCertificate]) -> Result<()> {
    let json = serde_json::to_string_pretty(certs).expect("serializable");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Re-optimizes an embedding whose neighbor pairs come from the refined
/// graph. Mid-near and further pairs are resampled from outside the candidate
/// adjacency; alignment terms are off.
pub fn consensus_embedding(
    d: &Dataset,
    refined: &RefinedGraph,
    g: &NeighborGraph,
    cfg: &LossConfig,
    mn_ratio: f64,
    fp_ratio: f64,
    seed: u64,
) -> Result<(Embedding, Vec<LossRecord>)> {
    if refined.fingerprint != g.adjacency_fingerprint() {
        return Err(Error::AdjacencyMismatch);
    }
    if refined.dataset_id != d.id() {
        return Err(Error::DatasetMismatch {
            expected: d.id().to_owned(),
            got: refined.dataset_id.clone(),
        });
    }
    let counts = PairCounts::from_ratios(refined.k, mn_ratio, fp_ratio)?;
    let pairs = sample_pairs_with_neighbors(&refined.selected, g, d, counts, seed)?;
    let plain = LossConfig {
        lambda_pca: 0.0,
        lambda_axis: 0.0,
        ..cfg.clone()
    };
    optimize_embedding(d, &pairs, None, &plain, seed)
}

/// Writes a refined graph in the neighbor-graph TSV format with an extra
/// aggregate-score column: `i, j, rank, distance, score`. The distance is the
/// candidate graph's high-dimensional edge distance.
pub fn write_refined_tsv(path: &Path, refined: &RefinedGraph, g: &NeighborGraph) -> Result<()> {
    if refined.fingerprint != g.adjacency_fingerprint() {
        return Err(Error::AdjacencyMismatch);
    }
    let mut out = String::new();
    for i in 0..refined.n() {
        for (rank, (&j, &score)) in refined
            .selected(i)
            .iter()
            .zip(refined.scores(i).iter())
            .enumerate()
        {
            let slot = g.edge_slot(i, j).ok_or(Error::UnknownEdge { i, j })?;
            let dist = g.neighbor_distances(i)[slot];
            out.push_str(&format!("{i}\t{j}\t{rank}\t{dist}\t{score}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{standardize_embedding, Provenance};
    use crate::graph::build_knn_graph;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    /// 4-point, m=1 toy graph whose (1, 2) edge realizes exact embedding
    /// distances under standardization.
    fn toy_graph() -> NeighborGraph {
        NeighborGraph::from_adjacency(
            vec![vec![1], vec![2], vec![1], vec![2]],
            vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0]],
            "toy".into(),
        )
        .unwrap()
    }

    /// 1-D standardized coordinates (-a, -b, b, a) with 2b the (1, 2) edge
    /// distance; (a^2 + b^2) / 2 = 1 keeps the mean squared norm at one.
    fn spread_embedding(b: f64) -> Embedding {
        let a = (2.0 - b * b).sqrt();
        Embedding::new(
            array![[-a], [-b], [b], [a]],
            "toy".into(),
            Provenance::external(),
        )
        .unwrap()
    }

    #[test]
    fn single_calibration_embedding_gives_zero_sigma() {
        let g = toy_graph();
        let e = spread_embedding(0.2);
        let stats = calibration_stats(&[&e], &g).unwrap();
        let (mu, sigma, max_d) = stats.edge_stats(1, 2).unwrap();
        assert_abs_diff_eq!(sigma, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mu, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(max_d, mu, epsilon = 1e-15);
    }

    #[test]
    fn two_embedding_hand_statistics() {
        let g = toy_graph();
        let a = spread_embedding(0.2); // edge (1,2) distance 0.4
        let b = spread_embedding(0.3); // edge (1,2) distance 0.6
        let stats = calibration_stats(&[&a, &b], &g).unwrap();
        let (mu, sigma, max_d) = stats.edge_stats(1, 2).unwrap();
        assert_abs_diff_eq!(mu, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(max_d, 0.6, epsilon = 1e-12);
        // Global threshold is the mean of per-edge means.
        let expected_m_global = {
            let edges = [(0, 1), (1, 2), (2, 1), (3, 2)];
            edges
                .iter()
                .map(|&(i, j)| (a.distance(i, j) + b.distance(i, j)) / 2.0)
                .sum::<f64>()
                / 4.0
        };
        assert_abs_diff_eq!(stats.m_global(), expected_m_global, epsilon = 1e-12);
    }

    #[test]
    fn edge_score_branches() {
        let stats = CalibStats {
            mu: vec![0.4, 2.0],
            sigma: vec![0.1, 0.3],
            max_d: vec![0.7, 1.2],
            m_global: 1.0,
            calib_size: 3,
            adjacency: vec![vec![1, 2]],
            m: 2,
            fingerprint: 0,
        };
        // mu < M_global: psi = d + lambda sigma.
        assert_abs_diff_eq!(
            edge_score(0.5, &stats, (0, 1), 1.0).unwrap(),
            0.6,
            epsilon = 1e-15
        );
        // mu >= M_global: psi = max + lambda sigma, ignoring d.
        assert_abs_diff_eq!(
            edge_score(0.01, &stats, (0, 2), 1.0).unwrap(),
            1.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            edge_score(123.0, &stats, (0, 2), 1.0).unwrap(),
            1.5,
            epsilon = 1e-15
        );
        // Penalty off.
        assert_abs_diff_eq!(
            edge_score(0.5, &stats, (0, 1), 0.0).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert!(matches!(
            edge_score(0.5, &stats, (0, 9), 1.0),
            Err(Error::UnknownEdge { i: 0, j: 9 })
        ));
    }

    /// Random standardized embeddings over a random dataset graph.
    fn random_members(
        n: usize,
        count: usize,
        seed: u64,
        dataset_id: &str,
    ) -> Vec<Embedding> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let coords = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
                let e =
                    Embedding::new(coords, dataset_id.into(), Provenance::external()).unwrap();
                standardize_embedding(&e).unwrap()
            })
            .collect()
    }

    fn random_setup(n: usize, m: usize, seed: u64) -> (Dataset, NeighborGraph) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Dataset::new(
            Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0)),
            None,
            None,
        )
        .unwrap();
        let g = build_knn_graph(&d, m).unwrap();
        (d, g)
    }

    #[test]
    fn single_test_embedding_without_penalty_reduces_to_knn() {
        let (d, g) = random_setup(30, 6, 60);
        let members = random_members(30, 3, 61, d.id());
        // Calibrate on embeddings drawn close together so every mu lands
        // below M_global... instead, force the branch by calibrating on one
        // member: mu == that member's distances; roughly half sit below the
        // global mean, so restrict the check to candidates of points where
        // all mu < M_global.
        let stats = calibration_stats(&[&members[0]], &g).unwrap();
        let test = [&members[1]];
        let refined = select_trustworthy_mean(&test, &stats, &g, 2, 0.0).unwrap();
        for i in 0..d.n() {
            let all_below = g
                .neighbors(i)
                .iter()
                .enumerate()
                .all(|(slot, _)| stats.mu[i * g.m() + slot] < stats.m_global());
            if !all_below {
                continue;
            }
            // Expected: the 2 candidates nearest in the test embedding,
            // ties by id.
            let mut expect: Vec<(f64, usize)> = g
                .neighbors(i)
                .iter()
                .map(|&j| (members[1].distance(i, j), j))
                .collect();
            expect.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut want: Vec<usize> = expect[..2].iter().map(|&(_, j)| j).collect();
            want.sort_unstable();
            let mut got = refined.selected(i).to_vec();
            got.sort_unstable();
            assert_eq!(got, want, "point {i}");
        }
    }

    #[test]
    fn mean_and_rank_agree_for_single_test_embedding() {
        let (_, g) = random_setup(40, 8, 62);
        let members = random_members(40, 4, 63, g.dataset_id());
        let calib: Vec<&Embedding> = members[..2].iter().collect();
        let stats = calibration_stats(&calib, &g).unwrap();
        let test = [&members[2]];
        let by_mean = select_trustworthy_mean(&test, &stats, &g, 3, 0.0).unwrap();
        let by_rank = select_trustworthy_rank(&test, &stats, &g, 3, 0.0).unwrap();
        for i in 0..g.n() {
            assert_eq!(by_mean.selected(i), by_rank.selected(i), "point {i}");
        }
    }

    #[test]
    fn identical_test_embeddings_are_aggregation_invariant() {
        let (_, g) = random_setup(25, 5, 64);
        let members = random_members(25, 2, 65, g.dataset_id());
        let stats = calibration_stats(&[&members[0]], &g).unwrap();
        let one = [&members[1]];
        let many = [&members[1], &members[1], &members[1], &members[1]];
        let a = select_trustworthy_mean(&one, &stats, &g, 2, 1.0).unwrap();
        let b = select_trustworthy_mean(&many, &stats, &g, 2, 1.0).unwrap();
        let c = select_trustworthy_rank(&many, &stats, &g, 2, 1.0).unwrap();
        let d_sel = select_trustworthy_rank(&one, &stats, &g, 2, 1.0).unwrap();
        for i in 0..g.n() {
            assert_eq!(a.selected(i), b.selected(i));
            assert_eq!(c.selected(i), d_sel.selected(i));
        }
    }

    /// Independent oracle for mean-score selection.
    fn oracle_mean_selection(
        test: &[&Embedding],
        stats: &CalibStats,
        g: &NeighborGraph,
        k: usize,
        lambda: f64,
    ) -> Vec<Vec<usize>> {
        (0..g.n())
            .map(|i| {
                let mut agg: Vec<(f64, usize)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&j| {
                        let total: f64 = test
                            .iter()
                            .map(|e| edge_score(e.distance(i, j), stats, (i, j), lambda).unwrap())
                            .sum();
                        (total / test.len() as f64, j)
                    })
                    .collect();
                agg.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let mut ids: Vec<usize> = agg[..k].iter().map(|&(_, j)| j).collect();
                ids.sort_unstable();
                ids
            })
            .collect()
    }

    #[test]
    fn mean_selection_matches_independent_oracle() {
        let (_, g) = random_setup(35, 7, 66);
        let members = random_members(35, 6, 67, g.dataset_id());
        let calib: Vec<&Embedding> = members[..2].iter().collect();
        let test: Vec<&Embedding> = members[2..].iter().collect();
        let stats = calibration_stats(&calib, &g).unwrap();
        let refined = select_trustworthy_mean(&test, &stats, &g, 3, 1.0).unwrap();
        let oracle = oracle_mean_selection(&test, &stats, &g, 3, 1.0);
        for i in 0..g.n() {
            let mut got = refined.selected(i).to_vec();
            got.sort_unstable();
            assert_eq!(got, oracle[i], "point {i}");
        }
    }

    /// 12-point, 1-D scenario: points 4..11 sit on a fixed wide ring that
    /// pins the standardization scale and pushes `M_global` up, so the edges
    /// of interest (0 -> {1, 2, 3}, all tiny) stay in the distance branch of
    /// the score. `near` gives the raw positions of points 1..3.
    fn ring_graph_and_builder() -> (NeighborGraph, impl Fn([f64; 3]) -> Embedding) {
        let mut adjacency = vec![vec![1, 2, 3]];
        for i in 1..12usize {
            let mut nbrs: Vec<usize> = (0..12).filter(|&j| j != i).take(4).collect();
            nbrs.truncate(3);
            adjacency.push(nbrs);
        }
        let g = NeighborGraph::from_adjacency(
            adjacency,
            vec![vec![1.0; 3]; 12],
            "toy".into(),
        )
        .unwrap();
        let build = |near: [f64; 3]| {
            let ring = [-40.0, -30.0, -20.0, -10.0, 10.0, 20.0, 30.0, 40.0];
            let mut coords = Array2::zeros((12, 1));
            coords[[1, 0]] = near[0];
            coords[[2, 0]] = near[1];
            coords[[3, 0]] = near[2];
            for (slot, &x) in ring.iter().enumerate() {
                coords[[4 + slot, 0]] = x;
            }
            let e = Embedding::new(coords, "toy".into(), Provenance::external()).unwrap();
            standardize_embedding(&e).unwrap()
        };
        (g, build)
    }

    #[test]
    fn rank_aggregation_ties_resolve_by_id() {
        // Two test embeddings swap the first and third ranks of point 0's
        // candidates, so every average rank is 2.0 and ids break the tie.
        let (g, build) = ring_graph_and_builder();
        let a = build([0.1, 0.2, 0.3]);
        let b = build([0.3, 0.2, 0.1]);
        let stats = calibration_stats(&[&a, &b], &g).unwrap();
        for &j in g.neighbors(0) {
            let (mu, _, _) = stats.edge_stats(0, j).unwrap();
            assert!(mu < stats.m_global(), "edge (0, {j}) must use the distance branch");
        }
        let refined = select_trustworthy_rank(&[&a, &b], &stats, &g, 2, 0.0).unwrap();
        assert_eq!(refined.selected(0), &[1, 2]);
        assert_abs_diff_eq!(refined.scores(0)[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(refined.scores(0)[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_selection_resists_single_outlier() {
        // Candidate edge (0, 1) is the closest in every test embedding except
        // one wild outlier; edge (0, 2) is consistently second. The outlier
        // drags the mean of (0, 1) past (0, 2) but barely moves its average
        // rank.
        let (g, build) = ring_graph_and_builder();
        let calib = build([0.1, 0.2, 0.3]);
        let stats = calibration_stats(&[&calib], &g).unwrap();
        let usual = build([0.1, 0.2, 0.3]);
        let outlier = build([30.0, 0.2, 0.3]);
        let test = [&usual, &usual, &usual, &outlier];
        let by_mean = select_trustworthy_mean(&test, &stats, &g, 1, 0.0).unwrap();
        let by_rank = select_trustworthy_rank(&test, &stats, &g, 1, 0.0).unwrap();
        assert_eq!(by_rank.selected(0), &[1], "rank aggregation must keep 1");
        assert_ne!(by_mean.selected(0), &[1], "mean must flip on the outlier");
    }

    #[test]
    fn certify_constant_negative_margins() {
        let star = vec![0.0; 100];
        let prime = vec![1.0; 100];
        let cert = certify_margin((0, 1, 2), &star, &prime, 0.05, Some(1.0)).unwrap();
        assert_abs_diff_eq!(cert.empirical_margin, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cert.variance, 0.0, epsilon = 1e-15);
        let expected = -1.0 + 20f64.ln() / 300.0;
        assert_abs_diff_eq!(cert.upper_bound, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(cert.upper_bound, -0.99001, epsilon = 1e-5);
        assert!(cert.certified);
    }

    #[test]
    fn certify_symmetric_margins_fails() {
        let star = vec![1.0, 2.0, 1.0, 2.0];
        let prime = vec![2.0, 1.0, 2.0, 1.0];
        let cert = certify_margin((0, 1, 2), &star, &prime, 0.05, None).unwrap();
        assert_abs_diff_eq!(cert.empirical_margin, 0.0, epsilon = 1e-15);
        assert!(!cert.certified);
        assert!(cert.upper_bound > 0.0);
    }

    #[test]
    fn tighter_confidence_raises_upper_bound() {
        let star = vec![0.1, 0.0, 0.2, 0.1, 0.0, 0.15];
        let prime = vec![0.5, 0.6, 0.4, 0.5, 0.7, 0.55];
        let loose = certify_margin((0, 1, 2), &star, &prime, 0.1, Some(1.0)).unwrap();
        let tight = certify_margin((0, 1, 2), &star, &prime, 0.01, Some(1.0)).unwrap();
        assert!(tight.upper_bound > loose.upper_bound);
    }

    #[test]
    fn bound_below_max_margin_rejected() {
        let star = vec![3.0, 0.0];
        let prime = vec![0.0, 0.0];
        assert!(matches!(
            certify_margin((0, 1, 2), &star, &prime, 0.05, Some(1.0)),
            Err(Error::BoundTooSmall { .. })
        ));
    }

    #[test]
    fn split_needs_five_members() {
        use crate::rashomon::{filter_by_loss, EnsembleSet};
        let members = random_members(10, 4, 70, "fake");
        let ens = EnsembleSet {
            members,
            grid: vec![0.0],
            seeds: vec![0, 1, 2, 3],
            losses: vec![1.0, 1.1, 1.2, 1.3],
            failures: vec![],
        };
        let rset = filter_by_loss(&ens, f64::INFINITY).unwrap();
        assert!(matches!(
            calibration_test_split(&ens, &rset),
            Err(Error::TooFewMembers { got: 4, min: 5 })
        ));
    }

    #[test]
    fn split_proportions() {
        use crate::rashomon::{filter_by_loss, EnsembleSet};
        let members = random_members(10, 6, 71, "fake");
        let ens = EnsembleSet {
            members,
            grid: vec![0.0],
            seeds: (0..6).collect(),
            losses: vec![1.0, 1.5, 1.1, 1.4, 1.2, 1.3],
            failures: vec![],
        };
        let rset = filter_by_loss(&ens, f64::INFINITY).unwrap();
        let (calib, test) = calibration_test_split(&ens, &rset).unwrap();
        assert_eq!(calib.len(), 2);
        assert_eq!(test.len(), 4);
        // Calibration = lowest-loss members (ids 0 and 2).
        assert!(std::ptr::eq(calib[0], &ens.members[0]));
        assert!(std::ptr::eq(calib[1], &ens.members[2]));
    }
}
