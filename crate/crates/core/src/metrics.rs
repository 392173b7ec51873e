//! embedding quality metrics.
//!
//! Triplet scores compare class-centroid distance orderings between the
//! embedding and the PCA reference; silhouette and leave-one-out kNN accuracy
//! probe class structure in the embedding itself; the SVM metric trains a
//! one-vs-rest linear classifier on Nystroem-approximated RBF features under
//! k-fold evaluation.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::engine::{dr_loss_and_grad, final_phase_weights};
use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::pairs::PairSets;
use crate::pca::PcaProjection;
use crate::rashomon::{soft_jaccard, weight_matrix};

/// Scores of one embedding; metrics whose context was absent stay `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub soft_jaccard_to_reference: Option<f64>,
    pub triplet_pca: Option<f64>,
    pub random_triplet_pca: Option<f64>,
    pub silhouette: Option<f64>,
    pub knn_accuracy: Option<f64>,
    pub svm_accuracy: Option<f64>,
    pub dr_loss: Option<f64>,
    pub seed: u64,
}

/// Settings for the kernel-SVM metric.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SvmSettings {
    pub nystroem_dim: usize,
    pub folds: usize,
}

impl Default for SvmSettings {
    fn default() -> Self {
        SvmSettings {
            nystroem_dim: 100,
            folds: 5,
        }
    }
}

/// Inputs shared by the metric suite; every field is optional and gates the
/// metrics that need it.
pub struct EvalContext<'a> {
    pub reference: Option<&'a PcaProjection>,
    pub labels: Option<&'a [usize]>,
    pub eval_graph: Option<&'a NeighborGraph>,
    pub reference_embedding: Option<&'a Embedding>,
    pub dr_pairs: Option<&'a PairSets>,
    pub gamma: f64,
    pub knn_k: usize,
    pub random_triplet_trials: usize,
    pub svm: Option<SvmSettings>,
    pub seed: u64,
}

impl<'a> Default for EvalContext<'a> {
    fn default() -> Self {
        EvalContext {
            reference: None,
            labels: None,
            eval_graph: None,
            reference_embedding: None,
            dr_pairs: None,
            gamma: crate::rashomon::DEFAULT_GAMMA,
            knn_k: 5,
            random_triplet_trials: 10_000,
            svm: None,
            seed: 0,
        }
    }
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

fn check_labels(e: &Embedding, labels: &[usize]) -> Result<()> {
    if labels.len() != e.n() {
        return Err(Error::IncompleteLabels);
    }
    Ok(())
}

/// Class centroids in an n x d coordinate matrix.
fn centroids(coords: &Array2<f64>, labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
    let dims = coords.ncols();
    let mut sums = vec![vec![0.0; dims]; classes];
    let mut counts = vec![0usize; classes];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for d in 0..dims {
            sums[c][d] += coords[[i, d]];
        }
    }
    for (sum, &count) in sums.iter_mut().zip(counts.iter()) {
        if count > 0 {
            for v in sum.iter_mut() {
                *v /= count as f64;
            }
        }
    }
    sums
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Fraction of anchored centroid-triplet distance orderings the embedding
/// preserves from the reference projection.
///
/// For every unordered class triple, each of the three members anchors one
/// comparison: does `D(anchor, b) - D(anchor, c)` keep its sign between the
/// two spaces. Exact zero differences only match exact zero differences.
pub fn triplet_pca_score(
    e: &Embedding,
    reference: &PcaProjection,
    labels: &[usize],
) -> Result<f64> {
    check_labels(e, labels)?;
    let classes = class_count(labels);
    if classes < 3 {
        return Err(Error::TooFewClasses {
            got: classes,
            min: 3,
        });
    }
    let mu_ref = centroids(&reference.projected, labels, classes);
    let mu_emb = centroids(e.coords(), labels, classes);

    let mut preserved = 0usize;
    let mut total = 0usize;
    for a in 0..classes {
        for b in (a + 1)..classes {
            for c in (b + 1)..classes {
                for (anchor, left, right) in [(a, b, c), (b, a, c), (c, a, b)] {
                    let d_ref =
                        dist(&mu_ref[anchor], &mu_ref[left]) - dist(&mu_ref[anchor], &mu_ref[right]);
                    let d_emb =
                        dist(&mu_emb[anchor], &mu_emb[left]) - dist(&mu_emb[anchor], &mu_emb[right]);
                    total += 1;
                    if sign(d_ref) == sign(d_emb) {
                        preserved += 1;
                    }
                }
            }
        }
    }
    Ok(preserved as f64 / total as f64)
}

/// Randomized variant: `trials` seeded triplets of distinct classes, scored by
/// agreement of the indicator `D(i,j) < D(i,k)` between the two spaces.
pub fn random_triplet_pca_score(
    e: &Embedding,
    reference: &PcaProjection,
    labels: &[usize],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    check_labels(e, labels)?;
    let classes = class_count(labels);
    if classes < 3 {
        return Err(Error::TooFewClasses {
            got: classes,
            min: 3,
        });
    }
    if trials == 0 {
        return Err(Error::InvalidMetricParameter {
            msg: "random triplet trials must be >= 1".into(),
        });
    }
    let mu_ref = centroids(&reference.projected, labels, classes);
    let mu_emb = centroids(e.coords(), labels, classes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0usize;
    for _ in 0..trials {
        let i = rng.random_range(0..classes);
        let mut j = rng.random_range(0..classes);
        while j == i {
            j = rng.random_range(0..classes);
        }
        let mut k = rng.random_range(0..classes);
        while k == i || k == j {
            k = rng.random_range(0..classes);
        }
        let label = dist(&mu_ref[i], &mu_ref[j]) < dist(&mu_ref[i], &mu_ref[k]);
        let prediction = dist(&mu_emb[i], &mu_emb[j]) < dist(&mu_emb[i], &mu_emb[k]);
        if label == prediction {
            agree += 1;
        }
    }
    Ok(agree as f64 / trials as f64)
}

/// Mean silhouette over all points, with labels as clusters. Points in
/// singleton classes score zero.
pub fn silhouette_score(e: &Embedding, labels: &[usize]) -> Result<f64> {
    check_labels(e, labels)?;
    let classes = class_count(labels);
    let distinct = {
        let mut seen = vec![false; classes];
        for &c in labels {
            seen[c] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::TooFewClasses {
            got: distinct,
            min: 2,
        });
    }
    let n = e.n();
    let mut class_sizes = vec![0usize; classes];
    for &c in labels {
        class_sizes[c] += 1;
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        if class_sizes[own] < 2 {
            continue; // singleton: s_i = 0
        }
        let mut sums = vec![0.0; classes];
        for j in 0..n {
            if j == i {
                continue;
            }
            sums[labels[j]] += e.distance(i, j);
        }
        let a = sums[own] / (class_sizes[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..classes {
            if c == own || class_sizes[c] == 0 {
                continue;
            }
            b = b.min(sums[c] / class_sizes[c] as f64);
        }
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

/// Leave-one-out k-nearest-neighbor classification accuracy in the embedding.
/// Neighbor ties break toward the lower point id, vote ties toward the
/// smaller class id.
pub fn knn_accuracy(e: &Embedding, labels: &[usize], k: usize) -> Result<f64> {
    check_labels(e, labels)?;
    let n = e.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidMetricParameter {
            msg: format!("knn k must satisfy 1 <= k < n, got k={k}, n={n}"),
        });
    }
    let classes = class_count(labels);
    let mut correct = 0usize;
    let mut heap: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        heap.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            heap.push((e.distance(i, j), j));
        }
        // Partial selection of the k nearest by (distance, id).
        heap.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1))
        });
        let mut votes = vec![0usize; classes];
        for &(_, j) in heap.iter().take(k) {
            votes[labels[j]] += 1;
        }
        let winner = votes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .expect("at least one class");
        if winner == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// k-fold accuracy of a one-vs-rest linear classifier on Nystroem RBF
/// features of the embedding.
///
/// Per fold: `nystroem_dim` landmarks are sampled from the training rows, the
/// RBF bandwidth is the median pairwise training distance, features are
/// `K_nl . K_ll^{-1/2}` (symmetric pseudo-inverse square root with eigenvalue
/// floor 1e-10), and each class trains by full-batch hinge-loss gradient
/// descent (500 epochs, learning rate 0.1, L2 1e-4).
pub fn svm_accuracy(
    e: &Embedding,
    labels: &[usize],
    nystroem_dim: usize,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    check_labels(e, labels)?;
    let n = e.n();
    if folds < 2 || folds > n {
        return Err(Error::InvalidMetricParameter {
            msg: format!("folds must satisfy 2 <= folds <= n, got {folds}"),
        });
    }
    let min_train = n * (folds - 1) / folds;
    if nystroem_dim == 0 || nystroem_dim > min_train {
        return Err(Error::InvalidMetricParameter {
            msg: format!(
                "nystroem_dim must satisfy 1 <= dim <= n(folds-1)/folds = {min_train}, got {nystroem_dim}"
            ),
        });
    }
    let classes = class_count(labels);
    let coords = e.coords();

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut fold_accuracy = Vec::with_capacity(folds);
    for f in 0..folds {
        let start = f * n / folds;
        let end = (f + 1) * n / folds;
        let test_idx: Vec<usize> = order[start..end].to_vec();
        let train_idx: Vec<usize> = order[..start]
            .iter()
            .chain(order[end..].iter())
            .copied()
            .collect();

        // Landmarks without replacement from the training rows.
        let mut pool = train_idx.clone();
        pool.shuffle(&mut rng);
        let landmarks: Vec<usize> = pool[..nystroem_dim].to_vec();

        // Median pairwise training distance as the RBF bandwidth.
        let mut pairwise = Vec::with_capacity(train_idx.len() * (train_idx.len() - 1) / 2);
        for (a, &i) in train_idx.iter().enumerate() {
            for &j in train_idx.iter().skip(a + 1) {
                pairwise.push(e.distance(i, j));
            }
        }
        pairwise.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mid = pairwise.len() / 2;
        let bandwidth = if pairwise.len() % 2 == 0 {
            (pairwise[mid - 1] + pairwise[mid]) / 2.0
        } else {
            pairwise[mid]
        };
        if bandwidth < 1e-12 {
            return Err(Error::DegenerateKernel);
        }
        let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
        let kernel = |i: usize, j: usize| {
            let mut d2 = 0.0;
            for d in 0..coords.ncols() {
                let v = coords[[i, d]] - coords[[j, d]];
                d2 += v * v;
            }
            (-d2 * inv_two_h2).exp()
        };

        // K_ll^{-1/2} via symmetric eigendecomposition with a floor.
        let dim = nystroem_dim;
        let k_ll = nalgebra::DMatrix::from_fn(dim, dim, |r, c| kernel(landmarks[r], landmarks[c]));
        let eigen = k_ll.symmetric_eigen();
        let mut inv_sqrt: nalgebra::DMatrix<f64> = nalgebra::DMatrix::zeros(dim, dim);
        for idx in 0..dim {
            let lambda = eigen.eigenvalues[idx];
            if lambda > 1e-10 {
                let scale = 1.0 / lambda.sqrt();
                let v = eigen.eigenvectors.column(idx);
                for r in 0..dim {
                    for c in 0..dim {
                        inv_sqrt[(r, c)] += scale * v[r] * v[c];
                    }
                }
            }
        }

        let features = |rows: &[usize]| -> Array2<f64> {
            let mut phi = Array2::zeros((rows.len(), dim + 1));
            for (out, &i) in rows.iter().enumerate() {
                for c in 0..dim {
                    let mut acc = 0.0;
                    for l in 0..dim {
                        acc += kernel(i, landmarks[l]) * inv_sqrt[(l, c)];
                    }
                    phi[[out, c]] = acc;
                }
                phi[[out, dim]] = 1.0; // bias feature
            }
            phi
        };
        let phi_train = features(&train_idx);
        let phi_test = features(&test_idx);

        // One-vs-rest hinge classifiers, full-batch gradient descent.
        let mut weights = vec![vec![0.0f64; dim + 1]; classes];
        let lr = 0.1;
        let l2 = 1e-4;
        let n_train = train_idx.len() as f64;
        for (c, w) in weights.iter_mut().enumerate() {
            let targets: Vec<f64> = train_idx
                .iter()
                .map(|&i| if labels[i] == c { 1.0 } else { -1.0 })
                .collect();
            for _epoch in 0..500 {
                let mut grad = vec![0.0f64; dim + 1];
                for (row, &t) in targets.iter().enumerate() {
                    let mut margin = 0.0;
                    for d in 0..=dim {
                        margin += w[d] * phi_train[[row, d]];
                    }
                    if t * margin < 1.0 {
                        for d in 0..=dim {
                            grad[d] -= t * phi_train[[row, d]];
                        }
                    }
                }
                for d in 0..=dim {
                    // L2 on the feature weights, not the bias.
                    let reg = if d < dim { 2.0 * l2 * w[d] } else { 0.0 };
                    w[d] -= lr * (grad[d] / n_train + reg);
                }
            }
        }

        let mut correct = 0usize;
        for (row, &i) in test_idx.iter().enumerate() {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (c, w) in weights.iter().enumerate() {
                let mut score = 0.0;
                for d in 0..=dim {
                    score += w[d] * phi_test[[row, d]];
                }
                if score > best.0 {
                    best = (score, c);
                }
            }
            if best.1 == labels[i] {
                correct += 1;
            }
        }
        fold_accuracy.push(correct as f64 / test_idx.len() as f64);
    }

    Ok(fold_accuracy.iter().sum::<f64>() / folds as f64)
}

/// Computes every metric whose context is present; absent context leaves the
/// corresponding score `None`. Metric-level failures (too few classes, a
/// degenerate kernel) propagate as errors.
pub fn evaluate(e: &Embedding, ctx: &EvalContext) -> Result<MetricReport> {
    let mut report = MetricReport {
        soft_jaccard_to_reference: None,
        triplet_pca: None,
        random_triplet_pca: None,
        silhouette: None,
        knn_accuracy: None,
        svm_accuracy: None,
        dr_loss: None,
        seed: ctx.seed,
    };

    if let (Some(g), Some(reference_embedding)) = (ctx.eval_graph, ctx.reference_embedding) {
        let w_e = weight_matrix(e, g, ctx.gamma)?;
        let w_r = weight_matrix(reference_embedding, g, ctx.gamma)?;
        report.soft_jaccard_to_reference = Some(soft_jaccard(&w_e, &w_r)?);
    }
    if let (Some(reference), Some(labels)) = (ctx.reference, ctx.labels) {
        report.triplet_pca = Some(triplet_pca_score(e, reference, labels)?);
        report.random_triplet_pca = Some(random_triplet_pca_score(
            e,
            reference,
            labels,
            ctx.random_triplet_trials,
            ctx.seed,
        )?);
    }
    if let Some(labels) = ctx.labels {
        report.silhouette = Some(silhouette_score(e, labels)?);
        report.knn_accuracy = Some(knn_accuracy(e, labels, ctx.knn_k)?);
        if let Some(svm) = ctx.svm {
            report.svm_accuracy = Some(svm_accuracy(
                e,
                labels,
                svm.nystroem_dim,
                svm.folds,
                ctx.seed,
            )?);
        }
    }
    if let Some(pairs) = ctx.dr_pairs {
        report.dr_loss = Some(dr_loss_and_grad(&e.coords().view(), pairs, &final_phase_weights()).0);
    }
    Ok(report)
}

/// Writes a single report as JSON.
pub fn write_report_json(path: &Path, report: &MetricReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("serializable");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Writes a batch of named reports as CSV, one row per embedding.
pub fn write_batch_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut out = String::from(
        "embedding,soft_jaccard_to_reference,triplet_pca,random_triplet_pca,silhouette,knn_accuracy,svm_accuracy,dr_loss\n",
    );
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for (name, r) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            name,
            cell(r.soft_jaccard_to_reference),
            cell(r.triplet_pca),
            cell(r.random_triplet_pca),
            cell(r.silhouette),
            cell(r.knn_accuracy),
            cell(r.svm_accuracy),
            cell(r.dr_loss),
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
