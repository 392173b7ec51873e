//! principal-component reference projections.
//!
//! The projection is the alignment target for the PCA-informed regularizer
//! and the reference space for the triplet metrics, so its output must be
//! reproducible: components carry a fixed sign convention (the entry of
//! largest magnitude in each direction is nonnegative) and are ordered by
//! non-increasing explained variance.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Above this feature count the dense eigendecomposition gives way to power
/// iteration with deflation.
const DENSE_LIMIT: usize = 512;
const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 1000;

/// Top principal directions of a dataset, with the projected coordinates.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// p x d orthonormal direction matrix.
    pub components: Array2<f64>,
    /// Per-feature centering vector (length p).
    pub mean: Array1<f64>,
    /// (points - mean) . components; n x d.
    pub projected: Array2<f64>,
    /// Sample variance (divisor n-1) captured by each direction,
    /// non-increasing.
    pub explained_variance: Vec<f64>,
}

/// Projects a dataset onto its top `dims` principal directions.
///
/// Centers the features (no per-feature rescaling) and picks directions by
/// explained variance. Errors when `dims` exceeds `min(n-1, p)` or when the
/// data's rank is below `dims`.
pub fn pca_project(d: &Dataset, dims: usize) -> Result<PcaProjection> {
    let n = d.n();
    let p = d.p();
    let max_dims = (n - 1).min(p);
    if dims == 0 || dims > max_dims {
        return Err(Error::TooManyComponents {
            dims,
            max: max_dims,
        });
    }

    let mean = d
        .points()
        .mean_axis(ndarray::Axis(0))
        .expect("n >= 3 by construction");
    let mut centered = d.points().clone();
    for mut row in centered.rows_mut() {
        for (v, m) in row.iter_mut().zip(mean.iter()) {
            *v -= m;
        }
    }

    // Sample covariance, divisor n-1.
    let cov = covariance(&centered);
    let eigen = if p <= DENSE_LIMIT {
        dense_top_eigenpairs(&cov, dims)?
    } else {
        power_iteration_eigenpairs(&cov, dims)?
    };

    let scale = cov.diag().iter().sum::<f64>().max(1.0);
    let achievable = eigen
        .values
        .iter()
        .take_while(|&&v| v > 1e-12 * scale)
        .count();
    if achievable < dims {
        return Err(Error::RankDeficient {
            requested: dims,
            achievable,
        });
    }

    let mut components = eigen.vectors;
    fix_signs(&mut components);
    let projected = centered.dot(&components);

    Ok(PcaProjection {
        components,
        mean,
        projected,
        explained_variance: eigen.values,
    })
}

fn covariance(centered: &Array2<f64>) -> Array2<f64> {
    let n = centered.nrows() as f64;
    centered.t().dot(centered) / (n - 1.0)
}

struct EigenPairs {
    /// Decreasing.
    values: Vec<f64>,
    /// p x dims, columns aligned with `values`.
    vectors: Array2<f64>,
}

fn dense_top_eigenpairs(cov: &Array2<f64>, dims: usize) -> Result<EigenPairs> {
    let p = cov.nrows();
    let m = nalgebra::DMatrix::from_fn(p, p, |r, c| cov[[r, c]]);
    let eigen = m.symmetric_eigen();

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    let mut values = Vec::with_capacity(dims);
    let mut vectors = Array2::zeros((p, dims));
    for (out, &idx) in order.iter().take(dims).enumerate() {
        values.push(eigen.eigenvalues[idx]);
        for r in 0..p {
            vectors[[r, out]] = eigen.eigenvectors[(r, idx)];
        }
    }
    Ok(EigenPairs { values, vectors })
}

/// Power iteration with deflation for wide feature matrices. The start vector
/// comes from a fixed-seed generator so repeated runs agree bit for bit.
fn power_iteration_eigenpairs(cov: &Array2<f64>, dims: usize) -> Result<EigenPairs> {
    let p = cov.nrows();
    let mut deflated = cov.clone();
    let mut values = Vec::with_capacity(dims);
    let mut vectors = Array2::zeros((p, dims));
    let mut rng = ChaCha8Rng::seed_from_u64(0x7061_6361);

    for out in 0..dims {
        let mut v: Array1<f64> = Array1::from_iter(
            (0..p).map(|_| StandardNormal.sample(&mut rng)),
        );
        normalize(&mut v);

        let mut converged = false;
        for _ in 0..POWER_MAX_ITERS {
            let mut next = deflated.dot(&v);
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                // Deflated matrix annihilates the iterate: remaining spectrum
                // is numerically zero.
                values.push(0.0);
                converged = true;
                break;
            }
            next.mapv_inplace(|x| x / norm);
            let delta = next
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            v = next;
            // Sign flips between iterations mean the eigenvalue is negative
            // (impossible for a covariance up to round-off) or oscillating;
            // the abs-delta check handles the aligned case.
            if delta < POWER_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PowerIterationDiverged {
                max_iters: POWER_MAX_ITERS,
            });
        }

        let lambda = v.dot(&deflated.dot(&v));
        if values.len() == out {
            values.push(lambda);
        }
        for r in 0..p {
            vectors[[r, out]] = v[r];
        }
        // Deflate: remove the found component from the operator.
        for r in 0..p {
            for c in 0..p {
                deflated[[r, c]] -= lambda * v[r] * v[c];
            }
        }
    }
    Ok(EigenPairs { values, vectors })
}

fn normalize(v: &mut Array1<f64>) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.mapv_inplace(|x| x / norm);
    }
}

/// Flips each column so its entry of largest magnitude is nonnegative
/// (first index wins ties).
fn fix_signs(components: &mut Array2<f64>) {
    let (p, d) = components.dim();
    for c in 0..d {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for r in 0..p {
            let a = components[[r, c]].abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        if components[[best, c]] < 0.0 {
            for r in 0..p {
                components[[r, c]] = -components[[r, c]];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;

    fn dataset_from(points: Array2<f64>) -> Dataset {
        Dataset::new(points, None, None).unwrap()
    }

    /// Independent oracle: cyclic Jacobi eigendecomposition of a symmetric
    /// matrix. Kept free of the production eigensolvers on purpose.
    fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[[i, j]] * a[[i, j]];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eig
    }

    #[test]
    fn axis_aligned_variances_recovered() {
        // Population variances 4 and 1 on the coordinate axes.
        let n = 8;
        let mut pts = Array2::zeros((n, 2));
        for i in 0..n {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            pts[[i, 0]] = 2.0 * sign;
            pts[[i, 1]] = 1.0 * sign;
        }
        // Decorrelate the two axes so the components stay axis-aligned.
        for i in 0..n {
            let flip = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
            pts[[i, 1]] *= flip;
        }
        let d = dataset_from(pts);
        let proj = pca_project(&d, 2).unwrap();
        let scale = n as f64 / (n as f64 - 1.0);
        assert_abs_diff_eq!(proj.explained_variance[0], 4.0 * scale, epsilon = 1e-9);
        assert_abs_diff_eq!(proj.explained_variance[1], 1.0 * scale, epsilon = 1e-9);
        assert_abs_diff_eq!(proj.components[[0, 0]].abs(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(proj.components[[1, 1]].abs(), 1.0, epsilon = 1e-9);
        // Sign convention: dominant entries nonnegative.
        assert!(proj.components[[0, 0]] > 0.0);
        assert!(proj.components[[1, 1]] > 0.0);
    }

    #[test]
    fn rotated_plane_recovered() {
        let angle = 30f64.to_radians();
        let (c, s) = (angle.cos(), angle.sin());
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Array2::zeros((n, 2));
        for i in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let x = 3.0 * a;
            let y = 0.5 * b;
            pts[[i, 0]] = c * x - s * y;
            pts[[i, 1]] = s * x + c * y;
        }
        let d = dataset_from(pts);
        let proj = pca_project(&d, 2).unwrap();
        // Leading direction should match the rotated x-axis up to sign.
        let dot = (proj.components[[0, 0]] * c + proj.components[[1, 0]] * s).abs();
        assert!(dot > 1.0 - 1e-2, "leading direction misaligned: {dot}");
        // Orthonormality.
        let gram = proj.components.t().dot(&proj.components);
        assert_abs_diff_eq!(gram[[0, 0]], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(gram[[1, 1]], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(gram[[0, 1]], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn eigenvalues_match_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = Array2::from_shape_fn((50, 6), |_| rng.random_range(-1.0..1.0));
        let d = dataset_from(pts);
        let proj = pca_project(&d, 6).unwrap();

        let mean = d.points().mean_axis(ndarray::Axis(0)).unwrap();
        let mut centered = d.points().clone();
        for mut row in centered.rows_mut() {
            for (v, m) in row.iter_mut().zip(mean.iter()) {
                *v -= m;
            }
        }
        let cov = centered.t().dot(&centered) / 49.0;
        let oracle = jacobi_eigenvalues(cov);
        for (got, want) in proj.explained_variance.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn projected_variance_equals_explained() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = Array2::from_shape_fn((40, 5), |_| rng.random_range(-2.0..2.0));
        let d = dataset_from(pts);
        let proj = pca_project(&d, 3).unwrap();
        for c in 0..3 {
            let col = proj.projected.column(c);
            let mean = col.sum() / col.len() as f64;
            let var =
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() as f64 - 1.0);
            assert_abs_diff_eq!(var, proj.explained_variance[c], epsilon = 1e-8);
        }
        assert!(proj.explained_variance[0] >= proj.explained_variance[1]);
        assert!(proj.explained_variance[1] >= proj.explained_variance[2]);
    }

    #[test]
    fn rank_deficiency_reports_achievable_rank() {
        // Rank-1 data in 3 features.
        let mut pts = Array2::zeros((10, 3));
        for i in 0..10 {
            let t = i as f64;
            pts[[i, 0]] = t;
            pts[[i, 1]] = 2.0 * t;
            pts[[i, 2]] = -t;
        }
        let d = dataset_from(pts);
        let err = pca_project(&d, 2).unwrap_err();
        match err {
            Error::RankDeficient {
                requested,
                achievable,
            } => {
                assert_eq!(requested, 2);
                assert_eq!(achievable, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn power_iteration_agrees_with_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts = Array2::from_shape_fn((30, 8), |_| rng.random_range(-1.0..1.0));
        let centered = {
            let mean = pts.mean_axis(ndarray::Axis(0)).unwrap();
            let mut c = pts.clone();
            for mut row in c.rows_mut() {
                for (v, m) in row.iter_mut().zip(mean.iter()) {
                    *v -= m;
                }
            }
            c
        };
        let cov = covariance(&centered);
        let dense = dense_top_eigenpairs(&cov, 3).unwrap();
        let power = power_iteration_eigenpairs(&cov, 3).unwrap();
        for (a, b) in dense.values.iter().zip(power.values.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        for c in 0..3 {
            let dot: f64 = (0..8)
                .map(|r| dense.vectors[[r, c]] * power.vectors[[r, c]])
                .sum();
            assert!(dot.abs() > 1.0 - 1e-6, "component {c} misaligned: {dot}");
        }
    }

    #[test]
    fn dims_beyond_rank_limit_rejected() {
        let d = dataset_from(Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64));
        assert!(matches!(
            pca_project(&d, 3),
            Err(Error::TooManyComponents { dims: 3, max: 2 })
        ));
    }
}
