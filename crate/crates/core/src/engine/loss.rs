//! Objective terms and their analytic gradients.
//!
//! The embedding objective is a sum of a neighborhood-preservation term over
//! sampled pairs and two optional alignment regularizers. With
//! `t = ||y_i - y_j||^2 + 1`:
//!
//! * neighbor pairs contribute `t / (10 + t)` (attractive),
//! * mid-near pairs contribute `t / (10000 + t)` (weakly attractive),
//! * further pairs contribute `1 / (1 + t)` (repulsive),
//!
//! each averaged within its pair class and scaled by a phase weight. The PCA
//! alignment term penalizes `(1 - cos(u, v))^2` between embedding-space and
//! reference-space difference vectors of non-neighbor pairs. The concept
//! alignment term penalizes squared deviations between standardized axis-0
//! coordinate differences and standardized concept differences.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pairs::PairSets;

/// Pair-class weights for the neighborhood term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseWeights {
    pub w_neighbors: f64,
    pub w_mid_near: f64,
    pub w_further: f64,
}

/// Weights in effect at a given iteration of a `total`-iteration run:
/// the mid-near weight anneals 1000 -> 3 over the first 10% of iterations,
/// then holds (3, 3, 1), then (1, 0, 1) for the final 40%.
pub fn phase_weights(iter: usize, total: usize) -> PhaseWeights {
    let p1 = (((0.1 * total as f64).round() as usize).max(1)).min(total);
    let p3 = (0.4 * total as f64).round() as usize;
    let phase2_end = total.saturating_sub(p3).max(p1);
    if iter < p1 {
        let r = iter as f64 / p1 as f64;
        PhaseWeights {
            w_neighbors: 2.0,
            w_mid_near: 1000.0 * (1.0 - r) + 3.0 * r,
            w_further: 1.0,
        }
    } else if iter < phase2_end {
        PhaseWeights {
            w_neighbors: 3.0,
            w_mid_near: 3.0,
            w_further: 1.0,
        }
    } else {
        PhaseWeights {
            w_neighbors: 1.0,
            w_mid_near: 0.0,
            w_further: 1.0,
        }
    }
}

/// Weights of the last optimization phase; fixed reference functional for
/// comparing losses across embeddings.
pub fn final_phase_weights() -> PhaseWeights {
    PhaseWeights {
        w_neighbors: 1.0,
        w_mid_near: 0.0,
        w_further: 1.0,
    }
}

const CHUNK: usize = 1024;

/// Neighborhood-preservation loss and its gradient.
///
/// Each pair class is averaged over its own pair count and scaled by the
/// matching phase weight. Gradient accumulation is chunked with a fixed
/// reduction order, so results do not depend on the thread count.
pub fn dr_loss_and_grad(
    coords: &ArrayView2<f64>,
    pairs: &PairSets,
    weights: &PhaseWeights,
) -> (f64, Array2<f64>) {
    let (n, dims) = coords.dim();
    debug_assert_eq!(n, pairs.n());
    let mut grad = Array2::zeros((n, dims));
    let mut loss = 0.0;

    // (pairs, weight, attract): attract terms are t/(c+t), the repulsive
    // further term is 1/(1+t).
    type PairClass<'a> = (&'a [(usize, usize)], f64, Option<f64>);
    let classes: [PairClass; 3] = [
        (&pairs.neighbor_pairs, weights.w_neighbors, Some(10.0)),
        (&pairs.mid_near_pairs, weights.w_mid_near, Some(10000.0)),
        (&pairs.further_pairs, weights.w_further, None),
    ];

    for (list, w, denom) in classes {
        if list.is_empty() || w == 0.0 {
            continue;
        }
        let scale = w / list.len() as f64;
        let (class_loss, class_grad) = accumulate_pairs(coords, list, |t| match denom {
            Some(c) => (t / (c + t), c / ((c + t) * (c + t))),
            None => (1.0 / (1.0 + t), -1.0 / ((1.0 + t) * (1.0 + t))),
        });
        loss += scale * class_loss;
        grad.iter_mut()
            .zip(class_grad.iter())
            .for_each(|(g, &c)| *g += scale * c);
    }
    (loss, grad)
}

/// Sums `term(t)` over pairs with `t = ||y_i - y_j||^2 + 1` and accumulates
/// `d term / d t * d t / d y` into a flat gradient. `term` returns
/// (value, derivative w.r.t. t).
fn accumulate_pairs<F>(
    coords: &ArrayView2<f64>,
    list: &[(usize, usize)],
    term: F,
) -> (f64, Vec<f64>)
where
    F: Fn(f64) -> (f64, f64) + Sync,
{
    let (n, dims) = coords.dim();
    let partials: Vec<(f64, Vec<f64>)> = list
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n * dims];
            let mut loss = 0.0;
            let mut diff = [0.0f64; 8];
            for &(i, j) in chunk {
                let mut t = 1.0;
                for d in 0..dims {
                    let v = coords[[i, d]] - coords[[j, d]];
                    diff[d] = v;
                    t += v * v;
                }
                let (value, dt) = term(t);
                loss += value;
                for d in 0..dims {
                    let g = dt * 2.0 * diff[d];
                    grad[i * dims + d] += g;
                    grad[j * dims + d] -= g;
                }
            }
            (loss, grad)
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; n * dims];
    for (l, g) in partials {
        loss += l;
        grad.iter_mut().zip(g.iter()).for_each(|(a, &b)| *a += b);
    }
    (loss, grad)
}

/// Directional alignment loss against a reference projection.
///
/// Mean over the given non-neighbor pairs of `(1 - cos(u, v))^2`, where `u`
/// is the embedding difference and `v` the reference difference. Pairs whose
/// difference norm falls below 1e-12 on either side contribute zero.
pub fn pca_alignment_loss_and_grad(
    coords: &ArrayView2<f64>,
    reference: &ArrayView2<f64>,
    far_pairs: &[(usize, usize)],
) -> Result<(f64, Array2<f64>)> {
    let (n, dims) = coords.dim();
    if far_pairs.is_empty() {
        return Err(Error::EmptyFarPairs);
    }
    if reference.dim() != (n, dims) {
        return Err(Error::InvalidInput {
            msg: format!(
                "reference projection is {:?}, embedding is {:?}",
                reference.dim(),
                coords.dim()
            ),
        });
    }

    let inv_count = 1.0 / far_pairs.len() as f64;
    let partials: Vec<(f64, Vec<f64>)> = far_pairs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n * dims];
            let mut loss = 0.0;
            let mut u = [0.0f64; 8];
            let mut v = [0.0f64; 8];
            for &(i, j) in chunk {
                let mut nu2 = 0.0;
                let mut nv2 = 0.0;
                let mut dot = 0.0;
                for d in 0..dims {
                    u[d] = coords[[i, d]] - coords[[j, d]];
                    v[d] = reference[[i, d]] - reference[[j, d]];
                    nu2 += u[d] * u[d];
                    nv2 += v[d] * v[d];
                    dot += u[d] * v[d];
                }
                let nu = nu2.sqrt();
                let nv = nv2.sqrt();
                if nu < 1e-12 || nv < 1e-12 {
                    continue;
                }
                let cos = dot / (nu * nv);
                let one_minus = 1.0 - cos;
                loss += one_minus * one_minus;
                // d/du (1-cos)^2 = -2 (1-cos) * (v/(nu nv) - cos u / nu^2)
                let a = -2.0 * one_minus;
                for d in 0..dims {
                    let dcos = v[d] / (nu * nv) - cos * u[d] / nu2;
                    let g = a * dcos;
                    grad[i * dims + d] += g;
                    grad[j * dims + d] -= g;
                }
            }
            (loss, grad)
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, dims));
    for (l, g) in partials {
        loss += l;
        grad.iter_mut().zip(g.iter()).for_each(|(a, &b)| *a += b);
    }
    loss *= inv_count;
    grad.mapv_inplace(|g| g * inv_count);
    Ok((loss, grad))
}

/// Concept alignment loss tying standardized axis-0 coordinate differences to
/// standardized concept differences on pairs where both concepts are present.
///
/// Axis-0 coordinates are z-scored over all points, concepts over the
/// non-missing points. The gradient flows only into axis-0 and accounts for
/// the coordinate z-scoring. A zero-variance axis contributes a flat (zero)
/// gradient.
pub fn concept_alignment_loss_and_grad(
    coords: &ArrayView2<f64>,
    concepts: &[Option<f64>],
    far_pairs: &[(usize, usize)],
) -> Result<(f64, Array2<f64>)> {
    let (n, dims) = coords.dim();
    if concepts.len() != n {
        return Err(Error::RowCountMismatch {
            rows: concepts.len(),
            expected: n,
        });
    }
    if far_pairs.is_empty() {
        return Err(Error::EmptyFarPairs);
    }

    let present: Vec<f64> = concepts.iter().flatten().copied().collect();
    if present.len() < 2 {
        return Err(Error::TooFewConcepts {
            present: present.len(),
        });
    }
    let mu_l = present.iter().sum::<f64>() / present.len() as f64;
    let var_l = present.iter().map(|v| (v - mu_l) * (v - mu_l)).sum::<f64>()
        / present.len() as f64;
    if var_l < 1e-24 {
        return Err(Error::ZeroConceptVariance);
    }
    let sigma_l = var_l.sqrt();
    let l_std: Vec<Option<f64>> = concepts
        .iter()
        .map(|c| c.map(|v| (v - mu_l) / sigma_l))
        .collect();

    let x: Vec<f64> = (0..n).map(|i| coords[[i, 0]]).collect();
    let mu = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
    let degenerate_axis = var < 1e-24;
    let sigma = var.sqrt();
    let y_std: Vec<f64> = if degenerate_axis {
        vec![0.0; n]
    } else {
        x.iter().map(|v| (v - mu) / sigma).collect()
    };

    let mut loss = 0.0;
    let mut g_tilde = vec![0.0; n];
    let mut eligible = 0usize;
    for &(i, j) in far_pairs {
        let (Some(li), Some(lj)) = (l_std[i], l_std[j]) else {
            continue;
        };
        let e = y_std[i] - y_std[j] - (li - lj);
        loss += e * e;
        g_tilde[i] += 2.0 * e;
        g_tilde[j] -= 2.0 * e;
        eligible += 1;
    }
    if eligible == 0 {
        return Err(Error::NoEligibleConceptPair);
    }
    let inv = 1.0 / eligible as f64;
    loss *= inv;

    let mut grad = Array2::zeros((n, dims));
    if !degenerate_axis {
        let s1: f64 = g_tilde.iter().sum();
        let s2: f64 = g_tilde.iter().zip(y_std.iter()).map(|(a, b)| a * b).sum();
        let n_f = n as f64;
        for i in 0..n {
            grad[[i, 0]] = inv * (g_tilde[i] - s1 / n_f - y_std[i] * s2 / n_f) / sigma;
        }
    }
    Ok((loss, grad))
}
