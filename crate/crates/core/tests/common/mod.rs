//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)] // each test binary uses its own subset

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rashomon_dr::data::Dataset;
use rashomon_dr::graph::NeighborGraph;

/// Labeled Gaussian blobs around explicit centers, lifted to `p` dimensions
/// (all coordinates beyond each center's length are noise-only).
pub fn blobs(centers: &[Vec<f64>], per: usize, p: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spread).unwrap();
    let n = centers.len() * per;
    let mut pts = Array2::zeros((n, p));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per {
            let row = c * per + i;
            for f in 0..p {
                let base = center.get(f).copied().unwrap_or(0.0);
                pts[[row, f]] = base + normal.sample(&mut rng);
            }
            labels.push(Some(c as u32));
        }
    }
    Dataset::new(pts, Some(labels), None).unwrap()
}

/// Three labeled Gaussian blobs whose leading-plane geometry and
/// high-dimensional point distances disagree.
///
/// Centers sit on a line in feature 0 (A at 0, C at 12, B at 30), so the
/// principal-plane centroid ordering is AC < CB < AB. Blob C additionally
/// spreads widely across features 2..9 with a centered mean, which inflates
/// every point distance touching C without moving its centroid or entering
/// the top principal direction: mean point distances order AB below both AC
/// and CB. A neighborhood-driven layout therefore places C outside the A-B
/// segment, while the centroid reference wants it between.
pub fn oblique_three_blobs(per: usize, p: usize, seed: u64) -> Dataset {
    assert!(p >= 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let centers = [0.0, 30.0, 12.0];
    let n = 3 * per;
    let mut pts = Array2::zeros((n, p));
    let mut labels = Vec::with_capacity(n);
    for (c, &cx) in centers.iter().enumerate() {
        for i in 0..per {
            let row = c * per + i;
            pts[[row, 0]] = cx + 2.0 * unit.sample(&mut rng);
            pts[[row, 1]] = 2.0 * unit.sample(&mut rng);
            let spread = if c == 2 { 14.0 } else { 1.0 };
            for f in 2..p {
                pts[[row, f]] = spread * unit.sample(&mut rng);
            }
            labels.push(Some(c as u32));
        }
    }
    Dataset::new(pts, Some(labels), None).unwrap()
}

/// `clusters` Gaussian clusters spaced `step` apart along a random direction
/// in R^p, with the cluster index as both label and concept value.
pub fn line_clusters(
    clusters: usize,
    per: usize,
    p: usize,
    step: f64,
    spread: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spread).unwrap();
    let mut direction: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut direction {
        *v /= norm;
    }
    let n = clusters * per;
    let mut pts = Array2::zeros((n, p));
    let mut labels = Vec::with_capacity(n);
    let mut concepts = Vec::with_capacity(n);
    for c in 0..clusters {
        let t = step * c as f64;
        for i in 0..per {
            let row = c * per + i;
            for f in 0..p {
                pts[[row, f]] = t * direction[f] + normal.sample(&mut rng);
            }
            labels.push(Some(c as u32));
            concepts.push(Some(c as f64));
        }
    }
    Dataset::new(pts, Some(labels), Some(concepts)).unwrap()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| values[x].partial_cmp(&values[y]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Rewires a seeded `fraction` of candidate edges to uniformly chosen
/// cross-cluster targets, recomputing the stored distances. Returns the
/// corrupted graph and the fraction of its edges that are cross-cluster.
pub fn corrupt_graph_cross_cluster(
    g: &NeighborGraph,
    d: &Dataset,
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> (NeighborGraph, f64) {
    let n = g.n();
    let m = g.m();
    let mut adjacency: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i).to_vec()).collect();
    let mut distances: Vec<Vec<f64>> = (0..n).map(|i| g.neighbor_distances(i).to_vec()).collect();

    let mut slots: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..m).map(move |s| (i, s)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slots.shuffle(&mut rng);
    let rewired = (fraction * slots.len() as f64).round() as usize;

    for &(i, slot) in slots.iter().take(rewired) {
        // Uniform cross-cluster target not already adjacent to i.
        loop {
            let j = rng.random_range(0..n);
            if j == i || labels[j] == labels[i] || adjacency[i].contains(&j) {
                continue;
            }
            adjacency[i][slot] = j;
            distances[i][slot] = d.distance(i, j);
            break;
        }
    }

    let corrupted =
        NeighborGraph::from_adjacency(adjacency, distances, g.dataset_id().to_owned()).unwrap();
    let cross = cross_cluster_fraction(&corrupted, labels);
    (corrupted, cross)
}

/// Fraction of directed edges joining different clusters.
pub fn cross_cluster_fraction(g: &NeighborGraph, labels: &[usize]) -> f64 {
    let mut bad = 0usize;
    let mut total = 0usize;
    for i in 0..g.n() {
        for &j in g.neighbors(i) {
            total += 1;
            if labels[i] != labels[j] {
                bad += 1;
            }
        }
    }
    bad as f64 / total as f64
}
