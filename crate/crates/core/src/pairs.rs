//! Pair sets driving the embedding objective: neighbor pairs pull local
//! structure together, mid-near pairs anchor intermediate layout, further
//! pairs push everything else apart.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::NeighborGraph;

/// Sampled point pairs, all expressed as ordered (i, j) with j != i.
///
/// Further pairs never touch the candidate m-NN adjacency; the exclusion
/// structure is kept so the optimizer can resample alignment pairs with the
/// same rule.
#[derive(Debug, Clone)]
pub struct PairSets {
    pub neighbor_pairs: Vec<(usize, usize)>,
    pub mid_near_pairs: Vec<(usize, usize)>,
    pub further_pairs: Vec<(usize, usize)>,
    pub seed: u64,
    n: usize,
    further_per_point: usize,
    exclusions: Vec<Vec<usize>>,
}

impl PairSets {
    /// Assembles explicit pair lists, e.g. for hand-built scenarios.
    ///
    /// The resample exclusion structure is derived from the neighbor pairs
    /// alone, so only use the result with the optimizer when the neighbor
    /// pairs cover the full candidate adjacency.
    pub fn from_parts(
        neighbor_pairs: Vec<(usize, usize)>,
        mid_near_pairs: Vec<(usize, usize)>,
        further_pairs: Vec<(usize, usize)>,
        n: usize,
    ) -> Self {
        let mut exclusions = vec![Vec::new(); n];
        for &(i, j) in &neighbor_pairs {
            exclusions[i].push(j);
        }
        for ex in &mut exclusions {
            ex.sort_unstable();
            ex.dedup();
        }
        let further_per_point = if n > 0 { further_pairs.len() / n } else { 0 };
        PairSets {
            neighbor_pairs,
            mid_near_pairs,
            further_pairs,
            seed: 0,
            n,
            further_per_point,
            exclusions,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Further pairs sampled per point.
    pub fn further_per_point(&self) -> usize {
        self.further_per_point
    }

    /// Draws a fresh uniform non-neighbor pair sample of the same shape as
    /// `further_pairs` into `out`. Used per-iteration by the alignment terms.
    pub(crate) fn resample_far_pairs(&self, rng: &mut ChaCha8Rng, out: &mut Vec<(usize, usize)>) {
        out.clear();
        let mut drawn = Vec::with_capacity(self.further_per_point);
        for i in 0..self.n {
            drawn.clear();
            draw_distinct_non_neighbors(
                rng,
                self.n,
                i,
                &self.exclusions[i],
                self.further_per_point,
                &mut drawn,
            );
            out.extend(drawn.iter().map(|&j| (i, j)));
        }
    }
}

/// Per-point pair budget derived from `k` and the mid-near / further ratios.
#[derive(Debug, Clone, Copy)]
pub struct PairCounts {
    pub k: usize,
    pub mid_near: usize,
    pub further: usize,
}

impl PairCounts {
    pub fn from_ratios(k: usize, mn_ratio: f64, fp_ratio: f64) -> Result<Self> {
        if mn_ratio <= 0.0 {
            return Err(Error::NonPositiveRatio { value: mn_ratio });
        }
        if fp_ratio <= 0.0 {
            return Err(Error::NonPositiveRatio { value: fp_ratio });
        }
        Ok(PairCounts {
            k,
            mid_near: (mn_ratio * k as f64).ceil() as usize,
            further: (fp_ratio * k as f64).ceil() as usize,
        })
    }
}

/// Samples the three pair families from a candidate graph.
///
/// Per point: the `k` nearest candidates become neighbor pairs; each mid-near
/// pair draws 6 distinct non-neighbors and keeps the 2nd-closest; further
/// pairs are distinct uniform non-neighbors. Pure function of
/// `(g, d, k, ratios, seed)`.
pub fn sample_pairs(
    g: &NeighborGraph,
    d: &Dataset,
    k: usize,
    mn_ratio: f64,
    fp_ratio: f64,
    seed: u64,
) -> Result<PairSets> {
    let counts = PairCounts::from_ratios(k, mn_ratio, fp_ratio)?;
    if k == 0 || k > g.m() {
        return Err(Error::KExceedsCandidates { k, m: g.m() });
    }
    let lists: Vec<Vec<usize>> = (0..g.n()).map(|i| g.neighbors(i)[..k].to_vec()).collect();
    sample_pairs_with_neighbors(&lists, g, d, counts, seed)
}

/// Samples mid-near and further pairs around explicit neighbor lists.
///
/// The exclusion structure for non-neighbor draws is always the full
/// candidate adjacency of `g`, so a refined neighbor list and a plain top-k
/// list go through the identical sampling path.
pub fn sample_pairs_with_neighbors(
    neighbor_lists: &[Vec<usize>],
    g: &NeighborGraph,
    d: &Dataset,
    counts: PairCounts,
    seed: u64,
) -> Result<PairSets> {
    let n = g.n();
    if d.id() != g.dataset_id() {
        return Err(Error::DatasetMismatch {
            expected: g.dataset_id().to_owned(),
            got: d.id().to_owned(),
        });
    }
    if neighbor_lists.len() != n {
        return Err(Error::RowCountMismatch {
            rows: neighbor_lists.len(),
            expected: n,
        });
    }
    let available = n - 1 - g.m();
    let needed = counts.further.max(6);
    if available < needed {
        return Err(Error::TooFewNonNeighbors { available, needed });
    }

    let exclusions: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut ex = g.neighbors(i).to_vec();
            ex.sort_unstable();
            ex
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut neighbor_pairs = Vec::with_capacity(n * counts.k);
    let mut mid_near_pairs = Vec::with_capacity(n * counts.mid_near);
    let mut further_pairs = Vec::with_capacity(n * counts.further);
    let mut scratch = Vec::with_capacity(6.max(counts.further));

    for i in 0..n {
        for &j in &neighbor_lists[i] {
            neighbor_pairs.push((i, j));
        }
        for _ in 0..counts.mid_near {
            scratch.clear();
            draw_distinct_non_neighbors(&mut rng, n, i, &exclusions[i], 6, &mut scratch);
            let second = second_closest(d, i, &scratch);
            mid_near_pairs.push((i, second));
        }
        scratch.clear();
        draw_distinct_non_neighbors(
            &mut rng,
            n,
            i,
            &exclusions[i],
            counts.further,
            &mut scratch,
        );
        further_pairs.extend(scratch.iter().map(|&j| (i, j)));
    }

    Ok(PairSets {
        neighbor_pairs,
        mid_near_pairs,
        further_pairs,
        seed,
        n,
        further_per_point: counts.further,
        exclusions,
    })
}

/// Rejection-samples `count` distinct ids from `0..n`, skipping `i` itself,
/// everything in the sorted `exclude` list and previous draws.
fn draw_distinct_non_neighbors(
    rng: &mut ChaCha8Rng,
    n: usize,
    i: usize,
    exclude: &[usize],
    count: usize,
    out: &mut Vec<usize>,
) {
    while out.len() < count {
        let j = rng.random_range(0..n);
        if j == i || exclude.binary_search(&j).is_ok() || out.contains(&j) {
            continue;
        }
        out.push(j);
    }
}

/// Second-closest candidate to `i` in feature space, ties by lower id.
fn second_closest(d: &Dataset, i: usize, candidates: &[usize]) -> usize {
    let mut ranked: Vec<(f64, usize)> = candidates.iter().map(|&j| (d.distance(i, j), j)).collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    ranked[1].1
}
