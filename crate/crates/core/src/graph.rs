//! Exact directed kNN graphs over the high-dimensional feature space.

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Directed m-NN adjacency: each point lists its `m` nearest neighbors in
/// ascending distance order. Asymmetric by construction.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    m: usize,
    adjacency: Vec<Vec<usize>>,
    distances: Vec<Vec<f64>>,
    dataset_id: String,
}

impl NeighborGraph {
    /// Wraps an explicit adjacency, e.g. one loaded from disk or edited for a
    /// robustness experiment. Lists keep the order they are given in; only
    /// structural invariants (no self-edges, exactly `m` distinct in-range
    /// neighbors per point) are enforced.
    pub fn from_adjacency(
        adjacency: Vec<Vec<usize>>,
        distances: Vec<Vec<f64>>,
        dataset_id: String,
    ) -> Result<Self> {
        let n = adjacency.len();
        if n < 2 {
            return Err(Error::TooFewPoints { n, min: 2 });
        }
        let m = adjacency[0].len();
        if m == 0 || m >= n {
            return Err(Error::NeighborCountTooLarge { m, n });
        }
        if distances.len() != n {
            return Err(Error::RowCountMismatch {
                rows: distances.len(),
                expected: n,
            });
        }
        for (i, (nbrs, dists)) in adjacency.iter().zip(distances.iter()).enumerate() {
            if nbrs.len() != m || dists.len() != m {
                return Err(Error::InvalidInput {
                    msg: format!("point {i}: expected {m} neighbors"),
                });
            }
            let mut seen = vec![false; n];
            for &j in nbrs {
                if j == i {
                    return Err(Error::InvalidInput {
                        msg: format!("point {i} lists itself as a neighbor"),
                    });
                }
                if j >= n {
                    return Err(Error::InvalidInput {
                        msg: format!("point {i} lists out-of-range neighbor {j}"),
                    });
                }
                if seen[j] {
                    return Err(Error::InvalidInput {
                        msg: format!("point {i} lists neighbor {j} twice"),
                    });
                }
                seen[j] = true;
            }
        }
        Ok(NeighborGraph {
            m,
            adjacency,
            distances,
            dataset_id,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    /// Neighbor ids of point `i`, ascending by high-dimensional distance.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Distances parallel to [`Self::neighbors`].
    pub fn neighbor_distances(&self, i: usize) -> &[f64] {
        &self.distances[i]
    }

    /// Slot of `j` within point `i`'s candidate list, if present.
    pub fn edge_slot(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency[i].iter().position(|&x| x == j)
    }

    /// Total directed edge count, n * m.
    pub fn edge_count(&self) -> usize {
        self.n() * self.m
    }

    /// Order-sensitive structural fingerprint of the adjacency; two graphs
    /// with equal fingerprints can have their edge lists zipped slot by slot.
    pub fn adjacency_fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        h.write_usize(self.n());
        h.write_usize(self.m);
        for nbrs in &self.adjacency {
            for &j in nbrs {
                h.write_usize(j);
            }
        }
        h.finish()
    }
}

/// Builds the exact Euclidean m-NN graph by chunked brute-force scan.
///
/// Ties in distance break toward the lower point id; neighbor lists come out
/// ascending by (distance, id).
pub fn build_knn_graph(d: &Dataset, m: usize) -> Result<NeighborGraph> {
    let n = d.n();
    if m == 0 || m >= n {
        return Err(Error::NeighborCountTooLarge { m, n });
    }
    let points = d.points();

    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = points.row(i);
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let xj = points.row(j);
                    let d2: f64 = xi
                        .iter()
                        .zip(xj.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2, j)
                })
                .collect();
            dists.sort_unstable_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("finite distances")
                    .then(a.1.cmp(&b.1))
            });
            dists.truncate(m);
            let ids = dists.iter().map(|&(_, j)| j).collect();
            let ds = dists.iter().map(|&(d2, _)| d2.sqrt()).collect();
            (ids, ds)
        })
        .collect();

    let (adjacency, distances) = rows.into_iter().unzip();
    NeighborGraph::from_adjacency(adjacency, distances, d.id().to_owned())
}

/// Writes the graph as a TSV edge list `i <TAB> j <TAB> rank <TAB> distance`,
/// sorted by (i, rank).
pub fn write_graph_tsv(path: &Path, g: &NeighborGraph) -> Result<()> {
    let mut out = String::new();
    for i in 0..g.n() {
        for (rank, (&j, &dist)) in g
            .neighbors(i)
            .iter()
            .zip(g.neighbor_distances(i).iter())
            .enumerate()
        {
            out.push_str(&format!("{i}\t{j}\t{rank}\t{dist}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a TSV edge list produced by [`write_graph_tsv`]. Extra trailing
/// columns (e.g. a refined graph's score column) are ignored.
pub fn read_graph_tsv(path: &Path, dataset_id: &str) -> Result<NeighborGraph> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (row, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() < 4 {
            return Err(Error::Parse {
                row,
                col: 0,
                msg: format!("expected at least 4 tab-separated columns, got {}", cells.len()),
            });
        }
        let parse_usize = |col: usize| -> Result<usize> {
            cells[col].parse().map_err(|_| Error::Parse {
                row,
                col,
                msg: format!("cannot parse {:?} as an index", cells[col]),
            })
        };
        let i = parse_usize(0)?;
        let j = parse_usize(1)?;
        let rank = parse_usize(2)?;
        let dist: f64 = cells[3].parse().map_err(|_| Error::Parse {
            row,
            col: 3,
            msg: format!("cannot parse {:?} as a distance", cells[3]),
        })?;
        edges.push((i, j, rank, dist));
    }
    if edges.is_empty() {
        return Err(Error::InvalidInput {
            msg: "graph file holds no edges".into(),
        });
    }
    let n = edges.iter().map(|e| e.0).max().unwrap() + 1;
    let m = edges.iter().filter(|e| e.0 == 0).count();
    let mut adjacency = vec![vec![usize::MAX; m]; n];
    let mut distances = vec![vec![0.0; m]; n];
    for (i, j, rank, dist) in edges {
        if rank >= m {
            return Err(Error::InvalidInput {
                msg: format!("edge ({i}, {j}) has rank {rank} beyond m={m}"),
            });
        }
        adjacency[i][rank] = j;
        distances[i][rank] = dist;
    }
    if adjacency.iter().any(|nbrs| nbrs.contains(&usize::MAX)) {
        return Err(Error::InvalidInput {
            msg: "graph file has missing (i, rank) slots".into(),
        });
    }
    NeighborGraph::from_adjacency(adjacency, distances, dataset_id.to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset_from(points: Array2<f64>) -> Dataset {
        Dataset::new(points, None, None).unwrap()
    }

    /// Quadratic oracle with an independent selection path (full sort of all
    /// pairs, stable filter).
    fn brute_force_knn(d: &Dataset, m: usize) -> Vec<Vec<usize>> {
        let n = d.n();
        (0..n)
            .map(|i| {
                let mut all: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (d.distance(i, j), j))
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                all.iter().take(m).map(|&(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn collinear_points_hand_check() {
        let d = dataset_from(array![[0.0], [1.0], [3.0]]);
        let g = build_knn_graph(&d, 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[1]);
    }

    #[test]
    fn duplicate_points_tie_break_by_id() {
        let d = dataset_from(array![[1.0, 1.0], [1.0, 1.0], [5.0, 5.0], [1.0, 1.0]]);
        let g = build_knn_graph(&d, 2).unwrap();
        // Duplicates are each other's nearest neighbors, lower id first.
        assert_eq!(g.neighbors(0), &[1, 3]);
        assert_eq!(g.neighbors(1), &[0, 3]);
        assert_eq!(g.neighbors(3), &[0, 1]);
        assert_eq!(g.neighbor_distances(0), &[0.0, 0.0]);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts = Array2::from_shape_fn((200, 10), |_| rng.random_range(-1.0..1.0));
        let d = dataset_from(pts);
        let g = build_knn_graph(&d, 15).unwrap();
        let oracle = brute_force_knn(&d, 15);
        for i in 0..d.n() {
            assert_eq!(g.neighbors(i), &oracle[i][..], "adjacency mismatch at {i}");
        }
    }

    #[test]
    fn m_must_be_below_n() {
        let d = dataset_from(array![[0.0], [1.0], [2.0]]);
        assert!(matches!(
            build_knn_graph(&d, 3),
            Err(Error::NeighborCountTooLarge { m: 3, n: 3 })
        ));
    }

    #[test]
    fn tsv_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = Array2::from_shape_fn((30, 4), |_| rng.random_range(-1.0..1.0));
        let d = dataset_from(pts);
        let g = build_knn_graph(&d, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.tsv");
        write_graph_tsv(&path, &g).unwrap();
        let back = read_graph_tsv(&path, d.id()).unwrap();
        assert_eq!(back.n(), g.n());
        assert_eq!(back.m(), g.m());
        for i in 0..g.n() {
            assert_eq!(back.neighbors(i), g.neighbors(i));
        }
        assert_eq!(back.adjacency_fingerprint(), g.adjacency_fingerprint());
    }

    #[test]
    fn self_edges_rejected() {
        let err = NeighborGraph::from_adjacency(
            vec![vec![0], vec![0], vec![1]],
            vec![vec![0.0], vec![1.0], vec![1.0]],
            "x".into(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput { .. }));
    }
}
