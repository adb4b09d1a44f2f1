//! Neighborhood and resolution-change primitives: exact kNN, radius graph,
//! farthest point sampling, grouped gathers, and inverse-distance feature
//! interpolation. All functions are pure and deterministic; distance ties
//! break by ascending index.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub type Point = [f64; 3];

fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Row-major `n x k` neighbor table into a source point set.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    n: usize,
    k: usize,
    source_size: usize,
}

impl NeighborIndex {
    pub fn new(indices: Vec<usize>, n: usize, k: usize, source_size: usize) -> Result<NeighborIndex> {
        if indices.len() != n * k {
            return Err(Error::shape(format!(
                "neighbor index: {} entries for {n}x{k}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= source_size) {
            return Err(Error::contract(format!(
                "neighbor index {bad} out of range {source_size}"
            )));
        }
        Ok(NeighborIndex {
            indices,
            n,
            k,
            source_size,
        })
    }

    /// Trivial neighborhood where each row points `k` times at itself; used
    /// to align query features with grouped source features.
    pub fn self_repeat(n: usize, k: usize) -> NeighborIndex {
        let mut indices = Vec::with_capacity(n * k);
        for i in 0..n {
            for _ in 0..k {
                indices.push(i);
            }
        }
        NeighborIndex {
            indices,
            n,
            k,
            source_size: n,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn flat(&self) -> &[usize] {
        &self.indices
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

/// Exact k-nearest neighbors of each query point within `source`.
///
/// When the source has fewer than `k` points, rows are filled by repeating
/// the farthest available neighbor so every row has exactly `k` entries.
pub fn knn(query: &[Point], source: &[Point], k: usize) -> Result<NeighborIndex> {
    if source.is_empty() {
        return Err(Error::contract("knn: empty source point set".into()));
    }
    if k == 0 {
        return Err(Error::contract("knn: k must be at least 1".into()));
    }
    let mut indices = Vec::with_capacity(query.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(source.len());
    for q in query {
        scratch.clear();
        scratch.extend(source.iter().enumerate().map(|(j, s)| (dist2(q, s), j)));
        scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let take = k.min(scratch.len());
        for item in &scratch[..take] {
            indices.push(item.1);
        }
        for _ in take..k {
            indices.push(scratch[take - 1].1);
        }
    }
    NeighborIndex::new(indices, query.len(), k, source.len())
}

/// Undirected pairs `(i, j)` with `i < j` and `||p_i - p_j|| <= r`
/// (boundary inclusive). No self loops.
pub fn radius_neighbors(points: &[Point], r: f64) -> Result<Vec<(usize, usize)>> {
    if r <= 0.0 {
        return Err(Error::contract(format!("radius_neighbors: r = {r}")));
    }
    let r2 = r * r;
    let mut pairs = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if dist2(&points[i], &points[j]) <= r2 {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}

/// Greedy farthest point sampling of `m` indices starting at `seed_index`.
/// Each step selects the point with the largest distance to the already
/// selected set; ties break by ascending index.
pub fn fps(points: &[Point], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::contract(format!("fps: m = {m} for {n} points")));
    }
    if seed_index >= n {
        return Err(Error::contract(format!(
            "fps: seed index {seed_index} out of range {n}"
        )));
    }
    let mut selected = Vec::with_capacity(m);
    let mut chosen = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = seed_index;
    selected.push(current);
    chosen[current] = true;
    for _ in 1..m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let dc = dist2(&points[i], &points[current]);
            if dc < *d {
                *d = dc;
            }
            if !chosen[i] && *d > best.0 {
                best = (*d, i);
            }
        }
        current = best.1;
        selected.push(current);
        chosen[current] = true;
    }
    Ok(selected)
}

/// Gather of grouped features: `out[i][j] = features[neighbors[i][j]]`.
pub fn sample_and_group(features: &Tensor, neighbors: &NeighborIndex) -> Result<Tensor> {
    if features.shape().len() != 2 || features.shape()[0] != neighbors.source_size() {
        return Err(Error::shape(format!(
            "sample_and_group: features {:?}, source size {}",
            features.shape(),
            neighbors.source_size()
        )));
    }
    features.gather_groups(neighbors.flat(), neighbors.n(), neighbors.k())
}

/// Elementwise max over the neighbor axis of a grouped `[n,k,d]` tensor.
pub fn maxpool_group(grouped: &Tensor) -> Result<Tensor> {
    grouped.maxpool_groups()
}

const IDW_EPS: f64 = 1e-8;
const COINCIDENT: f64 = 1e-12;

/// Inverse-distance weighted interpolation of coarse features onto fine
/// points using up to `k` nearest coarse neighbors. Weights are
/// `1 / (d + eps)` normalized to sum 1; a fine point coinciding with a
/// coarse point (distance within 1e-12) takes that coarse feature exactly.
pub fn idw_interpolate(
    coarse_points: &[Point],
    coarse_features: &Tensor,
    fine_points: &[Point],
    k: usize,
) -> Result<Tensor> {
    if coarse_features.shape().len() != 2 || coarse_features.shape()[0] != coarse_points.len() {
        return Err(Error::shape(format!(
            "idw_interpolate: features {:?} for {} coarse points",
            coarse_features.shape(),
            coarse_points.len()
        )));
    }
    let (nbrs, weights) = idw_weights(coarse_points, fine_points, k)?;
    coarse_features.weighted_rows(nbrs.flat(), &weights, fine_points.len(), nbrs.k())
}

/// IDW weights alone, for tests that inspect normalization directly.
pub fn idw_weights(
    coarse_points: &[Point],
    fine_points: &[Point],
    k: usize,
) -> Result<(NeighborIndex, Vec<f64>)> {
    if coarse_points.is_empty() {
        return Err(Error::contract("idw_weights: no coarse points".into()));
    }
    let k_eff = k.min(coarse_points.len()).max(1);
    let nbrs = knn(fine_points, coarse_points, k_eff)?;
    let n = fine_points.len();
    let mut weights = vec![0.0; n * k_eff];
    for (i, fp) in fine_points.iter().enumerate() {
        let row = nbrs.row(i);
        let dists: Vec<f64> = row
            .iter()
            .map(|&j| dist2(fp, &coarse_points[j]).sqrt())
            .collect();
        if dists[0] <= COINCIDENT {
            weights[i * k_eff] = 1.0;
            continue;
        }
        let raw: Vec<f64> = dists.iter().map(|d| 1.0 / (d + IDW_EPS)).collect();
        let total: f64 = raw.iter().sum();
        for (j, w) in raw.iter().enumerate() {
            weights[i * k_eff + j] = w / total;
        }
    }
    Ok((nbrs, weights))
}
