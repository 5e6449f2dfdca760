//! Per-identity K-Means (Forgy initialization, Lloyd iterations).

use rand::seq::index;
use rayon::prelude::*;

use crate::datamodel::DatasetBundle;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster of each point, in input order.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Sum of squared distances of points to their assigned centers.
    pub sse: f64,
    /// SSE after initialization and after every accepted Lloyd step.
    pub sse_trace: Vec<f64>,
}

impl ClusterAssignment {
    /// Effective number of clusters, `C_k`.
    pub fn cluster_count(&self) -> usize {
        self.centers.len()
    }

    /// Positions (into the clustered point list) grouped by cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.cluster_count()];
        for (i, &c) in self.labels.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center per point, ties to the lowest center index.
fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = squared_distance(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// Move the farthest point of a multi-member cluster into every empty one.
fn repair_empty(labels: &mut [usize], dists: &[f64], k: usize) {
    let mut counts = vec![0usize; k];
    for &c in labels.iter() {
        counts[c] += 1;
    }
    let mut used = vec![false; labels.len()];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..labels.len() {
            if used[i] || counts[labels[i]] < 2 {
                continue;
            }
            if pick.is_none_or(|p| dists[i] > dists[p]) {
                pick = Some(i);
            }
        }
        if let Some(i) = pick {
            counts[labels[i]] -= 1;
            labels[i] = j;
            counts[j] = 1;
            used[i] = true;
        }
    }
}

fn means(points: &[Vec<f64>], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, n), prev)| {
            if n == 0 {
                prev.clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

/// Lloyd iterations from explicit starting centers.
pub fn kmeans_from_centers(
    points: &[Vec<f64>],
    initial_centers: Vec<Vec<f64>>,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    if points.is_empty() {
        return Err(Error::Empty("k-means points"));
    }
    if initial_centers.is_empty() {
        return Err(Error::InvalidConfig("k-means needs at least one center".into()));
    }
    let k = initial_centers.len();
    let mut centers = initial_centers;
    let (mut labels, mut dists) = assign(points, &centers);
    let mut sse: f64 = dists.iter().sum();
    let mut sse_trace = vec![sse];

    for _ in 0..max_iters {
        let mut next_labels = labels.clone();
        repair_empty(&mut next_labels, &dists, k);
        let next_centers = means(points, &next_labels, &centers);
        let (next_labels, next_dists) = assign(points, &next_centers);
        let next_sse: f64 = next_dists.iter().sum();
        if next_sse > sse {
            // Rounding only; the previous state is at least as good.
            break;
        }
        let improvement = sse - next_sse;
        centers = next_centers;
        labels = next_labels;
        dists = next_dists;
        sse = next_sse;
        sse_trace.push(sse);

        let mut occupied = vec![false; k];
        for &c in &labels {
            occupied[c] = true;
        }
        if improvement < tol && occupied.iter().all(|&o| o) {
            break;
        }
    }

    // Clusters still empty here (coincident points) are dropped; labels are
    // renumbered in center order so every reported cluster is occupied.
    let mut remap = vec![usize::MAX; k];
    for &c in &labels {
        remap[c] = 0;
    }
    let mut kept = Vec::with_capacity(k);
    for (j, center) in centers.into_iter().enumerate() {
        if remap[j] == 0 {
            remap[j] = kept.len();
            kept.push(center);
        }
    }
    for c in &mut labels {
        *c = remap[*c];
    }

    Ok(ClusterAssignment {
        labels,
        centers: kept,
        sse,
        sse_trace,
    })
}

/// Forgy initialization: `min(c, n)` distinct points drawn with the seeded RNG.
pub fn forgy_centers(points: &[Vec<f64>], c: usize, seed: u64) -> Vec<Vec<f64>> {
    let k = c.min(points.len());
    let mut rng = seed::rng(seed);
    index::sample(&mut rng, points.len(), k)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

pub fn kmeans(points: &[Vec<f64>], c: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterAssignment> {
    if points.is_empty() {
        return Err(Error::Empty("k-means points"));
    }
    if c == 0 {
        return Err(Error::InvalidConfig("cluster count must be >= 1".into()));
    }
    kmeans_from_centers(points, forgy_centers(points, c, seed), max_iters, tol)
}

/// K-Means over one identity's embeddings, seeded by `seed ^ fnv1a(identity_id)`.
pub fn cluster_identity(bundle: &DatasetBundle, identity_id: &str, c: usize, seed: u64) -> Result<ClusterAssignment> {
    let identity = bundle
        .identity(identity_id)
        .ok_or_else(|| Error::UnknownIdentity(identity_id.to_owned()))?;
    let points: Vec<Vec<f64>> = identity
        .members
        .iter()
        .map(|&i| bundle.embeddings()[i].vector_f64())
        .collect();
    kmeans(
        &points,
        c,
        seed::identity_seed(seed, identity_id),
        DEFAULT_MAX_ITERS,
        DEFAULT_TOL,
    )
}

/// Clusters every identity, in `identity_index` order.
pub fn cluster_all(bundle: &DatasetBundle, c: usize, seed: u64) -> Result<Vec<ClusterAssignment>> {
    bundle
        .identity_index()
        .par_iter()
        .map(|k| cluster_identity(bundle, &k.id, c, seed))
        .collect()
}
