//! Straightforward reference implementation of clustered label optimization.
//!
//! Only the sub-seed derivation is borrowed from the library. Everything else
//! (grouping, K-Means, partner draws, ranking, blending, re-dealing) is
//! written out directly so that any divergence in the optimized pipeline
//! shows up as a bit-level mismatch.
#![allow(clippy::needless_range_loop)]

use fiqa_opt::seed::{identity_seed, repetition_seed, stage_seeds};
use fiqa_opt::EmbeddingRecord;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_ITERS: usize = 100;
const TOL: f64 = 1e-6;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..a.len() {
        s += (a[d] - b[d]) * (a[d] - b[d]);
    }
    s
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for j in 0..centers.len() {
        let d = dist2(point, &centers[j]);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Cluster label of every point, with only occupied clusters kept and
/// numbered in center order.
pub fn kmeans_labels(points: &[Vec<f64>], c: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let k = c.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, n, k);
    let mut centers: Vec<Vec<f64>> = picks.iter().map(|i| points[i].clone()).collect();

    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    for i in 0..n {
        (labels[i], dists[i]) = nearest(&points[i], &centers);
    }
    let mut sse: f64 = dists.iter().sum();

    for _ in 0..MAX_ITERS {
        // Fill each empty cluster with the farthest point whose cluster can spare it.
        let mut moved = labels.clone();
        let mut taken = vec![false; n];
        for j in 0..k {
            let size = |m: &Vec<usize>, c: usize| m.iter().filter(|&&l| l == c).count();
            if size(&moved, j) > 0 {
                continue;
            }
            let mut pick: Option<usize> = None;
            for i in 0..n {
                if taken[i] || size(&moved, moved[i]) < 2 {
                    continue;
                }
                match pick {
                    Some(q) if dists[i] <= dists[q] => {}
                    _ => pick = Some(i),
                }
            }
            if let Some(i) = pick {
                moved[i] = j;
                taken[i] = true;
            }
        }

        let mut new_centers = Vec::with_capacity(k);
        for j in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| moved[i] == j).collect();
            if members.is_empty() {
                new_centers.push(centers[j].clone());
                continue;
            }
            let mut mean = vec![0.0; points[0].len()];
            for &i in &members {
                for d in 0..mean.len() {
                    mean[d] += points[i][d];
                }
            }
            for v in &mut mean {
                *v /= members.len() as f64;
            }
            new_centers.push(mean);
        }

        let mut new_labels = vec![0; n];
        let mut new_dists = vec![0.0; n];
        for i in 0..n {
            (new_labels[i], new_dists[i]) = nearest(&points[i], &new_centers);
        }
        let new_sse: f64 = new_dists.iter().sum();
        if new_sse > sse {
            break;
        }
        let gain = sse - new_sse;
        centers = new_centers;
        labels = new_labels;
        dists = new_dists;
        sse = new_sse;
        let all_used = (0..k).all(|j| labels.contains(&j));
        if gain < TOL && all_used {
            break;
        }
    }

    let mut used: Vec<usize> = labels.clone();
    used.sort_unstable();
    used.dedup();
    labels.iter().map(|l| used.binary_search(l).unwrap()).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for d in 0..a.len() {
        let (x, y) = (a[d] as f64, b[d] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// `p / (n - 1)` for each item's position in ascending order (ties by item).
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if n == 1 { 0.5 } else { pos as f64 / (n - 1) as f64 };
    }
    ranks
}

/// One draw of mated pairs `(anchor, partner, similarity)`.
pub fn draw_pairs(records: &[EmbeddingRecord], clusters: usize, cluster_seed: u64, pair_seed: u64) -> Vec<(usize, usize, f64)> {
    let mut identities: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match identities.iter_mut().find(|(id, _)| *id == r.identity_id) {
            Some((_, members)) => members.push(i),
            None => identities.push((r.identity_id.clone(), vec![i])),
        }
    }

    let mut pairs = Vec::new();
    for (id, members) in &identities {
        let points: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| records[i].vector.iter().map(|&x| x as f64).collect())
            .collect();
        let labels = kmeans_labels(&points, clusters, identity_seed(cluster_seed, id));
        let groups = labels.iter().max().unwrap() + 1;
        if groups < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(identity_seed(pair_seed, id));
        for (local, &own) in labels.iter().enumerate() {
            for g in 0..groups {
                if g == own {
                    continue;
                }
                let group: Vec<usize> = (0..labels.len()).filter(|&m| labels[m] == g).collect();
                let pick = group[rng.random_range(0..group.len())];
                let (a, b) = (members[local], members[pick]);
                pairs.push((a, b, cosine(&records[a].vector, &records[b].vector)));
            }
        }
    }
    pairs
}

/// Optimized scores in record order.
pub fn optimize(records: &[EmbeddingRecord], scores: &[f64], clusters: usize, theta: f64, repeats: usize, seed: u64) -> Vec<f64> {
    let n = records.len();
    let q_rank = fractional_ranks(scores);
    let mut totals = vec![0.0; n];

    for r in 1..=repeats {
        let (cs, ps) = stage_seeds(repetition_seed(seed, r));
        let pairs = draw_pairs(records, clusters, cs, ps);
        if pairs.is_empty() {
            for i in 0..n {
                totals[i] += q_rank[i];
            }
            continue;
        }
        let sims: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        let s_rank = fractional_ranks(&sims);
        for i in 0..n {
            let mut sum = 0.0;
            let mut count = 0;
            for (l, &(a, b, _)) in pairs.iter().enumerate() {
                let other = if a == i {
                    b
                } else if b == i {
                    a
                } else {
                    continue;
                };
                if scores[i] <= scores[other] {
                    sum += s_rank[l];
                    count += 1;
                }
            }
            let q = q_rank[i];
            totals[i] += if count == 0 {
                q
            } else {
                let m = sum / count as f64;
                (q + theta * (m - q)).clamp(q.min(m), q.max(m))
            };
        }
    }

    let mean: Vec<f64> = totals.iter().map(|t| t / repeats as f64).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        mean[a]
            .total_cmp(&mean[b])
            .then(q_rank[a].total_cmp(&q_rank[b]))
            .then(records[a].image_id.cmp(&records[b].image_id))
    });
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = sorted[pos];
    }
    out
}
