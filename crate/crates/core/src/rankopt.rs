//! Rank-based label optimization.
//!
//! Every image's baseline quality rank is pulled towards the mean similarity
//! rank of the mated pairs in which it is the lower-quality member. Both
//! ranks are fractional (position / (n - 1)), so the blend is scale-free.
//! Repetitions use fresh clusterings and pair draws and are averaged once at
//! the end; the final scores are the baseline scores re-dealt in the order of
//! the averaged indices, so the score distribution is untouched.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::cluster_all;
use crate::datamodel::{DatasetBundle, OptimConfig, QualityTable};
use crate::error::{Error, Result};
use crate::pairing::{sample_mated_pairs, MatedPairList};
use crate::seed;

/// A sorted distribution with fractional-rank lookup per item.
///
/// Items are the positions of the values in the input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    sorted_values: Vec<f64>,
    order: Vec<usize>,
    ranks: Vec<f64>,
}

impl RankTable {
    /// Values ascending.
    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    /// Items in ascending value order (ties by item).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank(&self, item: usize) -> f64 {
        self.ranks[item]
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

/// Fractional rank of sort position `p` among `n`: `p / (n - 1)`, or 0.5 when `n == 1`.
pub fn fractional_rank(position: usize, n: usize) -> f64 {
    if n == 1 {
        0.5
    } else {
        position as f64 / (n - 1) as f64
    }
}

pub fn build_rank_table(values: &[f64]) -> Result<RankTable> {
    if values.is_empty() {
        return Err(Error::Empty("rank table values"));
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: equal values keep insertion order.
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    for (p, &item) in order.iter().enumerate() {
        ranks[item] = fractional_rank(p, n);
    }
    Ok(RankTable {
        sorted_values: order.iter().map(|&i| values[i]).collect(),
        order,
        ranks,
    })
}

/// Mean similarity rank over the pairs in which `image` has quality no
/// higher than its partner. `None` when there is no such pair.
pub fn mean_pair_rank(image: usize, pairs: &MatedPairList, sim_ranks: &RankTable, qualities: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &l in pairs.pairs_of(image) {
        let p = pairs.pairs()[l];
        let partner = if p.anchor == image { p.partner } else { p.anchor };
        if qualities[image] <= qualities[partner] {
            sum += sim_ranks.rank(l);
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// `quality_rank + theta * (mean_rank - quality_rank)`, or the quality rank
/// unchanged when there is no mean rank.
pub fn update_index(quality_rank: f64, mean_rank: Option<f64>, theta: f64) -> f64 {
    match mean_rank {
        None => quality_rank,
        Some(m) => {
            let (lo, hi) = if m < quality_rank { (m, quality_rank) } else { (quality_rank, m) };
            (quality_rank + theta * (m - quality_rank)).clamp(lo, hi)
        }
    }
}

/// Updated quality index of every image for one pair draw.
pub fn repetition_indices(
    bundle: &DatasetBundle,
    pairs: &MatedPairList,
    quality_ranks: &RankTable,
    theta: f64,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Ok(quality_ranks.ranks().to_vec());
    }
    let sims: Vec<f64> = pairs.pairs().iter().map(|p| p.similarity).collect();
    let sim_ranks = build_rank_table(&sims)?;
    let qualities = bundle.scores();
    Ok((0..bundle.len())
        .map(|i| update_index(quality_ranks.rank(i), mean_pair_rank(i, pairs, &sim_ranks, qualities), theta))
        .collect())
}

/// Deal the sorted baseline scores out in ascending order of `indices`.
///
/// Ties on the index fall back to the baseline quality rank, then image id.
pub fn reassign_scores(bundle: &DatasetBundle, indices: &[f64], quality_ranks: &RankTable) -> Result<QualityTable> {
    let n = bundle.len();
    if indices.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: indices.len(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        indices[a]
            .total_cmp(&indices[b])
            .then_with(|| quality_ranks.rank(a).total_cmp(&quality_ranks.rank(b)))
            .then_with(|| bundle.image_id(a).cmp(bundle.image_id(b)))
    });
    let mut assigned = vec![0.0; n];
    for (&img, &score) in order.iter().zip(quality_ranks.sorted_values()) {
        assigned[img] = score;
    }
    QualityTable::from_pairs((0..n).map(|i| (bundle.image_id(i).to_owned(), assigned[i])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedQualityTable {
    /// Optimized scores, in bundle order.
    pub entries: QualityTable,
    /// Updated quality index averaged over repetitions, in bundle order.
    pub mean_opt_index: Vec<f64>,
    /// Baseline fractional quality rank, in bundle order.
    pub baseline_rank: Vec<f64>,
    /// Mated pair count of each repetition.
    pub pairs_per_repetition: Vec<usize>,
}

impl OptimizedQualityTable {
    /// Scatter data as `image_id,baseline_rank,mean_opt_index`.
    pub fn write_scatter_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["image_id", "baseline_rank", "mean_opt_index"]).map_err(to_err)?;
        for ((id, _), (b, m)) in self.entries.iter().zip(self.baseline_rank.iter().zip(&self.mean_opt_index)) {
            w.write_record([id, &b.to_string(), &m.to_string()]).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io("<scatter>", e))
    }
}

/// Clustering and pair draw of repetition `r` (1-based).
pub fn repetition_pairs(bundle: &DatasetBundle, config: &OptimConfig, r: usize) -> Result<MatedPairList> {
    let (cluster_seed, pair_seed) = seed::stage_seeds(seed::repetition_seed(config.seed, r));
    let assignments = cluster_all(bundle, config.clusters, cluster_seed)?;
    sample_mated_pairs(bundle, &assignments, pair_seed)
}

pub fn optimize_labels(bundle: &DatasetBundle, config: &OptimConfig) -> Result<OptimizedQualityTable> {
    config.validate()?;
    let n = bundle.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("label optimization needs at least 2 images, got {n}")));
    }
    let quality_ranks = build_rank_table(bundle.scores())?;

    let per_repetition: Vec<(Vec<f64>, usize)> = (1..=config.repeats)
        .into_par_iter()
        .map(|r| {
            let pairs = repetition_pairs(bundle, config, r)?;
            let indices = repetition_indices(bundle, &pairs, &quality_ranks, config.theta)?;
            Ok((indices, pairs.len()))
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; n];
    for (indices, _) in &per_repetition {
        for (s, v) in sums.iter_mut().zip(indices) {
            *s += v;
        }
    }
    let mean_opt_index: Vec<f64> = sums.into_iter().map(|s| s / config.repeats as f64).collect();
    let entries = reassign_scores(bundle, &mean_opt_index, &quality_ranks)?;

    Ok(OptimizedQualityTable {
        entries,
        mean_opt_index,
        baseline_rank: quality_ranks.ranks().to_vec(),
        pairs_per_repetition: per_repetition.into_iter().map(|(_, l)| l).collect(),
    })
}

/// Sidecar written next to optimized scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub theta: f64,
    pub repeats: usize,
    pub clusters: usize,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L_per_repetition")]
    pub l_per_repetition: Vec<usize>,
}

impl OptimizationSummary {
    pub fn new(config: &OptimConfig, result: &OptimizedQualityTable) -> Self {
        Self {
            theta: config.theta,
            repeats: config.repeats,
            clusters: config.clusters,
            seed: config.seed,
            n: result.entries.len(),
            l_per_repetition: result.pairs_per_repetition.clone(),
        }
    }
}

/// Multiset equality of two score lists at the bit level.
pub fn same_multiset(a: &[f64], b: &[f64]) -> bool {
    let key = |v: &[f64]| {
        let mut bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        bits.sort_unstable();
        bits
    };
    a.len() == b.len() && key(a) == key(b)
}
