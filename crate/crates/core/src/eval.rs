//! Verification-based evaluation of quality scores: impostor-calibrated
//! threshold, FNMR, error-versus-reject curves and their area.

use std::io::Write;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DatasetBundle, QualityTable};
use crate::error::{Error, Result};
use crate::pairing::cosine_similarity;
use crate::seed;

pub const DEFAULT_FMR: f64 = 1e-3;
pub const DEFAULT_GENUINE_CAP: usize = 50;
pub const DEFAULT_IMPOSTOR_FACTOR: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationPair {
    pub first: usize,
    pub second: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationPairSet {
    pub genuine: Vec<VerificationPair>,
    pub impostor: Vec<VerificationPair>,
}

impl VerificationPairSet {
    pub fn genuine_similarities(&self) -> Vec<f64> {
        self.genuine.iter().map(|p| p.similarity).collect()
    }

    pub fn impostor_similarities(&self) -> Vec<f64> {
        self.impostor.iter().map(|p| p.similarity).collect()
    }
}

fn pair(bundle: &DatasetBundle, first: usize, second: usize) -> Result<VerificationPair> {
    Ok(VerificationPair {
        first,
        second,
        similarity: cosine_similarity(bundle.vector(first), bundle.vector(second))?,
    })
}

/// Genuine pairs: all same-identity pairs, or a seeded subset of `genuine_cap`
/// of them for larger identities. Impostor pairs: `impostor_count` uniform
/// draws over cross-identity image pairs.
pub fn build_verification_pairs(
    bundle: &DatasetBundle,
    seed: u64,
    genuine_cap: usize,
    impostor_count: usize,
) -> Result<VerificationPairSet> {
    let identities = bundle.identity_index();
    if identities.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "verification pairs need at least 2 identities, got {}",
            identities.len()
        )));
    }

    let genuine_seed = seed::derive(seed, 1);
    let mut genuine = Vec::new();
    for identity in identities {
        let m = &identity.members;
        let mut all = Vec::with_capacity(m.len() * m.len().saturating_sub(1) / 2);
        for a in 0..m.len() {
            for b in a + 1..m.len() {
                all.push((m[a], m[b]));
            }
        }
        if all.len() > genuine_cap {
            let mut rng = seed::rng(seed::identity_seed(genuine_seed, &identity.id));
            let mut keep = index::sample(&mut rng, all.len(), genuine_cap).into_vec();
            keep.sort_unstable();
            all = keep.into_iter().map(|i| all[i]).collect();
        }
        for (a, b) in all {
            genuine.push(pair(bundle, a, b)?);
        }
    }

    let mut owner = vec![0usize; bundle.len()];
    for (k, identity) in identities.iter().enumerate() {
        for &i in &identity.members {
            owner[i] = k;
        }
    }
    let mut rng = seed::rng(seed::derive(seed, 2));
    let mut impostor = Vec::with_capacity(impostor_count);
    while impostor.len() < impostor_count {
        let a = rng.random_range(0..bundle.len());
        let b = rng.random_range(0..bundle.len());
        if owner[a] != owner[b] {
            impostor.push(pair(bundle, a, b)?);
        }
    }
    Ok(VerificationPairSet { genuine, impostor })
}

/// Smallest observed similarity `t` with `#{s >= t} / n <= fmr_target`.
///
/// When every candidate above the cut is tied with it, the threshold is the
/// next representable value above the tie and the realised FMR can be lower
/// than the target.
pub fn calibrate_threshold(impostor_similarities: &[f64], fmr_target: f64) -> Result<f64> {
    if impostor_similarities.is_empty() {
        return Err(Error::Empty("impostor similarities"));
    }
    if !(fmr_target > 0.0 && fmr_target < 1.0) {
        return Err(Error::InvalidConfig(format!("fmr_target must lie in (0, 1), got {fmr_target}")));
    }
    let mut sorted = impostor_similarities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rate = |k: usize| k as f64 / n as f64;

    // Largest count of accepted impostors the target allows.
    let mut allowed = (fmr_target * n as f64).floor() as usize;
    while allowed + 1 < n && rate(allowed + 1) <= fmr_target {
        allowed += 1;
    }
    while allowed > 0 && rate(allowed) > fmr_target {
        allowed -= 1;
    }

    let cut = sorted[n - allowed - 1];
    let above = sorted.partition_point(|&s| s <= cut);
    Ok(if above < n { sorted[above] } else { cut.next_up() })
}

/// Fraction of genuine similarities strictly below `threshold`.
pub fn compute_fnmr(genuine_similarities: &[f64], threshold: f64) -> Result<f64> {
    if genuine_similarities.is_empty() {
        return Err(Error::Empty("genuine similarities"));
    }
    let rejected = genuine_similarities.iter().filter(|&&s| s < threshold).count();
    Ok(rejected as f64 / genuine_similarities.len() as f64)
}

/// Drop rates 0.00, 0.01, ..., 0.95.
pub fn default_drop_grid() -> Vec<f64> {
    (0..=95).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcCurve {
    pub drop_rates: Vec<f64>,
    pub fnmr_values: Vec<f64>,
    pub threshold: f64,
    pub fmr_target: f64,
    pub auc: f64,
    /// First requested drop rate that would have left no genuine pair.
    pub truncated_at: Option<f64>,
    pub genuine_count: usize,
    pub impostor_count: usize,
}

/// Number of pairs removed at drop rate `d` out of `g`.
fn drop_count(d: f64, g: usize) -> usize {
    // Slack absorbs grid values like 0.29 that sit one ulp below k/100.
    ((d * g as f64 + 1e-9).floor() as usize).min(g)
}

/// ERC sweep at a fixed threshold. `pair_qualities[i]` is the quality of
/// genuine pair `i`; the lowest-quality pairs go first, ties in pair order.
pub fn erc_at_threshold(
    genuine_similarities: &[f64],
    pair_qualities: &[f64],
    threshold: f64,
    grid: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Option<f64>)> {
    if genuine_similarities.len() != pair_qualities.len() {
        return Err(Error::LengthMismatch {
            left: genuine_similarities.len(),
            right: pair_qualities.len(),
        });
    }
    if genuine_similarities.is_empty() {
        return Err(Error::Empty("genuine pairs"));
    }
    if grid.is_empty() || grid[0] != 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|d| *d > 1.0) {
        return Err(Error::InvalidConfig("drop grid must ascend from 0 within [0, 1]".into()));
    }
    let g = genuine_similarities.len();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| pair_qualities[a].total_cmp(&pair_qualities[b]));

    // rejected_from[m]: rejections among the pairs kept after dropping m.
    let mut rejected_from = vec![0usize; g + 1];
    for m in (0..g).rev() {
        rejected_from[m] = rejected_from[m + 1] + usize::from(genuine_similarities[order[m]] < threshold);
    }

    let mut rates = Vec::with_capacity(grid.len());
    let mut fnmr = Vec::with_capacity(grid.len());
    let mut truncated_at = None;
    for &d in grid {
        let dropped = drop_count(d, g);
        if dropped == g {
            truncated_at = Some(d);
            break;
        }
        rates.push(d);
        fnmr.push(rejected_from[dropped] as f64 / (g - dropped) as f64);
    }
    Ok((rates, fnmr, truncated_at))
}

/// Trapezoidal area under FNMR, divided by the grid span.
pub fn normalized_area(drop_rates: &[f64], fnmr_values: &[f64]) -> f64 {
    match drop_rates.len() {
        0 => f64::NAN,
        1 => fnmr_values[0],
        _ => {
            let area: f64 = drop_rates
                .windows(2)
                .zip(fnmr_values.windows(2))
                .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
                .sum();
            area / (drop_rates[drop_rates.len() - 1] - drop_rates[0])
        }
    }
}

pub fn erc_auc(curve: &ErcCurve) -> f64 {
    normalized_area(&curve.drop_rates, &curve.fnmr_values)
}

/// ERC of a quality scorer. The threshold is calibrated once, on all
/// impostor pairs; a genuine pair's quality is the lower of its two images.
pub fn erc_curve(
    bundle: &DatasetBundle,
    pair_set: &VerificationPairSet,
    qualities: &QualityTable,
    fmr_target: f64,
    grid: &[f64],
) -> Result<ErcCurve> {
    if pair_set.genuine.is_empty() {
        return Err(Error::Empty("genuine pairs"));
    }
    let threshold = calibrate_threshold(&pair_set.impostor_similarities(), fmr_target)?;
    let quality = |i: usize| {
        qualities.get(bundle.image_id(i)).ok_or_else(|| Error::MissingId {
            id: bundle.image_id(i).to_owned(),
            present_in: "verification pairs",
            missing_from: "qualities",
        })
    };
    let pair_qualities: Vec<f64> = pair_set
        .genuine
        .iter()
        .map(|p| Ok(quality(p.first)?.min(quality(p.second)?)))
        .collect::<Result<_>>()?;
    let (drop_rates, fnmr_values, truncated_at) =
        erc_at_threshold(&pair_set.genuine_similarities(), &pair_qualities, threshold, grid)?;
    let auc = normalized_area(&drop_rates, &fnmr_values);
    Ok(ErcCurve {
        drop_rates,
        fnmr_values,
        threshold,
        fmr_target,
        auc,
        truncated_at,
        genuine_count: pair_set.genuine.len(),
        impostor_count: pair_set.impostor.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcSummary {
    pub fmr_target: f64,
    pub threshold: f64,
    pub auc: f64,
    pub auc_x1000: f64,
    pub genuine_count: usize,
    pub impostor_count: usize,
    pub truncated_at: Option<f64>,
}

impl From<&ErcCurve> for ErcSummary {
    fn from(c: &ErcCurve) -> Self {
        Self {
            fmr_target: c.fmr_target,
            threshold: c.threshold,
            auc: c.auc,
            auc_x1000: c.auc * 1000.0,
            genuine_count: c.genuine_count,
            impostor_count: c.impostor_count,
            truncated_at: c.truncated_at,
        }
    }
}

impl ErcCurve {
    /// `drop_rate,fnmr` rows.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["drop_rate", "fnmr"]).map_err(to_err)?;
        for (d, f) in self.drop_rates.iter().zip(&self.fnmr_values) {
            w.write_record([d.to_string(), f.to_string()]).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io("<erc>", e))
    }
}
