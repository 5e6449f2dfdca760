//! Cluster-stratified sampling of mated (same-identity) image pairs.

use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;

use crate::cluster::ClusterAssignment;
use crate::datamodel::DatasetBundle;
use crate::error::{Error, Result};
use crate::seed;

/// Cosine of the angle between two vectors, clamped to [-1, 1].
pub fn cosine_similarity<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity operand".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatedPair {
    pub anchor: usize,
    pub partner: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatedPairList {
    pairs: Vec<MatedPair>,
    per_image: Vec<Vec<usize>>,
}

impl MatedPairList {
    /// Index a pair list over `image_count` images.
    pub fn new(pairs: Vec<MatedPair>, image_count: usize) -> Self {
        let mut per_image = vec![Vec::new(); image_count];
        for (l, p) in pairs.iter().enumerate() {
            per_image[p.anchor].push(l);
            per_image[p.partner].push(l);
        }
        Self { pairs, per_image }
    }

    pub fn pairs(&self) -> &[MatedPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Indices of pairs image `idx` takes part in, ascending.
    pub fn pairs_of(&self, idx: usize) -> &[usize] {
        self.per_image.get(idx).map_or(&[], Vec::as_slice)
    }

    pub fn image_count(&self) -> usize {
        self.per_image.len()
    }

    /// Debug dump as `anchor_id,partner_id,similarity`.
    pub fn write_csv(&self, bundle: &DatasetBundle, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["anchor_id", "partner_id", "similarity"]).map_err(to_err)?;
        for p in &self.pairs {
            w.write_record([bundle.image_id(p.anchor), bundle.image_id(p.partner), &p.similarity.to_string()])
                .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io("<pairs>", e))
    }
}

/// Expected pair count `sum_k N_k * (C_k - 1)`.
pub fn expected_pair_count(assignments: &[ClusterAssignment]) -> usize {
    assignments
        .iter()
        .map(|a| a.labels.len() * (a.cluster_count() - 1))
        .sum()
}

/// For each image and each other cluster of its identity, draw one partner
/// uniformly from that cluster. `assignments` follows `bundle.identity_index()`.
pub fn sample_mated_pairs(bundle: &DatasetBundle, assignments: &[ClusterAssignment], seed: u64) -> Result<MatedPairList> {
    let identities = bundle.identity_index();
    if assignments.len() != identities.len() {
        return Err(Error::LengthMismatch {
            left: identities.len(),
            right: assignments.len(),
        });
    }
    for (k, a) in identities.iter().zip(assignments) {
        if a.labels.len() != k.members.len() {
            return Err(Error::InvalidConfig(format!(
                "assignment of {} covers {} images, identity has {}",
                k.id,
                a.labels.len(),
                k.members.len()
            )));
        }
    }

    let per_identity: Vec<Vec<MatedPair>> = identities
        .par_iter()
        .zip(assignments)
        .map(|(identity, assignment)| {
            let clusters = assignment.members();
            if clusters.len() < 2 {
                return Ok(Vec::new());
            }
            let mut rng = seed::rng(seed::identity_seed(seed, &identity.id));
            let mut pairs = Vec::with_capacity(identity.members.len() * (clusters.len() - 1));
            for (local, &own) in assignment.labels.iter().enumerate() {
                for (other, group) in clusters.iter().enumerate() {
                    if other == own || group.is_empty() {
                        continue;
                    }
                    let pick = group[rng.random_range(0..group.len())];
                    let anchor = identity.members[local];
                    let partner = identity.members[pick];
                    let similarity = cosine_similarity(bundle.vector(anchor), bundle.vector(partner))?;
                    pairs.push(MatedPair {
                        anchor,
                        partner,
                        similarity,
                    });
                }
            }
            Ok(pairs)
        })
        .collect::<Result<_>>()?;

    Ok(MatedPairList::new(per_identity.concat(), bundle.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::cluster_all;
    use crate::datamodel::{validate_bundle, EmbeddingRecord, QualityTable};
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm(_))));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(Error::LengthMismatch { .. })));
    }

    fn bundle(layout: &[usize], dim: usize, seed: u64) -> DatasetBundle {
        let mut rng = seed::rng(seed);
        let mut recs = Vec::new();
        for (k, &n) in layout.iter().enumerate() {
            for i in 0..n {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                recs.push(EmbeddingRecord::new(format!("k{k}i{i}"), format!("k{k}"), v));
            }
        }
        let q = QualityTable::from_pairs(recs.iter().map(|r| (r.image_id.clone(), 0.0))).unwrap();
        validate_bundle(recs, q).unwrap()
    }

    #[test]
    fn singleton_identity_contributes_nothing() {
        let b = bundle(&[1, 3], 4, 1);
        let a = cluster_all(&b, 20, 1).unwrap();
        let pairs = sample_mated_pairs(&b, &a, 1).unwrap();
        assert!(pairs.pairs_of(0).is_empty());
        assert_eq!(pairs.len(), 3 * 2);
    }

    #[test]
    fn five_singleton_clusters_give_twenty_pairs() {
        let b = bundle(&[5], 4, 2);
        let a = cluster_all(&b, 20, 2).unwrap();
        assert_eq!(a[0].cluster_count(), 5);
        let pairs = sample_mated_pairs(&b, &a, 3).unwrap();
        assert_eq!(pairs.len(), 20);
        // Every cluster is a singleton, so the draw is forced: all ordered pairs.
        let mut got: Vec<(usize, usize)> = pairs.pairs().iter().map(|p| (p.anchor, p.partner)).collect();
        got.sort_unstable();
        let mut all = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    all.push((i, j));
                }
            }
        }
        assert_eq!(got, all);
        for i in 0..5 {
            assert_eq!(pairs.pairs().iter().filter(|p| p.anchor == i).count(), 4);
        }
    }

    #[test]
    fn large_identities_give_nineteen_pairs_per_image() {
        let b = bundle(&[25, 30, 20], 8, 4);
        let a = cluster_all(&b, 20, 4).unwrap();
        let pairs = sample_mated_pairs(&b, &a, 4).unwrap();
        assert_eq!(pairs.len(), b.len() * 19);
    }

    #[test]
    fn mismatched_assignments_are_rejected() {
        let b = bundle(&[3, 3], 4, 5);
        let a = cluster_all(&b, 2, 5).unwrap();
        assert!(sample_mated_pairs(&b, &a[..1], 0).is_err());
    }

    #[test]
    fn csv_dump() {
        let b = bundle(&[2], 3, 6);
        let a = cluster_all(&b, 2, 6).unwrap();
        let pairs = sample_mated_pairs(&b, &a, 6).unwrap();
        let mut out = Vec::new();
        pairs.write_csv(&b, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "anchor_id,partner_id,similarity");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("k0i0,k0i1,"));
    }

    proptest! {
        #[test]
        fn pair_invariants(
            layout in proptest::collection::vec(1usize..12, 1..8),
            c in 2usize..6,
            s in any::<u64>(),
        ) {
            let b = bundle(&layout, 4, s);
            let a = cluster_all(&b, c, s).unwrap();
            let pairs = sample_mated_pairs(&b, &a, s ^ 1).unwrap();
            prop_assert_eq!(pairs.len(), expected_pair_count(&a));
            let ident = |i: usize| b.embeddings()[i].identity_id.clone();
            let mut label = vec![0usize; b.len()];
            for (k, asg) in b.identity_index().iter().zip(&a) {
                for (local, &g) in k.members.iter().enumerate() {
                    label[g] = asg.labels[local];
                }
            }
            for p in pairs.pairs() {
                prop_assert_ne!(p.anchor, p.partner);
                prop_assert_eq!(ident(p.anchor), ident(p.partner));
                prop_assert_ne!(label[p.anchor], label[p.partner]);
                prop_assert!((-1.0..=1.0).contains(&p.similarity));
                let again = cosine_similarity(b.vector(p.anchor), b.vector(p.partner)).unwrap();
                prop_assert!((again - p.similarity).abs() < 1e-12);
            }
            for img in 0..b.len() {
                for &l in pairs.pairs_of(img) {
                    let p = pairs.pairs()[l];
                    prop_assert!(p.anchor == img || p.partner == img);
                }
            }
            prop_assert_eq!(&pairs, &sample_mated_pairs(&b, &a, s ^ 1).unwrap());
        }
    }
}
