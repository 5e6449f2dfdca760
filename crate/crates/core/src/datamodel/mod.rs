//! Core records, the validated dataset bundle and optimizer settings.

mod io;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_embeddings, load_quality_scores, read_femb, read_quality_csv, write_embeddings_csv,
    write_embeddings_femb, write_femb, write_quality_csv, write_quality_scores,
};

/// One image: its id, the identity it belongs to and its face embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub image_id: String,
    pub identity_id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(image_id: impl Into<String>, identity_id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self {
            image_id: image_id.into(),
            identity_id: identity_id.into(),
            vector,
        }
    }

    pub fn vector_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Scalar quality score per image id, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityTable {
    ids: Vec<String>,
    scores: Vec<f64>,
    index: HashMap<String, usize>,
}

impl QualityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut table = Self::new();
        for (id, score) in pairs {
            table.insert(id, score)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, image_id: impl Into<String>, score: f64) -> Result<()> {
        let image_id = image_id.into();
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score of {image_id}")));
        }
        if self.index.contains_key(&image_id) {
            return Err(Error::DuplicateId(image_id));
        }
        self.index.insert(image_id.clone(), self.ids.len());
        self.ids.push(image_id);
        self.scores.push(score);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<f64> {
        self.index.get(image_id).map(|&i| self.scores[i])
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.ids.iter().map(String::as_str).zip(self.scores.iter().copied())
    }

    /// Copy of the table with every score passed through `f`.
    pub fn map_scores(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::from_pairs(self.iter().map(|(id, q)| (id.to_owned(), f(q))))
    }
}

/// Images of a single identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identity {
    pub id: String,
    /// Bundle indices, ascending.
    pub members: Vec<usize>,
}

/// Embeddings and baseline qualities that have been checked against each other.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    embeddings: Vec<EmbeddingRecord>,
    qualities: QualityTable,
    /// Quality of image `i`, aligned with `embeddings`.
    aligned_scores: Vec<f64>,
    dimension: usize,
    identities: Vec<Identity>,
}

impl DatasetBundle {
    pub fn embeddings(&self) -> &[EmbeddingRecord] {
        &self.embeddings
    }

    pub fn qualities(&self) -> &QualityTable {
        &self.qualities
    }

    /// Baseline scores in embedding order.
    pub fn scores(&self) -> &[f64] {
        &self.aligned_scores
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Identities in order of first appearance.
    pub fn identity_index(&self) -> &[Identity] {
        &self.identities
    }

    pub fn identity(&self, identity_id: &str) -> Option<&Identity> {
        self.identities.iter().find(|k| k.id == identity_id)
    }

    pub fn image_id(&self, idx: usize) -> &str {
        &self.embeddings[idx].image_id
    }

    pub fn vector(&self, idx: usize) -> &[f32] {
        &self.embeddings[idx].vector
    }
}

/// Cross-check embeddings and qualities and build the identity index.
pub fn validate_bundle(embeddings: Vec<EmbeddingRecord>, qualities: QualityTable) -> Result<DatasetBundle> {
    let mut seen = HashSet::with_capacity(embeddings.len());
    let dimension = embeddings.first().map_or(0, |r| r.vector.len());
    for rec in &embeddings {
        if !seen.insert(rec.image_id.as_str()) {
            return Err(Error::DuplicateId(rec.image_id.clone()));
        }
        if rec.vector.len() != dimension {
            return Err(Error::DimensionMismatch {
                image_id: rec.image_id.clone(),
                expected: dimension,
                found: rec.vector.len(),
            });
        }
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of {}", rec.image_id)));
        }
        if rec.vector.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNorm(rec.image_id.clone()));
        }
        if !qualities.contains(&rec.image_id) {
            return Err(Error::MissingId {
                id: rec.image_id.clone(),
                present_in: "embeddings",
                missing_from: "qualities",
            });
        }
    }
    if let Some(id) = qualities.ids().iter().find(|id| !seen.contains(id.as_str())) {
        return Err(Error::MissingId {
            id: id.clone(),
            present_in: "qualities",
            missing_from: "embeddings",
        });
    }

    let mut identities: Vec<Identity> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (idx, rec) in embeddings.iter().enumerate() {
        let k = *slot.entry(rec.identity_id.as_str()).or_insert_with(|| {
            identities.push(Identity {
                id: rec.identity_id.clone(),
                members: Vec::new(),
            });
            identities.len() - 1
        });
        identities[k].members.push(idx);
    }

    let aligned_scores = embeddings
        .iter()
        .map(|r| qualities.get(&r.image_id).expect("checked above"))
        .collect();

    Ok(DatasetBundle {
        embeddings,
        qualities,
        aligned_scores,
        dimension,
        identities,
    })
}

/// Settings of the label optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub clusters: usize,
    pub theta: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            clusters: 20,
            theta: 0.001,
            repeats: 10,
            seed: 42,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 {
            return Err(Error::InvalidConfig(format!("clusters must be >= 2, got {}", self.clusters)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if self.repeats < 1 {
            return Err(Error::InvalidConfig("repeats must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, ident: &str) -> EmbeddingRecord {
        EmbeddingRecord::new(id, ident, vec![1.0, 0.5])
    }

    fn table(ids: &[&str]) -> QualityTable {
        QualityTable::from_pairs(ids.iter().map(|id| (*id, 0.5))).unwrap()
    }

    #[test]
    fn matching_inputs_build_bundle() {
        let b = validate_bundle(vec![rec("a", "x"), rec("b", "x"), rec("c", "y")], table(&["c", "b", "a"])).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.dimension(), 2);
    }

    #[test]
    fn missing_quality_names_the_id() {
        let err = validate_bundle(vec![rec("a", "x"), rec("b", "x")], table(&["a"])).unwrap_err();
        match err {
            Error::MissingId { id, .. } => assert_eq!(id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extra_quality_is_rejected() {
        let err = validate_bundle(vec![rec("a", "x")], table(&["a", "z"])).unwrap_err();
        assert!(matches!(err, Error::MissingId { ref id, .. } if id == "z"));
    }

    #[test]
    fn zero_vector_is_rejected() {
        let r = EmbeddingRecord::new("a", "x", vec![0.0, 0.0]);
        assert!(matches!(validate_bundle(vec![r], table(&["a"])), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn identity_index_partitions_images() {
        let b = validate_bundle(vec![rec("a", "id1"), rec("c", "id2"), rec("b", "id1")], table(&["a", "b", "c"])).unwrap();
        let idx = b.identity_index();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx[0].id, "id1");
        assert_eq!(idx[0].members, vec![0, 2]);
        assert_eq!(idx[1].members, vec![1]);
        let total: usize = idx.iter().map(|k| k.members.len()).sum();
        assert_eq!(total, b.len());
    }

    #[test]
    fn quality_table_rejects_duplicates_and_nan() {
        let mut t = QualityTable::new();
        t.insert("a", 0.5).unwrap();
        assert!(matches!(t.insert("a", 0.7), Err(Error::DuplicateId(_))));
        assert!(matches!(t.insert("b", f64::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn config_defaults_and_theta_range() {
        let c = OptimConfig::default();
        assert_eq!((c.clusters, c.theta, c.repeats), (20, 0.001, 10));
        assert!(OptimConfig { theta: 1.5, ..c }.validate().is_err());
        assert!(OptimConfig { theta: -0.1, ..c }.validate().is_err());
        assert!(OptimConfig { theta: 1.0, ..c }.validate().is_ok());
    }
}
