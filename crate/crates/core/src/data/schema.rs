use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::csv::RawTable;
use crate::error::{Error, Result};
use crate::nn::hex;
use crate::rng;

/// Ordered domains and their entity vocabularies.
///
/// Each domain also owns one reserved MASK slot at index `vocab_size(j)`;
/// it is only ever used inside explainer training and never appears in a
/// stored record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct DomainSchema {
    domains: Vec<String>,
    vocab: Vec<Vec<String>>,
    lookup: Vec<HashMap<String, usize>>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    domains: Vec<String>,
    vocab: Vec<Vec<String>>,
}

impl TryFrom<SchemaRepr> for DomainSchema {
    type Error = Error;
    fn try_from(r: SchemaRepr) -> Result<Self> {
        DomainSchema::new(r.domains, r.vocab)
    }
}

impl From<DomainSchema> for SchemaRepr {
    fn from(s: DomainSchema) -> Self {
        SchemaRepr {
            domains: s.domains,
            vocab: s.vocab,
        }
    }
}

impl PartialEq for DomainSchema {
    fn eq(&self, other: &Self) -> bool {
        self.domains == other.domains && self.vocab == other.vocab
    }
}

impl Eq for DomainSchema {}

/// A record as one entity index per domain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedRecord(pub Vec<usize>);

impl EncodedRecord {
    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, domain: usize) -> usize {
        self.0[domain]
    }

    /// Domains on which `self` and `other` disagree, ascending.
    pub fn diff(&self, other: &EncodedRecord) -> Vec<usize> {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn with(&self, domain: usize, entity: usize) -> EncodedRecord {
        let mut v = self.0.clone();
        v[domain] = entity;
        EncodedRecord(v)
    }
}

impl From<Vec<usize>> for EncodedRecord {
    fn from(v: Vec<usize>) -> Self {
        EncodedRecord(v)
    }
}

impl DomainSchema {
    pub fn new(domains: Vec<String>, vocab: Vec<Vec<String>>) -> Result<Self> {
        if domains.len() < 2 {
            return Err(Error::InvalidSchema(format!(
                "need at least 2 domains, got {}",
                domains.len()
            )));
        }
        if domains.len() != vocab.len() {
            return Err(Error::InvalidSchema("one vocabulary per domain required".into()));
        }
        let unique: BTreeSet<_> = domains.iter().collect();
        if unique.len() != domains.len() {
            return Err(Error::InvalidSchema("duplicate domain name".into()));
        }
        let mut lookup = Vec::with_capacity(vocab.len());
        for (d, labels) in domains.iter().zip(&vocab) {
            if labels.is_empty() {
                return Err(Error::InvalidSchema(format!("domain `{d}` has an empty vocabulary")));
            }
            let map: HashMap<String, usize> = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
            if map.len() != labels.len() {
                return Err(Error::InvalidSchema(format!("duplicate label in domain `{d}`")));
            }
            lookup.push(map);
        }
        Ok(Self { domains, vocab, lookup })
    }

    /// Sorted unique labels per domain.
    pub fn build(raw: &RawTable) -> Result<Self> {
        if raw.rows.is_empty() {
            return Err(Error::NoRows { dropped: raw.dropped });
        }
        let m = raw.domains.len();
        let mut sets = vec![BTreeSet::new(); m];
        for row in &raw.rows {
            if row.len() != m {
                return Err(Error::SchemaMismatch(format!(
                    "row has {} cells, expected {m}",
                    row.len()
                )));
            }
            for (set, label) in sets.iter_mut().zip(row) {
                set.insert(label.clone());
            }
        }
        let vocab = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Self::new(raw.domains.clone(), vocab)
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn domain_name(&self, j: usize) -> &str {
        &self.domains[j]
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_owned()))
    }

    pub fn vocab(&self, j: usize) -> &[String] {
        &self.vocab[j]
    }

    pub fn vocab_size(&self, j: usize) -> usize {
        self.vocab[j].len()
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.vocab.iter().map(Vec::len).collect()
    }

    pub fn mask_index(&self, j: usize) -> usize {
        self.vocab[j].len()
    }

    pub fn total_entities(&self) -> usize {
        self.vocab.iter().map(Vec::len).sum()
    }

    pub fn label(&self, j: usize, entity: usize) -> &str {
        &self.vocab[j][entity]
    }

    pub fn entity_index(&self, j: usize, label: &str) -> Result<usize> {
        self.lookup[j]
            .get(label)
            .copied()
            .ok_or_else(|| Error::OutOfVocabulary {
                domain: self.domains[j].clone(),
                label: label.to_owned(),
            })
    }

    pub fn encode<S: AsRef<str>>(&self, row: &[S]) -> Result<EncodedRecord> {
        if row.len() != self.num_domains() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} cells, expected {}",
                row.len(),
                self.num_domains()
            )));
        }
        row.iter()
            .enumerate()
            .map(|(j, l)| self.entity_index(j, l.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(EncodedRecord)
    }

    pub fn decode(&self, rec: &EncodedRecord) -> Vec<String> {
        rec.0
            .iter()
            .enumerate()
            .map(|(j, &e)| self.vocab[j][e].clone())
            .collect()
    }

    pub fn validate(&self, rec: &EncodedRecord) -> Result<()> {
        if rec.len() != self.num_domains() {
            return Err(Error::SchemaMismatch(format!(
                "record has {} values, expected {}",
                rec.len(),
                self.num_domains()
            )));
        }
        for (j, &e) in rec.0.iter().enumerate() {
            if e >= self.vocab_size(j) {
                return Err(Error::SchemaMismatch(format!(
                    "entity {e} out of range for domain `{}` (vocab {})",
                    self.domains[j],
                    self.vocab_size(j)
                )));
            }
        }
        Ok(())
    }

    /// Stable content hash used to tie artifacts to the schema they were
    /// built against.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (d, labels) in self.domains.iter().zip(&self.vocab) {
            h.update((d.len() as u64).to_le_bytes());
            h.update(d.as_bytes());
            h.update((labels.len() as u64).to_le_bytes());
            for l in labels {
                h.update((l.len() as u64).to_le_bytes());
                h.update(l.as_bytes());
            }
        }
        hex(&h.finalize()[..16])
    }
}

/// Schema plus encoded train/test splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: DomainSchema,
    pub train: Vec<EncodedRecord>,
    pub test: Vec<EncodedRecord>,
}

impl Dataset {
    pub fn new(schema: DomainSchema, train: Vec<EncodedRecord>, test: Vec<EncodedRecord>) -> Result<Self> {
        for r in train.iter().chain(&test) {
            schema.validate(r)?;
        }
        Ok(Self { schema, train, test })
    }

    /// Encode every row against a schema built from all rows, then split.
    /// Without a shuffle seed the file order is kept and the tail becomes the
    /// test split, mirroring a time-ordered split.
    pub fn from_raw(raw: &RawTable, test_fraction: f64, shuffle_seed: Option<u64>) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test_fraction must be in [0,1), got {test_fraction}"
            )));
        }
        let schema = DomainSchema::build(raw)?;
        let mut records = raw.rows.iter().map(|r| schema.encode(r)).collect::<Result<Vec<_>>>()?;
        if let Some(seed) = shuffle_seed {
            records.shuffle(&mut rng::rng_for(seed, "split"));
        }
        let n_test = (records.len() as f64 * test_fraction).round() as usize;
        let n_train = records.len() - n_test;
        if n_train == 0 {
            return Err(Error::InvalidArgument("train split is empty".into()));
        }
        let test = records.split_off(n_train);
        Self::new(schema, records, test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(rows: &[&[&str]]) -> RawTable {
        RawTable {
            domains: (0..rows[0].len()).map(|j| format!("d{j}")).collect(),
            rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
            dropped: 0,
        }
    }

    #[test]
    fn vocab_is_sorted_unique_labels() {
        let s = DomainSchema::build(&raw(&[&["a", "x"], &["b", "x"]])).unwrap();
        assert_eq!(s.vocab(0), ["a", "b"]);
        assert_eq!(s.vocab(1), ["x"]);
    }

    #[test]
    fn single_row_gives_unit_vocabularies() {
        let s = DomainSchema::build(&raw(&[&["a", "x", "q"]])).unwrap();
        assert_eq!(s.vocab_sizes(), vec![1, 1, 1]);
    }

    #[test]
    fn indices_follow_sort_order() {
        let s = DomainSchema::build(&raw(&[&["B", "x"], &["A", "x"]])).unwrap();
        assert_eq!(s.entity_index(0, "A").unwrap(), 0);
        assert_eq!(s.entity_index(0, "B").unwrap(), 1);
        assert_eq!(s.mask_index(0), 2);
    }

    #[test]
    fn encode_and_reject_unseen_labels() {
        let s = DomainSchema::build(&raw(&[&["a", "x"], &["b", "x"]])).unwrap();
        assert_eq!(s.encode(&["a", "x"]).unwrap(), EncodedRecord(vec![0, 0]));
        let err = s.encode(&["z", "x"]).unwrap_err();
        assert!(matches!(err, Error::OutOfVocabulary { label, .. } if label == "z"));
    }

    #[test]
    fn schema_invariants_are_enforced() {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(DomainSchema::new(v(&["a"]), vec![v(&["x"])]).is_err());
        assert!(DomainSchema::new(v(&["a", "a"]), vec![v(&["x"]), v(&["y"])]).is_err());
        assert!(DomainSchema::new(v(&["a", "b"]), vec![v(&["x"]), vec![]]).is_err());
        assert!(DomainSchema::new(v(&["a", "b"]), vec![v(&["x", "x"]), v(&["y"])]).is_err());
    }

    #[test]
    fn validate_rejects_mask_and_wrong_width() {
        let s = DomainSchema::build(&raw(&[&["a", "x"], &["b", "y"]])).unwrap();
        assert!(s.validate(&EncodedRecord(vec![1, 1])).is_ok());
        assert!(s.validate(&EncodedRecord(vec![2, 0])).is_err());
        assert!(s.validate(&EncodedRecord(vec![0])).is_err());
    }

    #[test]
    fn schema_hash_is_content_addressed() {
        let a = DomainSchema::build(&raw(&[&["a", "x"], &["b", "x"]])).unwrap();
        let b = DomainSchema::build(&raw(&[&["b", "x"], &["a", "x"]])).unwrap();
        let c = DomainSchema::build(&raw(&[&["a", "x"], &["c", "x"]])).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn split_keeps_every_row_once() {
        let rows: Vec<Vec<String>> = (0..10).map(|i| vec![format!("a{i}"), "x".into()]).collect();
        let t = RawTable {
            domains: vec!["d0".into(), "d1".into()],
            rows,
            dropped: 0,
        };
        let ds = Dataset::from_raw(&t, 0.3, None).unwrap();
        assert_eq!(ds.train.len(), 7);
        assert_eq!(ds.test.len(), 3);
        let shuffled = Dataset::from_raw(&t, 0.3, Some(9)).unwrap();
        let mut all: Vec<_> = shuffled.train.iter().chain(&shuffled.test).cloned().collect();
        all.sort();
        let mut orig: Vec<_> = ds.train.iter().chain(&ds.test).cloned().collect();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn serde_round_trip_rebuilds_lookup() {
        let s = DomainSchema::build(&raw(&[&["a", "x"], &["b", "y"]])).unwrap();
        let back: DomainSchema = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.entity_index(1, "y").unwrap(), 1);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(rows in prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 3), 1..20)) {
            let t = RawTable { domains: vec!["p".into(), "q".into(), "r".into()], rows: rows.clone(), dropped: 0 };
            let s = DomainSchema::build(&t).unwrap();
            for r in &rows {
                let enc = s.encode(r).unwrap();
                prop_assert_eq!(&s.decode(&enc), r);
            }
        }
    }
}
