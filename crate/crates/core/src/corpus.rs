//! Rule-based synthetic corpus.
//!
//! Records are drawn from latent clusters. Each cluster owns a small subset
//! of entities in every domain; a record picks a cluster uniformly and then
//! one member entity per domain uniformly. With probability `noise` one
//! domain is then overwritten by a uniformly drawn entity of that domain.
//! Because the cluster structure is known, "context" has a ground truth.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DomainSchema, EncodedRecord, RawTable};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleCorpusSpec {
    pub domains: Vec<String>,
    /// One size per domain.
    pub vocab_sizes: Vec<usize>,
    pub clusters: usize,
    pub entities_per_cluster: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for RuleCorpusSpec {
    fn default() -> Self {
        Self {
            domains: [
                "carrier",
                "shipper",
                "consignee",
                "port_lading",
                "port_unlading",
                "hs_code",
            ]
            .map(String::from)
            .to_vec(),
            vocab_sizes: vec![64; 6],
            clusters: 16,
            entities_per_cluster: 4,
            train_records: 3200,
            test_records: 1000,
            noise: 0.02,
            seed: 0,
        }
    }
}

impl RuleCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("corpus: {msg}")));
        if self.domains.len() < 2 {
            return bad("need at least two domains".into());
        }
        if self.vocab_sizes.len() != self.domains.len() {
            return bad(format!(
                "{} vocab sizes for {} domains",
                self.vocab_sizes.len(),
                self.domains.len()
            ));
        }
        if self.clusters == 0 || self.entities_per_cluster == 0 {
            return bad("clusters and entities_per_cluster must be positive".into());
        }
        if let Some(&v) = self.vocab_sizes.iter().find(|&&v| v < self.entities_per_cluster.max(2)) {
            return bad(format!("vocab size {v} is smaller than entities_per_cluster or 2"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad(format!("noise must be in [0, 0.5), got {}", self.noise));
        }
        if self.train_records == 0 || self.test_records == 0 {
            return bad("train_records and test_records must be positive".into());
        }
        Ok(())
    }

    pub fn label(&self, domain: usize, entity: usize) -> String {
        format!("{}_{entity:03}", self.domains[domain])
    }
}

/// A generated corpus and the cluster membership that produced it.
#[derive(Debug, Clone)]
pub struct RuleCorpus {
    pub spec: RuleCorpusSpec,
    pub raw: RawTable,
    pub dataset: Dataset,
    /// `members[c][j]`: entity indices (in the dataset schema) of cluster `c`
    /// in domain `j`. Entities that never appeared in any row are omitted.
    pub members: Vec<Vec<Vec<usize>>>,
}

impl RuleCorpus {
    /// Analytic probability that a noise-free record contains both `a` (in
    /// domain `da`) and `b` (in domain `db`).
    pub fn expected_pair_probability(&self, da: usize, a: usize, db: usize, b: usize) -> f64 {
        let c = self.spec.clusters as f64;
        let k = self.spec.entities_per_cluster as f64;
        self.members
            .iter()
            .filter(|m| m[da].contains(&a) && m[db].contains(&b))
            .count() as f64
            / (c * k * k)
    }

    /// Clusters containing every entity of the record.
    pub fn clusters_of(&self, record: &EncodedRecord) -> Vec<usize> {
        (0..self.members.len())
            .filter(|&c| {
                record
                    .values()
                    .iter()
                    .enumerate()
                    .all(|(j, e)| self.members[c][j].contains(e))
            })
            .collect()
    }
}

pub fn generate_rule_corpus(spec: &RuleCorpusSpec) -> Result<RuleCorpus> {
    spec.validate()?;
    let m = spec.domains.len();
    let mut rng = rng::rng_for(spec.seed, "rule-corpus");

    // Per domain, shuffle the vocabulary and hand out consecutive blocks;
    // blocks wrap around (and so overlap) only when the vocabulary is too
    // small for disjoint ones.
    let mut raw_members = vec![vec![Vec::new(); m]; spec.clusters];
    for (j, &v) in spec.vocab_sizes.iter().enumerate() {
        let mut perm: Vec<usize> = (0..v).collect();
        perm.shuffle(&mut rng);
        for (c, cluster) in raw_members.iter_mut().enumerate() {
            cluster[j] = (0..spec.entities_per_cluster)
                .map(|k| perm[(c * spec.entities_per_cluster + k) % v])
                .collect();
        }
    }

    let total = spec.train_records + spec.test_records;
    let rows: Vec<Vec<String>> = (0..total)
        .map(|_| {
            let c = rng.gen_range(0..spec.clusters);
            let mut ents: Vec<usize> = raw_members[c].iter().map(|s| s[rng.gen_range(0..s.len())]).collect();
            if rng.gen::<f64>() < spec.noise {
                let j = rng.gen_range(0..m);
                ents[j] = rng.gen_range(0..spec.vocab_sizes[j]);
            }
            ents.iter().enumerate().map(|(j, &e)| spec.label(j, e)).collect()
        })
        .collect();

    let raw = RawTable {
        domains: spec.domains.clone(),
        rows,
        dropped: 0,
    };
    let schema = DomainSchema::build(&raw)?;
    let mut records = raw.rows.iter().map(|r| schema.encode(r)).collect::<Result<Vec<_>>>()?;
    let test = records.split_off(spec.train_records);
    let dataset = Dataset::new(schema, records, test)?;

    let members = raw_members
        .iter()
        .map(|cluster| {
            cluster
                .iter()
                .enumerate()
                .map(|(j, ents)| {
                    let mut idx: Vec<usize> = ents
                        .iter()
                        .filter_map(|&e| dataset.schema.entity_index(j, &spec.label(j, e)).ok())
                        .collect();
                    idx.sort_unstable();
                    idx
                })
                .collect()
        })
        .collect();

    Ok(RuleCorpus {
        spec: spec.clone(),
        raw,
        dataset,
        members,
    })
}

/// Write rows as a headed CSV that `load_csv` reads back.
pub fn write_csv(path: impl AsRef<Path>, raw: &RawTable) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(&raw.domains)?;
    for row in &raw.rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}
