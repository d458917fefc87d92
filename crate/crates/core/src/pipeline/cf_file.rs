//! Counterfactual files: records spelled out as entity labels, so the same
//! format serves our own output and counterfactuals produced elsewhere.

use serde::{Deserialize, Serialize};

use crate::data::{DomainSchema, EncodedRecord};
use crate::error::{Error, Result};
use crate::metrics::Case;
use crate::recourse::CounterfactualSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfRecord {
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changed: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfEntry {
    pub anomaly: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_score: Option<f64>,
    /// Planted corruption, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupted: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_mod: Option<Vec<String>>,
    /// Per-domain likelihoods in `domains` order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihoods: Option<Vec<f64>>,
    pub counterfactuals: Vec<CfRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualFile {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Column order of every `labels` list.
    pub domains: Vec<String>,
    pub entries: Vec<CfEntry>,
}

fn names(schema: &DomainSchema, domains: &[usize]) -> Vec<String> {
    domains.iter().map(|&d| schema.domain_name(d).to_owned()).collect()
}

impl CfEntry {
    pub fn from_set(
        schema: &DomainSchema,
        set: &CounterfactualSet,
        anomaly_score: f64,
        corrupted: Option<&[usize]>,
    ) -> Self {
        Self {
            anomaly: schema.decode(&set.anomaly),
            anomaly_score: Some(anomaly_score),
            corrupted: corrupted.map(|c| names(schema, c)),
            d_mod: Some(names(schema, &set.d_mod)),
            likelihoods: set.likelihoods.as_ref().map(|l| l.values().to_vec()),
            counterfactuals: set
                .counterfactuals
                .iter()
                .map(|c| CfRecord {
                    labels: schema.decode(&c.record),
                    score: Some(c.score),
                    changed: Some(names(schema, &c.changed)),
                })
                .collect(),
        }
    }
}

impl CounterfactualFile {
    /// Re-encode against `schema`. Columns are matched by name, so the file
    /// may list domains in any order.
    pub fn to_cases(&self, schema: &DomainSchema) -> Result<Vec<Case>> {
        let m = schema.num_domains();
        if self.domains.len() != m {
            return Err(Error::SchemaMismatch(format!(
                "counterfactual file has {} domains, schema has {m}",
                self.domains.len()
            )));
        }
        // column position in the file for each schema domain
        let cols = (0..m)
            .map(|j| {
                self.domains
                    .iter()
                    .position(|d| d == schema.domain_name(j))
                    .ok_or_else(|| Error::UnknownDomain(schema.domain_name(j).to_owned()))
            })
            .collect::<Result<Vec<_>>>()?;
        let encode = |labels: &[String]| -> Result<EncodedRecord> {
            if labels.len() != m {
                return Err(Error::SchemaMismatch(format!(
                    "record has {} labels, expected {m}",
                    labels.len()
                )));
            }
            let row: Vec<&str> = cols.iter().map(|&c| labels[c].as_str()).collect();
            schema.encode(&row)
        };
        self.entries
            .iter()
            .map(|e| {
                let corrupted = match &e.corrupted {
                    Some(c) => {
                        let mut idx = c.iter().map(|d| schema.domain_index(d)).collect::<Result<Vec<_>>>()?;
                        idx.sort_unstable();
                        Some(idx)
                    }
                    None => None,
                };
                Ok(Case {
                    anomaly: encode(&e.anomaly)?,
                    counterfactuals: e
                        .counterfactuals
                        .iter()
                        .map(|c| encode(&c.labels))
                        .collect::<Result<_>>()?,
                    corrupted,
                })
            })
            .collect()
    }
}
