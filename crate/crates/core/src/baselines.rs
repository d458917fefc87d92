//! Comparison methods that emit the same [`CounterfactualSet`] as the main
//! recourse path.
//!
//! * `replace_m`: every record differing from the anomaly in exactly `m`
//!   domains, scored exhaustively.
//! * `xformer_r`: the explainer's domains, each replaced by a uniformly
//!   drawn different entity.

use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyScorer;
use crate::data::{DomainSchema, EncodedRecord};
use crate::error::{Error, Result};
use crate::explainer::Explainer;
use crate::recourse::{anomaly_seed, rank_and_select, CounterfactualSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    ReplaceM,
    XformerR,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::ReplaceM => "replace_m",
            BaselineMethod::XformerR => "xformer_r",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub m: usize,
    pub k: usize,
    pub threshold: f64,
    /// Draws allowed per requested counterfactual in `xformer_r`.
    pub retries_per_sample: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            m: 1,
            k: 5,
            threshold: 0.5,
            retries_per_sample: 50,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 {
            return Err(Error::Config("baseline: m and k must be at least 1".into()));
        }
        if self.retries_per_sample == 0 {
            return Err(Error::Config("baseline: retries_per_sample must be at least 1".into()));
        }
        Ok(())
    }
}

/// All `m`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, m, &mut Vec::new(), &mut out);
    out
}

/// Records that differ from `anomaly` in exactly `m` domains.
pub fn replace_m_candidates(anomaly: &EncodedRecord, schema: &DomainSchema, m: usize) -> Result<Vec<EncodedRecord>> {
    let n = schema.num_domains();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("m must be in 1..={n}, got {m}")));
    }
    schema.validate(anomaly)?;
    let mut out = Vec::new();
    for doms in subsets(n, m) {
        let alternatives: Vec<Vec<usize>> = doms
            .iter()
            .map(|&d| (0..schema.vocab_size(d)).filter(|&e| e != anomaly.get(d)).collect())
            .collect();
        if alternatives.iter().any(Vec::is_empty) {
            continue;
        }
        let total: usize = alternatives.iter().map(Vec::len).product();
        for mut code in 0..total {
            let mut values = anomaly.values().to_vec();
            for (alt, &d) in alternatives.iter().zip(&doms).rev() {
                values[d] = alt[code % alt.len()];
                code /= alt.len();
            }
            out.push(EncodedRecord(values));
        }
    }
    Ok(out)
}

pub fn replace_m(
    anomaly: &EncodedRecord,
    scorer: &dyn AnomalyScorer,
    schema: &DomainSchema,
    config: &BaselineConfig,
) -> Result<CounterfactualSet> {
    config.validate()?;
    let raw = replace_m_candidates(anomaly, schema, config.m)?;
    let d_mod: Vec<usize> = (0..schema.num_domains()).collect();
    Ok(rank_and_select(anomaly, &d_mod, &raw, scorer, config.k))
}

/// `k` distinct random replacements over the explainer's domains; fewer
/// (with a warning) when the domains cannot produce `k` distinct records
/// within the retry budget. Counterfactuals are ordered by score.
pub fn xformer_r(
    anomaly: &EncodedRecord,
    explainer: &Explainer,
    scorer: &dyn AnomalyScorer,
    schema: &DomainSchema,
    config: &BaselineConfig,
) -> Result<CounterfactualSet> {
    config.validate()?;
    schema.validate(anomaly)?;
    let (likelihoods, d_mod) = explainer.explain(anomaly, config.threshold)?;
    let changeable: Vec<usize> = d_mod.iter().copied().filter(|&d| schema.vocab_size(d) > 1).collect();
    let possible = changeable
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(schema.vocab_size(d) - 1))
        .unwrap_or(usize::MAX);
    let target = if changeable.is_empty() {
        0
    } else {
        config.k.min(possible)
    };

    let mut r = rng::rng_for(anomaly_seed(config.seed, anomaly), "xformer-r");
    let mut seen = BTreeSet::new();
    let mut raw = Vec::new();
    let mut draws = 0;
    while raw.len() < target && draws < config.k * config.retries_per_sample {
        draws += 1;
        let mut values = anomaly.values().to_vec();
        for &d in &changeable {
            let v = schema.vocab_size(d);
            let e = r.gen_range(0..v - 1);
            values[d] = if e >= anomaly.get(d) { e + 1 } else { e };
        }
        let rec = EncodedRecord(values);
        if seen.insert(rec.clone()) {
            raw.push(rec);
        }
    }
    if raw.len() < config.k {
        log::warn!(
            "xformer_r produced {} of {} counterfactuals for {:?}",
            raw.len(),
            config.k,
            anomaly.values()
        );
    }
    let mut set = rank_and_select(anomaly, &d_mod, &raw, scorer, config.k);
    set.likelihoods = Some(likelihoods);
    Ok(set)
}
