//! Counterfactual generation.
//!
//! For an anomalous record: pick the low-likelihood domains, collect
//! replacement candidates for each from KGE neighbours of the record's
//! entities in metapath-adjacent, unmodified domains, enumerate the
//! combinations and keep the `K` the scorer finds least anomalous.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyScorer;
use crate::data::{CooccurrenceModel, DomainSchema, EncodedRecord};
use crate::error::{Error, Result};
use crate::explainer::{Explainer, LikelihoodVector};
use crate::kge::{DistMult, Metapath, NeighborIndex};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecourseConfig {
    /// Counterfactuals returned per anomaly.
    pub k: usize,
    /// Neighbours fetched per query; `None` means `k`.
    pub neighbor_k: Option<usize>,
    pub max_combinations: usize,
    /// Likelihood below which a domain is selected for modification.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RecourseConfig {
    fn default() -> Self {
        Self {
            k: 5,
            neighbor_k: None,
            max_combinations: 1000,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl RecourseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.neighbor_k == Some(0) {
            return Err(Error::Config("recourse: k and neighbor_k must be at least 1".into()));
        }
        if self.max_combinations < self.k {
            return Err(Error::Config("recourse: max_combinations must be at least k".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("recourse: threshold must be in [0,1]".into()));
        }
        Ok(())
    }

    pub fn neighbor_depth(&self) -> usize {
        self.neighbor_k.unwrap_or(self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub record: EncodedRecord,
    pub score: f64,
    /// Domains where the record differs from the anomaly, ascending.
    pub changed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSet {
    pub anomaly: EncodedRecord,
    pub d_mod: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihoods: Option<LikelihoodVector>,
    /// Sorted by score, highest (least anomalous) first.
    pub counterfactuals: Vec<Counterfactual>,
}

impl CounterfactualSet {
    pub fn records(&self) -> Vec<EncodedRecord> {
        self.counterfactuals.iter().map(|c| c.record.clone()).collect()
    }
}

/// KGE candidates for domain `d_i`: the union, over metapaths containing
/// `d_i`, of the `k` best tails in `d_i` for the anomaly's entity in each
/// metapath-adjacent domain not being modified. The anomaly's own entity
/// is removed. Also returns the number of neighbour queries issued.
pub fn candidate_entities(
    anomaly: &EncodedRecord,
    d_i: usize,
    d_mod: &[usize],
    metapaths: &[Metapath],
    index: &NeighborIndex<'_>,
    k: usize,
) -> Result<(Vec<usize>, usize)> {
    let mut out = BTreeSet::new();
    let mut queries = 0;
    for mp in metapaths.iter().filter(|mp| mp.contains(d_i)) {
        for d_q in mp.neighbors(d_i).into_iter().filter(|d| !d_mod.contains(d)) {
            queries += 1;
            for (e, _) in index.knn_tails(d_q, anomaly.get(d_q), d_i, k)? {
                out.insert(e);
            }
        }
    }
    out.remove(&anomaly.get(d_i));
    Ok((out.into_iter().collect(), queries))
}

/// The `k` entities of `d_i` with the highest mean co-occurrence probability
/// against the anomaly's entities outside `d_mod`, excluding the anomaly's
/// own entity. Ties go to the lower index.
pub fn fallback_candidates(
    anomaly: &EncodedRecord,
    d_i: usize,
    d_mod: &[usize],
    vocab_size: usize,
    cooccurrence: &CooccurrenceModel,
    k: usize,
) -> Vec<usize> {
    let context: Vec<(usize, usize)> = (0..anomaly.len())
        .filter(|j| !d_mod.contains(j))
        .map(|j| (j, anomaly.get(j)))
        .collect();
    let mut scored: Vec<(usize, f64)> = (0..vocab_size)
        .filter(|&e| e != anomaly.get(d_i))
        .map(|e| (e, cooccurrence.mean_with_context(d_i, e, &context)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = scored.into_iter().take(k).map(|x| x.0).collect();
    out.sort_unstable();
    out
}

/// Every combination of candidates over `d_mod` applied to the anomaly,
/// or a uniform seeded sample of `max_combinations` of them when there are
/// more. Combinations are decoded in mixed radix with the first domain of
/// `d_mod` varying slowest.
pub fn generate_counterfactuals(
    anomaly: &EncodedRecord,
    d_mod: &[usize],
    candidates: &[Vec<usize>],
    max_combinations: usize,
    seed: u64,
) -> Result<Vec<EncodedRecord>> {
    if d_mod.len() != candidates.len() {
        return Err(Error::InvalidArgument(
            "one candidate list per modified domain required".into(),
        ));
    }
    if candidates.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty candidate list".into()));
    }
    let total = candidates
        .iter()
        .try_fold(1usize, |acc, c| acc.checked_mul(c.len()))
        .ok_or_else(|| Error::InvalidArgument("combination count overflows".into()))?;
    let picks: Vec<usize> = if total > max_combinations {
        let mut r = rng::rng_for(seed, "combinations");
        let mut v = index::sample(&mut r, total, max_combinations).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..total).collect()
    };
    let decode = |mut code: usize| {
        let mut values = anomaly.values().to_vec();
        for (pos, &d) in d_mod.iter().enumerate().rev() {
            let c = &candidates[pos];
            values[d] = c[code % c.len()];
            code /= c.len();
        }
        EncodedRecord(values)
    };
    let mut out: Vec<EncodedRecord> = picks.into_iter().map(decode).collect();
    let mut seen = BTreeSet::new();
    out.retain(|r| seen.insert(r.clone()));
    Ok(out)
}

fn by_score_then_record(a: &Counterfactual, b: &Counterfactual) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.record.cmp(&b.record))
}

/// Score the raw set and keep the `k` least anomalous.
pub fn rank_and_select(
    anomaly: &EncodedRecord,
    d_mod: &[usize],
    raw: &[EncodedRecord],
    scorer: &dyn AnomalyScorer,
    k: usize,
) -> CounterfactualSet {
    let scores = scorer.score_batch(raw);
    let mut cfs: Vec<Counterfactual> = raw
        .iter()
        .zip(scores)
        .map(|(r, score)| Counterfactual {
            changed: anomaly.diff(r),
            record: r.clone(),
            score,
        })
        .collect();
    cfs.sort_by(by_score_then_record);
    cfs.truncate(k);
    CounterfactualSet {
        anomaly: anomaly.clone(),
        d_mod: d_mod.to_vec(),
        likelihoods: None,
        counterfactuals: cfs,
    }
}

/// Everything recourse needs, all built on one schema.
#[derive(Clone, Copy)]
pub struct RecourseContext<'a> {
    pub schema: &'a DomainSchema,
    pub explainer: &'a Explainer,
    pub kge: &'a DistMult,
    pub scorer: &'a dyn AnomalyScorer,
    pub metapaths: &'a [Metapath],
    pub cooccurrence: &'a CooccurrenceModel,
}

impl RecourseContext<'_> {
    pub fn check(&self) -> Result<()> {
        let expected = self.schema.hash();
        for (name, h) in [
            ("explainer", self.explainer.schema_hash()),
            ("kge", self.kge.schema_hash()),
            ("anomaly scorer", self.scorer.schema_hash()),
        ] {
            if h != expected {
                return Err(Error::SchemaHashMismatch {
                    artifact: name.into(),
                    expected,
                    found: h.into(),
                });
            }
        }
        Ok(())
    }
}

/// Where the time of one recourse call went.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecourseTrace {
    pub explain_secs: f64,
    pub search_secs: f64,
    pub score_secs: f64,
    pub d_mod_size: usize,
    pub neighbor_queries: usize,
    pub fallback_domains: usize,
    pub enumerated: usize,
}

impl RecourseTrace {
    pub fn total_secs(&self) -> f64 {
        self.explain_secs + self.search_secs + self.score_secs
    }
}

/// Per-anomaly seed: depends only on the global seed and the record, so a
/// result never depends on which batch the anomaly was processed in.
pub fn anomaly_seed(seed: u64, anomaly: &EncodedRecord) -> u64 {
    let key: Vec<String> = anomaly.values().iter().map(usize::to_string).collect();
    rng::derive_seed(seed, &format!("recourse:{}", key.join(",")))
}

pub fn carat_recourse(
    anomaly: &EncodedRecord,
    ctx: &RecourseContext<'_>,
    config: &RecourseConfig,
) -> Result<CounterfactualSet> {
    carat_recourse_traced(anomaly, ctx, config).map(|(s, _)| s)
}

pub fn carat_recourse_traced(
    anomaly: &EncodedRecord,
    ctx: &RecourseContext<'_>,
    config: &RecourseConfig,
) -> Result<(CounterfactualSet, RecourseTrace)> {
    config.validate()?;
    ctx.schema.validate(anomaly)?;
    let mut trace = RecourseTrace::default();

    let t = Instant::now();
    let (likelihoods, d_mod) = ctx.explainer.explain(anomaly, config.threshold)?;
    trace.explain_secs = t.elapsed().as_secs_f64();
    trace.d_mod_size = d_mod.len();

    let t = Instant::now();
    let index = NeighborIndex::new(ctx.kge);
    let k = config.neighbor_depth();
    let mut candidates = Vec::with_capacity(d_mod.len());
    for &d_i in &d_mod {
        let (mut c, q) = candidate_entities(anomaly, d_i, &d_mod, ctx.metapaths, &index, k)?;
        trace.neighbor_queries += q;
        if c.is_empty() {
            trace.fallback_domains += 1;
            c = fallback_candidates(anomaly, d_i, &d_mod, ctx.schema.vocab_size(d_i), ctx.cooccurrence, k);
        }
        if c.is_empty() {
            // Single-entity domain: nothing to swap in, keep the original.
            c = vec![anomaly.get(d_i)];
        }
        candidates.push(c);
    }
    let raw = generate_counterfactuals(
        anomaly,
        &d_mod,
        &candidates,
        config.max_combinations,
        anomaly_seed(config.seed, anomaly),
    )?;
    trace.search_secs = t.elapsed().as_secs_f64();
    trace.enumerated = raw.len();

    let t = Instant::now();
    let mut set = rank_and_select(anomaly, &d_mod, &raw, ctx.scorer, config.k);
    trace.score_secs = t.elapsed().as_secs_f64();
    set.likelihoods = Some(likelihoods);
    Ok((set, trace))
}

/// Recourse for many anomalies on the rayon pool; output order follows
/// input order.
pub fn carat_recourse_batch(
    anomalies: &[EncodedRecord],
    ctx: &RecourseContext<'_>,
    config: &RecourseConfig,
) -> Result<Vec<(CounterfactualSet, RecourseTrace)>> {
    ctx.check()?;
    anomalies
        .par_iter()
        .map(|a| carat_recourse_traced(a, ctx, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct SumScorer;

    impl AnomalyScorer for SumScorer {
        fn score_batch(&self, records: &[EncodedRecord]) -> Vec<f64> {
            records
                .iter()
                .map(|r| r.values().iter().sum::<usize>() as f64)
                .collect()
        }

        fn schema_hash(&self) -> &str {
            ""
        }
    }

    fn rec(v: &[usize]) -> EncodedRecord {
        EncodedRecord(v.to_vec())
    }

    #[test]
    fn enumerates_the_cross_product() {
        let a = rec(&[0, 0, 0]);
        let one = generate_counterfactuals(&a, &[1], &[vec![1, 2, 3, 4]], 100, 0).unwrap();
        assert_eq!(one.len(), 4);
        let two = generate_counterfactuals(&a, &[0, 2], &[vec![1, 2, 3], vec![5, 6]], 100, 0).unwrap();
        assert_eq!(two.len(), 6);
        assert_eq!(two[0], rec(&[1, 0, 5]));
        assert_eq!(two[1], rec(&[1, 0, 6]));
        for r in &two {
            assert!(a.diff(r).iter().all(|d| [0, 2].contains(d)));
        }
    }

    #[test]
    fn caps_with_a_seeded_sample() {
        let a = rec(&[0, 0]);
        let c: Vec<usize> = (1..=100).collect();
        let s1 = generate_counterfactuals(&a, &[0, 1], &[c.clone(), c.clone()], 1000, 7).unwrap();
        let s2 = generate_counterfactuals(&a, &[0, 1], &[c.clone(), c.clone()], 1000, 7).unwrap();
        let s3 = generate_counterfactuals(&a, &[0, 1], &[c.clone(), c], 1000, 8).unwrap();
        assert_eq!(s1.len(), 1000);
        assert_eq!(s1.iter().collect::<BTreeSet<_>>().len(), 1000);
        assert_eq!(s1, s2);
        assert_ne!(s1, s3);
    }

    #[test]
    fn selects_highest_scores_with_lexicographic_ties() {
        let a = rec(&[0, 0]);
        let raw = vec![rec(&[2, 0]), rec(&[0, 2]), rec(&[1, 0]), rec(&[0, 3])];
        let set = rank_and_select(&a, &[0, 1], &raw, &SumScorer, 2);
        let got: Vec<_> = set.records();
        assert_eq!(got, vec![rec(&[0, 3]), rec(&[0, 2])]);
        assert_eq!(set.counterfactuals[0].changed, vec![1]);
        let all = rank_and_select(&a, &[0, 1], &raw, &SumScorer, 10);
        assert_eq!(all.counterfactuals.len(), 4);
        // 2 and 2 tie: [0,2] < [2,0] lexicographically.
        assert_eq!(all.records()[1], rec(&[0, 2]));
        assert_eq!(all.records()[2], rec(&[2, 0]));
    }

    #[test]
    fn rank_and_select_matches_exhaustive_search() {
        use rand::Rng as _;
        let mut r = rng::rng(3);
        for _ in 0..50 {
            let a = rec(&[r.gen_range(0..4), r.gen_range(0..4), r.gen_range(0..4)]);
            let cands = vec![(0..4).collect::<Vec<_>>(), (0..4).collect()];
            let raw = generate_counterfactuals(&a, &[0, 2], &cands, usize::MAX, 0).unwrap();
            assert_eq!(raw.len(), 16);
            let k = r.gen_range(1..6);
            let got = rank_and_select(&a, &[0, 2], &raw, &SumScorer, k).records();
            // Oracle: every record over the two domains, best by score then record.
            let mut all = Vec::new();
            for x in 0..4 {
                for z in 0..4 {
                    let c = rec(&[x, a.get(1), z]);
                    all.push((x + a.get(1) + z, c));
                }
            }
            all.sort_by(|p, q| q.0.cmp(&p.0).then(p.1.cmp(&q.1)));
            let want: Vec<_> = all.into_iter().take(k).map(|p| p.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn fallback_prefers_frequent_companions() {
        let train = vec![rec(&[0, 1, 2]), rec(&[0, 1, 2]), rec(&[1, 1, 2]), rec(&[2, 0, 0])];
        let co = CooccurrenceModel::build(&train);
        let a = rec(&[2, 1, 2]);
        let c = fallback_candidates(&a, 0, &[0], 3, &co, 1);
        assert_eq!(c, vec![0]);
        let c = fallback_candidates(&a, 0, &[0], 3, &co, 5);
        assert_eq!(c, vec![0, 1]);
    }

    #[test]
    fn config_validation() {
        assert!(RecourseConfig::default().validate().is_ok());
        let bad = RecourseConfig {
            k: 10,
            max_combinations: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(RecourseConfig {
            k: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
