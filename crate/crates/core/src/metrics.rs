//! Evaluation metrics for counterfactual sets.
//!
//! * sparsity index: mean of `1 / (1 + #changed domains)`
//! * coherence: co-occurrence of replaced entities with the unchanged ones
//! * conditional correctness: fraction of counterfactuals ranked less
//!   anomalous than the anomaly within a comparison sample
//! * feature accuracy: agreement between changed and corrupted domains
//! * heterogeneity: pairwise differences on correctly treated domains

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{rank_of_score, AnomalyScorer};
use crate::data::{CooccurrenceModel, Dataset, EncodedRecord, PlantedAnomaly};
use crate::error::{Error, Result};
use crate::rng;

fn check_shapes(anomaly: &EncodedRecord, ys: &[EncodedRecord]) -> Result<()> {
    if let Some(y) = ys.iter().find(|y| y.len() != anomaly.len()) {
        return Err(Error::SchemaMismatch(format!(
            "counterfactual has {} domains, anomaly has {}",
            y.len(),
            anomaly.len()
        )));
    }
    Ok(())
}

pub fn sparsity_index(anomaly: &EncodedRecord, ys: &[EncodedRecord]) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::InvalidArgument("sparsity index of an empty set".into()));
    }
    check_shapes(anomaly, ys)?;
    let total: f64 = ys.iter().map(|y| 1.0 / (1.0 + anomaly.diff(y).len() as f64)).sum();
    Ok(total / ys.len() as f64)
}

/// Coherence of one counterfactual: the raw sum over changed entities of
/// their mean co-occurrence with the unchanged ones, and that sum divided by
/// the number of changed domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub raw: f64,
    pub normalized: f64,
}

/// `None` when nothing or everything changed.
pub fn coherence(anomaly: &EncodedRecord, cf: &EncodedRecord, co: &CooccurrenceModel) -> Option<Coherence> {
    let changed = anomaly.diff(cf);
    let kept: Vec<usize> = (0..anomaly.len()).filter(|j| !changed.contains(j)).collect();
    if changed.is_empty() || kept.is_empty() {
        return None;
    }
    let context: Vec<(usize, usize)> = kept.iter().map(|&j| (j, cf.get(j))).collect();
    let raw: f64 = changed
        .iter()
        .map(|&i| co.mean_with_context(i, cf.get(i), &context))
        .sum();
    Some(Coherence {
        raw,
        normalized: raw / changed.len() as f64,
    })
}

/// Mean over the counterfactuals for which coherence is defined.
pub fn mean_coherence(anomaly: &EncodedRecord, ys: &[EncodedRecord], co: &CooccurrenceModel) -> Option<Coherence> {
    let vals: Vec<Coherence> = ys.iter().filter_map(|y| coherence(anomaly, y, co)).collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    Some(Coherence {
        raw: vals.iter().map(|c| c.raw).sum::<f64>() / n,
        normalized: vals.iter().map(|c| c.normalized).sum::<f64>() / n,
    })
}

/// Conditional correctness from precomputed scores (higher = more normal).
pub fn conditional_correctness_from_scores(anomaly_score: f64, cf_scores: &[f64], comparison: &[f64]) -> f64 {
    let r = rank_of_score(anomaly_score, comparison);
    let hits = cf_scores.iter().filter(|&&s| rank_of_score(s, comparison) > r).count();
    hits as f64 / cf_scores.len() as f64
}

pub fn conditional_correctness(
    anomaly: &EncodedRecord,
    ys: &[EncodedRecord],
    comparison: &[EncodedRecord],
    scorer: &dyn AnomalyScorer,
) -> Result<f64> {
    if comparison.is_empty() {
        return Err(Error::InvalidArgument("comparison set is empty".into()));
    }
    if ys.is_empty() {
        return Err(Error::InvalidArgument("conditional correctness of an empty set".into()));
    }
    check_shapes(anomaly, ys)?;
    Ok(conditional_correctness_from_scores(
        scorer.score(anomaly),
        &scorer.score_batch(ys),
        &scorer.score_batch(comparison),
    ))
}

/// `q` for every domain: 1 when the domain's treatment (changed or not)
/// matches whether it was corrupted.
fn agreement(anomaly: &EncodedRecord, y: &EncodedRecord, corrupted: &[usize]) -> Vec<bool> {
    (0..anomaly.len())
        .map(|j| (y.get(j) != anomaly.get(j)) == corrupted.contains(&j))
        .collect()
}

pub fn feature_accuracy(anomaly: &EncodedRecord, ys: &[EncodedRecord], corrupted: Option<&[usize]>) -> Result<f64> {
    let corrupted = corrupted.ok_or(Error::MissingGroundTruth("feature accuracy"))?;
    if ys.is_empty() {
        return Err(Error::InvalidArgument("feature accuracy of an empty set".into()));
    }
    check_shapes(anomaly, ys)?;
    let m = anomaly.len() as f64;
    let total: f64 = ys
        .iter()
        .map(|y| agreement(anomaly, y, corrupted).iter().filter(|&&q| q).count() as f64 / m)
        .sum();
    Ok(total / ys.len() as f64)
}

pub fn heterogeneity(anomaly: &EncodedRecord, ys: &[EncodedRecord], corrupted: Option<&[usize]>) -> Result<f64> {
    let corrupted = corrupted.ok_or(Error::MissingGroundTruth("heterogeneity"))?;
    if ys.is_empty() {
        return Err(Error::InvalidArgument("heterogeneity of an empty set".into()));
    }
    check_shapes(anomaly, ys)?;
    let q: Vec<Vec<bool>> = ys.iter().map(|y| agreement(anomaly, y, corrupted)).collect();
    let mut total = 0usize;
    for i in 0..ys.len() {
        for j in i + 1..ys.len() {
            total += (0..anomaly.len())
                .filter(|&l| q[i][l] && q[j][l] && ys[i].get(l) != ys[j].get(l))
                .count();
        }
    }
    let k = ys.len() as f64;
    Ok(total as f64 / (k * k * anomaly.len() as f64))
}

/// One anomaly and a method's counterfactuals for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub anomaly: EncodedRecord,
    pub counterfactuals: Vec<EncodedRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupted: Option<Vec<usize>>,
}

/// Shared evaluation context.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub cooccurrence: &'a CooccurrenceModel,
    pub scorer: &'a dyn AnomalyScorer,
    pub comparison: &'a [EncodedRecord],
}

/// Metric values for one anomaly; `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub sparsity_index: Option<f64>,
    pub coherence: Option<f64>,
    pub coherence_raw: Option<f64>,
    pub conditional_correctness: Option<f64>,
    pub feature_accuracy: Option<f64>,
    pub heterogeneity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single value.
    pub std: Option<f64>,
    pub count: usize,
    pub excluded: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let all: Vec<Option<f64>> = values.into_iter().collect();
        let vals: Vec<f64> = all.iter().flatten().copied().collect();
        let excluded = all.len() - vals.len();
        if vals.is_empty() {
            return Self {
                mean: None,
                std: None,
                count: 0,
                excluded,
            };
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean: Some(mean),
            std: Some(std),
            count: vals.len(),
            excluded,
        }
    }

    pub fn render(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.4} ±{s:.4}"),
            _ => "n/a".into(),
        }
    }
}

pub const METRIC_NAMES: [&str; 6] = [
    "sparsity_index",
    "coherence",
    "coherence_raw",
    "conditional_correctness",
    "feature_accuracy",
    "heterogeneity",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub cases: Vec<CaseMetrics>,
    /// Keyed by the names in [`METRIC_NAMES`].
    pub summary: BTreeMap<String, Summary>,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> &Summary {
        &self.summary[metric]
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary[metric].mean
    }
}

pub fn evaluate_case(case: &Case, ctx: &EvalContext<'_>, comparison_scores: &[f64]) -> CaseMetrics {
    let ys = &case.counterfactuals;
    if ys.is_empty() {
        return CaseMetrics {
            sparsity_index: None,
            coherence: None,
            coherence_raw: None,
            conditional_correctness: None,
            feature_accuracy: None,
            heterogeneity: None,
        };
    }
    let coh = mean_coherence(&case.anomaly, ys, ctx.cooccurrence);
    let gt = case.corrupted.as_deref();
    CaseMetrics {
        sparsity_index: sparsity_index(&case.anomaly, ys).ok(),
        coherence: coh.map(|c| c.normalized),
        coherence_raw: coh.map(|c| c.raw),
        conditional_correctness: (!comparison_scores.is_empty()).then(|| {
            conditional_correctness_from_scores(
                ctx.scorer.score(&case.anomaly),
                &ctx.scorer.score_batch(ys),
                comparison_scores,
            )
        }),
        feature_accuracy: feature_accuracy(&case.anomaly, ys, gt).ok(),
        heterogeneity: heterogeneity(&case.anomaly, ys, gt).ok(),
    }
}

/// Per-anomaly metrics and their mean ± sample std. Undefined values are
/// excluded from the summary and counted.
pub fn evaluate_corpus(method: &str, cases: &[Case], ctx: &EvalContext<'_>) -> Result<MetricReport> {
    for c in cases {
        check_shapes(&c.anomaly, &c.counterfactuals)?;
    }
    let comparison_scores = ctx.scorer.score_batch(ctx.comparison);
    let per: Vec<CaseMetrics> = cases
        .par_iter()
        .map(|c| evaluate_case(c, ctx, &comparison_scores))
        .collect();
    let pick = |f: fn(&CaseMetrics) -> Option<f64>| Summary::of(per.iter().map(f));
    let mut summary = BTreeMap::new();
    summary.insert("sparsity_index".into(), pick(|c| c.sparsity_index));
    summary.insert("coherence".into(), pick(|c| c.coherence));
    summary.insert("coherence_raw".into(), pick(|c| c.coherence_raw));
    summary.insert("conditional_correctness".into(), pick(|c| c.conditional_correctness));
    summary.insert("feature_accuracy".into(), pick(|c| c.feature_accuracy));
    summary.insert("heterogeneity".into(), pick(|c| c.heterogeneity));
    Ok(MetricReport {
        method: method.into(),
        cases: per,
        summary,
    })
}

/// Methods as rows, metrics as columns, `mean ±std` cells.
pub fn render_table(reports: &[MetricReport]) -> String {
    let cols = [
        ("sparsity_index", "Sparsity"),
        ("coherence", "Coherence"),
        ("conditional_correctness", "Cond. correctness"),
        ("feature_accuracy", "Feature acc."),
        ("heterogeneity", "Heterogeneity"),
    ];
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("Method".to_string())
        .chain(cols.iter().map(|c| c.1.to_string()))
        .collect()];
    for r in reports {
        rows.push(
            std::iter::once(r.method.clone())
                .chain(cols.iter().map(|c| r.get(c.0).render()))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "| {} |", rule.join(" | "));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub train: usize,
    pub test: usize,
    /// Planted anomalies mixed into the comparison sample.
    pub anomalies: usize,
    pub seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            train: 64,
            test: 64,
            anomalies: 32,
            seed: 0,
        }
    }
}

/// Seeded comparison sample: records drawn without replacement from the
/// train and test splits plus perturbed copies of further test records.
pub fn comparison_sample(dataset: &Dataset, config: &ComparisonConfig) -> Result<Vec<EncodedRecord>> {
    use rand::seq::index;
    let mut r = rng::rng_for(config.seed, "comparison-sample");
    let mut out = Vec::new();
    for (split, n) in [(&dataset.train, config.train), (&dataset.test, config.test)] {
        let n = n.min(split.len());
        let mut picks = index::sample(&mut r, split.len(), n).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| split[i].clone()));
    }
    if config.anomalies > 0 {
        let planted: Vec<PlantedAnomaly> = crate::data::generate_synthetic_anomalies(
            dataset,
            config.anomalies.min(dataset.test.len()),
            rng::derive_seed(config.seed, "comparison-anomalies"),
        )?;
        out.extend(planted.into_iter().map(|p| p.perturbed));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("comparison sample is empty".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v: &[usize]) -> EncodedRecord {
        EncodedRecord(v.to_vec())
    }

    struct Fixed(BTreeMap<EncodedRecord, f64>);

    impl AnomalyScorer for Fixed {
        fn score_batch(&self, records: &[EncodedRecord]) -> Vec<f64> {
            records.iter().map(|r| self.0[r]).collect()
        }

        fn schema_hash(&self) -> &str {
            ""
        }
    }

    #[test]
    fn sparsity_examples() {
        let a = rec(&[0, 0, 0, 0]);
        assert_eq!(sparsity_index(&a, std::slice::from_ref(&a)).unwrap(), 1.0);
        assert_eq!(sparsity_index(&a, &[rec(&[1, 0, 0, 0])]).unwrap(), 0.5);
        assert_eq!(
            sparsity_index(&a, &[rec(&[1, 0, 0, 0]), rec(&[1, 1, 1, 0])]).unwrap(),
            0.375
        );
        assert!(sparsity_index(&a, &[]).is_err());
    }

    #[test]
    fn coherence_examples() {
        // P(x=1, y=0) = 0.5 and P(x=1, z=0) = 0.1 over 10 records.
        let mut train = Vec::new();
        for i in 0..10 {
            let y = if i < 5 { 0 } else { 1 };
            let z = if i == 0 { 0 } else { 1 };
            train.push(rec(&[1, y, z]));
        }
        let co = CooccurrenceModel::build(&train);
        let a = rec(&[2, 0, 0]);
        let c = coherence(&a, &rec(&[1, 0, 0]), &co).unwrap();
        assert!((c.raw - 0.3).abs() < 1e-12);
        assert!((c.normalized - 0.3).abs() < 1e-12);
        // Replacement never seen with the context.
        assert_eq!(coherence(&a, &rec(&[0, 0, 0]), &co).unwrap().raw, 0.0);
        // Undefined when nothing or everything changes.
        assert!(coherence(&a, &a, &co).is_none());
        assert!(coherence(&a, &rec(&[1, 1, 1]), &co).is_none());
    }

    #[test]
    fn coherence_grows_with_cooccurrence() {
        let base = vec![rec(&[1, 0, 0]), rec(&[2, 1, 1]), rec(&[2, 0, 1])];
        let a = rec(&[2, 0, 0]);
        let cf = rec(&[1, 0, 0]);
        let before = coherence(&a, &cf, &CooccurrenceModel::build(&base)).unwrap().raw;
        let mut more = base.clone();
        more.push(rec(&[1, 0, 0]));
        more.push(rec(&[2, 1, 1]));
        more.push(rec(&[2, 0, 1]));
        more.push(rec(&[1, 0, 0]));
        // The (1,0,0) pair count doubles relative to the record count.
        let after = coherence(&a, &cf, &CooccurrenceModel::build(&more)).unwrap().raw;
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn conditional_correctness_examples() {
        let a = rec(&[0]);
        let dk: Vec<EncodedRecord> = (10..15).map(|i| rec(&[i])).collect();
        let mut scores: BTreeMap<EncodedRecord, f64> = dk.iter().map(|r| (r.clone(), r.get(0) as f64)).collect();
        scores.insert(a.clone(), 0.0);
        for i in 1..4 {
            scores.insert(rec(&[100 + i]), 100.0 + i as f64);
        }
        scores.insert(rec(&[50]), 11.5);
        scores.insert(rec(&[51]), -1.0);
        let s = Fixed(scores);
        assert_eq!(
            conditional_correctness(&a, std::slice::from_ref(&a), &dk, &s).unwrap(),
            0.0
        );
        let top: Vec<_> = (1..4).map(|i| rec(&[100 + i])).collect();
        assert_eq!(conditional_correctness(&a, &top, &dk, &s).unwrap(), 1.0);
        // Ranks within D_k ∪ {x}: anomaly 1, [50] -> 3, [51] -> 1, [101] -> 6.
        let mixed = vec![rec(&[50]), rec(&[51]), rec(&[101])];
        assert!((conditional_correctness(&a, &mixed, &dk, &s).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(conditional_correctness(&a, &mixed, &[], &s).is_err());
    }

    #[test]
    fn feature_accuracy_examples() {
        let a = rec(&[0; 8]);
        let exact = rec(&[0, 0, 5, 0, 0, 0, 0, 0]);
        let gt = Some(&[2usize][..]);
        assert_eq!(feature_accuracy(&a, std::slice::from_ref(&exact), gt).unwrap(), 1.0);
        assert_eq!(feature_accuracy(&a, std::slice::from_ref(&a), gt).unwrap(), 0.875);
        assert_eq!(feature_accuracy(&a, &[exact, a.clone()], gt).unwrap(), 0.9375);
        assert!(matches!(
            feature_accuracy(&a, std::slice::from_ref(&a), None),
            Err(Error::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn heterogeneity_examples() {
        let a = rec(&[0, 0]);
        let gt = Some(&[1usize][..]);
        assert_eq!(heterogeneity(&a, &[rec(&[0, 1])], gt).unwrap(), 0.0);
        assert_eq!(heterogeneity(&a, &[rec(&[0, 1]), rec(&[0, 1])], gt).unwrap(), 0.0);
        assert_eq!(heterogeneity(&a, &[rec(&[0, 1]), rec(&[0, 2])], gt).unwrap(), 0.125);
        assert!(heterogeneity(&a, &[rec(&[0, 1])], None).is_err());
    }

    #[test]
    fn summaries() {
        let one = Summary::of([Some(0.3)]);
        assert_eq!(one.std, Some(0.0));
        let two = Summary::of([Some(0.0), Some(1.0), None]);
        assert_eq!(two.mean, Some(0.5));
        assert_eq!(two.excluded, 1);
        assert!((two.std.unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of([None]).mean, None);
    }

    #[test]
    fn table_has_one_row_per_method() {
        let co = CooccurrenceModel::build(&[rec(&[0, 0])]);
        let mut scores = BTreeMap::new();
        for x in 0..3 {
            for y in 0..3 {
                scores.insert(rec(&[x, y]), (x + y) as f64);
            }
        }
        let s = Fixed(scores);
        let dk = vec![rec(&[1, 0])];
        let ctx = EvalContext {
            cooccurrence: &co,
            scorer: &s,
            comparison: &dk,
        };
        let cases = vec![Case {
            anomaly: rec(&[0, 0]),
            counterfactuals: vec![rec(&[0, 2]), rec(&[2, 0])],
            corrupted: Some(vec![1]),
        }];
        let r = evaluate_corpus("m1", &cases, &ctx).unwrap();
        assert_eq!(r.mean("conditional_correctness"), Some(1.0));
        assert_eq!(r.mean("feature_accuracy"), Some(0.5));
        let t = render_table(&[
            r.clone(),
            MetricReport {
                method: "m2".into(),
                ..r
            },
        ]);
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains("1.0000 ±0.0000"));
    }
}
