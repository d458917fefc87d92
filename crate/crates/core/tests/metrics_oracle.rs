mod common;

use carat::anomaly::AnomalyScorer;
use carat::data::{CooccurrenceModel, EncodedRecord};
use carat::metrics::{
    evaluate_corpus, feature_accuracy, heterogeneity, mean_coherence, sparsity_index, Case, EvalContext,
};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn metrics_match_brute_force(seed in any::<u64>()) {
        if let Some(msg) = oracle_mismatch(seed) {
            prop_assert!(false, "{}", msg);
        }
    }

    #[test]
    fn metric_ranges(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let a = enc(&inst.anomaly);
        let ys: Vec<EncodedRecord> = inst.ys.iter().map(|y| enc(y)).collect();
        let gt = Some(inst.corrupted.as_slice());
        let sp = sparsity_index(&a, &ys).unwrap();
        prop_assert!(sp > 0.0 && sp <= 1.0);
        for v in [feature_accuracy(&a, &ys, gt).unwrap(), heterogeneity(&a, &ys, gt).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let co = CooccurrenceModel::build(&inst.train.iter().map(|r| enc(r)).collect::<Vec<_>>());
        if let Some(c) = mean_coherence(&a, &ys, &co) {
            prop_assert!((0.0..=1.0).contains(&c.normalized));
        }
    }

    #[test]
    fn full_feature_accuracy_iff_exact_corruption(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let a = enc(&inst.anomaly);
        let ys: Vec<EncodedRecord> = inst.ys.iter().map(|y| enc(y)).collect();
        let fa = feature_accuracy(&a, &ys, Some(&inst.corrupted)).unwrap();
        let exact = ys.iter().all(|y| a.diff(y) == inst.corrupted);
        prop_assert_eq!(fa == 1.0, exact);
    }
}

#[test]
fn corpus_report_matches_oracle_recomputation() {
    let inst = random_instance(99);
    let m = inst.vocab.len();
    let train: Vec<EncodedRecord> = inst.train.iter().map(|r| enc(r)).collect();
    let co = CooccurrenceModel::build(&train);
    let dk: Vec<EncodedRecord> = inst.comparison.iter().map(|r| enc(r)).collect();
    let cases: Vec<Case> = (0..10u64)
        .map(|i| {
            let mut x = random_instance(1000 + i);
            // Re-fit to this instance's width and vocabularies.
            x.anomaly = (0..m).map(|j| (i as usize + j) % inst.vocab[j]).collect();
            x.ys =
                x.ys.iter()
                    .map(|y| (0..m).map(|j| y.get(j).copied().unwrap_or(0) % inst.vocab[j]).collect())
                    .collect();
            Case {
                anomaly: enc(&x.anomaly),
                counterfactuals: x.ys.iter().map(|y| enc(y)).collect(),
                corrupted: (i % 3 != 0).then(|| vec![i as usize % m]),
            }
        })
        .collect();
    let ctx = EvalContext {
        cooccurrence: &co,
        scorer: &inst.scorer,
        comparison: &dk,
    };
    let report = evaluate_corpus("x", &cases, &ctx).unwrap();

    let dk_scores: Vec<f64> = inst.comparison.iter().map(|r| inst.scorer.value(r)).collect();
    let mut per: Vec<[Option<f64>; 5]> = Vec::new();
    for c in &cases {
        let a = c.anomaly.values();
        let ys: Vec<Vec<usize>> = c.counterfactuals.iter().map(|y| y.values().to_vec()).collect();
        per.push([
            Some(oracle_sparsity(a, &ys)),
            oracle_coherence(a, &ys, &inst.train).map(|v| v.1),
            Some(oracle_cc(
                inst.scorer.value(a),
                &ys.iter().map(|y| inst.scorer.value(y)).collect::<Vec<_>>(),
                &dk_scores,
            )),
            c.corrupted.as_ref().map(|g| oracle_fa(a, &ys, g)),
            c.corrupted.as_ref().map(|g| oracle_h(a, &ys, g)),
        ]);
    }
    for (col, name) in [
        "sparsity_index",
        "coherence",
        "conditional_correctness",
        "feature_accuracy",
        "heterogeneity",
    ]
    .iter()
    .enumerate()
    {
        let vals: Vec<f64> = per.iter().filter_map(|p| p[col]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let s = report.get(name);
        assert_eq!(s.count, vals.len(), "{name}");
        assert_eq!(s.excluded, 10 - vals.len(), "{name}");
        assert!(close(s.mean.unwrap(), mean), "{name}: {:?} vs {mean}", s.mean);
        assert!(close(s.std.unwrap(), std), "{name}: {:?} vs {std}", s.std);
    }
    assert_eq!(inst.scorer.score_batch(&dk).len(), dk.len());
}
