//! Shared helpers for integration tests: brute-force metric oracles written
//! without the library's metric code, random small instances, and the
//! desk-scale training setup on the rule corpus.
#![allow(dead_code)]

use std::collections::BTreeMap;

use carat::anomaly::{AdScorerConfig, AnomalyScorer};
use carat::data::{CooccurrenceModel, EncodedRecord};
use carat::explainer::{DecoderPConfig, DecoderRConfig, EncoderConfig, ExplainerConfig, ExplainerTrainConfig};
use carat::kge::DistMultConfig;
use carat::metrics::{
    coherence, conditional_correctness, feature_accuracy, heterogeneity, mean_coherence, sparsity_index,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------- oracles ----------

fn changed(a: &[usize], y: &[usize]) -> Vec<usize> {
    (0..a.len()).filter(|&j| a[j] != y[j]).collect()
}

pub fn oracle_sparsity(a: &[usize], ys: &[Vec<usize>]) -> f64 {
    let mut s = 0.0;
    for y in ys {
        s += 1.0 / (1.0 + changed(a, y).len() as f64);
    }
    s / ys.len() as f64
}

/// Fraction of training records holding both entities, by scanning.
fn joint(train: &[Vec<usize>], i: usize, ei: usize, j: usize, ej: usize) -> f64 {
    let hits = train.iter().filter(|r| r[i] == ei && r[j] == ej).count();
    hits as f64 / train.len() as f64
}

/// `(raw, normalized)` coherence of one counterfactual, or `None`.
pub fn oracle_coherence_one(a: &[usize], y: &[usize], train: &[Vec<usize>]) -> Option<(f64, f64)> {
    let dp = changed(a, y);
    let dr: Vec<usize> = (0..a.len()).filter(|j| !dp.contains(j)).collect();
    if dp.is_empty() || dr.is_empty() {
        return None;
    }
    let mut raw = 0.0;
    for &i in &dp {
        let mut inner = 0.0;
        for &j in &dr {
            inner += joint(train, i, y[i], j, y[j]);
        }
        raw += inner / dr.len() as f64;
    }
    Some((raw, raw / dp.len() as f64))
}

pub fn oracle_coherence(a: &[usize], ys: &[Vec<usize>], train: &[Vec<usize>]) -> Option<(f64, f64)> {
    let vals: Vec<(f64, f64)> = ys.iter().filter_map(|y| oracle_coherence_one(a, y, train)).collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    Some((
        vals.iter().map(|v| v.0).sum::<f64>() / n,
        vals.iter().map(|v| v.1).sum::<f64>() / n,
    ))
}

/// Rank by sorting the comparison scores together with the instance; the
/// instance goes before members it ties with.
fn sorted_rank(x: f64, comparison: &[f64]) -> usize {
    let mut all: Vec<(f64, u8)> = comparison.iter().map(|&s| (s, 1)).collect();
    all.push((x, 0));
    all.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.cmp(&q.1)));
    1 + all.iter().position(|p| p.1 == 0).unwrap()
}

pub fn oracle_cc(anomaly_score: f64, cf_scores: &[f64], comparison: &[f64]) -> f64 {
    let ra = sorted_rank(anomaly_score, comparison);
    let mut good = 0;
    for &s in cf_scores {
        if sorted_rank(s, comparison) > ra {
            good += 1;
        }
    }
    good as f64 / cf_scores.len() as f64
}

pub fn oracle_fa(a: &[usize], ys: &[Vec<usize>], corrupted: &[usize]) -> f64 {
    let m = a.len();
    let mut total = 0.0;
    for y in ys {
        let mut ok = 0;
        for l in 0..m {
            let was_changed = a[l] != y[l];
            let was_corrupted = corrupted.contains(&l);
            if was_changed == was_corrupted {
                ok += 1;
            }
        }
        total += ok as f64 / m as f64;
    }
    total / ys.len() as f64
}

pub fn oracle_h(a: &[usize], ys: &[Vec<usize>], corrupted: &[usize]) -> f64 {
    let m = a.len();
    let k = ys.len();
    let q = |y: &Vec<usize>, l: usize| (a[l] != y[l]) == corrupted.contains(&l);
    // Ordered pairs, halved.
    let mut total = 0usize;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            for l in 0..m {
                if q(&ys[i], l) && q(&ys[j], l) && ys[i][l] != ys[j][l] {
                    total += 1;
                }
            }
        }
    }
    (total as f64 / 2.0) / (k * k * m) as f64
}

// ---------- random instances ----------

/// Deterministic pseudo-random score per record, on a coarse grid so ties
/// happen.
pub struct TableScorer {
    pub table: BTreeMap<Vec<usize>, f64>,
    pub salt: u64,
}

impl TableScorer {
    pub fn new(salt: u64) -> Self {
        Self {
            table: BTreeMap::new(),
            salt,
        }
    }

    pub fn value(&self, r: &[usize]) -> f64 {
        let mut h: u64 = self.salt ^ 0x9e37_79b9_7f4a_7c15;
        for &v in r {
            h = h.wrapping_mul(0x100_0000_01b3).wrapping_add(v as u64 + 1);
            h ^= h >> 29;
        }
        ((h % 9) as f64) * 0.25 - 1.0
    }
}

impl AnomalyScorer for TableScorer {
    fn score_batch(&self, records: &[EncodedRecord]) -> Vec<f64> {
        records.iter().map(|r| self.value(r.values())).collect()
    }

    fn schema_hash(&self) -> &str {
        ""
    }
}

pub struct Instance {
    pub vocab: Vec<usize>,
    pub train: Vec<Vec<usize>>,
    pub anomaly: Vec<usize>,
    pub ys: Vec<Vec<usize>>,
    pub corrupted: Vec<usize>,
    pub comparison: Vec<Vec<usize>>,
    pub scorer: TableScorer,
}

fn random_record(rng: &mut ChaCha8Rng, vocab: &[usize]) -> Vec<usize> {
    vocab.iter().map(|&v| rng.gen_range(0..v)).collect()
}

/// m ≤ 5, K ≤ 10, vocabularies ≤ 6.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(2..=5);
    let vocab: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=6)).collect();
    let train = (0..rng.gen_range(1..=30))
        .map(|_| random_record(&mut rng, &vocab))
        .collect();
    let anomaly = random_record(&mut rng, &vocab);
    let k = rng.gen_range(1..=10);
    let ys = (0..k)
        .map(|_| {
            let mut y = anomaly.clone();
            for (j, v) in y.iter_mut().enumerate() {
                if rng.gen_bool(0.4) {
                    *v = rng.gen_range(0..vocab[j]);
                }
            }
            y
        })
        .collect();
    let n_corrupt = rng.gen_range(1..=2.min(m));
    let mut corrupted: Vec<usize> = rand::seq::index::sample(&mut rng, m, n_corrupt).into_vec();
    corrupted.sort_unstable();
    let comparison = (0..rng.gen_range(1..=20))
        .map(|_| random_record(&mut rng, &vocab))
        .collect();
    Instance {
        vocab,
        train,
        anomaly,
        ys,
        corrupted,
        comparison,
        scorer: TableScorer::new(seed),
    }
}

pub fn enc(v: &[usize]) -> EncodedRecord {
    EncodedRecord(v.to_vec())
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

/// Every metric of one random instance against its oracle; the first
/// disagreement, if any.
pub fn oracle_mismatch(seed: u64) -> Option<String> {
    let inst = random_instance(seed);
    let a = enc(&inst.anomaly);
    let ys: Vec<EncodedRecord> = inst.ys.iter().map(|y| enc(y)).collect();
    let train: Vec<EncodedRecord> = inst.train.iter().map(|r| enc(r)).collect();
    let dk: Vec<EncodedRecord> = inst.comparison.iter().map(|r| enc(r)).collect();
    let co = CooccurrenceModel::build(&train);
    let pair = |c: Option<carat::metrics::Coherence>| c.map(|c| (c.raw, c.normalized));
    let same_pair = |g: Option<(f64, f64)>, w: Option<(f64, f64)>| match (g, w) {
        (None, None) => true,
        (Some(g), Some(w)) => close(g.0, w.0) && close(g.1, w.1),
        _ => false,
    };

    let got = match sparsity_index(&a, &ys) {
        Ok(v) => v,
        Err(e) => return Some(format!("seed {seed}: sparsity_index failed: {e}")),
    };
    let want = oracle_sparsity(&inst.anomaly, &inst.ys);
    if !close(got, want) {
        return Some(format!("seed {seed}: sparsity {got} vs {want}"));
    }
    for (y, yv) in ys.iter().zip(&inst.ys) {
        let (g, w) = (
            pair(coherence(&a, y, &co)),
            oracle_coherence_one(&inst.anomaly, yv, &inst.train),
        );
        if !same_pair(g, w) {
            return Some(format!("seed {seed}: coherence {g:?} vs {w:?}"));
        }
    }
    let (g, w) = (
        pair(mean_coherence(&a, &ys, &co)),
        oracle_coherence(&inst.anomaly, &inst.ys, &inst.train),
    );
    if !same_pair(g, w) {
        return Some(format!("seed {seed}: mean coherence {g:?} vs {w:?}"));
    }
    let s = &inst.scorer;
    let got = match conditional_correctness(&a, &ys, &dk, s) {
        Ok(v) => v,
        Err(e) => return Some(format!("seed {seed}: conditional_correctness failed: {e}")),
    };
    let want = oracle_cc(
        s.value(&inst.anomaly),
        &inst.ys.iter().map(|y| s.value(y)).collect::<Vec<_>>(),
        &inst.comparison.iter().map(|r| s.value(r)).collect::<Vec<_>>(),
    );
    if !close(got, want) {
        return Some(format!("seed {seed}: conditional correctness {got} vs {want}"));
    }
    let gt = Some(inst.corrupted.as_slice());
    let got = match feature_accuracy(&a, &ys, gt) {
        Ok(v) => v,
        Err(e) => return Some(format!("seed {seed}: feature_accuracy failed: {e}")),
    };
    let want = oracle_fa(&inst.anomaly, &inst.ys, &inst.corrupted);
    if !close(got, want) {
        return Some(format!("seed {seed}: feature accuracy {got} vs {want}"));
    }
    let got = match heterogeneity(&a, &ys, gt) {
        Ok(v) => v,
        Err(e) => return Some(format!("seed {seed}: heterogeneity failed: {e}")),
    };
    let want = oracle_h(&inst.anomaly, &inst.ys, &inst.corrupted);
    if !close(got, want) {
        return Some(format!("seed {seed}: heterogeneity {got} vs {want}"));
    }
    None
}

// ---------- desk-scale models ----------

pub fn desk_explainer_config(seed: u64) -> ExplainerConfig {
    ExplainerConfig {
        encoder: EncoderConfig {
            embedding_dim: 16,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 64,
        },
        decoder_r: DecoderRConfig {
            hidden: vec![64, 32, 32],
        },
        decoder_p: DecoderPConfig {
            bilinear_dim: 16,
            hidden: vec![32, 16],
        },
        train: ExplainerTrainConfig {
            pretrain_epochs: 30,
            decoder_p_epochs: 30,
            batch_size: 128,
            learning_rate: 0.002,
            ..Default::default()
        },
        seed,
    }
}

pub fn desk_ad_config(seed: u64) -> AdScorerConfig {
    AdScorerConfig {
        seed,
        ..Default::default()
    }
}

pub fn desk_kge_config(seed: u64) -> DistMultConfig {
    DistMultConfig {
        dim: 32,
        epochs: 100,
        batch_size: 512,
        seed,
        ..Default::default()
    }
}
