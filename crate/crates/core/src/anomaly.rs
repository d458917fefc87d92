//! Black-box anomaly scorers over encoded records.
//!
//! Two shallow-embedding variants share one interface:
//!
//! * `Additive`: the record's entity embeddings are summed, passed through a
//!   dense `tanh` layer and projected to a scalar.
//! * `Pairwise`: a weighted sum of inner products between every pair of
//!   entity embeddings.
//!
//! Both are trained noise-contrastively: observed training records are
//! positives, copies with one entity resampled are negatives, and the
//! logistic loss is minimised with Adam. The score is the logit, so higher
//! means more normal everywhere in this crate.

use std::cmp::Ordering;

use ndarray::Array1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::archive::{ArtifactMeta, ModelArchive};
use crate::data::{different_entity, DomainSchema, EncodedRecord};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mat, ParamId, ParamStore, Tape, Var};
use crate::rng;

/// Anything that can score records; the recourse machinery only ever sees
/// this trait.
pub trait AnomalyScorer: Send + Sync {
    /// Higher is more normal.
    fn score_batch(&self, records: &[EncodedRecord]) -> Vec<f64>;

    fn score(&self, record: &EncodedRecord) -> f64 {
        self.score_batch(std::slice::from_ref(record))[0]
    }

    fn schema_hash(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerVariant {
    Additive,
    Pairwise,
}

impl ScorerVariant {
    pub fn name(self) -> &'static str {
        match self {
            ScorerVariant::Additive => "additive",
            ScorerVariant::Pairwise => "pairwise",
        }
    }
}

impl std::fmt::Display for ScorerVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdScorerConfig {
    pub variant: ScorerVariant,
    pub embedding_dim: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AdScorerConfig {
    fn default() -> Self {
        Self {
            variant: ScorerVariant::Additive,
            embedding_dim: 32,
            negatives_per_positive: 4,
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.005,
            seed: 0,
        }
    }
}

impl AdScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("ad.embedding_dim must be >= 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("ad.negatives_per_positive must be >= 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("ad.batch_size and ad.epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("ad.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Head {
    Additive {
        w: ParamId,
        b: ParamId,
        u: ParamId,
        c: ParamId,
    },
    Pairwise {
        pairs: Vec<(usize, usize)>,
        w: ParamId,
        c: ParamId,
    },
}

#[derive(Debug, Clone)]
pub struct AdScorer {
    config: AdScorerConfig,
    schema_hash: String,
    vocab_sizes: Vec<usize>,
    store: ParamStore,
    embeddings: Vec<ParamId>,
    head: Head,
}

impl AdScorer {
    /// Freshly initialised, untrained parameters.
    pub fn init(schema: &DomainSchema, config: &AdScorerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::rng_for(config.seed, "ad-init");
        let dim = config.embedding_dim;
        let mut store = ParamStore::new();
        let embeddings = (0..schema.num_domains())
            .map(|j| store.add_normal(&format!("emb{j}"), schema.vocab_size(j), dim, 0.1, &mut rng))
            .collect();
        let head = build_head(&mut store, config.variant, dim, schema.num_domains(), &mut rng);
        Ok(Self {
            config: config.clone(),
            schema_hash: schema.hash(),
            vocab_sizes: schema.vocab_sizes(),
            store,
            embeddings,
            head,
        })
    }

    pub fn config(&self) -> &AdScorerConfig {
        &self.config
    }

    pub fn variant(&self) -> ScorerVariant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn validate(&self, record: &EncodedRecord) -> Result<()> {
        if record.len() != self.vocab_sizes.len() {
            return Err(Error::SchemaMismatch(format!(
                "record has {} values, scorer expects {}",
                record.len(),
                self.vocab_sizes.len()
            )));
        }
        for (j, (&e, &v)) in record.values().iter().zip(&self.vocab_sizes).enumerate() {
            if e >= v {
                return Err(Error::SchemaMismatch(format!(
                    "entity {e} out of range for domain {j} (vocab {v})"
                )));
            }
        }
        Ok(())
    }

    /// Checked single-record score.
    pub fn score_record(&self, record: &EncodedRecord) -> Result<f64> {
        self.validate(record)?;
        Ok(self.score(record))
    }

    /// The summed entity embedding of a record (the only input the additive
    /// variant depends on).
    pub fn embedding_sum(&self, record: &EncodedRecord) -> Array1<f64> {
        let mut s = Array1::zeros(self.config.embedding_dim);
        for (j, &e) in record.values().iter().enumerate() {
            s += &self.store.get(self.embeddings[j]).row(e);
        }
        s
    }

    fn score_one(&self, record: &EncodedRecord) -> f64 {
        match &self.head {
            Head::Additive { w, b, u, c } => {
                let s = self.embedding_sum(record);
                let h = s.dot(self.store.get(*w)) + self.store.get(*b).row(0);
                let h = h.mapv(f64::tanh);
                h.dot(&self.store.get(*u).column(0)) + self.store.get(*c)[[0, 0]]
            }
            Head::Pairwise { pairs, w, c } => {
                let wv = self.store.get(*w);
                let rows: Vec<_> = record
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(j, &e)| self.store.get(self.embeddings[j]).row(e))
                    .collect();
                let mut total = self.store.get(*c)[[0, 0]];
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    total += wv[[p, 0]] * rows[i].dot(&rows[j]);
                }
                total
            }
        }
    }

    /// Tape forward producing an `n×1` column of logits.
    fn forward(&self, tape: &mut Tape, records: &[EncodedRecord], slot: usize) -> Var {
        let emb: Vec<Var> = self
            .embeddings
            .iter()
            .map(|&id| tape.param(slot, &self.store, id))
            .collect();
        let per_domain: Vec<Var> = (0..self.vocab_sizes.len())
            .map(|j| tape.gather(emb[j], records.iter().map(|r| r.get(j)).collect()))
            .collect();
        match &self.head {
            Head::Additive { w, b, u, c } => {
                let mut s = per_domain[0];
                for &d in &per_domain[1..] {
                    s = tape.add(s, d);
                }
                let (w, b, u, c) = (
                    tape.param(slot, &self.store, *w),
                    tape.param(slot, &self.store, *b),
                    tape.param(slot, &self.store, *u),
                    tape.param(slot, &self.store, *c),
                );
                let h = tape.linear(s, w, b);
                let h = tape.tanh(h);
                tape.linear(h, u, c)
            }
            Head::Pairwise { pairs, w, c } => {
                let dots: Vec<Var> = pairs
                    .iter()
                    .map(|&(i, j)| {
                        let m = tape.mul(per_domain[i], per_domain[j]);
                        tape.row_sum(m)
                    })
                    .collect();
                let d = tape.hconcat(&dots);
                let (w, c) = (tape.param(slot, &self.store, *w), tape.param(slot, &self.store, *c));
                tape.linear(d, w, c)
            }
        }
    }

    /// Mean logistic loss of positives (label 1) and negatives (label 0).
    pub fn nce_loss(&self, tape: &mut Tape, positives: &[EncodedRecord], negatives: &[EncodedRecord]) -> Var {
        let all: Vec<EncodedRecord> = positives.iter().chain(negatives).cloned().collect();
        let mut labels = vec![1.0; positives.len()];
        labels.extend(std::iter::repeat_n(0.0, negatives.len()));
        let logits = self.forward(tape, &all, 0);
        let total = tape.bce_with_logits(logits, labels);
        tape.scale(total, 1.0 / all.len() as f64)
    }

    /// One negative per call: a copy with one uniformly chosen domain
    /// resampled to a different entity.
    pub fn corrupt(&self, record: &EncodedRecord, rng: &mut rng::Rng) -> EncodedRecord {
        let eligible: Vec<usize> = (0..self.vocab_sizes.len())
            .filter(|&j| self.vocab_sizes[j] >= 2)
            .collect();
        if eligible.is_empty() {
            return record.clone();
        }
        let j = *eligible.choose(rng).expect("non-empty");
        record.with(j, different_entity(self.vocab_sizes[j], record.get(j), rng))
    }

    pub fn to_archive(&self, meta: ArtifactMeta) -> Result<ModelArchive> {
        Ok(ModelArchive::new(meta, &self.config)?.with_group("ad", &self.store))
    }

    pub fn from_archive(archive: &ModelArchive, schema: &DomainSchema) -> Result<Self> {
        archive.meta.check_schema(&schema.hash())?;
        let config: AdScorerConfig = archive.config()?;
        let mut scorer = Self::init(schema, &config)?;
        scorer.store.adopt(archive.group("ad")?)?;
        Ok(scorer)
    }
}

fn build_head(store: &mut ParamStore, variant: ScorerVariant, dim: usize, m: usize, rng: &mut rng::Rng) -> Head {
    match variant {
        ScorerVariant::Additive => Head::Additive {
            w: store.add_glorot("w", dim, dim, rng),
            b: store.add_zeros("b", 1, dim),
            u: store.add_glorot("u", dim, 1, rng),
            c: store.add_zeros("c", 1, 1),
        },
        ScorerVariant::Pairwise => {
            let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
            let n = pairs.len();
            Head::Pairwise {
                pairs,
                w: store.add("pair_w", Mat::from_elem((n, 1), 1.0)),
                c: store.add_zeros("c", 1, 1),
            }
        }
    }
}

impl AnomalyScorer for AdScorer {
    fn score_batch(&self, records: &[EncodedRecord]) -> Vec<f64> {
        records.iter().map(|r| self.score_one(r)).collect()
    }

    fn schema_hash(&self) -> &str {
        &self.schema_hash
    }
}

/// Train a scorer on the training split.
pub fn train_ad(schema: &DomainSchema, train: &[EncodedRecord], config: &AdScorerConfig) -> Result<AdScorer> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    for r in train {
        schema.validate(r)?;
    }
    let mut scorer = AdScorer::init(schema, config)?;
    let mut opt = Adam::new(&scorer.store, config.learning_rate);
    let mut rng = rng::rng_for(config.seed, "ad-train");
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let pos: Vec<EncodedRecord> = chunk.iter().map(|&i| train[i].clone()).collect();
            let neg: Vec<EncodedRecord> = pos
                .iter()
                .flat_map(|r| (0..config.negatives_per_positive).map(|_| r.clone()))
                .map(|r| scorer.corrupt(&r, &mut rng))
                .collect();
            let mut tape = Tape::new();
            let loss = scorer.nce_loss(&mut tape, &pos, &neg);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged(format!("anomaly scorer loss {value} at epoch {epoch}")));
            }
            epoch_loss += value * chunk.len() as f64;
            let grads = tape.backward(loss).for_store(0, &scorer.store);
            opt.step(&mut scorer.store, &grads);
        }
        log::debug!(
            "ad[{}] epoch {epoch}: loss {:.5}",
            config.variant,
            epoch_loss / train.len() as f64
        );
    }
    if !scorer.store.all_finite() {
        return Err(Error::Diverged("non-finite scorer parameters".into()));
    }
    Ok(scorer)
}

/// The `ceil(fraction·n)` lowest-scoring records, as indices into `records`
/// in ascending score order. Ties go to the lower index.
pub fn flag_anomalies(scorer: &dyn AnomalyScorer, records: &[EncodedRecord], fraction: f64) -> Result<Vec<usize>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to flag".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must be in (0,1], got {fraction}"
        )));
    }
    let scores = scorer.score_batch(records);
    Ok(lowest_fraction(&scores, fraction))
}

pub(crate) fn lowest_fraction(scores: &[f64], fraction: f64) -> Vec<usize> {
    let n = ((fraction * scores.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx.truncate(n.min(scores.len()));
    idx
}

/// Rank of a score within a comparison set plus itself, sorted ascending
/// (1 = most anomalous). Members tied with the instance rank above it.
pub fn rank_of_score(score: f64, comparison: &[f64]) -> usize {
    1 + comparison
        .iter()
        .filter(|&&c| c.total_cmp(&score) == Ordering::Less)
        .count()
}

pub fn rank_within(
    scorer: &dyn AnomalyScorer,
    instance: &EncodedRecord,
    comparison: &[EncodedRecord],
) -> Result<usize> {
    if comparison.is_empty() {
        return Err(Error::InvalidArgument("comparison set is empty".into()));
    }
    let s = scorer.score(instance);
    Ok(rank_of_score(s, &scorer.score_batch(comparison)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, GRAD_TOL};

    struct Fixed(Vec<f64>);

    impl AnomalyScorer for Fixed {
        fn score_batch(&self, records: &[EncodedRecord]) -> Vec<f64> {
            records.iter().map(|r| self.0[r.get(0)]).collect()
        }
        fn schema_hash(&self) -> &str {
            "fixed"
        }
    }

    fn schema(sizes: &[usize]) -> DomainSchema {
        DomainSchema::new(
            (0..sizes.len()).map(|j| format!("d{j}")).collect(),
            sizes
                .iter()
                .map(|&n| (0..n).map(|i| format!("e{i}")).collect())
                .collect(),
        )
        .unwrap()
    }

    fn ids(n: usize) -> Vec<EncodedRecord> {
        (0..n).map(|i| EncodedRecord(vec![i, 0])).collect()
    }

    #[test]
    fn flag_takes_the_ceiling() {
        let s = Fixed((0..200).map(|i| i as f64).collect());
        assert_eq!(flag_anomalies(&s, &ids(200), 0.01).unwrap(), vec![0, 1]);
        assert_eq!(flag_anomalies(&s, &ids(200), 1.0).unwrap().len(), 200);
        let s = Fixed((0..201).map(|i| i as f64).collect());
        assert_eq!(flag_anomalies(&s, &ids(201), 0.01).unwrap().len(), 3);
    }

    #[test]
    fn flag_picks_lowest_score_with_index_tiebreak() {
        let s = Fixed(vec![3.0, 1.0, 2.0]);
        assert_eq!(flag_anomalies(&s, &ids(3), 0.34).unwrap(), vec![1, 2]);
        assert_eq!(flag_anomalies(&s, &ids(3), 0.33).unwrap(), vec![1]);
        let tied = Fixed(vec![1.0, 1.0, 1.0]);
        assert_eq!(flag_anomalies(&tied, &ids(3), 0.5).unwrap(), vec![0, 1]);
        assert!(flag_anomalies(&s, &[], 0.5).is_err());
        assert!(flag_anomalies(&s, &ids(3), 0.0).is_err());
    }

    #[test]
    fn rank_rules() {
        assert_eq!(rank_of_score(0.0, &[1.0, 2.0, 3.0, 4.0, 5.0]), 1);
        assert_eq!(rank_of_score(9.0, &[1.0, 2.0, 3.0, 4.0, 5.0]), 6);
        assert_eq!(rank_of_score(2.0, &[2.0, 2.0]), 1);
        let s = Fixed(vec![0.5, 1.0, 2.0]);
        assert_eq!(rank_within(&s, &ids(3)[2], &ids(2)).unwrap(), 3);
        assert!(rank_within(&s, &ids(3)[2], &[]).is_err());
    }

    #[test]
    fn additive_score_depends_only_on_embedding_sum() {
        let sc = AdScorer::init(&schema(&[3, 3]), &AdScorerConfig::default()).unwrap();
        let mut sc2 = sc.clone();
        // Make entity 1 of domain 0 minus entity 0 equal to entity 1 of domain 1 minus entity 0.
        let e0 = sc.store.get(sc.embeddings[0]).clone();
        let shift = &e0.row(1) - &e0.row(0);
        let e1 = sc2.store.get_mut(sc.embeddings[1]);
        let base = e1.row(0).to_owned();
        e1.row_mut(1).assign(&(&base + &shift));
        let a = EncodedRecord(vec![1, 0]);
        let b = EncodedRecord(vec![0, 1]);
        let (sa, sb) = (sc2.score(&a), sc2.score(&b));
        assert!((sa - sb).abs() < 1e-12, "{sa} vs {sb}");
    }

    #[test]
    fn fast_path_agrees_with_tape() {
        for variant in [ScorerVariant::Additive, ScorerVariant::Pairwise] {
            let cfg = AdScorerConfig {
                variant,
                ..Default::default()
            };
            let sc = AdScorer::init(&schema(&[3, 4, 2]), &cfg).unwrap();
            let recs = vec![EncodedRecord(vec![0, 3, 1]), EncodedRecord(vec![2, 1, 0])];
            let mut tape = Tape::new();
            let out = sc.forward(&mut tape, &recs, 0);
            let fast = sc.score_batch(&recs);
            for (r, f) in fast.iter().enumerate() {
                assert!((tape.value(out)[[r, 0]] - f).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_record_checks_schema() {
        let sc = AdScorer::init(&schema(&[3, 3]), &AdScorerConfig::default()).unwrap();
        assert!(sc.score_record(&EncodedRecord(vec![0, 3])).is_err());
        assert!(sc.score_record(&EncodedRecord(vec![0])).is_err());
        let r = EncodedRecord(vec![2, 2]);
        assert_eq!(sc.score_record(&r).unwrap(), sc.score_record(&r).unwrap());
    }

    #[test]
    fn nce_gradients_match_finite_differences() {
        // 5-record toy problem for both variants
        let sch = schema(&[3, 2, 3]);
        let pos: Vec<_> = [[0, 1, 2], [1, 0, 0], [2, 1, 1], [0, 0, 2], [1, 1, 0]]
            .iter()
            .map(|v| EncodedRecord(v.to_vec()))
            .collect();
        for variant in [ScorerVariant::Additive, ScorerVariant::Pairwise] {
            let cfg = AdScorerConfig {
                variant,
                embedding_dim: 4,
                ..Default::default()
            };
            let mut sc = AdScorer::init(&sch, &cfg).unwrap();
            let mut r = rng::rng(3);
            let neg: Vec<_> = pos.iter().map(|p| sc.corrupt(p, &mut r)).collect();
            // Spread the weights so tanh is not in its linear regime.
            for i in 0..sc.store.len() {
                let m = sc.store.get(ParamId(i)).mapv(|x| x * 5.0 + 0.05);
                *sc.store.get_mut(ParamId(i)) = m;
            }
            let g = check_gradients(&sc.store, |store, tape| {
                let mut probe = sc.clone();
                probe.store = store.clone();
                probe.nce_loss(tape, &pos, &neg)
            });
            assert!(g.max_rel_error < GRAD_TOL, "{variant}: {}", g.max_rel_error);
        }
    }

    #[test]
    fn seeds_change_parameters_not_finiteness() {
        let sch = schema(&[4, 4, 4]);
        let train: Vec<_> = (0..40)
            .map(|i| EncodedRecord(vec![i % 4, i % 4, (i / 4) % 4]))
            .collect();
        let mk = |seed| AdScorerConfig {
            seed,
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        let a = train_ad(&sch, &train, &mk(1)).unwrap();
        let a2 = train_ad(&sch, &train, &mk(1)).unwrap();
        let b = train_ad(&sch, &train, &mk(2)).unwrap();
        assert_eq!(a.params().digest(), a2.params().digest());
        assert_ne!(a.params().digest(), b.params().digest());
        for r in &train {
            assert!(a.score(r).is_finite() && b.score(r).is_finite());
        }
        assert!(train_ad(&sch, &[], &mk(1)).is_err());
    }

    #[test]
    fn batch_composition_does_not_change_scores() {
        let sc = AdScorer::init(&schema(&[3, 3]), &AdScorerConfig::default()).unwrap();
        let recs: Vec<_> = (0..9).map(|i| EncodedRecord(vec![i % 3, i / 3])).collect();
        let all = sc.score_batch(&recs);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(sc.score_batch(&[r.clone(), recs[0].clone()])[0], all[i]);
        }
    }
}
