use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{HinGraph, Relation};
use crate::archive::{ArtifactMeta, ModelArchive};
use crate::data::DomainSchema;
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamId, ParamStore, Tape, Var};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistMultConfig {
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DistMultConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            negatives_per_positive: 4,
            epochs: 300,
            batch_size: 1024,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl DistMultConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.negatives_per_positive == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "kge: dim, negatives_per_positive and batch_size must be positive".into(),
            ));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("kge: learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ArchivedConfig {
    config: DistMultConfig,
    relations: Vec<Relation>,
}

/// One embedding per entity (a global node table with per-domain offsets)
/// and one diagonal vector per relation.
#[derive(Debug, Clone)]
pub struct DistMult {
    config: DistMultConfig,
    schema_hash: String,
    vocab_sizes: Vec<usize>,
    offsets: Vec<usize>,
    relations: Vec<Relation>,
    store: ParamStore,
    nodes: ParamId,
    rels: ParamId,
}

/// `Σ_k r[k]·(h[k]·t[k])`. Multiplying head and tail first makes the score
/// bit-for-bit symmetric in head and tail.
pub(crate) fn triple_score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter().zip(r).zip(t).map(|((h, r), t)| r * (h * t)).sum()
}

impl DistMult {
    pub fn init(schema: &DomainSchema, relations: &[Relation], config: &DistMultConfig) -> Result<Self> {
        config.validate()?;
        let vocab_sizes = schema.vocab_sizes();
        let mut offsets = Vec::with_capacity(vocab_sizes.len());
        let mut total = 0;
        for &v in &vocab_sizes {
            offsets.push(total);
            total += v;
        }
        let mut r = rng::rng_for(config.seed, "kge-init");
        let mut store = ParamStore::new();
        let std = 1.0 / (config.dim as f64).sqrt();
        let nodes = store.add_normal("nodes", total, config.dim, std, &mut r);
        let rels = store.add_normal("relations", relations.len().max(1), config.dim, std, &mut r);
        Ok(Self {
            config: config.clone(),
            schema_hash: schema.hash(),
            vocab_sizes,
            offsets,
            relations: relations.to_vec(),
            store,
            nodes,
            rels,
        })
    }

    pub fn config(&self) -> &DistMultConfig {
        &self.config
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn schema_hash(&self) -> &str {
        &self.schema_hash
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn vocab_size(&self, domain: usize) -> usize {
        self.vocab_sizes[domain]
    }

    pub fn node(&self, domain: usize, entity: usize) -> usize {
        self.offsets[domain] + entity
    }

    pub fn relation_index(&self, x: usize, y: usize) -> Result<usize> {
        self.relations
            .iter()
            .position(|r| r.covers(x, y))
            .ok_or_else(|| Error::UnknownRelation(x.to_string(), y.to_string()))
    }

    pub fn embedding(&self, domain: usize, entity: usize) -> &[f64] {
        let row = self.node(domain, entity);
        let t = self.store.get(self.nodes);
        let d = t.ncols();
        &t.as_slice().expect("row-major")[row * d..(row + 1) * d]
    }

    pub fn relation_vector(&self, relation: usize) -> &[f64] {
        let t = self.store.get(self.rels);
        let d = t.ncols();
        &t.as_slice().expect("row-major")[relation * d..(relation + 1) * d]
    }

    /// DistMult score of `(head, relation, tail)`; the relation must link
    /// the two domains.
    pub fn score_triple(
        &self,
        head_domain: usize,
        head: usize,
        relation: usize,
        tail_domain: usize,
        tail: usize,
    ) -> Result<f64> {
        let rel = self
            .relations
            .get(relation)
            .ok_or_else(|| Error::InvalidArgument(format!("relation {relation} does not exist")))?;
        if !rel.covers(head_domain, tail_domain) {
            return Err(Error::UnknownRelation(head_domain.to_string(), tail_domain.to_string()));
        }
        for (d, e) in [(head_domain, head), (tail_domain, tail)] {
            if e >= self.vocab_sizes[d] {
                return Err(Error::InvalidArgument(format!("entity {e} out of range in domain {d}")));
            }
        }
        Ok(triple_score(
            self.embedding(head_domain, head),
            self.relation_vector(relation),
            self.embedding(tail_domain, tail),
        ))
    }

    pub fn to_archive(&self, meta: ArtifactMeta) -> Result<ModelArchive> {
        let cfg = ArchivedConfig {
            config: self.config.clone(),
            relations: self.relations.clone(),
        };
        Ok(ModelArchive::new(meta, &cfg)?.with_group("kge", &self.store))
    }

    pub fn from_archive(archive: &ModelArchive, schema: &DomainSchema) -> Result<Self> {
        archive.meta.check_schema(&schema.hash())?;
        let cfg: ArchivedConfig = archive.config()?;
        let mut model = Self::init(schema, &cfg.relations, &cfg.config)?;
        model.store.adopt(archive.group("kge")?)?;
        Ok(model)
    }
}

/// One training example: node rows of head and tail, relation row, label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
    pub label: f64,
}

/// Mean logistic loss over `triples`, with embeddings bound under slot 0.
pub fn distmult_loss(tape: &mut Tape, model: &DistMult, triples: &[Triple]) -> Var {
    let nodes = tape.param(0, &model.store, model.nodes);
    let rels = tape.param(0, &model.store, model.rels);
    let h = tape.gather(nodes, triples.iter().map(|t| t.head).collect());
    let t = tape.gather(nodes, triples.iter().map(|t| t.tail).collect());
    let r = tape.gather(rels, triples.iter().map(|t| t.relation).collect());
    let hr = tape.mul(h, r);
    let hrt = tape.mul(hr, t);
    let s = tape.row_sum(hrt);
    let loss = tape.bce_with_logits(s, triples.iter().map(|t| t.label).collect());
    tape.scale(loss, 1.0 / triples.len() as f64)
}

/// Fit DistMult on the graph's edges. Each edge is a positive in both
/// directions; negatives replace the tail with a uniform entity of the tail
/// domain.
pub fn train_distmult(schema: &DomainSchema, hin: &HinGraph, config: &DistMultConfig) -> Result<DistMult> {
    if hin.num_edges() == 0 {
        return Err(Error::InvalidArgument("graph has no edges to train on".into()));
    }
    if hin.vocab_sizes() != schema.vocab_sizes().as_slice() {
        return Err(Error::SchemaMismatch("graph was built for another schema".into()));
    }
    let mut model = DistMult::init(schema, hin.relations(), config)?;
    // (head domain, head, relation, tail domain, tail)
    let mut positives = Vec::with_capacity(2 * hin.num_edges());
    for (ri, rel) in hin.relations().iter().enumerate() {
        for &(ea, eb) in hin.edges(ri) {
            positives.push((rel.a, ea, ri, rel.b, eb));
            positives.push((rel.b, eb, ri, rel.a, ea));
        }
    }
    let mut opt = Adam::new(&model.store, config.learning_rate);
    let mut rng = rng::rng_for(config.seed, "kge-train");
    for epoch in 0..config.epochs {
        positives.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in positives.chunks(config.batch_size) {
            let mut triples = Vec::with_capacity(chunk.len() * (1 + config.negatives_per_positive));
            for &(hd, h, r, td, t) in chunk {
                let head = model.node(hd, h);
                triples.push(Triple {
                    head,
                    relation: r,
                    tail: model.node(td, t),
                    label: 1.0,
                });
                for _ in 0..config.negatives_per_positive {
                    let neg = rng.gen_range(0..model.vocab_sizes[td]);
                    triples.push(Triple {
                        head,
                        relation: r,
                        tail: model.node(td, neg),
                        label: 0.0,
                    });
                }
            }
            let mut tape = Tape::new();
            let loss = distmult_loss(&mut tape, &model, &triples);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged(format!("kge loss {value} at epoch {epoch}")));
            }
            epoch_loss += value * chunk.len() as f64;
            let grads = tape.backward(loss).for_store(0, &model.store);
            opt.step(&mut model.store, &grads);
        }
        log::debug!("kge epoch {epoch}: loss {:.5}", epoch_loss / positives.len() as f64);
    }
    if !model.store.all_finite() {
        return Err(Error::Diverged("non-finite kge parameters".into()));
    }
    Ok(model)
}
