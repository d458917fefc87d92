//! Per-entity likelihood explainer.
//!
//! A transformer encoder reads a record as a set of tokens, one per domain:
//! the entity embedding concatenated with a learned vector for its domain.
//! It is pretrained together with [`DecoderR`] to reconstruct records in
//! which some entities were masked or swapped. [`DecoderP`] is then trained
//! on top of the frozen encoder to say, for each entity, how likely it is to
//! belong in the rest of the record. Domains whose likelihood falls below a
//! threshold are the ones recourse will modify.

mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use self::model::{Bind, DecoderP, DecoderR, Encoded, Encoder, TokenBatch};
pub use self::train::{decoder_p_loss, pretrain_encoder, pretrain_loss, train_decoder_p, train_explainer};

use crate::archive::{ArtifactMeta, ModelArchive};
use crate::data::{DomainSchema, EncodedRecord};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Tape};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Entity embedding width `d`; tokens are `2d` wide.
    pub embedding_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            num_layers: 4,
            num_heads: 8,
            ffn_dim: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderRConfig {
    /// Shared layer width followed by the per-domain hidden widths.
    pub hidden: Vec<usize>,
}

impl Default for DecoderRConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderPConfig {
    /// Output width of the bilinear layer.
    pub bilinear_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for DecoderPConfig {
    fn default() -> Self {
        Self {
            bilinear_dim: 32,
            hidden: vec![32, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerTrainConfig {
    pub mask_fraction: f64,
    pub perturb_fraction: f64,
    /// Fraction of decoder-P training records left unperturbed.
    pub alpha: f64,
    pub pretrain_epochs: usize,
    pub decoder_p_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Restrict the reconstruction loss to masked or swapped positions.
    pub corrupted_only_loss: bool,
}

impl Default for ExplainerTrainConfig {
    fn default() -> Self {
        Self {
            mask_fraction: 0.2,
            perturb_fraction: 0.2,
            alpha: 0.3,
            pretrain_epochs: 250,
            decoder_p_epochs: 250,
            batch_size: 512,
            learning_rate: 0.0005,
            corrupted_only_loss: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerConfig {
    pub encoder: EncoderConfig,
    pub decoder_r: DecoderRConfig,
    pub decoder_p: DecoderPConfig,
    pub train: ExplainerTrainConfig,
    pub seed: u64,
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("explainer: {msg}")));
        let e = &self.encoder;
        if e.embedding_dim == 0 || e.num_heads == 0 || e.ffn_dim == 0 {
            return bad("embedding_dim, num_heads and ffn_dim must be positive");
        }
        if !(2 * e.embedding_dim).is_multiple_of(e.num_heads) {
            return bad("token width 2·embedding_dim must be divisible by num_heads");
        }
        if self.decoder_r.hidden.is_empty() || self.decoder_r.hidden.contains(&0) {
            return bad("decoder_r.hidden needs at least one positive width");
        }
        if self.decoder_p.bilinear_dim == 0 || self.decoder_p.hidden.contains(&0) {
            return bad("decoder_p widths must be positive");
        }
        let t = &self.train;
        for (name, v) in [
            ("mask_fraction", t.mask_fraction),
            ("perturb_fraction", t.perturb_fraction),
            ("alpha", t.alpha),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must be in [0,1]"));
            }
        }
        if t.mask_fraction + t.perturb_fraction > 1.0 {
            return bad("mask_fraction + perturb_fraction must not exceed 1");
        }
        if t.batch_size == 0 || t.learning_rate.is_nan() || t.learning_rate <= 0.0 {
            return bad("batch_size and learning_rate must be positive");
        }
        Ok(())
    }
}

/// Per-domain probability that the record's entity belongs in its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LikelihoodVector(pub Vec<f64>);

impl LikelihoodVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Domain of the smallest likelihood, lowest index on ties.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (j, &v) in self.0.iter().enumerate() {
            if v < self.0[best] {
                best = j;
            }
        }
        best
    }
}

/// Domains with likelihood below `threshold`, or the argmin alone if none is.
pub fn select_domains(likelihoods: &LikelihoodVector, threshold: f64) -> Vec<usize> {
    let picked: Vec<usize> = (0..likelihoods.len())
        .filter(|&j| likelihoods.0[j] < threshold)
        .collect();
    if picked.is_empty() {
        vec![likelihoods.argmin()]
    } else {
        picked
    }
}

/// Records per inference tape.
const INFER_CHUNK: usize = 256;

/// Trained encoder plus likelihood head.
#[derive(Debug, Clone)]
pub struct Explainer {
    config: ExplainerConfig,
    schema_hash: String,
    encoder: Encoder,
    decoder_p: DecoderP,
}

impl Explainer {
    pub fn new(schema: &DomainSchema, config: ExplainerConfig, encoder: Encoder, decoder_p: DecoderP) -> Self {
        Self {
            config,
            schema_hash: schema.hash(),
            encoder,
            decoder_p,
        }
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder_p(&self) -> &DecoderP {
        &self.decoder_p
    }

    pub fn schema_hash(&self) -> &str {
        &self.schema_hash
    }

    pub fn num_domains(&self) -> usize {
        self.encoder.vocab_sizes.len()
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.encoder.vocab_sizes
    }

    fn check(&self, record: &EncodedRecord) -> Result<()> {
        let v = &self.encoder.vocab_sizes;
        if record.len() != v.len() || record.values().iter().zip(v).any(|(&e, &n)| e >= n) {
            return Err(Error::SchemaMismatch(format!(
                "record {:?} does not fit the explainer vocabularies",
                record.values()
            )));
        }
        Ok(())
    }

    pub fn entity_likelihoods(&self, record: &EncodedRecord) -> Result<LikelihoodVector> {
        Ok(self.likelihoods_batch(std::slice::from_ref(record))?.remove(0))
    }

    pub fn likelihoods_batch(&self, records: &[EncodedRecord]) -> Result<Vec<LikelihoodVector>> {
        for r in records {
            self.check(r)?;
        }
        let tokens: Vec<Vec<(usize, usize)>> = records
            .iter()
            .map(|r| r.values().iter().copied().enumerate().collect())
            .collect();
        Ok(self
            .likelihoods_from_tokens(&tokens)
            .into_iter()
            .map(LikelihoodVector)
            .collect())
    }

    /// Likelihoods for records given as `(domain, entity)` tokens in any
    /// order. The result is indexed by domain, not by token position.
    pub fn likelihoods_from_tokens(&self, records: &[Vec<(usize, usize)>]) -> Vec<Vec<f64>> {
        let m = self.num_domains();
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(INFER_CHUNK) {
            let batch = TokenBatch::from_tokens(m, chunk);
            let mut tape = Tape::new();
            let enc = self.encoder.forward(&mut tape, Bind::Frozen, &batch);
            let (logits, order) = self.decoder_p.forward(&mut tape, Bind::Frozen, &enc, &batch);
            let lv = tape.value(logits);
            let mut per_row = vec![0.0; batch.len()];
            for (i, &row) in order.iter().enumerate() {
                per_row[row] = sigmoid(lv[[i, 0]]);
            }
            let mut row = 0;
            for rec in chunk {
                let mut v = vec![f64::NAN; m];
                for &(d, _) in rec {
                    v[d] = per_row[row];
                    row += 1;
                }
                out.push(v);
            }
        }
        out
    }

    /// Likelihoods and the selected domains to modify.
    pub fn explain(&self, record: &EncodedRecord, threshold: f64) -> Result<(LikelihoodVector, Vec<usize>)> {
        let l = self.entity_likelihoods(record)?;
        let d = select_domains(&l, threshold);
        Ok((l, d))
    }

    pub fn to_archive(&self, meta: ArtifactMeta) -> Result<ModelArchive> {
        Ok(ModelArchive::new(meta, &self.config)?
            .with_group("encoder", self.encoder.params())
            .with_group("decoder_p", self.decoder_p.params()))
    }

    pub fn from_archive(archive: &ModelArchive, schema: &DomainSchema) -> Result<Self> {
        archive.meta.check_schema(&schema.hash())?;
        let config: ExplainerConfig = archive.config()?;
        let (mut encoder, mut decoder_p) = init_models(schema, &config);
        encoder.store.adopt(archive.group("encoder")?)?;
        decoder_p.store.adopt(archive.group("decoder_p")?)?;
        Ok(Self::new(schema, config, encoder, decoder_p))
    }
}

/// Pretrained encoder and reconstruction head, as persisted between the
/// two training stages.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub config: ExplainerConfig,
    pub encoder: Encoder,
    pub decoder_r: DecoderR,
}

impl Pretrained {
    pub fn to_archive(&self, meta: ArtifactMeta) -> Result<ModelArchive> {
        Ok(ModelArchive::new(meta, &self.config)?
            .with_group("encoder", self.encoder.params())
            .with_group("decoder_r", self.decoder_r.params()))
    }

    pub fn from_archive(archive: &ModelArchive, schema: &DomainSchema) -> Result<Self> {
        archive.meta.check_schema(&schema.hash())?;
        let config: ExplainerConfig = archive.config()?;
        let (mut encoder, mut decoder_r) = train::init_pretrain(schema, &config);
        encoder.store.adopt(archive.group("encoder")?)?;
        decoder_r.store.adopt(archive.group("decoder_r")?)?;
        Ok(Self {
            config,
            encoder,
            decoder_r,
        })
    }

    /// Per-record, per-domain reconstruction distributions over the real
    /// vocabulary.
    pub fn reconstruct(&self, records: &[EncodedRecord]) -> Vec<Vec<Vec<f64>>> {
        let m = self.encoder.vocab_sizes.len();
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(INFER_CHUNK) {
            let batch = TokenBatch::from_records(m, chunk);
            let mut tape = Tape::new();
            let enc = self.encoder.forward(&mut tape, Bind::Frozen, &batch);
            let logits = self.decoder_r.forward(&mut tape, Bind::Frozen, &enc, &batch);
            let mut dists = vec![vec![Vec::new(); m]; chunk.len()];
            for (j, l) in logits.iter().enumerate() {
                let l = tape.value(l.expect("every domain present"));
                for (b, row) in l.rows().into_iter().enumerate() {
                    let max = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
                    let exp: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                    let z: f64 = exp.iter().sum();
                    dists[b][j] = exp.into_iter().map(|e| e / z).collect();
                }
            }
            out.extend(dists);
        }
        out
    }
}

/// Fresh encoder and decoder-P with the initialisation the training
/// routines use.
pub(crate) fn init_models(schema: &DomainSchema, config: &ExplainerConfig) -> (Encoder, DecoderP) {
    let mut r = rng::rng_for(config.seed, "explainer-init");
    let encoder = Encoder::init(&schema.vocab_sizes(), &config.encoder, &mut r);
    let mut r = rng::rng_for(config.seed, "decoder-p-init");
    let decoder_p = DecoderP::init(
        schema.num_domains(),
        config.encoder.embedding_dim,
        &config.decoder_p,
        &mut r,
    );
    (encoder, decoder_p)
}
