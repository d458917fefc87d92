use rand::seq::SliceRandom;
use rand::Rng as _;

use super::model::{Bind, DecoderP, DecoderR, Encoder, TokenBatch};
use super::{init_models, Explainer, ExplainerConfig, Pretrained};
use crate::data::{different_entity, perturb, DomainSchema, EncodedRecord};
use crate::error::{Error, Result};
use crate::nn::{Adam, Tape, Var};
use crate::rng::{self, Rng};

pub(crate) fn init_pretrain(schema: &DomainSchema, config: &ExplainerConfig) -> (Encoder, DecoderR) {
    let mut r = rng::rng_for(config.seed, "explainer-init");
    let encoder = Encoder::init(&schema.vocab_sizes(), &config.encoder, &mut r);
    let mut r = rng::rng_for(config.seed, "decoder-r-init");
    let decoder_r = DecoderR::init(
        &schema.vocab_sizes(),
        config.encoder.embedding_dim,
        &config.decoder_r,
        &mut r,
    );
    (encoder, decoder_r)
}

/// Reconstruction loss: per-position cross-entropy against the original
/// entities, summed over positions and averaged over records. With
/// `weights`, position `(b, j)` contributes `weights[b][j]` times its term.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_loss(
    tape: &mut Tape,
    encoder: &Encoder,
    encoder_bind: Bind,
    decoder_r: &DecoderR,
    decoder_bind: Bind,
    batch: &TokenBatch,
    originals: &[EncodedRecord],
    weights: Option<&[Vec<f64>]>,
) -> Var {
    let enc = encoder.forward(tape, encoder_bind, batch);
    let logits = decoder_r.forward(tape, decoder_bind, &enc, batch);
    let mut terms = Vec::new();
    for (j, l) in logits.into_iter().enumerate() {
        let Some(l) = l else { continue };
        let rows = batch.domain_rows(j);
        let targets = rows.iter().map(|&r| batch_original(batch, originals, r, j)).collect();
        let w = weights.map(|w| rows.iter().map(|&r| w[record_of(batch, r)][j]).collect());
        terms.push(tape.softmax_cross_entropy(l, targets, w));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t);
    }
    tape.scale(total, 1.0 / batch.num_records() as f64)
}

/// Mean per-position binary cross-entropy of decoder-P against `labels`
/// (`labels[b][j]` is 1 when the entity belongs, 0 when it was swapped).
pub fn decoder_p_loss(
    tape: &mut Tape,
    encoder: &Encoder,
    encoder_bind: Bind,
    decoder_p: &DecoderP,
    decoder_bind: Bind,
    batch: &TokenBatch,
    labels: &[Vec<f64>],
) -> Var {
    let enc = encoder.forward(tape, encoder_bind, batch);
    let (logits, order) = decoder_p.forward(tape, decoder_bind, &enc, batch);
    let targets = order
        .iter()
        .map(|&r| labels[record_of(batch, r)][batch.token(r).0])
        .collect();
    let sum = tape.bce_with_logits(logits, targets);
    tape.scale(sum, 1.0 / batch.len() as f64)
}

// Batches built here are record-major with every domain present, so the
// record of a row is its index divided by the record width.
fn record_of(batch: &TokenBatch, row: usize) -> usize {
    row / (batch.len() / batch.num_records())
}

fn batch_original(batch: &TokenBatch, originals: &[EncodedRecord], row: usize, j: usize) -> usize {
    originals[record_of(batch, row)].get(j)
}

/// Replace roughly `mask` of the positions by MASK and `swap` of them by a
/// different entity of the same domain. Returns the tokens and a 0/1 flag
/// per position marking what was touched.
fn corrupt_for_pretraining(
    record: &EncodedRecord,
    vocab_sizes: &[usize],
    mask: f64,
    swap: f64,
    rng: &mut Rng,
) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut tokens = Vec::with_capacity(record.len());
    let mut touched = Vec::with_capacity(record.len());
    for (j, &e) in record.values().iter().enumerate() {
        let u: f64 = rng.gen();
        let (ent, t) = if u < mask {
            (vocab_sizes[j], 1.0)
        } else if u < mask + swap && vocab_sizes[j] >= 2 {
            (different_entity(vocab_sizes[j], e, rng), 1.0)
        } else {
            (e, 0.0)
        };
        tokens.push((j, ent));
        touched.push(t);
    }
    (tokens, touched)
}

fn check_train(schema: &DomainSchema, train: &[EncodedRecord], config: &ExplainerConfig) -> Result<()> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    for r in train {
        schema.validate(r)?;
    }
    Ok(())
}

/// Jointly train the encoder and decoder-R on masked/swapped reconstruction.
pub fn pretrain_encoder(
    schema: &DomainSchema,
    train: &[EncodedRecord],
    config: &ExplainerConfig,
) -> Result<Pretrained> {
    check_train(schema, train, config)?;
    let t = &config.train;
    let m = schema.num_domains();
    let vocab = schema.vocab_sizes();
    let (mut encoder, mut decoder_r) = init_pretrain(schema, config);
    let mut opt_e = Adam::new(&encoder.store, t.learning_rate);
    let mut opt_d = Adam::new(&decoder_r.store, t.learning_rate);
    let mut rng = rng::rng_for(config.seed, "explainer-pretrain");
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..t.pretrain_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(t.batch_size) {
            let originals: Vec<EncodedRecord> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (tokens, touched): (Vec<_>, Vec<_>) = originals
                .iter()
                .map(|r| corrupt_for_pretraining(r, &vocab, t.mask_fraction, t.perturb_fraction, &mut rng))
                .unzip();
            let batch = TokenBatch::from_tokens(m, &tokens);
            let weights = t.corrupted_only_loss.then_some(touched.as_slice());
            let mut tape = Tape::new();
            let loss = pretrain_loss(
                &mut tape,
                &encoder,
                Bind::Train(0),
                &decoder_r,
                Bind::Train(1),
                &batch,
                &originals,
                weights,
            );
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged(format!("pretraining loss {value} at epoch {epoch}")));
            }
            epoch_loss += value * chunk.len() as f64;
            let grads = tape.backward(loss);
            let (ge, gd) = (grads.for_store(0, &encoder.store), grads.for_store(1, &decoder_r.store));
            opt_e.step(&mut encoder.store, &ge);
            opt_d.step(&mut decoder_r.store, &gd);
        }
        log::debug!("pretrain epoch {epoch}: loss {:.5}", epoch_loss / train.len() as f64);
    }
    if !encoder.store.all_finite() || !decoder_r.store.all_finite() {
        return Err(Error::Diverged("non-finite explainer parameters".into()));
    }
    Ok(Pretrained {
        config: config.clone(),
        encoder,
        decoder_r,
    })
}

/// Train decoder-P on a frozen encoder. A fraction `alpha` of each batch is
/// left intact; the rest has one or two domains swapped.
pub fn train_decoder_p(
    encoder: &Encoder,
    schema: &DomainSchema,
    train: &[EncodedRecord],
    config: &ExplainerConfig,
) -> Result<DecoderP> {
    check_train(schema, train, config)?;
    let t = &config.train;
    if t.alpha >= 1.0 {
        log::warn!("alpha = 1: every decoder-P label is positive, the likelihood head learns nothing useful");
    }
    let m = schema.num_domains();
    let (_, mut decoder_p) = init_models(schema, config);
    let mut opt = Adam::new(&decoder_p.store, t.learning_rate);
    let mut rng = rng::rng_for(config.seed, "explainer-decoder-p");
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..t.decoder_p_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(t.batch_size) {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut y = vec![1.0; m];
                if rng.gen::<f64>() < t.alpha {
                    inputs.push(train[i].clone());
                } else {
                    let n = rng.gen_range(1..=2);
                    let (rec, changed) = perturb(schema, &train[i], n, &mut rng)?;
                    for j in changed {
                        y[j] = 0.0;
                    }
                    inputs.push(rec);
                }
                labels.push(y);
            }
            let batch = TokenBatch::from_records(m, &inputs);
            let mut tape = Tape::new();
            let loss = decoder_p_loss(
                &mut tape,
                encoder,
                Bind::Frozen,
                &decoder_p,
                Bind::Train(0),
                &batch,
                &labels,
            );
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged(format!("decoder-P loss {value} at epoch {epoch}")));
            }
            epoch_loss += value * chunk.len() as f64;
            let grads = tape.backward(loss).for_store(0, &decoder_p.store);
            opt.step(&mut decoder_p.store, &grads);
        }
        log::debug!("decoder-P epoch {epoch}: loss {:.5}", epoch_loss / train.len() as f64);
    }
    if !decoder_p.store.all_finite() {
        return Err(Error::Diverged("non-finite decoder-P parameters".into()));
    }
    Ok(decoder_p)
}

/// Both stages back to back.
pub fn train_explainer(
    schema: &DomainSchema,
    train: &[EncodedRecord],
    config: &ExplainerConfig,
) -> Result<(Pretrained, Explainer)> {
    let pre = pretrain_encoder(schema, train, config)?;
    let dp = train_decoder_p(&pre.encoder, schema, train, config)?;
    let ex = Explainer::new(schema, config.clone(), pre.encoder.clone(), dp);
    Ok((pre, ex))
}
