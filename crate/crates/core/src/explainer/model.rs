use std::rc::Rc;

use crate::data::EncodedRecord;
use crate::nn::{ParamId, ParamStore, Tape, Var};
use crate::rng::Rng;

use super::{DecoderPConfig, DecoderRConfig, EncoderConfig};

/// How a parameter store enters a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bind {
    /// Trainable, gradients reported under this slot.
    Train(usize),
    Frozen,
}

fn leaf(tape: &mut Tape, bind: Bind, store: &ParamStore, id: ParamId) -> Var {
    match bind {
        Bind::Train(slot) => tape.param(slot, store, id),
        Bind::Frozen => tape.frozen(store, id),
    }
}

/// Tokens of a batch of records. Each token is a `(domain, entity)` pair
/// and may carry the domain's MASK index. A record's tokens can come in any
/// order; attention only sees the set.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    tokens: Vec<(usize, usize)>,
    groups: Rc<Vec<Vec<usize>>>,
    /// Rows of each domain, ordered by record.
    by_domain: Vec<Vec<usize>>,
}

impl TokenBatch {
    pub fn from_tokens(m: usize, records: &[Vec<(usize, usize)>]) -> Self {
        let mut tokens = Vec::new();
        let mut groups = Vec::with_capacity(records.len());
        let mut by_domain = vec![Vec::with_capacity(records.len()); m];
        for rec in records {
            let mut g = Vec::with_capacity(rec.len());
            for &(d, e) in rec {
                by_domain[d].push(tokens.len());
                g.push(tokens.len());
                tokens.push((d, e));
            }
            groups.push(g);
        }
        Self {
            tokens,
            groups: Rc::new(groups),
            by_domain,
        }
    }

    /// Record-major layout: row `b·m + j` is domain `j` of record `b`.
    pub fn from_records(m: usize, records: &[EncodedRecord]) -> Self {
        let recs: Vec<Vec<(usize, usize)>> = records
            .iter()
            .map(|r| r.values().iter().copied().enumerate().collect())
            .collect();
        Self::from_tokens(m, &recs)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_records(&self) -> usize {
        self.groups.len()
    }

    pub fn token(&self, row: usize) -> (usize, usize) {
        self.tokens[row]
    }

    pub fn domain_rows(&self, j: usize) -> &[usize] {
        &self.by_domain[j]
    }
}

/// Encoder outputs, one row per token.
pub struct Encoded {
    /// Raw entity embeddings `x_0`, width d.
    pub x0: Var,
    /// Positional (domain) vectors, width d.
    pub pos: Var,
    /// Contextual vectors, width 2d.
    pub z: Var,
}

#[derive(Debug, Clone)]
struct Block {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Entity tables (each with a trailing MASK row), learned per-domain
/// positional vectors and a post-norm transformer stack.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub(super) config: EncoderConfig,
    pub(super) vocab_sizes: Vec<usize>,
    pub(super) store: ParamStore,
    emb: Vec<ParamId>,
    pos: ParamId,
    blocks: Vec<Block>,
}

impl Encoder {
    pub fn init(vocab_sizes: &[usize], config: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = config.embedding_dim;
        let w = 2 * d;
        let mut store = ParamStore::new();
        let emb = vocab_sizes
            .iter()
            .enumerate()
            .map(|(j, &v)| store.add_normal(&format!("emb{j}"), v + 1, d, 0.1, rng))
            .collect();
        let pos = store.add_normal("pos", vocab_sizes.len(), d, 0.1, rng);
        let blocks = (0..config.num_layers)
            .map(|l| {
                let mut g = |n: &str, i: usize, o: usize| store.add_glorot(&format!("l{l}.{n}"), i, o, rng);
                let (wq, wk, wv, wo) = (g("wq", w, w), g("wk", w, w), g("wv", w, w), g("wo", w, w));
                let (w1, w2) = (g("w1", w, config.ffn_dim), g("w2", config.ffn_dim, w));
                let mut z = |n: &str, c: usize| store.add_zeros(&format!("l{l}.{n}"), 1, c);
                let (bq, bk, bv, bo, b1, b2) = (
                    z("bq", w),
                    z("bk", w),
                    z("bv", w),
                    z("bo", w),
                    z("b1", config.ffn_dim),
                    z("b2", w),
                );
                let (ln1_b, ln2_b) = (z("ln1_b", w), z("ln2_b", w));
                let ln1_g = store.add_ones(&format!("l{l}.ln1_g"), 1, w);
                let ln2_g = store.add_ones(&format!("l{l}.ln2_g"), 1, w);
                Block {
                    wq,
                    bq,
                    wk,
                    bk,
                    wv,
                    bv,
                    wo,
                    bo,
                    ln1_g,
                    ln1_b,
                    w1,
                    b1,
                    w2,
                    b2,
                    ln2_g,
                    ln2_b,
                }
            })
            .collect();
        Self {
            config: config.clone(),
            vocab_sizes: vocab_sizes.to_vec(),
            store,
            emb,
            pos,
            blocks,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn forward(&self, tape: &mut Tape, bind: Bind, batch: &TokenBatch) -> Encoded {
        let s = &self.store;
        let m = self.vocab_sizes.len();

        // Embedding lookup per domain, then scatter back into token order.
        let mut parts = Vec::with_capacity(m);
        let mut order = Vec::with_capacity(batch.len());
        for j in 0..m {
            let rows = batch.domain_rows(j);
            if rows.is_empty() {
                continue;
            }
            let table = leaf(tape, bind, s, self.emb[j]);
            let ents = rows.iter().map(|&r| batch.token(r).1).collect();
            parts.push(tape.gather(table, ents));
            order.extend_from_slice(rows);
        }
        let stacked = tape.vconcat(&parts);
        let mut inverse = vec![0; batch.len()];
        for (i, &r) in order.iter().enumerate() {
            inverse[r] = i;
        }
        let x0 = tape.gather(stacked, inverse);

        let pos_table = leaf(tape, bind, s, self.pos);
        let pos = tape.gather(pos_table, (0..batch.len()).map(|r| batch.token(r).0).collect());

        let mut h = tape.hconcat(&[x0, pos]);
        for b in &self.blocks {
            let lin = |tape: &mut Tape, x: Var, w: ParamId, bias: ParamId| {
                let w = leaf(tape, bind, s, w);
                let bias = leaf(tape, bind, s, bias);
                tape.linear(x, w, bias)
            };
            let q = lin(tape, h, b.wq, b.bq);
            let k = lin(tape, h, b.wk, b.bk);
            let v = lin(tape, h, b.wv, b.bv);
            let a = tape.attention(q, k, v, batch.groups.clone(), self.config.num_heads);
            let o = lin(tape, a, b.wo, b.bo);
            let r = tape.add(h, o);
            let (g1, b1) = (leaf(tape, bind, s, b.ln1_g), leaf(tape, bind, s, b.ln1_b));
            h = tape.layer_norm(r, g1, b1);

            let f = lin(tape, h, b.w1, b.b1);
            let f = tape.gelu(f);
            let f = lin(tape, f, b.w2, b.b2);
            let r = tape.add(h, f);
            let (g2, b2) = (leaf(tape, bind, s, b.ln2_g), leaf(tape, bind, s, b.ln2_b));
            h = tape.layer_norm(r, g2, b2);
        }
        Encoded { x0, pos, z: h }
    }
}

#[derive(Debug, Clone)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            w: store.add_glorot(&format!("{name}.w"), fan_in, fan_out, rng),
            b: store.add_zeros(&format!("{name}.b"), 1, fan_out),
        }
    }

    fn apply(&self, tape: &mut Tape, bind: Bind, store: &ParamStore, x: Var) -> Var {
        let w = leaf(tape, bind, store, self.w);
        let b = leaf(tape, bind, store, self.b);
        tape.linear(x, w, b)
    }
}

/// Reconstruction head used for pretraining: a shared GELU layer on `z`,
/// positional vectors concatenated back in, then one GELU stack per domain
/// ending in logits over that domain's vocabulary (MASK excluded).
#[derive(Debug, Clone)]
pub struct DecoderR {
    pub(super) config: DecoderRConfig,
    pub(super) store: ParamStore,
    shared: Dense,
    heads: Vec<Vec<Dense>>,
}

impl DecoderR {
    pub fn init(vocab_sizes: &[usize], embedding_dim: usize, config: &DecoderRConfig, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let hidden = &config.hidden;
        let shared = Dense::new(&mut store, "shared", 2 * embedding_dim, hidden[0], rng);
        let heads = vocab_sizes
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let mut widths = vec![hidden[0] + embedding_dim];
                widths.extend_from_slice(&hidden[1..]);
                widths.push(v);
                widths
                    .windows(2)
                    .enumerate()
                    .map(|(l, w)| Dense::new(&mut store, &format!("head{j}.{l}"), w[0], w[1], rng))
                    .collect()
            })
            .collect();
        Self {
            config: config.clone(),
            store,
            shared,
            heads,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn config(&self) -> &DecoderRConfig {
        &self.config
    }

    /// Per-domain logits, rows ordered as `batch.domain_rows(j)`.
    pub fn forward(&self, tape: &mut Tape, bind: Bind, enc: &Encoded, batch: &TokenBatch) -> Vec<Option<Var>> {
        let s = &self.store;
        let h = self.shared.apply(tape, bind, s, enc.z);
        let h = tape.gelu(h);
        let h = tape.hconcat(&[h, enc.pos]);
        self.heads
            .iter()
            .enumerate()
            .map(|(j, layers)| {
                let rows = batch.domain_rows(j);
                if rows.is_empty() {
                    return None;
                }
                let mut x = tape.gather(h, rows.to_vec());
                for (l, layer) in layers.iter().enumerate() {
                    x = layer.apply(tape, bind, s, x);
                    if l + 1 < layers.len() {
                        x = tape.gelu(x);
                    }
                }
                Some(x)
            })
            .collect()
    }
}

/// Likelihood head: per domain, a bilinear form between `x = x_0 ⊕ p` and
/// `z`, then a ReLU stack and a single logit.
#[derive(Debug, Clone)]
pub struct DecoderP {
    pub(super) config: DecoderPConfig,
    pub(super) store: ParamStore,
    bilinear: Vec<(ParamId, ParamId)>,
    heads: Vec<Vec<Dense>>,
}

impl DecoderP {
    pub fn init(num_domains: usize, embedding_dim: usize, config: &DecoderPConfig, rng: &mut Rng) -> Self {
        let w = 2 * embedding_dim;
        let out = config.bilinear_dim;
        let mut store = ParamStore::new();
        let mut bilinear = Vec::with_capacity(num_domains);
        let mut heads = Vec::with_capacity(num_domains);
        for j in 0..num_domains {
            // Scaled so each bilinear output starts with unit-order variance.
            let std = 1.0 / w as f64;
            let bw = store.add_normal(&format!("bil{j}.w"), w, out * w, std, rng);
            let bb = store.add_zeros(&format!("bil{j}.b"), 1, out);
            bilinear.push((bw, bb));
            let mut widths = vec![out];
            widths.extend_from_slice(&config.hidden);
            widths.push(1);
            heads.push(
                widths
                    .windows(2)
                    .enumerate()
                    .map(|(l, ww)| Dense::new(&mut store, &format!("head{j}.{l}"), ww[0], ww[1], rng))
                    .collect(),
            );
        }
        Self {
            config: config.clone(),
            store,
            bilinear,
            heads,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn config(&self) -> &DecoderPConfig {
        &self.config
    }

    /// Logits for every token, stacked domain by domain; the second value
    /// lists the token row of each stacked logit.
    pub fn forward(&self, tape: &mut Tape, bind: Bind, enc: &Encoded, batch: &TokenBatch) -> (Var, Vec<usize>) {
        let s = &self.store;
        let x = tape.hconcat(&[enc.x0, enc.pos]);
        let mut parts = Vec::new();
        let mut order = Vec::with_capacity(batch.len());
        for (j, layers) in self.heads.iter().enumerate() {
            let rows = batch.domain_rows(j);
            if rows.is_empty() {
                continue;
            }
            let xj = tape.gather(x, rows.to_vec());
            let zj = tape.gather(enc.z, rows.to_vec());
            let (bw, bb) = self.bilinear[j];
            let bw = leaf(tape, bind, s, bw);
            let t = tape.matmul(xj, bw);
            let y = tape.bilinear(t, zj, self.config.bilinear_dim);
            let bb = leaf(tape, bind, s, bb);
            let mut h = tape.add_row(y, bb);
            for (l, layer) in layers.iter().enumerate() {
                h = layer.apply(tape, bind, s, h);
                if l + 1 < layers.len() {
                    h = tape.relu(h);
                }
            }
            parts.push(h);
            order.extend_from_slice(rows);
        }
        (tape.vconcat(&parts), order)
    }
}
