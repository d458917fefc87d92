use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::tape::Mat;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of parameter matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn add(&mut self, name: &str, value: Mat) -> ParamId {
        self.names.push(name.to_owned());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::zeros((rows, cols)))
    }

    pub fn add_ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::ones((rows, cols)))
    }

    pub fn add_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) -> ParamId {
        self.add(
            name,
            Mat::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            }),
        )
    }

    /// Glorot-uniform weight matrix for a `fan_in × fan_out` dense layer.
    pub fn add_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add(
            name,
            Mat::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit)),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update((t.nrows() as u64).to_le_bytes());
            h.update((t.ncols() as u64).to_le_bytes());
            for x in t.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Take values from `other` if its names and shapes match exactly.
    pub fn adopt(&mut self, other: &ParamStore) -> crate::Result<()> {
        let same = other.len() == self.len()
            && other
                .iter()
                .zip(self.iter())
                .all(|(a, b)| a.0 == b.0 && a.1.dim() == b.1.dim());
        if !same {
            return Err(crate::Error::Archive(
                "stored parameters do not match the configured model".into(),
            ));
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Mat>) -> Self {
        Self { names, tensors }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Mat> = store.tensors.iter().map(|t| Mat::zeros(t.raw_dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Mat]) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (((p, g), m), v) in store.tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Mat::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let g = store.get(id).mapv(|x| 2.0 * (x - 1.0));
            opt.step(&mut store, &[g]);
        }
        for x in store.get(id).iter() {
            assert!((x - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn digest_tracks_every_bit() {
        let mut r = rng::rng(0);
        let mut store = ParamStore::new();
        let id = store.add_normal("w", 3, 3, 1.0, &mut r);
        let before = store.digest();
        assert_eq!(before, store.clone().digest());
        store.get_mut(id)[[1, 1]] += 1e-15;
        assert_ne!(before, store.digest());
    }
}
