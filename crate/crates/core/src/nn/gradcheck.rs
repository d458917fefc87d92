//! Central finite-difference gradient checking.
//!
//! Independent of the reverse sweep: the numerical side only ever evaluates
//! the forward pass with a perturbed copy of the parameters.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

pub const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Compare the tape gradient of `loss` (all params bound under slot 0)
/// against central differences for every scalar in `store`.
pub fn check_gradients(store: &ParamStore, loss: impl Fn(&ParamStore, &mut Tape) -> Var) -> GradCheck {
    check_gradients_multi(std::slice::from_ref(store), |stores, tape| loss(&stores[0], tape))
}

/// Same as [`check_gradients`] for several stores; store `i` is expected to
/// be bound under slot `i`.
pub fn check_gradients_multi(stores: &[ParamStore], loss: impl Fn(&[ParamStore], &mut Tape) -> Var) -> GradCheck {
    let mut tape = Tape::new();
    let l = loss(stores, &mut tape);
    let grads = tape.backward(l);
    let analytic: Vec<_> = stores
        .iter()
        .enumerate()
        .map(|(slot, s)| grads.for_store(slot, s))
        .collect();

    let eval = |s: &[ParamStore]| {
        let mut t = Tape::new();
        let v = loss(s, &mut t);
        t.scalar(v)
    };

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = stores.to_vec();
    for (si, store) in stores.iter().enumerate() {
        for (p, grad) in analytic[si].iter().enumerate() {
            let id = ParamId(p);
            let shape = store.get(id).dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let orig = store.get(id)[[r, c]];
                    probe[si].get_mut(id)[[r, c]] = orig + STEP;
                    let up = eval(&probe);
                    probe[si].get_mut(id)[[r, c]] = orig - STEP;
                    let down = eval(&probe);
                    probe[si].get_mut(id)[[r, c]] = orig;
                    let numeric = (up - down) / (2.0 * STEP);
                    worst = worst.max(rel_error(grad[[r, c]], numeric));
                    checked += 1;
                }
            }
        }
    }
    GradCheck {
        max_rel_error: worst,
        checked,
    }
}

pub fn assert_gradients_match(store: &ParamStore, tol: f64, loss: impl Fn(&ParamStore, &mut Tape) -> Var) {
    let r = check_gradients(store, loss);
    assert!(r.checked > 0, "nothing checked");
    assert!(
        r.max_rel_error <= tol,
        "gradient mismatch: max relative error {} over {} scalars",
        r.max_rel_error,
        r.checked
    );
}
