//! Central-difference gradient checking.

use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Matrix, Tape, Var};
use crate::error::Result;

/// Default step for 64-bit central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares the tape gradient of `f` at `x` with central differences and
/// returns the largest `|analytic − numeric| / max(1, |analytic|)`.
pub fn check_gradients<F>(x: &Matrix, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |m: &Matrix| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(m.clone());
        let out = f(&mut tape, v)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let v = tape.variable(x.clone());
    let out = f(&mut tape, v)?;
    let analytic = tape.backward(out).get_or_zeros(v, x.shape());

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + eps;
        let plus = eval(&probe)?;
        probe[k] = orig - eps;
        let minus = eval(&probe)?;
        probe[k] = orig;
        worst = worst.max(rel_err(analytic[k], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Gradient check over the parameters of a store. `only` restricts the
/// probed parameters; `None` probes every non-frozen one.
pub fn check_param_gradients<F>(store: &ParamStore, only: Option<&[ParamId]>, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    let grads = tape.backward(out);

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().filter(|&id| !store.is_frozen(id)).collect(),
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in ids {
        let shape = store.get(id).shape();
        let analytic = grads.get_or_zeros(bound[id], shape);
        for k in 0..analytic.len() {
            let orig = store.get(id)[k];
            let mut value_at = |x: f64| -> Result<f64> {
                probe.get_mut(id)[k] = x;
                let mut t = Tape::new();
                let b = probe.bind(&mut t);
                let out = f(&mut t, &b)?;
                Ok(t.scalar(out))
            };
            let plus = value_at(orig + eps)?;
            let minus = value_at(orig - eps)?;
            probe.get_mut(id)[k] = orig;
            worst = worst.max(rel_err(analytic[k], (plus - minus) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
