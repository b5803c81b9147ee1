//! Central finite-difference checks for the hand-written backward passes.
//!
//! The harness perturbs every entry of every requested parameter and input by
//! `±eps`, re-evaluates the scalar loss and compares `(f(+) − f(−)) / 2eps`
//! against the analytic gradient. The relative error of one entry is
//! `|a − n| / max(|a|, |n|, floor)`; the floor keeps entries whose true
//! gradient is numerically zero from dominating the report.

use ndarray::Array2;

use super::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Name and flat index of the entry with the largest error.
    pub worst: String,
    pub entries_checked: usize,
}

/// Output of one evaluation: the loss, parameter gradients and gradients
/// with respect to each input matrix (same order as the inputs).
pub type Evaluation = (f64, Grads<f64>, Vec<Array2<f64>>);

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks the gradients of `eval` with respect to `params` (all parameters
/// when empty) and to every entry of `inputs`.
pub fn check_gradients<F>(
    store: &mut ParamStore<f64>,
    inputs: &mut [Array2<f64>],
    params: &[ParamId],
    eps: f64,
    mut eval: F,
) -> Result<GradReport>
where
    F: FnMut(&ParamStore<f64>, &[Array2<f64>]) -> Evaluation,
{
    let (loss, grads, input_grads) = eval(store, inputs);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    if !grads.all_finite() || input_grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let params: Vec<ParamId> = if params.is_empty() {
        store.ids().collect()
    } else {
        params.to_vec()
    };

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        entries_checked: 0,
    };
    let note = |report: &mut GradReport, label: &dyn Fn() -> String, a: f64, n: f64| {
        let e = rel_error(a, n);
        report.entries_checked += 1;
        if e > report.max_rel_error || !e.is_finite() {
            report.max_rel_error = e;
            report.worst = label();
        }
    };

    for id in params {
        let n = store.numel(id);
        for flat in 0..n {
            let orig = store.get(id).as_slice().expect("contiguous")[flat];
            store.get_mut(id).as_slice_mut().unwrap()[flat] = orig + eps;
            let plus = eval(store, inputs).0;
            store.get_mut(id).as_slice_mut().unwrap()[flat] = orig - eps;
            let minus = eval(store, inputs).0;
            store.get_mut(id).as_slice_mut().unwrap()[flat] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(id).map(|g| g.as_slice().unwrap()[flat]).unwrap_or(0.0);
            let name = store.name(id).to_string();
            note(&mut report, &|| format!("{name}[{flat}]"), analytic, numeric);
        }
    }

    for i in 0..inputs.len() {
        let n = inputs[i].len();
        for flat in 0..n {
            let orig = inputs[i].as_slice().expect("contiguous")[flat];
            inputs[i].as_slice_mut().unwrap()[flat] = orig + eps;
            let plus = eval(store, inputs).0;
            inputs[i].as_slice_mut().unwrap()[flat] = orig - eps;
            let minus = eval(store, inputs).0;
            inputs[i].as_slice_mut().unwrap()[flat] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = input_grads[i].as_slice().unwrap()[flat];
            note(&mut report, &|| format!("input{i}[{flat}]"), analytic, numeric);
        }
    }
    Ok(report)
}
