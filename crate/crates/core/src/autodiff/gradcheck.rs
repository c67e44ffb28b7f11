use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the largest error occurred.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compare reverse-mode gradients of `f` with central differences over every
/// trainable entry in `store`.
///
/// `f` must bind its parameters through the tape it is handed. Gradients in
/// `store` are overwritten with the analytic result.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, epsilon: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Usage(format!("epsilon must be positive, got {epsilon}")));
    }
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let base = loss.item();
    tape.backward(&loss, store)?;
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::inference();
        Ok(f(&mut tape, store)?.item())
    };
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic {
            first: base,
            second: again,
        });
    }

    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for id in ids {
        for k in 0..store.value(id).len() {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + epsilon;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original - epsilon;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = store.grad(id).data()[k];
            let err = relative_error(analytic, numeric);
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}
