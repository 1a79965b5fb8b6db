use crate::error::Result;
use crate::numerics::{ParamId, ParamStore, Tape, Var};

/// One scalar coordinate of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    /// First coordinate whose comparison was not finite, if any.
    pub non_finite: Option<Coordinate>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.non_finite.is_none() && self.max_rel_error <= tol
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares tape gradients against central differences for every
/// coordinate of `ids`.
///
/// `loss_fn` must build the loss on the tape it is given from the current
/// store values, deterministically. Parameter values are restored and
/// gradients left zeroed on return.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    h: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.grad(id).data().to_vec()).collect();
    store.zero_grad();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        non_finite: None,
        checked: 0,
    };
    for (&id, grads) in ids.iter().zip(&analytic) {
        for (index, &a) in grads.iter().enumerate() {
            let original = store.value(id).data()[index];
            store.get_mut(id).value_mut()[index] = original + h;
            let plus = eval(store);
            store.get_mut(id).value_mut()[index] = original - h;
            let minus = eval(store);
            store.get_mut(id).value_mut()[index] = original;
            let (plus, minus) = (plus?, minus?);

            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(a, numeric);
            report.checked += 1;
            let coord = || Coordinate {
                param: store.get(id).name().to_string(),
                index,
                analytic: a,
                numeric,
            };
            if !err.is_finite() {
                if report.non_finite.is_none() {
                    report.non_finite = Some(coord());
                }
                report.max_rel_error = f64::INFINITY;
                continue;
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(coord());
            }
        }
    }
    Ok(report)
}
