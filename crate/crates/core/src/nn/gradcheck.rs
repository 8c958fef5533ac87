use super::{NnError, ParamStore, Tape, Var};

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Max of `|a − n| / max(|a|, |n|)` over coordinates with `|a| > 1e-8`.
    pub max_rel_error: f64,
    /// Max of `|a − n|` over every coordinate.
    pub max_abs_error: f64,
    /// Coordinates that entered `max_rel_error`.
    pub checked: usize,
    pub total: usize,
}

const ANALYTIC_FLOOR: f64 = 1e-8;

/// Check every trainable coordinate of the parameters in `state` against
/// `(f(θ + h) − f(θ − h)) / 2h`. The parameters are left as they were found.
pub fn finite_diff_check<S, E, F>(state: &mut S, h: f64, f: F) -> Result<GradCheck, E>
where
    S: AsRef<ParamStore> + AsMut<ParamStore>,
    E: From<NnError>,
    F: for<'t> Fn(&'t Tape, &S) -> Result<Var<'t>, E>,
{
    let mut scratch = state.as_ref().clone();
    scratch.zero_grad();
    {
        let tape = Tape::new();
        let loss = f(&tape, state)?;
        tape.backward(loss)?.accumulate_into(&mut scratch);
    }
    let eval = |s: &S| -> Result<f64, E> {
        let tape = Tape::new();
        Ok(f(&tape, s)?.item())
    };
    let mut report = GradCheck { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, total: 0 };
    let ids: Vec<_> = state.as_ref().iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    for id in ids {
        for i in 0..state.as_ref().get(id).value.numel() {
            let original = state.as_ref().get(id).value.data()[i];
            state.as_mut().get_mut(id).value.data_mut()[i] = original + h;
            let plus = eval(state);
            state.as_mut().get_mut(id).value.data_mut()[i] = original - h;
            let minus = eval(state);
            state.as_mut().get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let analytic = scratch.get(id).grad.data()[i];
            let abs = (analytic - numeric).abs();
            report.total += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if analytic.abs() > ANALYTIC_FLOOR {
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max(abs / analytic.abs().max(numeric.abs()));
            }
        }
    }
    Ok(report)
}
