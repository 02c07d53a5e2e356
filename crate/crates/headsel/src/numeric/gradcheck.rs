use super::{ParamGrads, ParamStore};

/// One element whose analytic and numeric derivatives disagree beyond
/// tolerance.
#[derive(Clone, Debug)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_diff: f64,
    pub max_rel_err: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare analytic gradients against central finite differences of a loss
/// function, element by element over every parameter in the store.
///
/// `f` must recompute the loss from scratch on each call (it only sees the
/// perturbed parameter values). The check is independent of the backward
/// pass by construction: it exercises nothing but repeated forward
/// evaluations. An element passes when
/// `|analytic - numeric| <= abs_tol + rel_tol * max(|analytic|, |numeric|)`.
/// Runs at f64; `h` around 1e-4 balances truncation and rounding error.
pub fn check_gradients<F>(
    store: &mut ParamStore<f64>,
    analytic: &ParamGrads<f64>,
    mut f: F,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).at(k);
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = f(store);
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = f(store);
            store.get_mut(id).data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).at(k);
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            report.checked += 1;
            report.max_abs_diff = report.max_abs_diff.max(diff);
            if scale > 0.0 {
                report.max_rel_err = report.max_rel_err.max(diff / scale);
            }
            if diff > abs_tol + rel_tol * scale {
                report.failures.push(GradCheckFailure {
                    param: store.name(id).to_string(),
                    index: k,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    report
}
