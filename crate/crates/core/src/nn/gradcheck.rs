//! Central finite-difference checks of tape gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

/// Denominator floor for the relative error, so that entries whose true
/// gradient is ~0 are judged on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape gradient of `loss` against central differences for up
/// to `per_param` evenly spaced entries of each parameter in `ids`.
pub fn check<F>(store: &mut ParamStore, ids: &[ParamId], per_param: usize, eps: f64, loss: F) -> GradCheck
where
    F: Fn(&mut Graph<'_>) -> Var,
{
    let grads = {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.backward(l)
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.scalar(l)
    };
    let mut report = GradCheck { checked: 0, max_rel_err: 0.0, worst: None };
    for &id in ids {
        let n = store.value(id).len();
        let stride = (n / per_param.max(1)).max(1);
        for flat in (0..n).step_by(stride).take(per_param) {
            let original = store.value(id).as_slice().expect("standard layout")[flat];
            store.value_mut(id).as_slice_mut().unwrap()[flat] = original + eps;
            let up = eval(store);
            store.value_mut(id).as_slice_mut().unwrap()[flat] = original - eps;
            let down = eval(store);
            store.value_mut(id).as_slice_mut().unwrap()[flat] = original;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[flat]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.name(id).to_owned(), flat, analytic, numeric));
                }
            }
        }
    }
    report
}
