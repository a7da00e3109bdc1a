//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::params::{ParamGrads, ParamStore};

/// Differences below this magnitude are compared absolutely rather than
/// relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the gradients returned by `f` against
/// `(f(p+eps) − f(p−eps)) / (2·eps)` for every scalar parameter.
///
/// `f` returns the loss and its analytic gradients at the store's current
/// values. Parameter values are restored before returning.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> (f64, ParamGrads),
{
    let selection: Vec<Vec<usize>> = store.iter().map(|p| (0..p.len()).collect()).collect();
    check_entries(store, eps, f, selection)
}

/// Like [`grad_check`] but only probes up to `per_tensor` random entries of
/// each parameter tensor.
pub fn grad_check_sampled<F, R>(
    store: &mut ParamStore,
    eps: f64,
    per_tensor: usize,
    rng: &mut R,
    f: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> (f64, ParamGrads),
    R: Rng + ?Sized,
{
    let selection: Vec<Vec<usize>> = store
        .iter()
        .map(|p| {
            if p.len() <= per_tensor {
                (0..p.len()).collect()
            } else {
                let mut idx = sample(rng, p.len(), per_tensor).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect();
    check_entries(store, eps, f, selection)
}

fn check_entries<F>(
    store: &mut ParamStore,
    eps: f64,
    mut f: F,
    selection: Vec<Vec<usize>>,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> (f64, ParamGrads),
{
    assert!(eps > 0.0 && eps <= 1e-2, "eps must lie in (0, 1e-2]");
    let (_, grads) = f(store);
    let ids: Vec<_> = (0..store.len()).map(super::ParamId).collect();
    let mut report = GradCheckReport::default();
    for (id, entries) in ids.into_iter().zip(selection) {
        let analytic = grads.get(id).cloned();
        for idx in entries {
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + eps;
            let (plus, _) = f(store);
            store.get_mut(id).value.data_mut()[idx] = orig - eps;
            let (minus, _) = f(store);
            store.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[idx]);
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if report.worst_param.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_index = idx;
            }
        }
    }
    report
}
