//! Central-difference validation of manual backward passes.
//!
//! The loss closure must be deterministic in the parameter values: any
//! sampling inside it has to be frozen (replayed choices), otherwise the
//! finite differences measure noise instead of gradients.

use rand::Rng;

use crate::params::{GradBuffer, ParamId, ParameterStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinate responsible for the max error, for debugging.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare analytic gradients against (f(x+eps)-f(x-eps))/(2 eps) at the
/// given coordinates. The relative error denominator is floored at 1 so that
/// near-zero gradient pairs are compared absolutely.
pub fn grad_check<S, F>(
    store: &mut ParameterStore<S>,
    loss_fn: F,
    analytic: &GradBuffer<S>,
    eps: f64,
    coords: &[(ParamId, usize)],
) -> GradCheckReport
where
    S: Scalar,
    F: Fn(&ParameterStore<S>) -> S,
{
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &(pid, idx) in coords {
        let orig = store.value(pid).data()[idx];
        store.value_mut(pid).data_mut()[idx] = S::from_f64_lossy(orig.to_f64_lossy() + eps);
        let plus = loss_fn(store).to_f64_lossy();
        store.value_mut(pid).data_mut()[idx] = S::from_f64_lossy(orig.to_f64_lossy() - eps);
        let minus = loss_fn(store).to_f64_lossy();
        store.value_mut(pid).data_mut()[idx] = orig;

        assert!(
            plus.is_finite() && minus.is_finite(),
            "non-finite loss during grad check at ({}, {idx})",
            store.param(pid).name
        );
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic_g = analytic.coord(pid, idx).to_f64_lossy();
        let rel = (analytic_g - numeric).abs() / analytic_g.abs().max(numeric.abs()).max(1.0);
        if rel > max_rel {
            max_rel = rel;
            worst = Some((store.param(pid).name.clone(), idx, analytic_g, numeric));
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        coords_checked: coords.len(),
        worst,
    }
}

/// Sample coordinates so that every parameter tensor is covered and the
/// total count reaches at least `min_total`.
pub fn sample_coords<S: Scalar>(
    store: &ParameterStore<S>,
    min_total: usize,
    rng: &mut impl Rng,
) -> Vec<(ParamId, usize)> {
    let n_params = store.len().max(1);
    let per_param = min_total.div_ceil(n_params).max(1);
    let mut coords = Vec::new();
    for (pid, p) in store.iter() {
        let len = p.value.len();
        if len == 0 {
            continue;
        }
        for _ in 0..per_param.min(len) {
            coords.push((pid, rng.gen_range(0..len)));
        }
    }
    // Top up with uniform draws if rounding left us short.
    while coords.len() < min_total {
        let pid = crate::params::ParamId(rng.gen_range(0..store.len()) as u32);
        let len = store.param(pid).value.len();
        if len == 0 {
            continue;
        }
        coords.push((pid, rng.gen_range(0..len)));
    }
    coords
}
