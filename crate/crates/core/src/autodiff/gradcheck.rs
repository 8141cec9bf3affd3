//! Central finite differences: the independent oracle every backward
//! formula is checked against.
//!
//! Relative error here means `max_i |a_i - n_i| / M` with
//! `M = max(max_i |a_i|, max_i |n_i|, 1e-6)`, i.e. elementwise deviation
//! measured against the largest gradient magnitude, so near-zero partials
//! do not blow up the ratio.

use crate::error::Result;
use crate::registry::ParamRegistry;

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let fp = f(&point);
        point[i] = orig - h;
        let fm = f(&point);
        point[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Central-difference gradients of a registry-valued loss for every
/// trainable parameter, element by element.
pub fn finite_diff_param_grads<F>(
    registry: &mut ParamRegistry<f64>,
    h: f64,
    mut loss_fn: F,
) -> Result<Vec<(String, Vec<f64>)>>
where
    F: FnMut(&ParamRegistry<f64>) -> Result<f64>,
{
    let names = registry.trainable_names();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let numel = registry.get(&name)?.numel();
        let mut grad = vec![0.0; numel];
        for i in 0..numel {
            let orig = registry.get(&name)?.data()[i];
            registry.get_mut(&name)?.data_mut()[i] = orig + h;
            let fp = loss_fn(registry)?;
            registry.get_mut(&name)?.data_mut()[i] = orig - h;
            let fm = loss_fn(registry)?;
            registry.get_mut(&name)?.data_mut()[i] = orig;
            grad[i] = (fp - fm) / (2.0 * h);
        }
        out.push((name, grad));
    }
    Ok(out)
}

/// Scale-aware relative error between an analytic and a numeric gradient.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-6_f64, |m, &v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (&a, &n)| m.max((a - n).abs() / scale))
}
