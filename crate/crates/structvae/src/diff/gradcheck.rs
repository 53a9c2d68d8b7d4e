//! Central finite-difference gradient checking.
//!
//! The checker only evaluates loss values, never the backward pass, so it
//! stays an independent oracle for whatever `Tape::backward` produces.
//! Loss closures must be deterministic: any noise has to come from a
//! stream derived from fixed seeds, not from the perturbed parameters.

use super::params::{Gradients, ParamId, ParameterStore};
use crate::error::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of [`compare_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the max occurred.
    pub worst: Option<(String, usize)>,
    pub components_checked: usize,
}

/// Central finite-difference gradient of `loss` with respect to one
/// parameter, step `h` per component.
pub fn finite_diff_param<F>(
    store: &mut ParameterStore,
    id: ParamId,
    h: f64,
    mut loss: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let n = store.get(id).len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let orig = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = orig + h;
        let up = loss(store)?;
        store.get_mut(id).data_mut()[i] = orig - h;
        let down = loss(store)?;
        store.get_mut(id).data_mut()[i] = orig;
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Compares analytic gradients against central finite differences over
/// every parameter in the store.
///
/// Relative error per component is `|fd - an| / max(|fd|, |an|, 0.01)`;
/// the floor keeps near-zero gradients from inflating the ratio.
pub fn compare_gradients<F>(
    store: &mut ParameterStore,
    analytic: &Gradients,
    h: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    let ids: Vec<ParamId> = store.iter().map(|(id, _, _)| id).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        components_checked: 0,
    };
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        let an = analytic.get_or_zeros(id, &shape);
        let fd = finite_diff_param(store, id, h, &mut loss)?;
        for (i, (&a, &f)) in an.data().iter().zip(&fd).enumerate() {
            let rel = (a - f).abs() / a.abs().max(f.abs()).max(0.01);
            report.components_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
