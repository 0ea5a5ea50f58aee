use serde::Serialize;

use super::model::{backward, build_structure, forward_loss, ModelConfig};
use super::params::Params;
use crate::error::Result;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    /// Largest `|a - b| / max(|a|, |b|, 1e-8)` over the smooth coordinates.
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose `+h` and `-h` evaluations sit on different sides of
    /// an activation kink; central differences are meaningless there.
    pub kinks: usize,
    pub passed: bool,
}

pub(crate) fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the analytic gradient of [`forward_loss`] against central
/// differences, perturbing every trainable scalar by `±h`. The graph
/// structure is built once from `params` and held fixed.
pub fn finite_diff_check(
    scene: &Scene,
    params: &Params,
    cfg: &ModelConfig,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let structure = build_structure(scene, params, cfg)?;
    let (_, tape) = forward_loss(scene, params, cfg, Some(&structure))?;
    let analytic = backward(&tape, params)?;

    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let mut kinks = 0;
    let mut probe = params.clone();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (t, name) in names.iter().enumerate() {
        let len = analytic.tensors()[t].1.len();
        for idx in 0..len {
            let original = tensor_mut(&mut probe, t)[idx];
            tensor_mut(&mut probe, t)[idx] = original + h;
            let (plus, tape_plus) = forward_loss(scene, &probe, cfg, Some(&structure))?;
            tensor_mut(&mut probe, t)[idx] = original - h;
            let (minus, tape_minus) = forward_loss(scene, &probe, cfg, Some(&structure))?;
            tensor_mut(&mut probe, t)[idx] = original;

            if tape_plus.activation_pattern() != tape_minus.activation_pattern() {
                kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.tensors()[t].1.as_slice().expect("standard layout")[idx];
            let err = rel_error(a, numeric);
            checked += 1;
            if err > max_rel_error {
                max_rel_error = err;
                worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(GradCheckReport {
        step: h,
        tolerance: tol,
        max_rel_error,
        worst,
        checked,
        kinks,
        passed: max_rel_error < tol,
    })
}

fn tensor_mut(p: &mut Params, t: usize) -> &mut [f64] {
    p.tensors_mut()
        .swap_remove(t)
        .1
        .as_slice_mut()
        .expect("standard layout")
}
