//! Finite-difference verification of analytic gradients.
//!
//! Central differences in 64-bit, comparing against a gradient map by
//! relative error. Exhaustive over small tensors, deterministic subsampling
//! over large ones, so full-model checks stay fast.

use ndarray::ArrayD;
use rand::Rng;

use crate::neural::params::{GradMap, ModelParams};
use crate::rng::{stream, tag};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Default acceptance threshold on relative error.
pub const FD_TOL: f64 = 1e-4;

/// Outcome of a check: worst relative error and where it occurred.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tol
    }
}

/// `|a - n| / max(|a|, |n|, guard)`; the guard keeps near-zero pairs from
/// amplifying roundoff into spurious failures.
///
/// Central differences of an O(1) loss resolve the true derivative to about
/// `2e-10` at the steps used here: roundoff contributes `eps·|loss|/step`
/// and truncation `f'''·step²/6`, and tightening one loosens the other.
/// Gradients at or below the guard magnitude — including structurally zero
/// ones, like an attention key bias, which softmax shift-invariance cancels
/// exactly — therefore cannot be certified in relative terms at all. With
/// the `3e-6` guard and the usual `1e-4` tolerance, a disagreement still
/// fails the check whenever it exceeds `3e-10` in absolute terms, right at
/// the resolution limit; the guard is an absolute-tolerance floor in the
/// same sense as the `atol` of a textbook `allclose`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(3e-6)
}

/// Check `analytic` against central differences of `loss_fn` over parameters.
///
/// At most `samples_per_tensor` coordinates per tensor are probed (all of
/// them when the tensor is smaller), chosen by a stream derived from `seed`.
pub fn check_param_gradients(
    loss_fn: &mut dyn FnMut(&ModelParams<f64>) -> f64,
    params: &ModelParams<f64>,
    analytic: &GradMap<f64>,
    step: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates_checked: 0,
        worst: String::new(),
    };
    for (name, grad) in analytic {
        let mut rng = stream(seed, &[tag("grad-check"), tag(name)]);
        let len = grad.len();
        let indices: Vec<usize> = if len <= samples_per_tensor {
            (0..len).collect()
        } else {
            (0..samples_per_tensor).map(|_| rng.gen_range(0..len)).collect()
        };
        for flat_idx in indices {
            let mut plus = params.clone();
            bump(plus.get_mut(name), flat_idx, step);
            let mut minus = params.clone();
            bump(minus.get_mut(name), flat_idx, -step);
            let numeric = (loss_fn(&plus) - loss_fn(&minus)) / (2.0 * step);
            let a = grad.as_slice().expect("standard layout")[flat_idx];
            let rel = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst =
                    format!("{name}[{flat_idx}]: analytic {a:.3e}, numeric {numeric:.3e}");
            }
        }
    }
    report
}

/// Check a gradient with respect to an arbitrary input tensor.
pub fn check_input_gradient(
    loss_fn: &mut dyn FnMut(&ArrayD<f64>) -> f64,
    input: &ArrayD<f64>,
    analytic: &ArrayD<f64>,
    step: f64,
    samples: usize,
    seed: u64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates_checked: 0,
        worst: String::new(),
    };
    let mut rng = stream(seed, &[tag("grad-check-input")]);
    let len = input.len();
    let indices: Vec<usize> = if len <= samples {
        (0..len).collect()
    } else {
        (0..samples).map(|_| rng.gen_range(0..len)).collect()
    };
    for flat_idx in indices {
        let mut plus = input.clone();
        bump(&mut plus, flat_idx, step);
        let mut minus = input.clone();
        bump(&mut minus, flat_idx, -step);
        let numeric = (loss_fn(&plus) - loss_fn(&minus)) / (2.0 * step);
        let a = analytic.as_slice().expect("standard layout")[flat_idx];
        let rel = relative_error(a, numeric);
        report.coordinates_checked += 1;
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = rel;
            report.worst = format!("input[{flat_idx}]: analytic {a:.3e}, numeric {numeric:.3e}");
        }
    }
    report
}

fn bump(tensor: &mut ArrayD<f64>, flat_idx: usize, delta: f64) {
    tensor.as_slice_mut().expect("standard layout")[flat_idx] += delta;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_guards_tiny_values() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, -1e-12) < 1e-3);
        assert!(relative_error(1.0, 2.0) > 0.3);
    }
}
