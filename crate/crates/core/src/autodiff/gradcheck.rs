use rand::Rng;

use super::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − central| / max(1, |central|) over the checked coordinates.
    pub max_relative_error: f64,
    /// `(tensor index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients against central differences.
///
/// `f` evaluates the scalar objective at the given parameter values.
/// `coords_per_tensor` coordinates are sampled (without replacement) from
/// each tensor; tensors smaller than that are checked exhaustively.
pub fn grad_check<F, R>(
    f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    coords_per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&[Tensor]) -> Result<f64, TensorError>,
    R: Rng + ?Sized,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    if params.len() != analytic.len() {
        return Err(TensorError::ShapeMismatch {
            op: "grad_check",
            left: vec![params.len()],
            right: vec![analytic.len()],
        });
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for t in 0..params.len() {
        if params[t].shape() != analytic[t].shape() {
            return Err(TensorError::ShapeMismatch {
                op: "grad_check",
                left: params[t].shape().to_vec(),
                right: analytic[t].shape().to_vec(),
            });
        }
        let n = params[t].len();
        let coords: Vec<usize> = if n <= coords_per_tensor {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, coords_per_tensor).into_vec()
        };
        for c in coords {
            let original = work[t].data()[c];
            work[t].data_mut()[c] = original + h;
            let plus = f(&work)?;
            work[t].data_mut()[c] = original - h;
            let minus = f(&work)?;
            work[t].data_mut()[c] = original;
            let a = analytic[t].data()[c];
            if !(plus.is_finite() && minus.is_finite() && a.is_finite()) {
                return Err(TensorError::NonFinite(format!(
                    "tensor {t} coordinate {c}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(rel);
                if rel >= report.max_relative_error {
                    report.worst = Some((t, c));
                }
            }
        }
    }
    Ok(report)
}
