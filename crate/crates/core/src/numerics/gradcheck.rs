//! Central finite differences, used as the independent oracle for every
//! analytic backward pass in the crate.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const MIN_EPS: f64 = 1e-7;
pub const MAX_EPS: f64 = 1e-3;

/// Magnitude below which relative error is measured against this floor
/// instead of the gradient itself.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Full central-difference gradient of `f` at `p`.
pub fn finite_diff_grad<F>(f: F, p: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let all: Vec<usize> = (0..p.len()).collect();
    let vals = finite_diff_at(f, p, &all, eps)?;
    Tensor::new(p.shape().to_vec(), vals)
}

/// Central differences at a subset of flat coordinates of `p`.
pub fn finite_diff_at<F>(mut f: F, p: &Tensor, coords: &[usize], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(MIN_EPS..=MAX_EPS).contains(&eps) {
        return Err(Error::Usage(format!(
            "finite-difference eps {eps} outside [{MIN_EPS}, {MAX_EPS}]"
        )));
    }
    let mut probe = p.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective evaluated to {plus} / {minus} at coordinate {i}"
            )));
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}
