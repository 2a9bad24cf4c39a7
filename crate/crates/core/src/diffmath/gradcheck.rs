use super::{DiffError, NumArray};

/// Central-difference estimate of df/dθ for every coordinate of `param`.
pub fn finite_diff_grad<F>(mut f: F, param: &NumArray, h: f64) -> Result<NumArray, DiffError>
where
    F: FnMut(&NumArray) -> Result<f64, DiffError>,
{
    if h <= 0.0 {
        return Err(DiffError::Domain { op: "finite_diff_grad", detail: format!("step {h} must be positive") });
    }
    let mut probe = param.clone();
    let mut out = NumArray::zeros(param.shape());
    for i in 0..param.len() {
        let x = param.data()[i];
        probe.data_mut()[i] = x + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = x - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = x;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// `|a−b| / max(|a|, |b|, floor)`, the comparison used by gradient checks.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest elementwise [`relative_error`] between two arrays.
pub fn max_relative_error(a: &NumArray, b: &NumArray, floor: f64) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| relative_error(x, y, floor)).fold(0.0, f64::max)
}
