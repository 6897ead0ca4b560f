use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::frobenius;

/// Relative Frobenius error `||estimate - truth||_F / ||truth||_F`.
pub fn rfe(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let scale = frobenius(truth);
    if scale == 0.0 {
        return Err(Error::ZeroTruth);
    }
    Ok(frobenius(&(estimate - truth)) / scale)
}

/// Median of the values; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Unscaled median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}
