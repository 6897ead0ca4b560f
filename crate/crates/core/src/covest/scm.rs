use nalgebra::DMatrix;

use super::{subset_moments, CovEstimate, EstimateMeta, Method};
use crate::error::{Error, Result};

/// Column means and the unbiased `1/(n-1)` sample covariance.
pub fn scm(data: &DMatrix<f64>) -> Result<CovEstimate> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "sample covariance needs at least 2 observations, got {n}"
        )));
    }
    let rows: Vec<usize> = (0..n).collect();
    let (mean, cov) = subset_moments(data, &rows);
    Ok(CovEstimate {
        mean,
        cov,
        method: Method::Scm,
        meta: EstimateMeta::Scm,
    })
}
