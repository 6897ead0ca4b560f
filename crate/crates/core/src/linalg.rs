//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// `|det| > INVERTIBLE_DET` (together with [`INVERTIBLE_COND`]) counts as invertible.
pub const INVERTIBLE_DET: f64 = 1e-10;
pub const INVERTIBLE_COND: f64 = 1e12;

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Ratio of largest to smallest singular value; infinite for a zero singular value.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn is_invertible(m: &DMatrix<f64>) -> bool {
    m.determinant().abs() > INVERTIBLE_DET && condition_number(m) < INVERTIBLE_COND
}

/// Moore-Penrose pseudoinverse with singular values below `rel_cutoff * sigma_max` treated as zero.
/// Returns the pseudoinverse together with the numerical rank.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, usize) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rel_cutoff * sigma_max;
    let mut pinv = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            pinv += (vk * uk.transpose()) / s;
        }
    }
    (pinv, rank)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(sym))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Clips eigenvalues of a symmetric matrix from below at `floor`.
pub fn clip_eigenvalues(sym: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(sym));
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

/// Symmetric square root factor `L` with `L L^T = sym`, valid for PSD input
/// (negative eigenvalues are treated as zero).
pub fn psd_factor(sym: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(symmetrize(sym));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Largest modulus among the (possibly complex) eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    match m.clone().try_schur(f64::EPSILON, SCHUR_MAX_ITER) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => gelfand_radius(m),
    }
}

const SCHUR_MAX_ITER: usize = 10_000;

/// `||M^k||^(1/k)` for `k = 2^40`, by normalized repeated squaring.
fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let mut p = m.clone();
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..40 {
        let norm = p.norm();
        if norm == 0.0 {
            return 0.0;
        }
        p /= norm;
        log_scale += norm.ln() / k;
        p = &p * &p;
        k *= 2.0;
    }
    (log_scale + p.norm().ln() / k).exp()
}

pub fn diag_selector(d: usize, indices: &[usize]) -> DMatrix<f64> {
    let mut diag = DVector::zeros(d);
    for &i in indices {
        diag[i] = 1.0;
    }
    DMatrix::from_diagonal(&diag)
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_inverse_of_rank_deficient_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, rank) = pseudo_inverse(&m, 1e-10);
        assert_eq!(rank, 1);
        let expected = DMatrix::from_element(2, 2, 0.25);
        assert!(max_abs_diff(&p, &expected) < 1e-14);
    }

    #[test]
    fn clip_restores_psd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let c = clip_eigenvalues(&m, 1e-6);
        assert!(min_eigenvalue(&c) >= 1e-6 - 1e-12);
    }

    #[test]
    fn spectral_radius_of_two_cycle() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gelfand_fallback_matches_eigenvalues() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, -0.3, 0.8, 0.0, 0.2, 0.1, -0.7, 0.0]);
        assert!((gelfand_radius(&m) - spectral_radius(&m)).abs() < 1e-9);
        let nilpotent = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
        assert_eq!(gelfand_radius(&nilpotent), 0.0);
    }
}
