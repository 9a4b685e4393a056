//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Singular values of `m` in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Count of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(sv: &[f64], rel_tol: f64) -> usize {
    let Some(&smax) = sv.first() else { return 0 };
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Moore-Penrose pseudo-inverse with relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

/// Smallest eigenvalue of the symmetric part of `m` (`+inf` for an empty matrix).
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

/// Stacks `top` over `bottom`; both must have equal column counts.
pub fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &v| a.max(v.abs()))
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], ncols_if_empty: usize) -> Option<DMatrix<f64>> {
    if rows.is_empty() {
        return Some(DMatrix::zeros(0, ncols_if_empty));
    }
    let c = rows[0].len();
    if rows.iter().any(|r| r.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `z' M z` evaluated with compensated summation, so that forms which vanish
/// analytically do not pick up cancellation error of the size of their terms.
pub fn quadratic_form(m: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    assert_eq!(m.shape(), (z.len(), z.len()), "quadratic form shape");
    let (mut hi, mut lo) = (0.0, 0.0);
    for i in 0..z.len() {
        for j in 0..z.len() {
            let (p, pe) = two_prod(z[i], z[j]);
            let (q, qe) = two_prod(m[(i, j)], p);
            let (s, se) = two_sum(hi, q);
            hi = s;
            lo += se + qe + m[(i, j)] * pe;
        }
    }
    hi + lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_full_row_rank_is_right_inverse() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 4.0]);
        let p = pinv(&m, 1e-12);
        let id = &m * &p;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn rank_counts_relative_threshold() {
        assert_eq!(numerical_rank(&[1.0, 1e-3, 1e-10], 1e-8), 2);
        assert_eq!(numerical_rank(&[], 1e-8), 0);
        assert_eq!(numerical_rank(&[0.0, 0.0], 1e-8), 0);
    }
}
