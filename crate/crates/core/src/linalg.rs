//! Small dense linear-algebra helpers; decompositions are delegated to faer.

use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector};

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

struct Decomposition {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// SVD with singular values nonincreasing; `thin` keeps `min(rows, cols)` vectors on each side.
fn svd(a: &DMatrix<f64>, thin: bool) -> Decomposition {
    let m = to_faer(a);
    let k = a.nrows().min(a.ncols());
    let unpack =
        |u: MatRef<'_, f64>, s: faer::diag::DiagRef<'_, f64>, v: MatRef<'_, f64>| Decomposition {
            u: from_faer(u),
            s: (0..k).map(|i| s[i]).collect(),
            v: from_faer(v),
        };
    let direct = if thin {
        m.thin_svd().ok().map(|d| unpack(d.U(), d.S(), d.V()))
    } else {
        m.svd().ok().map(|d| unpack(d.U(), d.S(), d.V()))
    };
    direct.unwrap_or_else(|| eigen_svd(a))
}

// right vectors from the Gram matrix; only used if the direct SVD fails to converge
fn eigen_svd(a: &DMatrix<f64>) -> Decomposition {
    let (rows, cols) = a.shape();
    let (vals, vecs) = sym_eigen(&(a.transpose() * a));
    let order: Vec<usize> = (0..cols).rev().collect();
    let v = DMatrix::from_fn(cols, cols, |i, j| vecs[(i, order[j])]);
    let s: Vec<f64> = order
        .iter()
        .take(rows.min(cols))
        .map(|&k| vals[k].max(0.0).sqrt())
        .collect();
    let av = a * &v;
    let mut u = DMatrix::zeros(rows, rows);
    for (k, &sk) in s.iter().enumerate() {
        if sk > 0.0 {
            u.set_column(k, &(av.column(k) / sk));
        }
    }
    let u = gram_schmidt(&u, 1e-300);
    Decomposition { u, s, v }
}

fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let s = symmetrize(a);
    let m = to_faer(&s);
    match m.self_adjoint_eigen(Side::Lower) {
        Ok(e) => {
            let vals = (0..s.nrows()).map(|i| e.S()[i]).collect();
            (vals, from_faer(e.U()))
        }
        Err(_) => {
            let n = s.nrows();
            let e = s.symmetric_eigen();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&x, &y| e.eigenvalues[x].total_cmp(&e.eigenvalues[y]));
            let vals = idx.iter().map(|&k| e.eigenvalues[k]).collect();
            let vecs = DMatrix::from_fn(n, n, |i, j| e.eigenvectors[(i, idx[j])]);
            (vals, vecs)
        }
    }
}

fn largest(s: &[f64]) -> f64 {
    s.iter().cloned().fold(0.0_f64, f64::max)
}

/// Orthonormal basis of the null space of `a`, as columns.
///
/// Singular values below `rel_tol * max(1, sigma_max)` count as zero.
pub fn nullspace(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = a.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    let d = svd(a, false);
    let thresh = rel_tol * largest(&d.s).max(1.0);
    let kept: Vec<usize> = (0..cols)
        .filter(|&k| d.s.get(k).is_none_or(|&s| s <= thresh))
        .collect();
    let mut out = DMatrix::zeros(cols, kept.len());
    for (c, &k) in kept.iter().enumerate() {
        out.set_column(c, &d.v.column(k));
    }
    out
}

/// Orthonormal basis of the column space of `a`.
pub fn column_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let d = svd(a, true);
    let thresh = rel_tol * largest(&d.s).max(1.0);
    let kept = d.s.iter().filter(|&&s| s > thresh).count();
    d.u.columns(0, kept).into_owned()
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    match to_faer(a).singular_values() {
        Ok(s) => s,
        Err(_) => svd(a, true).s,
    }
}

/// Numerical rank with relative threshold.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(a);
    let smax = largest(&sv);
    sv.iter()
        .filter(|&&s| s > rel_tol * smax.max(1e-300))
        .count()
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    let smax = largest(&sv);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Minimum-norm least squares `argmin |a x - b|`, returning `x` and the max
/// absolute residual.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let (x, r) = lstsq_mat(a, &bm);
    (x.column(0).into_owned(), r)
}

/// Least squares with several right-hand sides.
pub fn lstsq_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, b.ncols()), max_abs(b));
    }
    let d = svd(a, true);
    let cut = 1e-13 * largest(&d.s).max(1e-300);
    let coeff = d.u.transpose() * b;
    let mut x = DMatrix::zeros(cols, b.ncols());
    for (k, &s) in d.s.iter().enumerate() {
        if s > cut {
            let row = coeff.row(k) / s;
            x += d.v.column(k) * row;
        }
    }
    let r = max_abs(&(a * &x - b));
    (x, r)
}

/// Classical Gram-Schmidt over the columns in index order, dropping columns
/// whose remaining norm is below `drop_tol`. Two passes for stability.
pub fn gram_schmidt(cols: &DMatrix<f64>, drop_tol: f64) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for k in 0..cols.ncols() {
        let mut v = cols.column(k).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let nv = v.norm();
        if nv > drop_tol {
            basis.push(v / nv);
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(cols.nrows(), 0);
    }
    DMatrix::from_columns(&basis)
}

/// Gram-Schmidt with respect to a symmetric positive definite form `g`.
pub fn gram_schmidt_with(cols: &DMatrix<f64>, g: &DMatrix<f64>, drop_tol: f64) -> DMatrix<f64> {
    let ip = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * g * b)[(0, 0)];
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for k in 0..cols.ncols() {
        let mut v = cols.column(k).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let c = ip(b, &v);
                v.axpy(-c, b, 1.0);
            }
        }
        let nv = ip(&v, &v);
        if nv > drop_tol * drop_tol {
            basis.push(v / nv.sqrt());
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(cols.nrows(), 0);
    }
    DMatrix::from_columns(&basis)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    sym_eigen(a).0
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nullspace_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = nullspace(&a, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!(max_abs(&(&a * &n)) < 1e-14);
        assert!(max_abs(&(n.transpose() * &n - DMatrix::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn gram_schmidt_drops_dependent_columns() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let q = gram_schmidt(&a, 1e-9);
        assert_eq!(q.ncols(), 2);
    }

    #[test]
    fn lstsq_recovers_exact_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x = DVector::from_vec(vec![2.0, -1.0]);
        let (s, r) = lstsq(&a, &(&a * &x));
        assert!((s - x).norm() < 1e-12);
        assert!(r < 1e-12);
    }
}
