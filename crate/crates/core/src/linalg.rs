//! Small dense linear-algebra helpers shared by the form and jet code.

use nalgebra::DMatrix;

/// All strictly increasing `n`-subsets of `0..m`, in lexicographic order.
pub fn combinations(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        out.push(idx.clone());
        // advance the rightmost index that still has room
        let mut k = n;
        while k > 0 && idx[k - 1] == m - n + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return out;
        }
        idx[k - 1] += 1;
        for j in k..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Determinant of a square matrix: closed forms up to 3×3, LU above.
pub fn det(a: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.nrows(), a.ncols());
    match a.nrows() {
        0 => 1.0,
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        3 => {
            a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
        }
        _ => a.clone().lu().determinant(),
    }
}

/// The square submatrix of `a` made of the given (0-based) rows.
pub fn row_minor(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

/// Determinant of the submatrix of `a` selected by `rows`.
pub fn minor_det(a: &DMatrix<f64>, rows: &[usize]) -> f64 {
    det(&row_minor(a, rows))
}

/// Cofactor matrix `C` of a square matrix, `C[(i, j)] = (-1)^{i+j} det(a without row i, col j)`.
pub fn cofactors(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(n, n, |i, j| {
        let sub = a.clone().remove_row(i).remove_column(j);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * det(&sub)
    })
}

/// Singular values, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Modified Gram–Schmidt (two passes) on the columns of `a`.
/// Returns `None` when the columns are numerically dependent.
pub fn orthonormalize(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut q = a.clone();
    for j in 0..q.ncols() {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let qk = q.column(k).clone_owned();
                let mut col = q.column_mut(j);
                col.axpy(-proj, &qk, 1.0);
            }
        }
        let norm = q.column(j).norm();
        if !(norm > 1e-14) {
            return None;
        }
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    Some(q)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on `P_q`.
pub fn gauss_legendre(q: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.reverse();
    out
}
