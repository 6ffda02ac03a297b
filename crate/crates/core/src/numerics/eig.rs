//! Dense symmetric eigendecomposition.
//!
//! [`sym_eig`] reduces the matrix to tridiagonal form with Householder
//! reflections and then runs implicit QL with Wilkinson-style shifts (the
//! classic `tred2`/`tql2` pair). [`sym_eig_jacobi`] is an independent cyclic
//! Jacobi solver: each sweep visits every `(p, q)` pair with `p < q` in row
//! order and applies the plane rotation that zeroes `a[p][q]`.
//!
//! Both solvers are sequential with a fixed operation order, so the same
//! input always produces bit-identical output, and both return eigenvalues
//! ascending with the same sign convention.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Largest tolerated relative asymmetry of the input.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Jacobi sweep budget before reporting non-convergence.
pub const MAX_SWEEPS: usize = 64;

/// QL iteration budget per eigenvalue.
const MAX_QL_ITERS: usize = 60;

/// Default convergence tolerance relative to `‖M‖_F`.
pub const DEFAULT_TOL: f64 = 1e-13;

/// Eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector of `values[j]`.
    pub vectors: Matrix,
}

fn check_input(m: &Matrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::domain(format!(
            "sym_eig needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("sym_eig tolerance must be positive"));
    }
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::domain(format!(
            "sym_eig needs a symmetric matrix (relative asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

/// Eigendecomposition `M = U diag(Λ) Uᵀ` of a symmetric matrix.
///
/// A subdiagonal entry of the tridiagonal form is treated as zero once it is
/// at most `max(tol, ε)` times the running diagonal scale. Eigenvalues come
/// back ascending (ties keep their order of discovery) and each eigenvector
/// is signed so that its largest-magnitude entry is non-negative, with ties
/// going to the lowest index.
pub fn sym_eig(m: &Matrix, tol: f64) -> Result<SymEigen> {
    check_input(m, tol)?;
    let n = m.rows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
        });
    }
    let mut v = Matrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    // QL rotates pairs of columns of V; work on Vᵀ so they are contiguous rows.
    let mut vt = v.transpose();
    tridiagonal_ql(&mut vt, &mut d, &mut e, tol.max(f64::EPSILON))?;
    Ok(finish(&d, &vt))
}

/// Householder reduction to tridiagonal form (`tred2`).
///
/// On return `v` holds the accumulated orthogonal transform, `d` the diagonal
/// and `e[1..]` the subdiagonal.
fn tridiagonalize(v: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal `(d, e)` (`tql2`), rotating the rows of `vt`.
fn tridiagonal_ql(vt: &mut Matrix, d: &mut [f64], e: &mut [f64], rel_tol: f64) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= rel_tol * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERS {
                    return Err(Error::Convergence {
                        iterations: iter - 1,
                        residual: e[l].abs() / tst1.max(f64::MIN_POSITIVE),
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (head, tail) = vt.data_mut().split_at_mut((i + 1) * n);
                    let row_i = &mut head[i * n..];
                    let row_i1 = &mut tail[..n];
                    for (a, b) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= rel_tol * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Sorts eigenpairs ascending and fixes signs. Row `i` of `vt` is the
/// eigenvector of `values[i]`.
fn finish(values: &[f64], vt: &Matrix) -> SymEigen {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));

    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = vt.row(src);
        let mut lead = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[lead].abs() {
                lead = i;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for (r, x) in v.iter().enumerate() {
            vectors.set(r, col, sign * x);
        }
    }
    SymEigen {
        values: sorted,
        vectors,
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Iterates until the off-diagonal Frobenius norm is at most `tol · ‖M‖_F`.
/// Output conventions match [`sym_eig`].
pub fn sym_eig_jacobi(m: &Matrix, tol: f64) -> Result<SymEigen> {
    check_input(m, tol)?;
    let n = m.rows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
        });
    }

    // Work on the symmetrized copy so tiny input asymmetry cannot bias results.
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    // Rows of `vt` are the eigenvectors; rotating rows keeps memory access contiguous.
    let mut vt = Matrix::identity(n);

    let norm = a.frobenius_norm();
    let target = tol * norm;
    // Entries this small are skipped; even all of them together stay below target / 10.
    let skip = 0.1 * target / n as f64;

    let mut converged = off_diagonal_norm(&a) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Convergence {
                iterations: sweeps,
                residual: off_diagonal_norm(&a) / norm,
            });
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= skip {
                    continue;
                }
                rotate(&mut a, &mut vt, p, q);
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&a) <= target;
    }

    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    Ok(finish(&diag, &vt))
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for (j, v) in a.row(i).iter().enumerate() {
            if i != j {
                s += v * v;
            }
        }
    }
    s.sqrt()
}

/// Applies the rotation zeroing `a[p][q]` to `a` (two-sided) and to the rows of `vt`.
fn rotate(a: &mut Matrix, vt: &mut Matrix, p: usize, q: usize) {
    let n = a.rows();
    let apq = a.get(p, q);
    let app = a.get(p, p);
    let aqq = a.get(q, q);

    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.is_finite() {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    } else {
        // |theta| overflowed: the rotation angle is negligible.
        1.0 / (2.0 * theta)
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);

    let data = a.data_mut();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = data[p * n + k];
        let akq = data[q * n + k];
        let new_p = c * akp - s * akq;
        let new_q = s * akp + c * akq;
        data[p * n + k] = new_p;
        data[q * n + k] = new_q;
        data[k * n + p] = new_p;
        data[k * n + q] = new_q;
    }

    let (head, tail) = vt.data_mut().split_at_mut(q * n);
    let row_p = &mut head[p * n..(p + 1) * n];
    let row_q = &mut tail[..n];
    for (vp, vq) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let x = *vp;
        let y = *vq;
        *vp = c * x - s * y;
        *vq = s * x + c * y;
    }
}
