//! One-sided (Hestenes) Jacobi singular value decomposition.
//!
//! For a tall matrix `A` (`m ≥ n`) column pairs are rotated until every pair
//! is orthogonal to a relative tolerance. The rotated columns are `U·Σ`, the
//! accumulated rotations are `W`, and `A = U·Σ·Wᵀ`. The thin `U` is then
//! completed to a full `m×m` orthogonal basis with Householder reflections.

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

pub const MAX_SWEEPS: usize = 100;
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;

/// `A = u_full[:, ..n] · diag(sigma) · wᵀ` with singular values sorted
/// non-increasing.
pub(crate) struct TallSvd {
    pub u_full: Matrix,
    pub sigma: Vec<f64>,
    pub w: Matrix,
}

pub(crate) fn jacobi_svd_tall(a: &Matrix) -> Result<TallSvd> {
    let (m, n) = (a.rows(), a.cols());
    assert!(m >= n, "tall matrix expected");

    // Column-major working copies: cols[j] is column j.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut w: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let scale = cols.iter().map(|c| dot(c, c)).sum::<f64>();
    // Columns this small carry no direction information worth rotating.
    let negligible = scale * f64::EPSILON * f64::EPSILON;

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        converged = true;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                if gamma.abs() <= OFF_DIAGONAL_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut cols, p, q, c, s);
                rotate_columns(&mut w, p, q, c, s);
            }
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure { sweeps, residual: f64::NAN });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let rank_floor = sigma_max * (m.max(n) as f64) * f64::EPSILON;
    let rank = sigma.iter().take_while(|&&s| s > rank_floor && s > 0.0).count();

    let basis: Vec<Vec<f64>> = order[..rank]
        .iter()
        .map(|&j| cols[j].iter().map(|x| x / norms[j]).collect())
        .collect();
    let u_full = complete_basis(m, &basis);
    let w = Matrix::from_fn(n, n, |i, k| w[order[k]][i]);
    Ok(TallSvd { u_full, sigma, w })
}

fn rotate_columns(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (x, y) = (&mut head[p], &mut tail[0]);
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Extends orthonormal columns `basis` (each of length `m`) to an `m×m`
/// orthogonal matrix whose leading columns are exactly `basis`.
pub(crate) fn complete_basis(m: usize, basis: &[Vec<f64>]) -> Matrix {
    let r = basis.len();
    // Householder QR of the m×r basis; reflectors stored as (v, 2/vᵀv).
    let mut work: Vec<Vec<f64>> = basis.to_vec();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(r);
    for k in 0..r {
        let x = &work[k][k..];
        let norm = dot(x, x).sqrt();
        let mut v = x.to_vec();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vtv = dot(&v, &v);
        let tau = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };
        for col in work.iter_mut().skip(k) {
            let seg = &mut col[k..];
            let f = tau * dot(&v, seg);
            seg.iter_mut().zip(&v).for_each(|(a, b)| *a -= f * b);
        }
        reflectors.push((v, tau));
    }

    // Q = H_0 ⋯ H_{r-1}, accumulated onto the identity (as columns).
    let mut q: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..m).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for (k, (v, tau)) in reflectors.iter().enumerate().rev() {
        for col in q.iter_mut() {
            let seg = &mut col[k..];
            let f = tau * dot(v, seg);
            if f != 0.0 {
                seg.iter_mut().zip(v).for_each(|(a, b)| *a -= f * b);
            }
        }
    }
    Matrix::from_fn(m, m, |i, j| if j < r { basis[j][i] } else { q[j][i] })
}
