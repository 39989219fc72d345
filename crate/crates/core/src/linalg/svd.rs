//! One-sided (Hestenes) Jacobi SVD in f64, plus the minimum-norm least-squares
//! solve built on it.

use super::{Matrix, Vector};
use crate::error::{Result, ToastError};

const MAX_SWEEPS: usize = 80;

struct Decomposition {
    /// Singular values, non-increasing.
    sigma: Vec<f64>,
    /// Left singular vectors as columns of length `m` (only when requested).
    u: Vec<Vec<f64>>,
    /// Right singular vectors as columns of length `n` (only when requested).
    v: Vec<Vec<f64>>,
}

/// `a` is given column-major as `n` columns of length `m`, with `m >= n`.
fn jacobi(mut cols: Vec<Vec<f64>>, want_vectors: bool) -> Decomposition {
    let n = cols.len();
    let mut v: Vec<Vec<f64>> = if want_vectors {
        (0..n)
            .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        Vec::new()
    };

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        a += x * x;
                        b += y * y;
                        g += x * y;
                    }
                    (a, b, g)
                };
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                if want_vectors {
                    rotate(&mut v, p, q, c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let (u, v) = if want_vectors {
        let u = order
            .iter()
            .map(|&j| {
                let s = norms[j];
                if s > 0.0 {
                    cols[j].iter().map(|x| x / s).collect()
                } else {
                    vec![0.0; cols[j].len()]
                }
            })
            .collect();
        let v = order.iter().map(|&j| v[j].clone()).collect();
        (u, v)
    } else {
        (Vec::new(), Vec::new())
    };
    Decomposition { sigma, u, v }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Singular values of an `m × n` f64 matrix (row-major), non-increasing.
pub(crate) fn singular_values_f64(x: &Matrix) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(ToastError::NonFinite("singular value input".into()));
    }
    let (m, n) = x.dims();
    if m == 0 || n == 0 {
        return Err(ToastError::shape(None, "svd input", format!("{m}x{n}")));
    }
    // Orthogonalize whichever side is shorter.
    let cols: Vec<Vec<f64>> = if m >= n {
        (0..n)
            .map(|j| (0..m).map(|i| x.get(i, j) as f64).collect())
            .collect()
    } else {
        (0..m)
            .map(|i| x.row(i).iter().map(|&v| v as f64).collect())
            .collect()
    };
    Ok(jacobi(cols, false).sigma)
}

/// Singular values of `x` in non-increasing order, `min(rows, cols)` of them.
pub fn singular_values(x: &Matrix) -> Result<Vector> {
    let s = singular_values_f64(x)?;
    Ok(Vector::from_raw(s.into_iter().map(|v| v as f32).collect()))
}

/// Minimum-norm least squares on an `m × k` row-major f64 design.
pub(crate) fn lstsq_f64(a: &[f64], m: usize, k: usize, y: &[f64]) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(ToastError::shape(None, "least squares design", "no columns"));
    }
    if m < k {
        return Err(ToastError::Underdetermined { rows: m, cols: k });
    }
    if a.len() != m * k || y.len() != m {
        return Err(ToastError::shape(
            None,
            "least squares",
            format!("design {} values for {m}x{k}, target {}", a.len(), y.len()),
        ));
    }
    if a.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ToastError::NonFinite("least squares input".into()));
    }
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..m).map(|i| a[i * k + j]).collect())
        .collect();
    let dec = jacobi(cols, true);
    let smax = dec.sigma.first().copied().unwrap_or(0.0);
    let cutoff = smax * (m.max(k) as f64) * f64::EPSILON;

    let mut beta = vec![0.0f64; k];
    for ((s, u), v) in dec.sigma.iter().zip(&dec.u).zip(&dec.v) {
        if *s <= cutoff {
            continue;
        }
        let mut uy = 0.0;
        for (ui, yi) in u.iter().zip(y) {
            uy += ui * yi;
        }
        let coef = uy / s;
        for (bj, vj) in beta.iter_mut().zip(v) {
            *bj += coef * vj;
        }
    }
    Ok(beta)
}

/// β minimizing ‖Aβ − y‖₂; rank deficiency resolves to the minimum-norm solution.
pub fn least_squares(a: &Matrix, y: &Vector) -> Result<Vector> {
    let (m, k) = a.dims();
    if y.len() != m {
        return Err(ToastError::shape(
            None,
            "least squares target",
            format!("length {} for {m} rows", y.len()),
        ));
    }
    let af: Vec<f64> = a.as_slice().iter().map(|&v| v as f64).collect();
    let yf: Vec<f64> = y.as_slice().iter().map(|&v| v as f64).collect();
    let beta = lstsq_f64(&af, m, k, &yf)?;
    Ok(Vector::from_raw(beta.into_iter().map(|v| v as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_spectrum() {
        let x = Matrix::new(3, 3, vec![3., 0., 0., 0., 1., 0., 0., 0., 2.]).unwrap();
        let s = singular_values(&x).unwrap();
        assert_eq!(s.as_slice(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn rank_one_spectrum() {
        // u = (2, 0), v = (0, 3, 0): ‖u‖·‖v‖ = 6
        let u = [2.0f32, 0.0];
        let v = [0.0f32, 3.0, 0.0];
        let x = Matrix::from_fn(2, 3, |i, j| u[i] * v[j]);
        let s = singular_values(&x).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.get(0) - 6.0).abs() < 1e-6);
        assert!(s.get(1).abs() < 1e-6);
    }

    #[test]
    fn identity_design() {
        let a = Matrix::identity(4);
        let y = Vector::new(vec![1., 2., 3., 4.]).unwrap();
        let b = least_squares(&a, &y).unwrap();
        for (got, want) in b.as_slice().iter().zip([1., 2., 3., 4.]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn underdetermined() {
        let a = Matrix::zeros(2, 3);
        let err = least_squares(&a, &Vector::zeros(2)).unwrap_err();
        assert!(err.to_string().starts_with("underdetermined"));
    }

    #[test]
    fn duplicate_columns_give_minimum_norm() {
        let c = [1.0f32, 2.0, -1.0, 0.5];
        let a = Matrix::from_fn(4, 2, |i, _| c[i]);
        let y = Vector::new(c.to_vec()).unwrap();
        let b = least_squares(&a, &y).unwrap();
        assert!((b.get(0) - 0.5).abs() < 1e-6, "{:?}", b);
        assert!((b.get(1) - 0.5).abs() < 1e-6, "{:?}", b);
    }
}
