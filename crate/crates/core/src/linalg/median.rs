use super::{Matrix, Vector};
use crate::error::{Result, ToastError};

/// Default Weiszfeld stopping tolerance on the update norm.
pub const GM_TOL: f64 = 1e-6;
/// Default Weiszfeld iteration cap.
pub const GM_MAX_ITER: usize = 200;

/// Points closer than this to the current iterate are skipped for one step.
const COINCIDENT: f64 = 1e-12;

/// Weiszfeld estimate of the point minimizing the summed Euclidean distance
/// to the rows of `points`, started from the centroid.
pub fn geometric_median(points: &Matrix, tol: f64, max_iter: usize) -> Result<Vector> {
    let m = points.rows();
    let k = points.cols();
    if m == 0 {
        return Err(ToastError::NoPoints);
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(ToastError::InvalidArgument(
            "geometric median needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    if !points.is_finite() {
        return Err(ToastError::NonFinite("geometric median input".into()));
    }

    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| points.row(i).iter().map(|&v| v as f64).collect())
        .collect();

    let mut y = vec![0.0f64; k];
    for r in &rows {
        for (yj, v) in y.iter_mut().zip(r) {
            *yj += v;
        }
    }
    for yj in y.iter_mut() {
        *yj /= m as f64;
    }

    let mut num = vec![0.0f64; k];
    for _ in 0..max_iter {
        num.iter_mut().for_each(|v| *v = 0.0);
        let mut den = 0.0f64;
        for r in &rows {
            let d = dist(r, &y);
            if d < COINCIDENT {
                continue;
            }
            let w = 1.0 / d;
            den += w;
            for (nj, v) in num.iter_mut().zip(r) {
                *nj += w * v;
            }
        }
        if den == 0.0 {
            // every point coincides with the iterate
            break;
        }
        let mut step = 0.0f64;
        for (yj, nj) in y.iter_mut().zip(&num) {
            let next = nj / den;
            step += (next - *yj) * (next - *yj);
            *yj = next;
        }
        if step.sqrt() < tol {
            break;
        }
    }
    Ok(Vector::from_raw(y.into_iter().map(|v| v as f32).collect()))
}

/// Σ‖pᵢ − y‖₂, evaluated in f64.
pub fn median_objective(points: &Matrix, y: &[f32]) -> f64 {
    let y: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    (0..points.rows())
        .map(|i| {
            let r: Vec<f64> = points.row(i).iter().map(|&v| v as f64).collect();
            dist(&r, &y)
        })
        .sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s.sqrt()
}
