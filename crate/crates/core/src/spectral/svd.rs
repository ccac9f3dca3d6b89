//! One-sided Jacobi SVD for the small square matrices of the rotation step.

use ndarray::Array2;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// `a = u diag(sigma) v^T` with `u` and `v` orthogonal (k x k).
pub struct Svd {
    pub u: Array2<f64>,
    pub sigma: Vec<f64>,
    pub v: Array2<f64>,
}

pub fn jacobi_svd(a: &Array2<f64>) -> Result<Svd> {
    let (m, n) = a.dim();
    if m != n {
        return Err(Error::InvalidArgument(format!("SVD expects a square matrix, got {m}x{n}")));
    }
    let mut w = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let tol = f64::EPSILON * n as f64;
    // Columns this small are roundoff in a rank-deficient input; rotating
    // them against each other never settles.
    let floor = f64::EPSILON * f64::EPSILON * a.iter().map(|x| x * x).sum::<f64>();
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (w[[i, p]], w[[i, q]]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || alpha <= floor || beta <= floor || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[[i, p]], mat[[i, q]]);
                        mat[[i, p]] = c * x - s * y;
                        mat[[i, q]] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD of a {n}x{n} matrix did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let sigma: Vec<f64> = (0..n).map(|j| w.column(j).dot(&w.column(j)).sqrt()).collect();
    let scale = sigma.iter().copied().fold(0.0, f64::max);
    let mut u = Array2::<f64>::zeros((n, n));
    let mut filled = vec![false; n];
    for j in 0..n {
        if sigma[j] > scale * 1e-14 && sigma[j] > 0.0 {
            u.column_mut(j).assign(&(&w.column(j) / sigma[j]));
            filled[j] = true;
        }
    }
    complete_basis(&mut u, &filled);
    Ok(Svd { u, sigma, v })
}

/// Fills the columns not marked `filled` with unit vectors orthogonal to all
/// others (Gram-Schmidt against the standard basis).
fn complete_basis(u: &mut Array2<f64>, filled: &[bool]) {
    let n = u.nrows();
    let mut done: Vec<usize> = (0..n).filter(|&j| filled[j]).collect();
    let mut candidate = 0;
    for j in 0..n {
        if filled[j] {
            continue;
        }
        while candidate < n {
            let mut x = ndarray::Array1::<f64>::zeros(n);
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &c in &done {
                    let proj = u.column(c).dot(&x);
                    x.scaled_add(-proj, &u.column(c));
                }
            }
            let norm = x.dot(&x).sqrt();
            if norm > 1e-8 {
                u.column_mut(j).assign(&(x / norm));
                done.push(j);
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn check(a: &Array2<f64>) {
        let s = jacobi_svd(a).unwrap();
        let rec = s.u.dot(&Array2::from_diag(&ndarray::Array1::from(s.sigma.clone()))).dot(&s.v.t());
        for (x, y) in rec.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let n = a.nrows();
        for q in [&s.u, &s.v] {
            let g = q.t().dot(q);
            for i in 0..n {
                for j in 0..n {
                    assert!((g[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn svd_cases() {
        check(&array![[3.0, 1.0], [1.0, 2.0]]);
        check(&array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 10.0]]);
        // rank deficient: zero row and column
        check(&array![[1.0, 0.0, 2.0], [0.0, 0.0, 0.0], [3.0, 0.0, 1.0]]);
        check(&Array2::zeros((3, 3)));
    }

    #[test]
    fn low_rank_inputs_converge() {
        let mut r = crate::rng::stream(5, 0);
        for rank in [1, 2, 4, 9] {
            let b = Array2::from_shape_simple_fn((16, rank), || crate::rng::normal(&mut r));
            let c = Array2::from_shape_simple_fn((rank, 16), || crate::rng::normal(&mut r));
            check(&b.dot(&c));
        }
    }
}
