//! Dense symmetric eigendecomposition: Householder reduction to tridiagonal
//! form followed by the implicit QL algorithm (after the EISPACK routines
//! tred2/tql2, as popularised by JAMA).

use ndarray::Array2;

use crate::error::{invalid, Error, Result};

const MAX_QL_ITERATIONS: usize = 60;

/// Eigenvalues in ascending order with matching unit eigenvectors as columns.
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

/// Full eigendecomposition of a symmetric matrix. Only the lower triangle
/// is read.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let (n, m) = a.dim();
    if n != m {
        return Err(invalid(format!("eigendecomposition needs a square matrix, got {n}x{m}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: vec![],
            vectors: Array2::zeros((0, 0)),
        });
    }
    // Column-major working copy: v[j * n + k] is element (k, j).
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            v[j * n + k] = if k >= j { a[[k, j]] } else { a[[j, k]] };
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);
    tql2(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(k, j)| v[order[j] * n + k]);
    Ok(SymmetricEigen { values, vectors })
}

#[inline]
fn at(v: &[f64], n: usize, row: usize, col: usize) -> f64 {
    v[col * n + row]
}

#[inline]
fn at_mut(v: &mut [f64], n: usize, row: usize, col: usize) -> &mut f64 {
    &mut v[col * n + row]
}

fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    for j in 0..n {
        d[j] = at(v, n, n - 1, j);
    }
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = at(v, n, i - 1, j);
                *at_mut(v, n, i, j) = 0.0;
                *at_mut(v, n, j, i) = 0.0;
            }
        } else {
            for dk in d[..i].iter_mut() {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);

            for j in 0..i {
                let f = d[j];
                *at_mut(v, n, j, i) = f;
                let col = &v[j * n..j * n + n];
                let mut g = e[j] + col[j] * f;
                for k in (j + 1)..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                let col = &mut v[j * n..j * n + n];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = col[i - 1];
                col[i] = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for i in 0..n - 1 {
        let vii = at(v, n, i, i);
        *at_mut(v, n, n - 1, i) = vii;
        *at_mut(v, n, i, i) = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = at(v, n, k, i + 1) / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += at(v, n, k, i + 1) * at(v, n, k, j);
                }
                let col = &mut v[j * n..j * n + n];
                for k in 0..=i {
                    col[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            *at_mut(v, n, k, i + 1) = 0.0;
        }
    }
    for j in 0..n {
        d[j] = at(v, n, n - 1, j);
        *at_mut(v, n, n - 1, j) = 0.0;
    }
    *at_mut(v, n, n - 1, n - 1) = 1.0;
    e[0] = 0.0;
}

fn tql2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::Numeric(format!(
                        "QL iteration did not converge for eigenvalue {l} of {n} \
                         (off-diagonal {:e}, tolerance {:e})",
                        e[l].abs(),
                        eps * tst1
                    )));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
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
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (left, right) = v.split_at_mut((i + 1) * n);
                    let col_i = &mut left[i * n..];
                    let col_i1 = &mut right[..n];
                    for k in 0..n {
                        let h = col_i1[k];
                        col_i1[k] = s * col_i[k] + c * h;
                        col_i[k] = c * col_i[k] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn check(a: &Array2<f64>) {
        let eig = symmetric_eigen(a).unwrap();
        let n = a.nrows();
        let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        for j in 0..n {
            let x = eig.vectors.column(j);
            let r = a.dot(&x) - &x * eig.values[j];
            assert!(r.dot(&r).sqrt() < 1e-10 * fro);
        }
        let g = eig.vectors.t().dot(&eig.vectors);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-10);
            }
        }
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn small_matrices() {
        check(&array![[2.0]]);
        check(&array![[0.0, 2.0], [2.0, 0.0]]);
        check(&array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
        check(&array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]]);
        check(&Array2::zeros((4, 4)));
        check(&Array2::eye(5));
    }

    #[test]
    fn repeated_eigenvalues() {
        // Two disconnected cliques: eigenvalue 1 twice.
        let mut a = Array2::<f64>::zeros((6, 6));
        for i in 0..6 {
            for j in 0..6 {
                if i != j && (i < 3) == (j < 3) {
                    a[[i, j]] = 0.5;
                }
            }
        }
        check(&a);
    }
}
