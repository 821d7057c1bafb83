//! Symmetric eigendecomposition by Householder tridiagonalisation followed by
//! implicit QL iterations (the EISPACK `tred2`/`tql2` pair).

use crate::error::{Error, Result};

use super::matrix::{DenseMatrix, DenseVector};

/// Maximum QL sweeps spent on a single eigenvalue before giving up.
const MAX_QL_ITERATIONS: usize = 60;

/// Eigensystem of a symmetric matrix, eigenvalues in descending order.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DenseVector,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: DenseMatrix,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    pub fn max_value(&self) -> f64 {
        self.values.as_slice()[0]
    }

    pub fn min_value(&self) -> f64 {
        *self.values.as_slice().last().expect("nonempty")
    }

    /// Coordinates of `x` in the eigenbasis, `V^T x`.
    pub fn to_eigenbasis(&self, x: &DenseVector) -> DenseVector {
        self.vectors
            .tr_matvec(x)
            .expect("dimension checked by caller")
    }

    /// Maps eigen-coordinates back, `V c`.
    pub fn from_eigenbasis(&self, c: &DenseVector) -> DenseVector {
        self.vectors.matvec(c).expect("dimension checked by caller")
    }

    /// `f(M) x = V diag(f(lambda)) V^T x`.
    pub fn apply_fn(&self, x: &DenseVector, f: impl Fn(f64) -> f64) -> DenseVector {
        let mut c = self.to_eigenbasis(x);
        for (ci, &l) in c.as_mut_slice().iter_mut().zip(self.values.as_slice()) {
            *ci *= f(l);
        }
        self.from_eigenbasis(&c)
    }

    /// Dense `V diag(f(lambda)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.dim();
        let mut out = DenseMatrix::zeros(n, n);
        let w: Vec<f64> = self.values.as_slice().iter().map(|&l| f(l)).collect();
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    s += self.vectors.get(i, k) * wk * self.vectors.get(j, k);
                }
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(|l| l)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Only the lower triangle is read. Eigenvalues are returned in descending order.
pub fn sym_eigen(m: &DenseMatrix) -> Result<SymEigen> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "sym_eigen needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    if !m.all_finite() {
        return Err(Error::NonFinite("sym_eigen input".into()));
    }
    let n = m.rows();
    // row-major working copy, v[i * n + j]
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let x = m.get(i, j);
            v[i * n + j] = x;
            v[j * n + i] = x;
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n == 1 {
        d[0] = v[0];
        v[0] = 1.0;
    } else {
        tred2(n, &mut v, &mut d, &mut e);
        tql2(n, &mut v, &mut d, &mut e)?;
    }

    // tql2 leaves ascending order; flip to descending
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let values = order.iter().map(|&k| d[k]).collect();
    let mut vecs = Vec::with_capacity(n * n);
    for &k in &order {
        for i in 0..n {
            vecs.push(v[i * n + k]);
        }
    }
    Ok(SymEigen {
        values: DenseVector::from_vec_unchecked(values),
        vectors: DenseMatrix::from_col_major_unchecked(n, n, vecs),
    })
}

fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let idx = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[idx(k, j)] * d[k];
                    e[k] += v[idx(k, j)] * f;
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
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tql2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let idx = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
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
        // e[n-1] == 0 so the scan always stops inside the array
        let m = m.min(n - 1);

        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::EigenNoConvergence {
                        iterations: MAX_QL_ITERATIONS,
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
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[idx(k, i + 1)];
                        v[idx(k, i + 1)] = s * v[idx(k, i)] + c * h;
                        v[idx(k, i)] = c * v[idx(k, i)] - s * h;
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
