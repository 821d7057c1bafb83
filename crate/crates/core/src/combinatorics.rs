//! Narayana numbers, leading-order Wishart moments and the moment functional
//! `phi(i, j)`.
//!
//! For `A` with i.i.d. `N(0, 1/d_in)` entries and `B = I - eta A^T A - eta rho (A^T A)^2`,
//! `E[B^i (A^T A)^j] = phi(i, j) I` at leading order in `1/d_in`. Expanding `B^i`
//! with the multinomial theorem reduces `phi` to a signed combination of the
//! scalar Wishart moments `E[(A^T A)^m] = c_m I`, with
//! `c_m = sum_l q^l N(m, l)` (Marchenko-Pastur moments written with Narayana numbers,
//! `q = n_tr / (S d_in)`).
//!
//! The finite-`d_in` correction factor of the moment formula is taken as 1.
//!
//! The `c_m` are the moments of the free Poisson law with rate `q`, so `phi(i, j)`
//! is the expectation of the polynomial `(1 - eta x - eta rho x^2)^i x^j` under that
//! law. [`phi`] evaluates it with a Gauss rule built from the law's Jacobi matrix,
//! which is exact for the polynomial degree and has positive weights. The direct
//! signed expansion ([`phi_expanded`]) cancels catastrophically once the moments
//! outgrow the result by more than `1e16`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{sym_eigen, DenseMatrix};

/// Largest `i` accepted by [`phi`].
pub const PHI_CAP: usize = 64;

/// Parameters of the moment functional.
///
/// With `partitions = 1` this evaluates `phi`; with `partitions = S > 1` it evaluates
/// the subset version `phi'`, in which each model sees `n_tr / S` rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiParams {
    pub n_tr: usize,
    pub d_in: usize,
    pub eta: f64,
    pub rho: f64,
    pub partitions: usize,
}

impl PhiParams {
    pub fn new(n_tr: usize, d_in: usize, eta: f64, rho: f64, partitions: usize) -> Result<Self> {
        let p = Self {
            n_tr,
            d_in,
            eta,
            rho,
            partitions,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tr == 0 || self.d_in == 0 || self.partitions == 0 {
            return Err(Error::InvalidArgument(
                "n_tr, d_in and partitions must be positive".into(),
            ));
        }
        if self.n_tr < self.d_in {
            return Err(Error::InvalidArgument(format!(
                "n_tr = {} must be at least d_in = {}",
                self.n_tr, self.d_in
            )));
        }
        if self.n_tr % self.partitions != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_tr = {} is not divisible by S = {}",
                self.n_tr, self.partitions
            )));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must be >= 0, got {}",
                self.eta
            )));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must be >= 0, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Aspect ratio `r = n_tr / (S d_in)` of one training block.
    pub fn ratio(&self) -> f64 {
        self.n_tr as f64 / (self.partitions as f64 * self.d_in as f64)
    }

    /// Full-data aspect ratio `n_tr / d_in`, independent of `S`.
    pub fn full_ratio(&self) -> f64 {
        self.n_tr as f64 / self.d_in as f64
    }

    /// Same block size with `S = 1`: `phi'(.; n_tr, S) == phi(.; n_tr / S, 1)`.
    pub fn single_block(&self) -> Self {
        Self {
            n_tr: self.n_tr / self.partitions,
            partitions: 1,
            ..*self
        }
    }

    pub fn with_partitions(&self, partitions: usize) -> Self {
        Self {
            partitions,
            ..*self
        }
    }
}

/// Exact binomial coefficient when it fits in `u128`.
pub fn binomial_exact(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) is an integer at every step
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Binomial coefficient as a real: exact below `u128` overflow, log-space above.
pub fn binomial(n: u64, k: u64) -> f64 {
    match binomial_exact(n, k) {
        Some(v) => v as f64,
        None => (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp(),
    }
}

/// Narayana number `N(m, l) = (1/l) C(m-1, l-1) C(m, l-1)`.
pub fn narayana(m: u64, l: u64) -> Result<f64> {
    if m == 0 || l == 0 || l > m {
        return Err(Error::InvalidArgument(format!(
            "narayana needs 1 <= l <= m, got m = {m}, l = {l}"
        )));
    }
    let exact = binomial_exact(m - 1, l - 1)
        .zip(binomial_exact(m, l - 1))
        .and_then(|(a, b)| a.checked_mul(b))
        .map(|p| p / l as u128);
    Ok(match exact {
        Some(v) => v as f64,
        None => binomial(m - 1, l - 1) * binomial(m, l - 1) / l as f64,
    })
}

/// Catalan number `C(2m, m) / (m + 1)`.
pub fn catalan(m: u64) -> f64 {
    match binomial_exact(2 * m, m) {
        Some(v) => (v / (m as u128 + 1)) as f64,
        None => binomial(2 * m, m) / (m + 1) as f64,
    }
}

/// Multinomial coefficient `i! / (k1! k2! k3!)` with `i = k1 + k2 + k3`.
pub fn multinomial3(k1: u64, k2: u64, k3: u64) -> f64 {
    let i = k1 + k2 + k3;
    match binomial_exact(i, k1)
        .zip(binomial_exact(i - k1, k2))
        .and_then(|(a, b)| a.checked_mul(b))
    {
        Some(v) => v as f64,
        None => binomial(i, k1) * binomial(i - k1, k2),
    }
}

/// Leading-order scalar Wishart moment `c_k` with `E[(A^T A)^k] = c_k I`.
///
/// `c_0 = 1`; for `k >= 1`, `c_k = q^k sum_{i=1..k} q^{-(k-i)} N(k, i)`.
pub fn wishart_moment(params: &PhiParams, k: usize) -> f64 {
    moment_table(params.ratio(), k)[k]
}

/// `c_0..=c_max` for aspect ratio `q`.
fn moment_table(q: f64, max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    out.push(1.0);
    for m in 1..=max as u64 {
        // q^m * q^{-(m-l)} = q^l; every term is positive
        let mut s = 0.0;
        let mut ql = 1.0;
        for l in 1..=m {
            ql *= q;
            s += ql * narayana(m, l).expect("1 <= l <= m");
        }
        out.push(s);
    }
    out
}

/// Neumaier-compensated sum of `terms` taken in ascending magnitude.
fn compensated_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut sum = 0.0;
    let mut comp = 0.0;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// `phi(i, j)` such that `E[B^i (A^T A)^j] = phi(i, j) I` at leading order.
pub fn phi(params: &PhiParams, i: usize, j: usize) -> Result<f64> {
    phi_with_cap(params, i, j, PHI_CAP)
}

pub fn phi_with_cap(params: &PhiParams, i: usize, j: usize, cap: usize) -> Result<f64> {
    if i > cap {
        return Err(Error::PhiCapExceeded { i, cap });
    }
    params.validate()?;
    if i == 0 {
        return Ok(wishart_moment(params, j));
    }
    let (eta, rho) = (params.eta, params.rho);
    let rule = gauss_rule(params.ratio(), i + j.div_ceil(2) + 1)?;
    let v: f64 = rule
        .iter()
        .map(|&(x, w)| w * (1.0 - eta * x - eta * rho * x * x).powi(i as i32) * x.powi(j as i32))
        .sum();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("phi({i}, {j})")));
    }
    Ok(v)
}

/// Nodes and weights of the `n`-point Gauss rule for the free Poisson law with rate `q`,
/// exact for polynomials up to degree `2n - 1`.
///
/// Golub-Welsch on the Jacobi matrix with diagonal `q, q+1, q+1, ...` and
/// off-diagonal `sqrt(q)`.
pub fn gauss_rule(q: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    let mut jm = DenseMatrix::zeros(n, n);
    for k in 0..n {
        jm.set(k, k, if k == 0 { q } else { q + 1.0 });
        if k + 1 < n {
            jm.set(k, k + 1, q.sqrt());
            jm.set(k + 1, k, q.sqrt());
        }
    }
    let eig = sym_eigen(&jm)?;
    Ok((0..n)
        .map(|k| {
            let v0 = eig.vectors.get(0, k);
            // the law has no mass below zero; clip rounding at the atom
            (eig.values.as_slice()[k].max(0.0), v0 * v0)
        })
        .collect())
}

/// `phi(i, j)` by the signed multinomial expansion of `B^i`:
/// `1[j = 0] + sum_{k1+k2+k3=i} i!/(k1!k2!k3!) (-eta)^{k2+k3} rho^{k3} c_m`
/// over `m = k2 + 2 k3 + j >= 1`.
///
/// Accurate only while the largest term is within `1e16` of the result.
pub fn phi_expanded(params: &PhiParams, i: usize, j: usize) -> Result<f64> {
    params.validate()?;
    let moments = moment_table(params.ratio(), 2 * i + j);
    let neg_eta = -params.eta;
    let mut terms = Vec::with_capacity((i + 1) * (i + 2) / 2 + 1);
    if j == 0 {
        terms.push(1.0);
    }
    for k2 in 0..=i {
        for k3 in 0..=(i - k2) {
            let m = k2 + 2 * k3 + j;
            if m == 0 {
                continue;
            }
            let k1 = i - k2 - k3;
            let coef = multinomial3(k1 as u64, k2 as u64, k3 as u64)
                * neg_eta.powi((k2 + k3) as i32)
                * params.rho.powi(k3 as i32);
            if coef != 0.0 {
                terms.push(coef * moments[m]);
            }
        }
    }
    let v = compensated_sum(terms);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("phi({i}, {j})")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_tr: usize, d_in: usize, eta: f64, rho: f64, s: usize) -> PhiParams {
        PhiParams::new(n_tr, d_in, eta, rho, s).unwrap()
    }

    #[test]
    fn narayana_hand_values() {
        assert_eq!(narayana(1, 1).unwrap(), 1.0);
        assert_eq!(narayana(3, 2).unwrap(), 3.0);
        assert_eq!(narayana(4, 2).unwrap(), 6.0);
        assert!(narayana(3, 0).is_err());
        assert!(narayana(3, 4).is_err());
    }

    #[test]
    fn narayana_rows_sum_to_catalan() {
        for m in 1..=12u64 {
            let s: f64 = (1..=m).map(|l| narayana(m, l).unwrap()).sum();
            assert_eq!(s, catalan(m), "m = {m}");
        }
        assert_eq!(catalan(12), 208012.0);
    }

    #[test]
    fn narayana_large_is_symmetric_and_finite() {
        for l in 1..=132u64 {
            let a = narayana(132, l).unwrap();
            let b = narayana(132, 133 - l).unwrap();
            assert!(a.is_finite() && a >= 1.0);
            assert!((a - b).abs() <= 1e-12 * a.max(b), "l = {l}: {a} vs {b}");
        }
    }

    #[test]
    fn multinomials_enumerate_to_three_pow() {
        for i in 0..=30u64 {
            let mut s = 0.0;
            for k2 in 0..=i {
                for k3 in 0..=(i - k2) {
                    s += multinomial3(i - k2 - k3, k2, k3);
                }
            }
            assert_eq!(s, 3f64.powi(i as i32), "i = {i}");
        }
    }

    #[test]
    fn wishart_moment_values() {
        let p = params(3000, 150, 0.1, 0.1, 1);
        assert_eq!(wishart_moment(&p, 0), 1.0);
        assert_eq!(wishart_moment(&p, 1), 20.0);
        assert_eq!(wishart_moment(&p, 2), 420.0);
    }

    #[test]
    fn phi_zero_zero_is_one() {
        assert_eq!(phi(&params(300, 50, 0.1, 0.2, 1), 0, 0).unwrap(), 1.0);
        assert_eq!(phi(&params(300, 50, 0.1, 0.2, 1), 0, 1).unwrap(), 6.0);
    }

    #[test]
    fn phi_one_zero_hand_expansion() {
        let (eta, rho) = (0.03, 0.4);
        let p = params(3000, 150, eta, rho, 1);
        let q = 20.0;
        let want = 1.0 - eta * q - eta * rho * (q * q + q);
        assert!((phi(&p, 1, 0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn rho_zero_reduces_to_gd() {
        let eta = 0.02;
        let p = params(3000, 150, eta, 0.0, 1);
        assert!((phi(&p, 1, 0).unwrap() - (1.0 - eta * 20.0)).abs() < 1e-14);
        // (1 - eta W)^2 -> 1 - 2 eta c1 + eta^2 c2
        let want = 1.0 - 2.0 * eta * 20.0 + eta * eta * 420.0;
        assert!((phi(&p, 2, 0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn partitions_equal_scaled_rows() {
        let p = params(3000, 150, 0.1, 0.3, 10);
        for (i, j) in [(0, 1), (3, 0), (4, 2), (8, 1)] {
            assert_eq!(
                phi(&p, i, j).unwrap(),
                phi(&p.single_block(), i, j).unwrap()
            );
        }
    }

    #[test]
    fn gauss_rule_reproduces_narayana_moments() {
        for q in [0.5, 1.0, 2.0, 6.0, 20.0] {
            let n = 12;
            let rule = gauss_rule(q, n).unwrap();
            let exact = moment_table(q, 2 * n - 1);
            for (m, c) in exact.iter().enumerate() {
                let got: f64 = rule.iter().map(|&(x, w)| w * x.powi(m as i32)).sum();
                assert!((got - c).abs() <= 1e-12 * c, "q={q} m={m}: {got} vs {c}");
            }
        }
    }

    #[test]
    fn expansion_agrees_at_low_order() {
        let p = params(3000, 150, 0.01, 0.3, 1);
        for (i, j) in [(1, 0), (2, 0), (2, 2), (4, 1), (6, 2)] {
            let a = phi(&p, i, j).unwrap();
            let b = phi_expanded(&p, i, j).unwrap();
            assert!(
                (a - b).abs() <= 1e-10 * a.abs().max(1.0),
                "phi({i},{j}): {a} vs {b}"
            );
        }
    }

    #[test]
    fn high_order_keeps_jensen_inequality() {
        // The signed expansion loses every digit here and even flips the inequality.
        let p = params(300, 50, 0.05617593128696524, 0.1312254398148929, 1);
        let (p22, p44) = (phi(&p, 16, 2).unwrap(), phi(&p, 32, 4).unwrap());
        assert!(p22 > 0.0);
        assert!(p44 >= p22 * p22, "{p44} < {p22}^2");
    }

    #[test]
    fn cap_is_enforced() {
        let p = params(300, 50, 0.1, 0.1, 1);
        let err = phi(&p, PHI_CAP + 1, 0).unwrap_err();
        assert_eq!(
            err,
            Error::PhiCapExceeded {
                i: PHI_CAP + 1,
                cap: PHI_CAP
            }
        );
        assert!(err.to_string().contains("64"));
        assert!(phi(&p, PHI_CAP, 4).unwrap().is_finite());
    }

    #[test]
    fn params_validation() {
        assert!(PhiParams::new(100, 150, 0.1, 0.1, 1).is_err());
        assert!(PhiParams::new(3000, 150, 0.1, 0.1, 7).is_err());
        assert!(PhiParams::new(3000, 150, -0.1, 0.1, 1).is_err());
        assert!(PhiParams::new(3000, 150, 0.1, 0.1, 10).is_ok());
    }
}
