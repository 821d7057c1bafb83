//! Worst-case loss increase over a Euclidean ball.
//!
//! Both solvers maximise `g(eps) = 1/2 eps^T M eps - eps^T b` subject to
//! `||eps|| <= rho0`, working in the eigenbasis of `M`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{DenseVector, RngStream, SymEigen};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpnessMethod {
    Pga,
    TrustRegion,
}

impl std::str::FromStr for SharpnessMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pga" => Ok(Self::Pga),
            "trust_region" | "trust-region" => Ok(Self::TrustRegion),
            other => Err(Error::InvalidArgument(format!(
                "unknown sharpness method {other:?} (expected pga or trust_region)"
            ))),
        }
    }
}

/// Initial perturbation for projected gradient ascent.
#[derive(Clone, Debug, PartialEq)]
pub enum PgaStart {
    /// `rho0` times the top eigenvector, signed to increase `g`.
    TopEigenvector,
    Random(RngStream),
}

/// Ascent step size and iteration count.
pub const PGA_STEP: f64 = 0.01;
pub const PGA_STEPS: usize = 50;

const BISECTION_ITERATIONS: usize = 400;

fn objective(lambda: &[f64], c: &[f64], e: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(c)
        .zip(e)
        .map(|((&l, &ci), &ei)| 0.5 * l * ei * ei - ci * ei)
        .sum()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Exact maximiser of the ball-constrained quadratic via the secular equation
/// `(mu I - M) eps = -b`, `mu >= max(lambda_max, 0)`, `||eps|| = rho0`.
///
/// `M` must be positive semidefinite. Returns the optimal value and the maximiser.
pub fn trust_region_sharpness(
    eig: &SymEigen,
    b: &DenseVector,
    rho0: f64,
) -> Result<(f64, DenseVector)> {
    check_inputs(eig, b, rho0)?;
    let d = eig.dim();
    if rho0 == 0.0 {
        return Ok((0.0, DenseVector::zeros(d)));
    }
    let lambda = eig.values.as_slice();
    let c = eig.to_eigenbasis(b).into_vec();
    let cnorm = norm(&c);
    let mu_lo = lambda[0].max(0.0);

    // eps_i(t) = -c_i / (t + mu_lo - lambda_i), t > 0
    let eps_at = |t: f64, skip_top: bool, out: &mut [f64]| {
        for i in 0..d {
            let gap = mu_lo - lambda[i];
            out[i] = if skip_top && gap <= top_tol(lambda[0]) {
                0.0
            } else {
                -c[i] / (t + gap)
            };
        }
    };
    let mut eps = vec![0.0; d];

    let top_c: f64 = lambda
        .iter()
        .zip(&c)
        .filter(|(l, _)| mu_lo - **l <= top_tol(lambda[0]))
        .map(|(_, ci)| ci * ci)
        .sum::<f64>()
        .sqrt();
    if top_c <= 1e-14 * cnorm.max(f64::MIN_POSITIVE) || cnorm == 0.0 {
        eps_at(0.0, true, &mut eps);
        let partial = norm(&eps);
        if partial <= rho0 {
            // hard case: fill the remaining radius along the top eigenvector
            let tau = (rho0 * rho0 - partial * partial).max(0.0).sqrt();
            eps[0] = tau;
            let v = objective(lambda, &c, &eps);
            return Ok((
                v,
                eig.from_eigenbasis(&DenseVector::from_vec_unchecked(eps)),
            ));
        }
    }

    let mut lo = 0.0;
    let mut hi = cnorm / rho0;
    eps_at(hi, false, &mut eps);
    if !(norm(&eps) <= rho0 * (1.0 + 1e-12)) {
        return Err(Error::TrustRegionBracket(format!(
            "||eps(mu_hi)|| = {} > rho0 = {rho0} (lambda_max={}, ||b||={cnorm})",
            norm(&eps),
            lambda[0]
        )));
    }
    for _ in 0..BISECTION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        eps_at(mid, false, &mut eps);
        if norm(&eps) > rho0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    eps_at(hi, false, &mut eps);
    // the root lies on the boundary; remove the bisection shortfall
    let n = norm(&eps);
    if n > 0.0 {
        eps.iter_mut().for_each(|e| *e *= rho0 / n);
    }
    let v = objective(lambda, &c, &eps);
    if !v.is_finite() {
        return Err(Error::NonFinite("trust-region objective".into()));
    }
    Ok((
        v,
        eig.from_eigenbasis(&DenseVector::from_vec_unchecked(eps)),
    ))
}

fn top_tol(lambda_max: f64) -> f64 {
    1e-12 * lambda_max.abs().max(1.0)
}

/// Projected gradient ascent with step `PGA_STEP` for `PGA_STEPS` iterations.
pub fn pga_sharpness(
    eig: &SymEigen,
    b: &DenseVector,
    rho0: f64,
    start: &PgaStart,
) -> Result<(f64, DenseVector)> {
    pga_sharpness_with(eig, b, rho0, start, PGA_STEP, PGA_STEPS)
}

pub fn pga_sharpness_with(
    eig: &SymEigen,
    b: &DenseVector,
    rho0: f64,
    start: &PgaStart,
    step: f64,
    steps: usize,
) -> Result<(f64, DenseVector)> {
    check_inputs(eig, b, rho0)?;
    let d = eig.dim();
    if rho0 == 0.0 {
        return Ok((0.0, DenseVector::zeros(d)));
    }
    let lambda = eig.values.as_slice();
    let c = eig.to_eigenbasis(b).into_vec();
    let mut eps = vec![0.0; d];
    match start {
        PgaStart::TopEigenvector => {
            // g(+rho0 v1) - g(-rho0 v1) = -2 rho0 c_1
            eps[0] = if c[0] > 0.0 { -rho0 } else { rho0 };
        }
        PgaStart::Random(stream) => {
            let mut rng = stream.rng();
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(&mut rng);
            }
            let n = norm(&eps);
            eps.iter_mut().for_each(|e| *e *= rho0 / n);
        }
    }
    for _ in 0..steps {
        for i in 0..d {
            eps[i] += step * (lambda[i] * eps[i] - c[i]);
        }
        let n = norm(&eps);
        if n > rho0 {
            eps.iter_mut().for_each(|e| *e *= rho0 / n);
        }
    }
    let v = objective(lambda, &c, &eps);
    Ok((
        v,
        eig.from_eigenbasis(&DenseVector::from_vec_unchecked(eps)),
    ))
}

fn check_inputs(eig: &SymEigen, b: &DenseVector, rho0: f64) -> Result<()> {
    if b.dim() != eig.dim() {
        return Err(Error::ShapeMismatch {
            op: "sharpness",
            lhs: (eig.dim(), eig.dim()),
            rhs: (b.dim(), 1),
        });
    }
    if !(rho0.is_finite() && rho0 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rho0 must be >= 0, got {rho0}"
        )));
    }
    Ok(())
}
