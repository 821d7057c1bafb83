//! Teacher/student simulation of SAM on quadratic objectives.
//!
//! Labels are noiseless (`y = A theta*`), so every loss is
//! `1/2 (theta - theta*)^T M (theta - theta*)` for the gram `M` of the selected rows.

mod mc;
mod sharpness;

pub use mc::{
    draw_teacher, mc_cells, mc_diversity, mc_sharpness, verify_theorems, Cell, CellEstimate,
    SimConfig, SimEstimate, VerifyGrid, VerifyRow,
};
pub use sharpness::{
    pga_sharpness, pga_sharpness_with, trust_region_sharpness, PgaStart, SharpnessMethod,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{gram, sym_eigen, DenseMatrix, DenseVector, SymEigen};

/// Which rows a loss or update is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSelector {
    Train,
    Test,
    /// Block `s` of the equal `S`-way row split of the training matrix.
    Subset(usize),
}

/// What to do with iteration matrices that do not contract.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityPolicy {
    #[default]
    Allow,
    Reject,
}

/// `eta (lambda_max + rho lambda_max^2)`; the SAM iteration contracts when this is below 2.
pub fn contraction_factor(lambda_max: f64, eta: f64, rho: f64) -> f64 {
    eta * (lambda_max + rho * lambda_max * lambda_max)
}

pub fn check_stability(policy: StabilityPolicy, lambda_max: f64, eta: f64, rho: f64) -> Result<()> {
    let f = contraction_factor(lambda_max, eta, rho);
    if policy == StabilityPolicy::Reject && f >= 2.0 {
        return Err(Error::Unstable(format!(
            "eta*(lambda_max + rho*lambda_max^2) = {f:.4} >= 2 (lambda_max={lambda_max:.4}, eta={eta}, rho={rho})"
        )));
    }
    Ok(())
}

/// Eigenvalue of `B = I - eta M - eta rho M^2` for an eigenvalue `lambda` of `M`.
#[inline]
pub fn iteration_eigenvalue(lambda: f64, eta: f64, rho: f64) -> f64 {
    1.0 - eta * lambda - eta * rho * lambda * lambda
}

/// One problem instance.
#[derive(Clone, Debug)]
pub struct QuadProblem {
    pub a: DenseMatrix,
    pub t: DenseMatrix,
    pub theta_star: DenseVector,
    pub sigma: f64,
    pub eta: f64,
    pub rho: f64,
    pub k: usize,
    pub partitions: usize,
}

impl QuadProblem {
    pub fn new(
        a: DenseMatrix,
        t: DenseMatrix,
        theta_star: DenseVector,
        sigma: f64,
        eta: f64,
        rho: f64,
        k: usize,
        partitions: usize,
    ) -> Result<Self> {
        let d = a.cols();
        if t.cols() != d || theta_star.dim() != d {
            return Err(Error::ShapeMismatch {
                op: "QuadProblem::new",
                lhs: a.shape(),
                rhs: t.shape(),
            });
        }
        if partitions == 0 || a.rows() % partitions != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} training rows cannot be split into {partitions} equal blocks",
                a.rows()
            )));
        }
        for (name, v) in [("sigma", sigma), ("eta", eta), ("rho", rho)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(Self {
            a,
            t,
            theta_star,
            sigma,
            eta,
            rho,
            k,
            partitions,
        })
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    fn block_rows(&self) -> usize {
        self.a.rows() / self.partitions
    }

    /// Rows selected by `sel`.
    pub fn data(&self, sel: DataSelector) -> Result<DenseMatrix> {
        match sel {
            DataSelector::Train => Ok(self.a.clone()),
            DataSelector::Test => Ok(self.t.clone()),
            DataSelector::Subset(s) if s < self.partitions => {
                let b = self.block_rows();
                self.a.row_block(s * b, (s + 1) * b)
            }
            DataSelector::Subset(s) => Err(Error::InvalidArgument(format!(
                "subset {s} out of range for {} partitions",
                self.partitions
            ))),
        }
    }

    pub fn gram(&self, sel: DataSelector) -> Result<DenseMatrix> {
        Ok(gram(&self.data(sel)?))
    }

    pub fn eigen(&self, sel: DataSelector) -> Result<SymEigen> {
        sym_eigen(&self.gram(sel)?)
    }
}

/// `1/2 (theta - theta*)^T M (theta - theta*)`.
pub fn quad_loss(theta: &DenseVector, problem: &QuadProblem, sel: DataSelector) -> Result<f64> {
    check_dim(theta, problem)?;
    let x = problem.data(sel)?;
    let r = x.matvec(&theta.sub(&problem.theta_star))?;
    Ok(0.5 * r.dot(&r))
}

/// `M (theta - theta*)`.
pub fn quad_grad(
    theta: &DenseVector,
    problem: &QuadProblem,
    sel: DataSelector,
) -> Result<DenseVector> {
    check_dim(theta, problem)?;
    let x = problem.data(sel)?;
    x.tr_matvec(&x.matvec(&theta.sub(&problem.theta_star))?)
}

/// Unnormalised SAM update `theta - eta grad f(theta + rho grad f(theta))`.
pub fn sam_step(
    theta: &DenseVector,
    problem: &QuadProblem,
    sel: DataSelector,
) -> Result<DenseVector> {
    check_dim(theta, problem)?;
    let m = problem.gram(sel)?;
    Ok(sam_step_with_gram(
        theta,
        &problem.theta_star,
        &m,
        problem.eta,
        problem.rho,
    ))
}

/// Same update with a precomputed gram.
pub fn sam_step_with_gram(
    theta: &DenseVector,
    theta_star: &DenseVector,
    m: &DenseMatrix,
    eta: f64,
    rho: f64,
) -> DenseVector {
    let r = theta.sub(theta_star);
    let g = m.matvec(&r).expect("square gram");
    let probe = r.axpy(rho, &g);
    let g2 = m.matvec(&probe).expect("square gram");
    theta.axpy(-eta, &g2)
}

/// `theta* + B^steps (theta0 - theta*)` through the eigendecomposition of the selected gram.
pub fn closed_form_theta(
    problem: &QuadProblem,
    theta0: &DenseVector,
    steps: usize,
    sel: DataSelector,
) -> Result<DenseVector> {
    check_dim(theta0, problem)?;
    if steps == 0 {
        return Ok(theta0.clone());
    }
    let eig = problem.eigen(sel)?;
    Ok(closed_form_with_eigen(
        &eig,
        &problem.theta_star,
        theta0,
        steps,
        problem.eta,
        problem.rho,
    ))
}

pub fn closed_form_with_eigen(
    eig: &SymEigen,
    theta_star: &DenseVector,
    theta0: &DenseVector,
    steps: usize,
    eta: f64,
    rho: f64,
) -> DenseVector {
    let delta = eig.apply_fn(&theta0.sub(theta_star), |l| {
        iteration_eigenvalue(l, eta, rho).powi(steps as i32)
    });
    theta_star.add(&delta)
}

fn check_dim(theta: &DenseVector, problem: &QuadProblem) -> Result<()> {
    if theta.dim() != problem.d_in() {
        return Err(Error::ShapeMismatch {
            op: "quadratic parameter",
            lhs: (theta.dim(), 1),
            rhs: (problem.d_in(), 1),
        });
    }
    Ok(())
}
