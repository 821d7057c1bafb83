//! Monte-Carlo estimates of diversity and sharpness over random Gaussian data.
//!
//! Every data draw owns a derived `RngStream`, so results do not depend on the
//! thread count: draws run in parallel and are reduced in index order.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sharpness::{pga_sharpness, trust_region_sharpness, PgaStart, SharpnessMethod};
use super::{check_stability, iteration_eigenvalue, StabilityPolicy};
use crate::combinatorics::PhiParams;
use crate::error::{Error, Result};
use crate::numkernel::{
    gaussian_matrix, gaussian_vector, gram, sym_eigen, DenseMatrix, DenseVector, RngStream,
    SymEigen,
};
use crate::theory::{self, TheoryConfig, Variant};

const TAG_TEACHER: u64 = 1;
const TAG_DATA: u64 = 2;
const TAG_TRAIN: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_SUBSET: u64 = 4;
const TAG_PGA: u64 = 5;

/// Dimensions, initialisation and sampling budget shared by a batch of cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_tr: usize,
    pub d_in: usize,
    pub n_te: usize,
    pub partitions: usize,
    pub sigma: f64,
    pub theta_star_norm: f64,
    pub n_data: usize,
    pub n_init: usize,
    pub rho0: f64,
    pub method: SharpnessMethod,
    /// Start PGA from a random direction instead of the top eigenvector.
    pub pga_random_start: bool,
    pub stability: StabilityPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_tr: 3000,
            d_in: 150,
            n_te: 1000,
            partitions: 1,
            sigma: 1.0,
            theta_star_norm: 1.0,
            n_data: 50,
            n_init: 50,
            rho0: 0.1,
            method: SharpnessMethod::TrustRegion,
            pga_random_start: false,
            stability: StabilityPolicy::Allow,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_tr == 0 || self.d_in == 0 || self.n_te == 0 {
            return bad("n_tr, d_in and n_te must be positive".into());
        }
        if self.partitions == 0 || self.n_tr % self.partitions != 0 {
            return bad(format!(
                "n_tr={} is not divisible by S={}",
                self.n_tr, self.partitions
            ));
        }
        if self.n_data < 2 || self.n_init < 2 {
            return bad(format!(
                "need at least 2 data and init draws, got {} and {}",
                self.n_data, self.n_init
            ));
        }
        for (name, v) in [("sigma", self.sigma), ("rho0", self.rho0)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.theta_star_norm.is_finite() && self.theta_star_norm > 0.0) {
            return bad(format!(
                "theta_star_norm must be > 0, got {}",
                self.theta_star_norm
            ));
        }
        Ok(())
    }
}

/// Optimiser settings for one simulated configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub eta: f64,
    pub rho: f64,
    pub k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub diversity_mc: f64,
    pub diversity_se: f64,
    pub sharpness_mc: f64,
    pub sharpness_se: f64,
    pub n_data_draws: usize,
    pub n_init_draws: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CellEstimate {
    pub cell: Cell,
    pub estimate: SimEstimate,
}

/// Unit-direction teacher scaled to `theta_star_norm`, drawn once per experiment.
pub fn draw_teacher(cfg: &SimConfig, stream: &RngStream) -> DenseVector {
    let v = gaussian_vector(&stream.derive(TAG_TEACHER), cfg.d_in, 1.0);
    v.scale(cfg.theta_star_norm / v.norm())
}

/// Quantities shared by every cell of one data draw.
struct DrawContext {
    full: SymEigen,
    /// One eigensystem per block; empty when `S = 1` (the full system is used).
    blocks: Vec<SymEigen>,
    /// `T^T T / n_te`.
    test_gram: DenseMatrix,
    /// Per init: block index and `V_s^T (theta0 - theta*)`.
    inits: Vec<(usize, Vec<f64>)>,
    /// Per block: `V_s^T theta*`.
    teacher_coords: Vec<Vec<f64>>,
}

impl DrawContext {
    fn new(cfg: &SimConfig, teacher: &DenseVector, stream: &RngStream) -> Result<Self> {
        let var = 1.0 / cfg.d_in as f64;
        let a = gaussian_matrix(&stream.derive(TAG_TRAIN), cfg.n_tr, cfg.d_in, var);
        let t = gaussian_matrix(&stream.derive(TAG_TEST), cfg.n_te, cfg.d_in, var);
        let full = sym_eigen(&gram(&a))?;
        let mut blocks = Vec::new();
        if cfg.partitions > 1 {
            let rows = cfg.n_tr / cfg.partitions;
            for s in 0..cfg.partitions {
                blocks.push(sym_eigen(&gram(&a.row_block(s * rows, (s + 1) * rows)?))?);
            }
        }
        let test_gram = gram(&t).scale(1.0 / cfg.n_te as f64);

        let mut ctx = Self {
            full,
            blocks,
            test_gram,
            inits: Vec::with_capacity(cfg.n_init),
            teacher_coords: Vec::new(),
        };
        let init_stream = stream.derive(TAG_INIT);
        for j in 0..cfg.n_init {
            let js = init_stream.derive(j as u64);
            let theta0 = gaussian_vector(&js, cfg.d_in, cfg.sigma * cfg.sigma);
            let s = if cfg.partitions > 1 {
                js.derive(TAG_SUBSET).rng().random_range(0..cfg.partitions)
            } else {
                0
            };
            let z = ctx.system(s).to_eigenbasis(&theta0.sub(teacher)).into_vec();
            ctx.inits.push((s, z));
        }
        ctx.teacher_coords = (0..cfg.partitions.max(1))
            .map(|s| ctx.system(s).to_eigenbasis(teacher).into_vec())
            .collect();
        Ok(ctx)
    }

    fn system(&self, s: usize) -> &SymEigen {
        if self.blocks.is_empty() {
            &self.full
        } else {
            &self.blocks[s]
        }
    }

    fn n_systems(&self) -> usize {
        self.blocks.len().max(1)
    }

    fn check(&self, policy: StabilityPolicy, cell: &Cell) -> Result<()> {
        for s in 0..self.n_systems() {
            check_stability(policy, self.system(s).max_value(), cell.eta, cell.rho)?;
        }
        Ok(())
    }

    fn powers(&self, cell: &Cell) -> Vec<Vec<f64>> {
        (0..self.n_systems())
            .map(|s| {
                self.system(s)
                    .values
                    .as_slice()
                    .iter()
                    .map(|&l| iteration_eigenvalue(l, cell.eta, cell.rho).powi(cell.k as i32))
                    .collect()
            })
            .collect()
    }

    /// Mean over test rows of the across-init variance of `T theta_k`.
    fn diversity(&self, powers: &[Vec<f64>]) -> f64 {
        let n = self.inits.len();
        // shifted by the first init so identical draws give exactly zero
        let mut u: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (s, z) in &self.inits {
            let scaled: Vec<f64> = z.iter().zip(&powers[*s]).map(|(zi, p)| zi * p).collect();
            u.push(
                self.system(*s)
                    .from_eigenbasis(&DenseVector::from_vec_unchecked(scaled))
                    .into_vec(),
            );
        }
        let first = u[0].clone();
        let mut mean = vec![0.0; first.len()];
        for v in u.iter_mut() {
            for ((x, f), m) in v.iter_mut().zip(&first).zip(mean.iter_mut()) {
                *x -= f;
                *m += *x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut total = 0.0;
        for mut v in u {
            for (x, m) in v.iter_mut().zip(&mean) {
                *x -= m;
            }
            let v = DenseVector::from_vec_unchecked(v);
            total += v.dot(&self.test_gram.matvec(&v).expect("square"));
        }
        total / (n - 1) as f64
    }

    /// Worst-case training-loss increase around the init-averaged solution.
    fn sharpness(
        &self,
        cfg: &SimConfig,
        powers: &[Vec<f64>],
        pga_stream: &RngStream,
    ) -> Result<f64> {
        let d = self.full.dim();
        let ns = self.n_systems();
        // (1/S) sum_s B_s^k theta*
        let mut avg = vec![0.0; d];
        for s in 0..ns {
            let c: Vec<f64> = self.teacher_coords[s]
                .iter()
                .zip(&powers[s])
                .map(|(y, p)| y * p / ns as f64)
                .collect();
            let v = self
                .system(s)
                .from_eigenbasis(&DenseVector::from_vec_unchecked(c));
            for (a, x) in avg.iter_mut().zip(v.as_slice()) {
                *a += x;
            }
        }
        let b = self
            .full
            .apply_fn(&DenseVector::from_vec_unchecked(avg), |l| l);
        let (v, _) = match cfg.method {
            SharpnessMethod::TrustRegion => trust_region_sharpness(&self.full, &b, cfg.rho0)?,
            SharpnessMethod::Pga => {
                let start = if cfg.pga_random_start {
                    PgaStart::Random(pga_stream.clone())
                } else {
                    PgaStart::TopEigenvector
                };
                pga_sharpness(&self.full, &b, cfg.rho0, &start)?
            }
        };
        Ok(v)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Diversity and sharpness estimates for each cell, sharing data and init draws across cells.
///
/// The outer error covers failures of a whole data draw; a cell-specific failure
/// (for instance a rejected unstable cell) is returned in that cell's slot.
pub fn mc_cells(
    cfg: &SimConfig,
    cells: &[Cell],
    stream: &RngStream,
) -> Result<Vec<Result<SimEstimate>>> {
    cfg.validate()?;
    for c in cells {
        if !(c.eta.is_finite() && c.eta >= 0.0 && c.rho.is_finite() && c.rho >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid cell {c:?}")));
        }
    }
    let teacher = draw_teacher(cfg, stream);
    let data = stream.derive(TAG_DATA);

    let per_draw: Vec<Vec<Result<(f64, f64)>>> = (0..cfg.n_data)
        .into_par_iter()
        .map(|i| -> Result<Vec<Result<(f64, f64)>>> {
            let ds = data.derive(i as u64);
            let ctx = DrawContext::new(cfg, &teacher, &ds)?;
            Ok(cells
                .iter()
                .enumerate()
                .map(|(ci, cell)| {
                    ctx.check(cfg.stability, cell)?;
                    let p = ctx.powers(cell);
                    let div = ctx.diversity(&p);
                    let sharp = ctx.sharpness(cfg, &p, &ds.derive(TAG_PGA).derive(ci as u64))?;
                    Ok((div, sharp))
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    Ok((0..cells.len())
        .map(|ci| {
            let vals: Vec<(f64, f64)> = per_draw
                .iter()
                .map(|r| r[ci].clone())
                .collect::<Result<_>>()?;
            let div: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let sharp: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let (dm, dse) = mean_se(&div);
            let (sm, sse) = mean_se(&sharp);
            Ok(SimEstimate {
                diversity_mc: dm,
                diversity_se: dse,
                sharpness_mc: sm,
                sharpness_se: sse,
                n_data_draws: cfg.n_data,
                n_init_draws: cfg.n_init,
            })
        })
        .collect())
}

/// Diversity estimate for a single cell.
pub fn mc_diversity(cfg: &SimConfig, cell: Cell, stream: &RngStream) -> Result<SimEstimate> {
    mc_cells(cfg, &[cell], stream)?.remove(0)
}

/// Sharpness estimate for a single cell with the given radius and solver.
pub fn mc_sharpness(
    cfg: &SimConfig,
    cell: Cell,
    rho0: f64,
    method: SharpnessMethod,
    stream: &RngStream,
) -> Result<SimEstimate> {
    let cfg = SimConfig {
        rho0,
        method,
        ..cfg.clone()
    };
    mc_cells(&cfg, &[cell], stream)?.remove(0)
}

/// Sweep of cells checked against the closed forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyGrid {
    pub sim: SimConfig,
    pub ks: Vec<usize>,
    pub etas: Vec<f64>,
    pub rhos: Vec<f64>,
    /// Each entry runs the whole grid; `1` is full-data SAM, larger values the subset variant.
    pub partitions: Vec<usize>,
    /// Relative tolerance for diversity.
    pub diversity_tol: f64,
    /// Sharpness slack in standard errors.
    pub se_slack: f64,
}

impl VerifyGrid {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty()
            || self.etas.is_empty()
            || self.rhos.is_empty()
            || self.partitions.is_empty()
        {
            return Err(Error::InvalidArgument(
                "verify grid has an empty axis".into(),
            ));
        }
        for &s in &self.partitions {
            SimConfig {
                partitions: s,
                ..self.sim.clone()
            }
            .validate()?;
        }
        if !(self.diversity_tol > 0.0 && self.se_slack >= 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &k in &self.ks {
            for &eta in &self.etas {
                for &rho in &self.rhos {
                    out.push(Cell { eta, rho, k });
                }
            }
        }
        out
    }
}

/// Theory value, simulation estimate and verdict for one cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyRow {
    pub variant: Variant,
    pub n_tr: usize,
    pub d_in: usize,
    pub n_te: usize,
    pub s: usize,
    pub k: usize,
    pub eta: f64,
    pub rho: f64,
    pub rho0: f64,
    pub diversity_mc: f64,
    pub diversity_se: f64,
    pub diversity_theory: f64,
    pub sharp_mc: f64,
    pub sharp_se: f64,
    pub sharp_lower: Option<f64>,
    pub sharp_upper: f64,
    pub diversity_pass: bool,
    pub sharp_pass: bool,
    /// Set when the simulation or a closed form failed for this cell.
    pub error: Option<String>,
}

impl VerifyRow {
    pub fn pass(&self) -> bool {
        self.diversity_pass && self.sharp_pass
    }

    pub fn diversity_rel_err(&self) -> f64 {
        (self.diversity_mc - self.diversity_theory).abs() / self.diversity_theory.abs()
    }
}

/// Runs every cell for every partition count. Failed checks are reported in the rows.
pub fn verify_theorems(grid: &VerifyGrid, stream: &RngStream) -> Result<Vec<VerifyRow>> {
    grid.validate()?;
    let cells = grid.cells();
    let mut rows = Vec::with_capacity(cells.len() * grid.partitions.len());
    for &s in &grid.partitions {
        let sim = SimConfig {
            partitions: s,
            ..grid.sim.clone()
        };
        let est = mc_cells(&sim, &cells, &stream.derive(s as u64))?;
        for (cell, e) in cells.iter().zip(est) {
            rows.push(verify_row(grid, &sim, cell, e));
        }
    }
    Ok(rows)
}

fn verify_row(
    grid: &VerifyGrid,
    sim: &SimConfig,
    cell: &Cell,
    est: Result<SimEstimate>,
) -> VerifyRow {
    let variant = if sim.partitions == 1 {
        Variant::Sam
    } else {
        Variant::SharpBalance
    };
    let theory =
        PhiParams::new(sim.n_tr, sim.d_in, cell.eta, cell.rho, sim.partitions).and_then(|params| {
            let tc = TheoryConfig {
                params,
                sigma: sim.sigma,
                theta_star_norm: sim.theta_star_norm,
                rho0: sim.rho0,
                k: cell.k,
            };
            theory::theory_point(&tc, variant)
        });
    let mut row = VerifyRow {
        variant,
        n_tr: sim.n_tr,
        d_in: sim.d_in,
        n_te: sim.n_te,
        s: sim.partitions,
        k: cell.k,
        eta: cell.eta,
        rho: cell.rho,
        rho0: sim.rho0,
        diversity_mc: f64::NAN,
        diversity_se: f64::NAN,
        diversity_theory: f64::NAN,
        sharp_mc: f64::NAN,
        sharp_se: f64::NAN,
        sharp_lower: None,
        sharp_upper: f64::NAN,
        diversity_pass: false,
        sharp_pass: false,
        error: None,
    };
    let e = match est {
        Ok(e) => e,
        Err(err) => {
            row.error = Some(format!("simulation: {err}"));
            return row;
        }
    };
    row.diversity_mc = e.diversity_mc;
    row.diversity_se = e.diversity_se;
    row.sharp_mc = e.sharpness_mc;
    row.sharp_se = e.sharpness_se;
    match theory {
        Ok(p) => {
            row.diversity_theory = p.diversity;
            row.sharp_lower = p.sharp_lower;
            row.sharp_upper = p.sharp_upper;
            row.diversity_pass = row.diversity_rel_err() <= grid.diversity_tol;
            let slack = grid.se_slack * e.sharpness_se;
            let above = p
                .sharp_lower
                .map_or(true, |lo| e.sharpness_mc >= lo - slack);
            row.sharp_pass = above && e.sharpness_mc <= p.sharp_upper + slack;
        }
        Err(err) => row.error = Some(format!("theory: {err}")),
    }
    row
}
