//! Closed-form diversity and sharpness bounds for quadratic teacher/student
//! training with (unnormalised) SAM, on the full training matrix and on a
//! uniformly chosen block of an `S`-way row partition.

use serde::{Deserialize, Serialize};

use crate::combinatorics::{phi, PhiParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sam,
    SharpBalance,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Sam => "sam",
            Variant::SharpBalance => "sharpbalance",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inputs shared by every closed form.
///
/// `params.partitions` is only read by the SharpBalance formulas; the SAM
/// formulas always use the full matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub params: PhiParams,
    /// Init scale: `E[theta_0 theta_0^T] = sigma^2 I`.
    pub sigma: f64,
    pub theta_star_norm: f64,
    /// Radius used when measuring sharpness.
    pub rho0: f64,
    /// Number of SAM iterations.
    pub k: usize,
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.theta_star_norm.is_finite() && self.theta_star_norm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "theta_star_norm must be > 0, got {}",
                self.theta_star_norm
            )));
        }
        if !(self.rho0.is_finite() && self.rho0 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rho0 must be >= 0, got {}",
                self.rho0
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        let mut c = *self;
        c.params.rho = rho;
        c
    }

    fn full(&self) -> PhiParams {
        self.params.with_partitions(1)
    }

    /// `(rho0^2 / 2) (sqrt(n_tr / d_in) +/- 1)^2`.
    fn curvature_term(&self, sign: f64) -> f64 {
        let s = self.params.full_ratio().sqrt() + sign;
        0.5 * self.rho0 * self.rho0 * s * s
    }
}

/// One evaluated point of an analytic trade-off curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub variant: Variant,
    pub rho: f64,
    pub k: usize,
    pub diversity: f64,
    /// No lower bound is available for SharpBalance.
    pub sharp_lower: Option<f64>,
    pub sharp_upper: f64,
}

/// `D(theta_k) = phi(2k, 0) sigma^2`.
pub fn sam_diversity(cfg: &TheoryConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(phi(&cfg.full(), 2 * cfg.k, 0)? * cfg.sigma * cfg.sigma)
}

/// Jensen-gap slack `G = (phi(4k,4) - phi(2k,2)^2) / (2 phi(2k,2)^{3/2} ||theta*||)`.
pub fn jensen_gap(cfg: &TheoryConfig) -> Result<f64> {
    let p = cfg.full();
    let p22 = phi(&p, 2 * cfg.k, 2)?;
    if !(p22 > 0.0) {
        return Err(Error::JensenGapUndefined(p22));
    }
    let p44 = phi(&p, 4 * cfg.k, 4)?;
    Ok((p44 - p22 * p22) / (2.0 * p22.powf(1.5) * cfg.theta_star_norm))
}

/// Lower and upper bounds on the expected SAM sharpness after `k` steps.
///
/// The lower bound is returned unclamped and may be negative.
pub fn sam_sharpness_bounds(cfg: &TheoryConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let p22 = phi(&cfg.full(), 2 * cfg.k, 2)?;
    if !(p22 > 0.0) {
        return Err(Error::JensenGapUndefined(p22));
    }
    let g = jensen_gap(cfg)?;
    let linear = cfg.rho0 * p22.sqrt() * cfg.theta_star_norm;
    let lower = cfg.curvature_term(-1.0) + linear - g;
    let upper = cfg.curvature_term(1.0) + linear;
    Ok((lower, upper))
}

/// Diversity of models trained on a uniformly random block of an `S`-way split:
/// `phi'(2k,0) sigma^2 + ((S-1)/(d_in S)) (phi'(2k,0) - phi'(k,0)^2) ||theta*||^2`.
pub fn sharpbal_diversity(cfg: &TheoryConfig) -> Result<f64> {
    cfg.validate()?;
    let p = &cfg.params;
    let s = p.partitions as f64;
    let p2k = phi(p, 2 * cfg.k, 0)?;
    let pk = phi(p, cfg.k, 0)?;
    let spread = (s - 1.0) / (p.d_in as f64 * s) * (p2k - pk * pk);
    Ok(p2k * cfg.sigma * cfg.sigma + spread * cfg.theta_star_norm * cfg.theta_star_norm)
}

/// The constant `C` of the subset-training sharpness bound.
pub fn sharpbal_constant(cfg: &TheoryConfig) -> Result<f64> {
    let p = &cfg.params;
    let k = cfg.k;
    let s = p.partitions as f64;
    let r = p.ratio();
    let f = |i: usize, j: usize| phi(p, i, j);
    let (p2k2, p2k1, p2k0) = (f(2 * k, 2)?, f(2 * k, 1)?, f(2 * k, 0)?);
    let (pk2, pk1, pk0) = (f(k, 2)?, f(k, 1)?, f(k, 0)?);
    let s1 = s * (s - 1.0);
    let s2 = s1 * (s - 2.0);
    let s3 = s2 * (s - 3.0);
    let c = s * p2k2
        + 2.0 * r * s1 * p2k1
        + 2.0 * s1 * pk2 * pk0
        + r * (1.0 + r) * s1 * p2k0
        + 2.0 * s1 * pk1 * pk1
        + 1.5 * r * (1.0 + r) * s2 * pk0 * pk0
        + 1.5 * r * r * s2 * p2k0
        + 3.0 * r * s2 * pk0 * pk1
        + r * r * s3 * pk0 * pk0;
    Ok(c)
}

/// Upper bound on expected sharpness for subset training:
/// `(rho0^2/2)(sqrt(n_tr/d_in) + 1)^2 + (rho0 / S) sqrt(C) ||theta*||`.
pub fn sharpbal_sharpness_upper(cfg: &TheoryConfig) -> Result<f64> {
    cfg.validate()?;
    let c = sharpbal_constant(cfg)?;
    if c < 0.0 {
        return Err(Error::NegativeBoundConstant(c));
    }
    let s = cfg.params.partitions as f64;
    Ok(cfg.curvature_term(1.0) + cfg.rho0 / s * c.sqrt() * cfg.theta_star_norm)
}

/// Evaluates one variant at the config's own `rho`.
pub fn theory_point(cfg: &TheoryConfig, variant: Variant) -> Result<TheoryPoint> {
    let (diversity, sharp_lower, sharp_upper) = match variant {
        Variant::Sam => {
            let (lo, up) = sam_sharpness_bounds(cfg)?;
            (sam_diversity(cfg)?, Some(lo), up)
        }
        Variant::SharpBalance => (
            sharpbal_diversity(cfg)?,
            None,
            sharpbal_sharpness_upper(cfg)?,
        ),
    };
    Ok(TheoryPoint {
        variant,
        rho: cfg.params.rho,
        k: cfg.k,
        diversity,
        sharp_lower,
        sharp_upper,
    })
}

/// One point per `rho` in the grid, everything else fixed. Failed points are kept as errors.
pub fn tradeoff_curve(
    base: &TheoryConfig,
    rho_grid: &[f64],
    variant: Variant,
) -> Result<Vec<Result<TheoryPoint>>> {
    if rho_grid.is_empty() {
        return Err(Error::InvalidArgument("rho grid is empty".into()));
    }
    if let Some(bad) = rho_grid.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::InvalidArgument(format!("rho grid contains {bad}")));
    }
    Ok(rho_grid
        .iter()
        .map(|&rho| theory_point(&base.with_rho(rho), variant))
        .collect())
}

/// Piecewise-linear interpolation of `y(x)`; `None` outside the sampled range.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (first, last) = (pts.first()?, pts.last()?);
    if x < first.0 || x > last.0 {
        return None;
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x >= x0 && x <= x1 {
            if x1 == x0 {
                return Some(y0.max(y1));
            }
            let t = (x - x0) / (x1 - x0);
            return Some(y0 + t * (y1 - y0));
        }
    }
    Some(first.1)
}

/// Result of comparing two curves in (sharpness upper bound, diversity) space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dominance {
    /// Number of matched sharpness values inside both curves' ranges.
    pub matched: usize,
    /// Smallest `diversity(candidate) - diversity(baseline)` over matched values.
    pub min_margin: f64,
    /// Matched values strictly inside the overlap where the candidate is strictly higher.
    pub strict_interior: usize,
}

impl Dominance {
    pub fn holds(&self) -> bool {
        self.matched > 0 && self.min_margin >= 0.0 && self.strict_interior >= 1
    }
}

/// Compares `candidate` against `baseline` at every breakpoint of either curve
/// that lies in the overlap of their sharpness ranges.
pub fn dominance(candidate: &[TheoryPoint], baseline: &[TheoryPoint]) -> Dominance {
    let cand: Vec<(f64, f64)> = candidate
        .iter()
        .map(|p| (p.sharp_upper, p.diversity))
        .collect();
    let base: Vec<(f64, f64)> = baseline
        .iter()
        .map(|p| (p.sharp_upper, p.diversity))
        .collect();
    let range = |v: &[(f64, f64)]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.0), hi.max(p.0))
            })
    };
    let (clo, chi) = range(&cand);
    let (blo, bhi) = range(&base);
    let (lo, hi) = (clo.max(blo), chi.min(bhi));

    let mut matched = 0;
    let mut min_margin = f64::INFINITY;
    let mut strict_interior = 0;
    for &(x, _) in cand.iter().chain(base.iter()) {
        let (Some(yc), Some(yb)) = (interpolate(&cand, x), interpolate(&base, x)) else {
            continue;
        };
        matched += 1;
        let margin = yc - yb;
        min_margin = min_margin.min(margin);
        if margin > 0.0 && x > lo && x < hi {
            strict_interior += 1;
        }
    }
    Dominance {
        matched,
        min_margin,
        strict_interior,
    }
}

/// Named `rho` grids.
pub fn rho_preset(name: &str) -> Option<Vec<f64>> {
    match name {
        // 0.5 down to 0.3 in steps of 0.02
        "verify" | "fig2" => Some((0..=10).map(|i| 0.5 - 0.02 * i as f64).collect()),
        "verify-coarse" => Some(vec![0.5, 0.4, 0.3]),
        "fig1c" => Some(vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 0.2, 0.3]),
        "fig4" => Some(vec![
            0.01, 0.015, 0.02, 0.025, 0.03, 0.05, 0.1, 0.2, 0.3, 0.4,
        ]),
        "grid-search" => Some(vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5]),
        _ => None,
    }
}
