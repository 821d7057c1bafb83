//! `flatdiv theory-curve`: analytic sharpness/diversity curves.

use serde::Serialize;

use flatdiv_core::theory::{dominance, tradeoff_curve, Dominance, TheoryPoint, Variant};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, fmt_opt, RunContext};

pub const CSV: &str = "theory_curve.csv";
pub const SUMMARY: &str = "theory_summary.json";
pub const HEADER: [&str; 7] = [
    "variant",
    "rho",
    "k",
    "diversity",
    "sharp_lower",
    "sharp_upper",
    "error",
];

/// One curve per requested variant; points that fail keep their error.
pub struct Curves {
    pub points: Vec<(Variant, f64, Result<TheoryPoint, String>)>,
}

impl Curves {
    pub fn ok(&self, variant: Variant) -> Vec<TheoryPoint> {
        self.points
            .iter()
            .filter(|p| p.0 == variant)
            .filter_map(|p| p.2.as_ref().ok().copied())
            .collect()
    }

    /// SharpBalance against SAM, when both curves have points.
    pub fn dominance(&self) -> Option<Dominance> {
        let (sb, sam) = (self.ok(Variant::SharpBalance), self.ok(Variant::Sam));
        (!sb.is_empty() && !sam.is_empty()).then(|| dominance(&sb, &sam))
    }
}

pub fn compute(cfg: &ExperimentConfig) -> CliResult<Curves> {
    let base = cfg.theory.base()?;
    let grid = cfg.theory.grid()?;
    let mut points = Vec::new();
    for &variant in &cfg.theory.variants {
        let curve = tradeoff_curve(&base, &grid, variant)
            .map_err(|e| CliError::at("theory.rho_grid", e))?;
        for (&rho, p) in grid.iter().zip(curve) {
            points.push((variant, rho, p.map_err(|e| e.to_string())));
        }
    }
    Ok(Curves { points })
}

pub fn rows(cfg: &ExperimentConfig, curves: &Curves) -> Vec<Vec<String>> {
    curves
        .points
        .iter()
        .map(|(variant, rho, p)| {
            let mut row = vec![variant.to_string(), fmt_f64(*rho), cfg.theory.k.to_string()];
            match p {
                Ok(p) => row.extend([
                    fmt_f64(p.diversity),
                    fmt_opt(p.sharp_lower),
                    fmt_f64(p.sharp_upper),
                    String::new(),
                ]),
                Err(e) => row.extend([String::new(), String::new(), String::new(), e.clone()]),
            }
            row
        })
        .collect()
}

#[derive(Serialize)]
struct Summary {
    points: usize,
    failed_points: usize,
    dominance: Option<DominanceSummary>,
}

#[derive(Serialize)]
struct DominanceSummary {
    candidate: Variant,
    baseline: Variant,
    matched: usize,
    min_margin: f64,
    strict_interior: usize,
    holds: bool,
}

pub fn run(cfg: &ExperimentConfig, ctx: &mut RunContext) -> CliResult<()> {
    let curves = compute(cfg)?;
    ctx.write_csv(CSV, &HEADER, &rows(cfg, &curves))?;
    let failed = curves.points.iter().filter(|p| p.2.is_err()).count();
    let dom = curves.dominance();
    if let Some(d) = &dom {
        println!(
            "sharpbalance vs sam: matched {} points, min diversity margin {:.6e}, strictly above at {} interior points -> {}",
            d.matched,
            d.min_margin,
            d.strict_interior,
            if d.holds() { "dominates" } else { "does not dominate" }
        );
    }
    if failed > 0 {
        println!(
            "{failed} of {} points could not be evaluated (see the error column)",
            curves.points.len()
        );
    }
    let summary = Summary {
        points: curves.points.len(),
        failed_points: failed,
        dominance: dom.map(|d| DominanceSummary {
            candidate: Variant::SharpBalance,
            baseline: Variant::Sam,
            matched: d.matched,
            min_margin: d.min_margin,
            strict_interior: d.strict_interior,
            holds: d.holds(),
        }),
    };
    ctx.write_json(SUMMARY, &summary)?;
    Ok(())
}
