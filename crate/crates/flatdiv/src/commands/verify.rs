//! `flatdiv verify`: Monte-Carlo check of the closed forms.

use flatdiv_core::numkernel::RngStream;
use flatdiv_core::quad_sim::{verify_theorems, VerifyRow};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, fmt_opt, RunContext};

pub const CSV: &str = "verify.csv";
pub const HEADER: [&str; 18] = [
    "variant",
    "n_tr",
    "d_in",
    "n_te",
    "S",
    "k",
    "eta",
    "rho",
    "rho0",
    "diversity_mc",
    "diversity_se",
    "diversity_theory",
    "sharp_mc",
    "sharp_se",
    "sharp_lower",
    "sharp_upper",
    "pass",
    "error",
];

pub fn compute(cfg: &ExperimentConfig) -> CliResult<Vec<VerifyRow>> {
    let grid = cfg.verify.grid()?;
    Ok(verify_theorems(&grid, &RngStream::new(cfg.master_seed, 0))?)
}

pub fn row(r: &VerifyRow) -> Vec<String> {
    vec![
        r.variant.to_string(),
        r.n_tr.to_string(),
        r.d_in.to_string(),
        r.n_te.to_string(),
        r.s.to_string(),
        r.k.to_string(),
        fmt_f64(r.eta),
        fmt_f64(r.rho),
        fmt_f64(r.rho0),
        fmt_f64(r.diversity_mc),
        fmt_f64(r.diversity_se),
        fmt_f64(r.diversity_theory),
        fmt_f64(r.sharp_mc),
        fmt_f64(r.sharp_se),
        fmt_opt(r.sharp_lower),
        fmt_f64(r.sharp_upper),
        r.pass().to_string(),
        r.error.clone().unwrap_or_default(),
    ]
}

pub fn run(cfg: &ExperimentConfig, ctx: &mut RunContext) -> CliResult<()> {
    let rows = compute(cfg)?;
    ctx.write_csv(CSV, &HEADER, &rows.iter().map(row).collect::<Vec<_>>())?;
    let failed: Vec<&VerifyRow> = rows.iter().filter(|r| !r.pass()).collect();
    for r in &failed {
        let why = match &r.error {
            Some(e) => e.clone(),
            None => format!(
                "diversity {} (rel err {:.3}), sharpness {}",
                if r.diversity_pass { "ok" } else { "FAIL" },
                r.diversity_rel_err(),
                if r.sharp_pass { "ok" } else { "FAIL" }
            ),
        };
        println!(
            "FAIL {} S={} k={} eta={} rho={}: {why}",
            r.variant, r.s, r.k, r.eta, r.rho
        );
    }
    println!("{} of {} cells pass", rows.len() - failed.len(), rows.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{} of {} cells failed",
            failed.len(),
            rows.len()
        )))
    }
}
