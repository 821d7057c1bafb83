//! Experiment configuration.
//!
//! A run's configuration is layered: built-in defaults, then the named preset,
//! then the `--config` file, then each `--set key=value` in order, then the
//! `--seed` and `--out` flags. Unknown keys are rejected with their dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flatdiv_core::combinatorics::PhiParams;
use flatdiv_core::metrics::{SharpnessNorm, SharpnessQuery};
use flatdiv_core::nn_ensemble::{Combine, EnsembleConfig, Optimizer, SyntheticTask};
use flatdiv_core::quad_sim::{SharpnessMethod, SimConfig, StabilityPolicy, VerifyGrid};
use flatdiv_core::theory::{self, TheoryConfig, Variant};

use crate::error::{CliError, CliResult};
use crate::presets;

/// The four subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    TheoryCurve,
    Verify,
    Train,
    Measure,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TheoryCurve => "theory-curve",
            Command::Verify => "verify",
            Command::Train => "train",
            Command::Measure => "measure",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; results do not depend on it.
    pub parallelism: usize,
    pub theory: TheorySection,
    pub verify: VerifySection,
    pub train: TrainSection,
    pub measure: MeasureSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            parallelism: 1,
            theory: TheorySection::default(),
            verify: VerifySection::default(),
            train: TrainSection::default(),
            measure: MeasureSection::default(),
        }
    }
}

/// Analytic trade-off curves. Defaults are the `fig1b` preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub n_tr: usize,
    pub d_in: usize,
    /// Partition count used by the SharpBalance curve.
    pub partitions: usize,
    pub eta: f64,
    pub k: usize,
    pub sigma: f64,
    pub theta_star_norm: f64,
    pub rho0: f64,
    pub rho_grid: Vec<f64>,
    /// Named grid replacing `rho_grid`.
    pub rho_preset: Option<String>,
    pub variants: Vec<Variant>,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            n_tr: 3000,
            d_in: 150,
            partitions: 10,
            eta: 0.005,
            k: 6,
            sigma: 1.0,
            theta_star_norm: 1.0,
            rho0: 0.1,
            rho_grid: (0..=10).map(|i| (30 + 2 * i) as f64 / 100.0).collect(),
            rho_preset: None,
            variants: vec![Variant::Sam, Variant::SharpBalance],
        }
    }
}

impl TheorySection {
    pub fn base(&self) -> CliResult<TheoryConfig> {
        let rho = self.grid()?.first().copied().unwrap_or(0.0);
        let params = PhiParams::new(self.n_tr, self.d_in, self.eta, rho, self.partitions)
            .map_err(|e| CliError::at("theory", e))?;
        let cfg = TheoryConfig {
            params,
            sigma: self.sigma,
            theta_star_norm: self.theta_star_norm,
            rho0: self.rho0,
            k: self.k,
        };
        cfg.validate().map_err(|e| CliError::at("theory", e))?;
        Ok(cfg)
    }

    pub fn grid(&self) -> CliResult<Vec<f64>> {
        let grid = match &self.rho_preset {
            Some(name) => theory::rho_preset(name).ok_or_else(|| {
                CliError::at("theory.rho_preset", format!("unknown grid {name:?}"))
            })?,
            None => self.rho_grid.clone(),
        };
        if grid.is_empty() {
            return Err(CliError::at("theory.rho_grid", "grid is empty"));
        }
        if let Some(bad) = grid.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(CliError::at(
                "theory.rho_grid",
                format!("invalid value {bad}"),
            ));
        }
        Ok(grid)
    }
}

/// Monte-Carlo sweep checked against the closed forms. Defaults are the `fig6` preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub n_tr: usize,
    pub d_in: usize,
    pub n_te: usize,
    pub sigma: f64,
    pub theta_star_norm: f64,
    pub n_data: usize,
    pub n_init: usize,
    pub rho0: f64,
    pub method: SharpnessMethod,
    pub pga_random_start: bool,
    pub stability: StabilityPolicy,
    pub ks: Vec<usize>,
    pub etas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub partitions: Vec<usize>,
    pub diversity_tol: f64,
    pub se_slack: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            n_tr: sim.n_tr,
            d_in: sim.d_in,
            n_te: sim.n_te,
            sigma: sim.sigma,
            theta_star_norm: sim.theta_star_norm,
            n_data: sim.n_data,
            n_init: sim.n_init,
            rho0: sim.rho0,
            method: sim.method,
            pga_random_start: sim.pga_random_start,
            stability: sim.stability,
            ks: vec![2, 4, 8],
            etas: vec![0.01, 0.05, 0.1],
            rhos: vec![0.3, 0.4, 0.5],
            partitions: vec![1],
            diversity_tol: 0.1,
            se_slack: 2.0,
        }
    }
}

impl VerifySection {
    pub fn grid(&self) -> CliResult<VerifyGrid> {
        let grid = VerifyGrid {
            sim: SimConfig {
                n_tr: self.n_tr,
                d_in: self.d_in,
                n_te: self.n_te,
                partitions: 1,
                sigma: self.sigma,
                theta_star_norm: self.theta_star_norm,
                n_data: self.n_data,
                n_init: self.n_init,
                rho0: self.rho0,
                method: self.method,
                pga_random_start: self.pga_random_start,
                stability: self.stability,
            },
            ks: self.ks.clone(),
            etas: self.etas.clone(),
            rhos: self.rhos.clone(),
            partitions: self.partitions.clone(),
            diversity_tol: self.diversity_tol,
            se_slack: self.se_slack,
        };
        grid.validate().map_err(|e| CliError::at("verify", e))?;
        if let Some(bad) = self
            .etas
            .iter()
            .chain(&self.rhos)
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(CliError::at(
                "verify",
                format!("eta and rho values must be >= 0, got {bad}"),
            ));
        }
        Ok(grid)
    }
}

/// Ensemble training runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub task: SyntheticTask,
    pub ensemble: EnsembleConfig,
    /// Optimisers to run; empty means `ensemble.optimizer` only.
    pub optimizers: Vec<Optimizer>,
    /// Radii to run; empty means `ensemble.rho` only.
    pub rho_grid: Vec<f64>,
    /// Number of ensembles per (optimizer, rho) when `member_seeds` is empty.
    /// Ensemble `e` member `i` is seeded with `master_seed + e * members + i`.
    pub ensembles: usize,
    /// Explicit member seeds, one list per ensemble.
    pub member_seeds: Vec<Vec<u64>>,
    pub save_checkpoints: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            task: SyntheticTask::default(),
            ensemble: EnsembleConfig::default(),
            optimizers: Vec::new(),
            rho_grid: Vec::new(),
            ensembles: 1,
            member_seeds: Vec::new(),
            save_checkpoints: true,
        }
    }
}

impl TrainSection {
    pub fn validate(&self) -> CliResult<()> {
        self.task
            .validate()
            .map_err(|e| CliError::at("train.task", e))?;
        self.ensemble
            .validate()
            .map_err(|e| CliError::at("train.ensemble", e))?;
        if !self.ensemble.seeds.is_empty() {
            return Err(CliError::at(
                "train.ensemble.seeds",
                "use train.member_seeds instead",
            ));
        }
        if let Some(bad) = self
            .rho_grid
            .iter()
            .find(|r| !(r.is_finite() && **r >= 0.0))
        {
            return Err(CliError::at(
                "train.rho_grid",
                format!("invalid value {bad}"),
            ));
        }
        if self.member_seeds.is_empty() && self.ensembles == 0 {
            return Err(CliError::at("train.ensembles", "must be at least 1"));
        }
        if let Some(bad) = self
            .member_seeds
            .iter()
            .find(|s| s.len() != self.ensemble.members)
        {
            return Err(CliError::at(
                "train.member_seeds",
                format!(
                    "{} seeds given for {} members",
                    bad.len(),
                    self.ensemble.members
                ),
            ));
        }
        Ok(())
    }

    pub fn optimizers(&self) -> Vec<Optimizer> {
        if self.optimizers.is_empty() {
            vec![self.ensemble.optimizer]
        } else {
            self.optimizers.clone()
        }
    }

    pub fn rhos(&self) -> Vec<f64> {
        if self.rho_grid.is_empty() {
            vec![self.ensemble.rho]
        } else {
            self.rho_grid.clone()
        }
    }

    pub fn seed_sets(&self, master_seed: u64) -> Vec<Vec<u64>> {
        if !self.member_seeds.is_empty() {
            return self.member_seeds.clone();
        }
        let m = self.ensemble.members as u64;
        (0..self.ensembles as u64)
            .map(|e| {
                (0..m)
                    .map(|i| master_seed.wrapping_add(e * m + i))
                    .collect()
            })
            .collect()
    }
}

/// Metrics recomputed from stored checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSection {
    /// Member checkpoint files; a directory stands for every `*.ckpt` file inside it.
    pub checkpoints: Vec<PathBuf>,
    /// Task the members were trained on; sharpness uses its training split.
    pub task: SyntheticTask,
    pub norms: Vec<SharpnessNorm>,
    /// Sharpness settings; `norm` is replaced by each entry of `norms`.
    pub sharpness: SharpnessQuery,
    pub combine: Combine,
}

impl Default for MeasureSection {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            task: SyntheticTask::default(),
            norms: vec![SharpnessNorm::L2Adaptive, SharpnessNorm::LinfAdaptive],
            sharpness: SharpnessQuery::default(),
            combine: Combine::Probabilities,
        }
    }
}

impl MeasureSection {
    pub fn validate(&self) -> CliResult<()> {
        if self.checkpoints.is_empty() {
            return Err(CliError::at("measure.checkpoints", "no checkpoints given"));
        }
        if self.norms.is_empty() {
            return Err(CliError::at("measure.norms", "no sharpness norm requested"));
        }
        self.task
            .validate()
            .map_err(|e| CliError::at("measure.task", e))?;
        self.sharpness
            .validate()
            .map_err(|e| CliError::at("measure.sharpness", e))
    }
}

impl ExperimentConfig {
    /// Checks the global keys and the section used by `command`.
    pub fn validate(&self, command: Command) -> CliResult<()> {
        if self.parallelism == 0 {
            return Err(CliError::at("parallelism", "must be at least 1"));
        }
        if self.master_seed > i64::MAX as u64 {
            return Err(CliError::at(
                "master_seed",
                format!("must be at most {}", i64::MAX),
            ));
        }
        match command {
            Command::TheoryCurve => {
                self.theory.base()?;
                if self.theory.variants.is_empty() {
                    return Err(CliError::at("theory.variants", "no variant requested"));
                }
                Ok(())
            }
            Command::Verify => self.verify.grid().map(|_| ()),
            Command::Train => self.train.validate(),
            Command::Measure => self.measure.validate(),
        }
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("serialising config: {e}")))
    }

    /// SHA-256 of [`Self::to_toml`], hex encoded.
    pub fn hash(&self) -> CliResult<String> {
        Ok(format!("{:x}", Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Command-line inputs that shape the configuration.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Builds and validates the configuration for `command`.
pub fn resolve(command: Command, ov: &Overrides) -> CliResult<ExperimentConfig> {
    let mut tree = toml::Table::new();
    if let Some(name) = &ov.preset {
        merge(&mut tree, presets::lookup(command, name)?);
    }
    if let Some(path) = &ov.config {
        merge(&mut tree, read_table(path)?);
    }
    for s in &ov.sets {
        apply_set(&mut tree, s)?;
    }
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(tree))
        .map_err(|e| {
            let path = e.path().to_string();
            CliError::at(&path, e.into_inner())
        })?;
    if let Some(seed) = ov.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate(command)?;
    Ok(cfg)
}

pub fn read_table(path: &Path) -> CliResult<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal, falling back to a bare string.
pub fn apply_set(tree: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Validation(format!("--set expects key=value, got {assignment:?}"))
    })?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!(
            "--set: malformed key {key:?}"
        )));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut node = tree;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::at(key, format!("{p} is not a section"))),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
