//! Named configurations, one flag per reproduction recipe.
//!
//! Each preset is a TOML fragment layered under the config file and `--set`
//! overrides. Values follow the published simulation protocol where it gives
//! them; desk-scale substitutes are marked.

use crate::config::Command;
use crate::error::{CliError, CliResult};

const THEORY: &[(&str, &str)] = &[
    (
        "fig1b",
        r#"
[theory]
n_tr = 3000
d_in = 150
partitions = 10
eta = 0.005
k = 6
sigma = 1.0
theta_star_norm = 1.0
rho0 = 0.1
rho_grid = [0.3, 0.32, 0.34, 0.36, 0.38, 0.4, 0.42, 0.44, 0.46, 0.48, 0.5]
variants = ["sam", "sharpbalance"]
"#,
    ),
    (
        "smoke",
        r#"
[theory]
rho_grid = [0.3, 0.4, 0.5]
"#,
    ),
];

const VERIFY: &[(&str, &str)] = &[
    (
        // single (k, eta) panel, rho from 0.5 down to 0.3
        "fig2",
        r#"
[verify]
partitions = [1]
ks = [2]
etas = [0.05]
rhos = [0.5, 0.48, 0.46, 0.44, 0.42, 0.4, 0.38, 0.36, 0.34, 0.32, 0.3]
"#,
    ),
    (
        "fig6",
        r#"
[verify]
partitions = [1]
ks = [2, 4, 8]
etas = [0.01, 0.05, 0.1]
rhos = [0.3, 0.4, 0.5]
"#,
    ),
    (
        "fig8",
        r#"
[verify]
partitions = [10]
ks = [4, 8, 12]
etas = [0.1, 0.3, 0.5]
rhos = [0.3, 0.4, 0.5]
"#,
    ),
    (
        "smoke",
        r#"
[verify]
n_data = 16
n_init = 16
partitions = [1]
ks = [4]
etas = [0.05]
rhos = [0.4]
"#,
    ),
];

const TRAIN: &[(&str, &str)] = &[
    (
        // SAM radius sweep with five seed triplets
        "fig1c",
        r#"
[train]
optimizers = ["sam"]
rho_grid = [0.0, 0.01, 0.05, 0.1, 0.2, 0.3]
ensembles = 5
"#,
    ),
    (
        // SAM against SharpBalance on paired seed triplets
        "sharpbalance",
        r#"
[train]
optimizers = ["sam", "sharpbalance"]
rho_grid = [0.2]
ensembles = 5

[train.ensemble]
k_frac = 0.4
t_d = 10
"#,
    ),
    (
        // three ensembles of three members, seeds as in the reference runs
        "three-ensembles",
        r#"
[train]
optimizers = ["sgd", "sam", "sharpbalance"]
rho_grid = [0.2]
member_seeds = [[13, 17, 27], [113, 117, 127], [43, 59, 223]]
"#,
    ),
    (
        // well separated blobs, short SGD run
        "smoke",
        r#"
[train]
optimizers = ["sgd"]
ensembles = 1

[train.task]
separation = 4.0
n_train = 1000
n_test = 500

[train.ensemble]
epochs = 10

[train.ensemble.sharpness]
n_batches = 20
"#,
    ),
];

const MEASURE: &[(&str, &str)] = &[(
    "l2-linf",
    r#"
[measure]
norms = ["l2_adaptive", "linf_adaptive"]
"#,
)];

fn table(command: Command) -> &'static [(&'static str, &'static str)] {
    match command {
        Command::TheoryCurve => THEORY,
        Command::Verify => VERIFY,
        Command::Train => TRAIN,
        Command::Measure => MEASURE,
    }
}

/// Preset names available for `command`.
pub fn names(command: Command) -> Vec<&'static str> {
    table(command).iter().map(|(n, _)| *n).collect()
}

pub fn lookup(command: Command, name: &str) -> CliResult<toml::Table> {
    let (_, text) = table(command)
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| {
            CliError::Validation(format!(
                "unknown preset {name:?} for {}; available: {}",
                command.name(),
                names(command).join(", ")
            ))
        })?;
    Ok(text.parse().expect("built-in preset is valid TOML"))
}
