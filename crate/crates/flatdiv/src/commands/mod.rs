//! One module per subcommand. Each `run` writes its files through the
//! [`RunContext`](crate::output::RunContext) and returns the run outcome.

pub mod measure;
pub mod theory_curve;
pub mod train;
pub mod verify;
