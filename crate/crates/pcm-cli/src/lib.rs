//! Experiment drivers behind the `pcm` binary: benchmark runs, the
//! wing-rock control case, gradient checks, and property sweeps, all
//! emitting CSV artifacts plus a manifest that pins the resolved
//! configuration.

pub mod case1;
pub mod case2;
pub mod config;
pub mod output;
pub mod reports;

pub use case1::run_case1;
pub use case2::run_case2;
pub use config::{load_config, RunConfig};
pub use reports::{run_gradcheck, run_props};
