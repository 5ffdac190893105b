//! Experiment driver behind the `mdbd` binary: `run`, `gen`, `verify` and
//! `bench`, plus the artifact formats they read and write.

pub mod artifacts;
pub mod bench;
pub mod config;
pub mod run;
pub mod verify;

pub use artifacts::{InstanceDoc, SaddleDoc};
pub use bench::{cmd_bench, BenchConfig, BenchReport};
pub use config::{ExperimentConfig, OUT_DIR_ENV};
pub use run::{cmd_gen, cmd_run, RunOutcome, RunSummary};
pub use verify::{cmd_verify, VerifyReport};
