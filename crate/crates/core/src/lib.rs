pub mod dynamics;
pub mod error;
pub mod graph;
pub mod harness;
pub mod integrator;
pub mod linalg;
pub mod mirror;
pub mod oracle;
pub mod problem;
pub mod qp;
pub mod saddle;

pub use error::{Error, Result};
