pub mod autodiff;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
