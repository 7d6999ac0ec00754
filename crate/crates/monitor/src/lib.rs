//! Run orchestration for label-free accuracy monitoring: configuration,
//! the step loop with method fan-out, persistence, sweeps and the HTTP
//! surface for human labelling.

pub mod config;
pub mod data;
pub mod error;
pub mod export;
pub mod http;
pub mod prepare;
pub mod record;
pub mod run;
pub mod session;
pub mod store;
pub mod sweep;
pub mod verify;

pub use config::RunConfig;
pub use error::{MonitorError, Result};
pub use run::{run_batch, Run};
