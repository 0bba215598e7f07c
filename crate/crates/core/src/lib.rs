pub mod baseline;
pub mod cmdp;
pub mod critics;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod estep;
pub mod harness;
pub mod mstep;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod policy;

pub use error::{Error, Result};
