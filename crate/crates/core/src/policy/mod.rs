//! Gaussian and tabular policies.

mod gaussian;
mod tabular;

pub use gaussian::{kl_decomposed, DiagGaussian, GaussianPolicy, VAR_FLOOR};
pub use tabular::TabularPolicy;
