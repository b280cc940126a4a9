//! Certification toolkit for monotone deep equilibrium networks.

pub mod attack;
pub mod ellipsoid;
pub mod error;
pub mod fixpoint;
pub mod lipschitz;
pub mod netio;
pub mod norm;
pub mod oracle;
pub mod robustness;
pub mod sdpcore;
pub mod semialg;

pub use error::{Error, Result};
pub use netio::{MonDEQ, NormalizationSpec, PerturbationSpec};
pub use norm::Norm;

extern crate openblas_src;
