//! FDR-controlled screening of alphas in high-dimensional factor models with
//! observed and latent factors.

pub mod baselines;
pub mod error;
pub mod factor;
pub mod linalg;
pub mod methods;
pub mod panel;
pub mod simulation;
pub mod testing;

pub use error::{Error, Result};
