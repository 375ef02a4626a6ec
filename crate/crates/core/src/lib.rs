//! Cross-project vulnerability detection: source normalization and statement
//! embedding, domain-adversarial latent features, and a max-margin
//! cross-domain classifier on random Fourier features.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod nets;
pub mod preproc;
pub mod trainer;

pub use error::{Error, Result};
