//! Importance-weighted domain adaptation under generalized label shift.
//!
//! The crate estimates per-class importance weights `w_y = p_T(y) / p_S(y)`
//! from a soft source confusion matrix and the target prediction marginal,
//! plugs them into adversarial (DANN, CDAN) and kernel (JAN) adaptation
//! losses, and checks the associated error bounds numerically on synthetic
//! Gaussian domains.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`distributions`] | categorical vectors, KL / JSD / L1 / TV |
//! | [`estimator`] | confusion accumulation, exact inverse, constrained QP, EMA |
//! | [`network`] | small MLPs with hand-written backprop and momentum SGD |
//! | [`losses`] | weighted and base DA / classification / MMD losses |
//! | [`trainer`] | the importance-weighted training loop and evaluation |
//! | [`datagen`] | Gaussian domains, class subsampling, JSD task suites |
//! | [`diagnostics`] | BER, conditional error gap, GLS gap, bound checks |
//! | [`io`] | CSV readers/writers shared with the CLI |
//! | [`sweep`] | base-vs-weighted runs over a JSD task suite |

pub mod datagen;
pub mod diagnostics;
pub mod distributions;
mod error;
pub mod estimator;
pub mod io;
pub mod losses;
pub mod network;
pub mod sweep;
pub mod trainer;

pub use datagen::{Dataset, DomainSpec, DomainTag};
pub use diagnostics::BoundReport;
pub use distributions::Categorical;
pub use error::{Error, Result};
pub use estimator::{ConfusionAccumulator, WeightVector};
pub use network::{Architecture, Mlp, ModelState};
pub use trainer::{Algorithm, TrainConfig, TrainTrace};

/// Dense matrix type used throughout the crate (rows are samples).
pub type Matrix = nalgebra::DMatrix<f64>;
