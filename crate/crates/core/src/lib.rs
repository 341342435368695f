//! Outcome-weighted learning of single- and set-valued individualized
//! treatment recommendations.
//!
//! Treatments are encoded as vertices of a regular simplex; a decision
//! function `f: X -> R^{k-1}` is fitted by minimising an outcome-weighted
//! surrogate loss of the angle margins `<W_a, f(x)>`. From the fit the
//! crate derives a single recommendation (largest margin) and a set of
//! near-optimal alternatives, either from derivative ratios of a smooth
//! loss (two-step) or from the signs of margins under a bent loss
//! (one-step). A regression plug-in baseline, tuning, evaluation and the
//! simulation study driver complete the pipeline.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod kernel;
pub mod loss;
pub mod recommend;
pub mod recommendation;
pub mod registry;
pub mod simulate;
pub mod simplex;
pub mod solver;

pub use error::{Error, Result};
