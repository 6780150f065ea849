//! Tree-based progressive regression for watch-time prediction.
//!
//! Instead of regressing watch time directly, the label scale is quantized
//! into ordinal ranks and prediction becomes a search over a binary
//! decomposition tree: every internal node carries a classifier deciding
//! whether the watch time falls in the right half of the node's interval,
//! conditioned on it falling in the node at all. Chaining the branch
//! probabilities turns the prediction into a full multinomial distribution
//! over the ranks, which yields an expectation, an explicit uncertainty
//! (variance) term for the objective, and a natural hook for
//! backdoor-adjusted debiasing over a confounder such as video duration.
//!
//! The crate ships the model itself ([`model`], [`ranks`], [`net`]), the
//! backdoor-adjusted variant ([`deconfound`]), three reference baselines
//! ([`baselines`]), metrics and synthetic data ([`eval`]), and a batch CLI
//! (`tpm`) with a versioned model file format ([`modelfile`]).
//!
//! See the `book/` directory for a guided tour; its code snippets compile
//! as doctests of this crate.

pub mod baselines;
pub mod cli;
pub mod deconfound;
pub mod error;
pub mod eval;
pub mod model;
pub mod modelfile;
pub mod net;
pub mod ranks;
mod stats;

pub use error::{Error, Result};

// Keeps the book's code snippets honest: every fenced Rust block in the
// chapters runs under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scales-and-trees.md")]
    mod scales_and_trees {}
    #[doc = include_str!("../../../book/src/leaf-distributions.md")]
    mod leaf_distributions {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/backdoor-adjustment.md")]
    mod backdoor_adjustment {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines_chapter {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
