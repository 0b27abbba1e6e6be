//! Matrix factorization models for collaborative filtering.
//!
//! The crate trains and evaluates six factorization models (PMF, BiasedMF,
//! NMF, BeMF, BNMF and URP) on explicit rating data. Everything is seeded:
//! the same inputs give the same folds, parameters and metric values.

pub mod data;
pub mod harness;
pub mod mathfns;
pub mod metrics;
pub mod models;
pub mod rng;

// The guide's snippets run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/model-files.md")]
    mod model_files {}
    #[doc = include_str!("../../../book/src/reproducing.md")]
    mod reproducing {}
}
