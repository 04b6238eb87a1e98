//! The user guide, embedded chapter by chapter from `book/src/` so that
//! every Rust snippet in the book compiles and runs as a doc-test. If a
//! chapter drifts from the API, `cargo test` fails.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/feedforward-variants.md")]
pub mod feedforward_variants {}

#[doc = include_str!("../../../book/src/expressivity.md")]
pub mod expressivity {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/cost-model.md")]
pub mod cost_model {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
