//! The book under `book/` is the narrative companion to
//! `consensus-core`. Each chapter is attached here as module
//! documentation so its `rust` code fences run as doctests; a drifting
//! example fails `cargo test --workspace` instead of rotting in the
//! rendered book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}

#[doc = include_str!("../../../book/src/costs.md")]
pub mod costs {}

#[doc = include_str!("../../../book/src/generator.md")]
pub mod generator {}

#[doc = include_str!("../../../book/src/plants.md")]
pub mod plants {}

#[doc = include_str!("../../../book/src/controllers.md")]
pub mod controllers {}

#[doc = include_str!("../../../book/src/tuning.md")]
pub mod tuning {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
