//! Distributed optimal output consensus for uncertain linear agents.
//!
//! A network of N single-input single-output linear plants, each with
//! parametric uncertainty over a known box, drives its measured output to
//! the minimizer of a sum of private strongly convex costs. Each agent runs
//! a distributed optimal signal generator (exchanging estimates with its
//! graph neighbors), an integral compensator on the local tracking error, a
//! dirty-derivative observer reconstructing output derivatives, and a
//! fixed-gain output-feedback law.
//!
//! The crate provides the building blocks (graphs and Laplacian spectra,
//! cost families, plant analysis and normal forms, the generator and
//! controller laws, gain synthesis with stability certificates) plus a
//! deterministic fixed-step simulator and scenario/config layer used by the
//! `consensus-sim` command-line tool.

pub mod costs;
pub mod plant;
pub mod generator;
pub mod controller;
pub mod tuning;
pub mod sim;
pub mod scenario;
pub mod error;
pub mod graph;
pub mod linalg;

pub use error::{Error, Result};
