//! Bayesian-optimization engine for tuning the tail layers of pre-trained
//! layered network architectures.
//!
//! The crate is organized around a sequential optimization loop:
//!
//! - [`space`] — mixed categorical/ordinal/integer search spaces, uniform
//!   sampling, and a fixed-length `[0, 1]`-vector encoding for the kernel.
//! - [`gp`] — exact Gaussian-process regression over encoded points with
//!   marginal-likelihood kernel fitting.
//! - [`acquisition`] — closed-form Expected Improvement, a Monte-Carlo
//!   cross-check, and next-point proposal over discrete spaces.
//! - [`optimizer`] — the tuning loop itself (uniform seeding followed by
//!   surrogate-guided proposals), a random-search baseline, and append-only
//!   run logs with crash-safe resume.
//! - [`arch`] — layered-architecture descriptions, tail-replacement surgery,
//!   mismatch adapters, and parameter/FLOP accounting.
//! - [`eval`] — objective backends: synthetic landscapes, an external
//!   line-protocol subprocess driver, and a built-in toy trainer.
//! - [`bench`] — paired Bayesian-vs-random comparison harness.
//!
//! Runnable demonstrations of each capability live in `examples/`; the
//! `autotune` binary exposes the same machinery as subcommands.

pub mod acquisition;
pub mod arch;
pub mod bench;
pub mod builtin;
pub mod cli;
pub mod eval;
pub mod gp;
pub mod optimizer;
pub mod space;

pub use space::{Configuration, EncodedPoint, ParamDomain, ParamSpec, ParamValue, SearchSpace};
