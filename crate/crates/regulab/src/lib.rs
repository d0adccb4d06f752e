//! regulab: simulation and numerical verification for factored
//! data-generating processes.
//!
//! A process is modeled as a deterministic map applied to an input point and
//! independent noise. On top of that factorization the crate provides:
//!
//! - seeded, splittable randomness so every estimate is reproducible
//!   ([`sampling`]);
//! - conditional-law sampling, derived-task curves, and joint data
//!   generation ([`dgp`]);
//! - noise whitening through chained conditional CDFs ([`whitening`]);
//! - binned total-variation probes, KS statistics, jump scans, annulus
//!   masses and box covers ([`metrics`]);
//! - discrete/continuous regularity checkers and continuity certificates
//!   ([`regularity`]);
//! - bundled scenarios, including a randomized stable-matching market
//!   resolved by deferred acceptance ([`scenarios`]);
//! - the batch front door used by the `regulab` binary ([`cli`]).

pub mod cli;
pub mod dgp;
pub mod error;
pub mod metrics;
pub mod regularity;
pub mod sampling;
pub mod scenarios;
pub mod whitening;

pub use error::{Error, Result};
