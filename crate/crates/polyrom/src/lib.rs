//! Projection-based model order reduction for polynomial dynamical systems.
//!
//! The crate builds parameterized quadratic/cubic systems (`polysys`,
//! `models`), integrates them with implicit multistep schemes (`fomsolve`),
//! compresses trajectories into orthonormal bases (`basis`), and runs reduced
//! models four ways: exact-projection references (`romref`), precomputed
//! tensor reduced models with no sampling (`hrf`), and sampled
//! energy-conserving weighted models (`ecsw`). `bench` sweeps methods over
//! tolerance grids and reports errors, timings, and speedups.

pub mod basis;
pub mod bench;
pub mod ecsw;
pub mod error;
pub mod fomsolve;
pub mod hrf;
pub mod matio;
pub mod models;
pub mod polysys;
pub mod romref;
pub mod sparse;

pub use error::{Error, Result};
