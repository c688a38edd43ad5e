//! Unitary path developments and high rank path characteristic functions.
//!
//! The crate covers rank-1 developments and the PCF distance, rank-2
//! developments of conditional development paths (HRPCF / HRPCFD), the
//! regression that estimates those conditional paths from samples, gradient
//! based training of the discriminating maps, a permutation two-sample test, a
//! small conditional generator trained against HRPCFD, and the data tooling
//! around them (fBM simulation, CSV windows, evaluation metrics).

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod generator;
pub mod hrpcf;
pub mod nn;
pub mod path;
pub mod regression;
pub mod seed;
pub mod stats;
pub mod train;
pub mod unitary;

pub use error::{AdevError, Result};
pub use path::{develop, epcfd, pcf, time_augment, Dataset, DevMap, MapEnsemble, PiecewisePath};
pub use unitary::{expm_anti_hermitian, hs_distance, sample_map_ensemble, AntiHermitian, CMat, UnitaryMatrix};
