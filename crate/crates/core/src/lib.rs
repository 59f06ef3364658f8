//! Simulation and analysis toolkit for phonon-counting optomechanics.
//!
//! - [`optomech`]: Raman transition rates, occupancy, cooperativity.
//! - [`filter`]: cascaded Lorentzian filter cavities.
//! - [`clicks`]: seeded time-tagged photon click streams.
//! - [`analysis`]: g²(τ) histograms and fits, Raman-ratio thermometry.
//! - [`lock`]: filter-lock acquisition and frozen-lock drift.
//! - [`config`] and [`io`]: configuration files and delimited text formats.

pub mod analysis;
pub mod clicks;
pub mod config;
pub mod error;
pub mod filter;
pub mod io;
pub mod lock;
pub mod optomech;
pub mod quadrature;

pub use error::{Error, Result};
