//! Numerical verification kit for the energy-dissipation balance of a Mode III
//! crack growing along a prescribed smooth path.
//!
//! The crate is organised bottom-up: [`geom`] and [`material`] describe the
//! scenario, [`charts`] builds the time-dependent change of variables that
//! freezes the crack, [`fields`] evaluates the singular crack-tip functions and
//! the manufactured solutions, [`quad`] integrates on slit domains, and
//! [`energy`], [`sif`] and [`solver`] run the audits on top of them.

pub mod charts;
pub mod dual;
pub mod energy;
pub mod error;
pub mod fields;
pub mod geom;
pub mod io;
pub mod material;
pub mod quad;
pub mod scenario;
pub mod sif;
pub mod solver;

pub use error::{Error, Result};
