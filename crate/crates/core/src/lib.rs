//! Volume conductor toolkit for transcranial magnetic stimulation dosimetry.
//!
//! - [`grid`], [`io`]: voxel containers and the NVV1 volume format.
//! - [`phantom`]: synthetic nested-shell head phantoms with T1/T2 intensities.
//! - [`conductor`]: tissue conductivity tables and the normalized-conductor chain.
//! - [`condnet`]: the multi-encoder/multi-decoder conductivity network.
//! - [`coil`]: thin-wire figure-eight coil and its vector potential.
//! - [`spfd`]: scalar-potential finite differences with multigrid.
//! - [`metrics`]: regions of interest and the global-error comparison.

pub mod coil;
pub mod condnet;
pub mod conductor;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
mod par;
pub mod phantom;
pub mod spfd;

pub use error::{Error, Result};
pub use grid::{Axis, Dims, Grid, LabelGrid, ScalarGrid, Slice2D, VectorGrid};
