//! Simulation and analysis of fluorescence-spot Doppler-free spectroscopy on
//! the ytterbium 398.9 nm line.

pub mod artifact;
pub mod beamsim;
pub mod config;
pub mod dopplerfit;
pub mod error;
pub mod errormodel;
pub mod experiments;
#[cfg(feature = "server")]
pub mod labserver;
pub mod photonics;
pub mod satspec;
pub mod spectro;
pub mod spotfield;
pub mod ybdata;

pub use error::{Result, SpotError};
