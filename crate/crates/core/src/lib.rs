//! Thin-wire PEEC modelling of RIS-aided radio links.
//!
//! The pipeline runs mesh -> partial elements -> MNA solve -> port impedance
//! matrix -> per-load reactance optimization -> far-field pattern cuts.

pub mod commands;
pub mod config;
pub mod constants;
pub mod elements;
pub mod error;
pub mod farfield;
pub mod geometry;
pub mod io;
pub mod link;
pub mod mna;
pub mod opt;
pub mod quadrature;

pub use error::{Error, Result};
