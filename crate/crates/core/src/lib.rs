//! Multilingual check-worthiness detection with world-language task
//! adapters combined by adapter fusion, built on a small from-scratch
//! transformer and autodiff engine.

pub mod adapters;
pub mod checkpoint;
pub mod cli;
pub mod datakit;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod numerics;
pub mod suite;
pub mod topics;
pub mod training;

pub use error::{Error, Result};
