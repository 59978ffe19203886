//! Numerical laboratory for Schrödinger local smoothing on surfaces of
//! revolution with degenerate trapping.

pub mod error;
pub mod evolve;
pub mod geometry;
pub mod grid;
pub mod jet;
pub mod operators;
pub mod oscillator;
pub mod resolvent;
pub mod smoothing;
pub mod special;
pub mod weyl;

pub use error::{Error, Result};
