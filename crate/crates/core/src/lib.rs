//! Change detection between two optical images of different spatial and
//! spectral resolutions.
//!
//! The method works in three steps: fuse the observed high-spatial and
//! high-spectral images into a pseudo-latent image, predict both
//! observations back from it through the known degradations, and run a
//! homogeneous detector on each same-resolution pair.

// parameter checks written as `!(x > 0.0)` reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detect;
pub mod error;
pub mod evaluate;
pub mod fusion;
pub mod image;
pub mod io;
pub mod operators;
pub mod pipeline;
pub mod simulate;
pub mod synthetic;
pub mod unmix;

pub use error::{Error, Result};
pub use image::{ChangeEnergyMap, ChangeMask, Grid, ImageCube};
