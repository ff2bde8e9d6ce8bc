//! Object-aware image stitching and object-centered evaluation of mosaics.

pub mod blend;
pub mod correspondence;
pub mod energy;
pub mod error;
pub mod eval;
pub mod io;
pub mod mask_codec;
pub mod model;
pub mod pipeline;
pub mod registration;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
