//! Simulated compromising-emanation capture and character-retrieval pipeline.

pub mod align;
pub mod corpus;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod font;
pub mod image;
pub mod intercept;
pub mod pipeline;
pub mod raster;
pub mod recognize;
pub mod signal;

pub use error::{AdapterError, Error, Result};
pub use image::{RasterImage, Rect};
