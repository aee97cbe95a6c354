//! Inverse face rendering: a procedural morphable face model, a non-differentiable
//! rasterizer with spherical-harmonic shading, a convolutional parameter regressor
//! trained on synthetic renders, and self-supervised corpus breeding.

mod binio;
pub mod breeding;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod face_model;
pub mod illumination;
pub mod image;
pub mod math;
pub mod params;
pub mod regressor;
pub mod renderer;

pub use error::{Error, Result};
