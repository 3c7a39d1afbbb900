//! Panoramic view interpolation between two reference views.

pub mod clae;
pub mod error;
pub mod inference;
pub mod layers;
pub mod losses;
pub mod model;
pub mod scene;
pub mod service;
pub mod tensor;
pub mod trainer;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
