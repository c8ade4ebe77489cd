//! Synthetic shallow depth-of-field from a handheld burst.
//!
//! Light-field rendering, synthetic scenes, burst simulation, a small autodiff
//! engine, the blur prediction and merging networks, training and evaluation.

pub mod burst;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod lightfield;
pub mod models;
pub mod ndgrad;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use image::{Image, Rect};
pub use lightfield::{
    bias_disparity, circular_aperture_mask, ground_truth, photograph, ApertureMask, DisparityMap, LightField,
    RefocusFactor,
};
