//! Multi-hypothesis color constancy.
//!
//! The pipeline has three stages: a camera's illuminant space is
//! discretized into candidate illuminants ([`candidates`]), each candidate
//! correction of an input image is scored for achromatic plausibility by a
//! small CNN ([`network`]), and the scores combine into a posterior whose
//! soft-argmax over candidates yields the illuminant estimate
//! ([`posterior`]). Training ([`training`]) backpropagates the angular
//! error of that estimate end to end; [`evaluation`] provides the standard
//! error statistics and a scene-grouped cross-validation driver.

pub mod baselines;
pub mod candidates;
pub mod color;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod network;
pub mod posterior;
pub mod training;

pub use color::{
    angular_error_deg, angular_error_rad, apply_correction, chroma, inverse_chroma,
    normalize_illuminant, ChromaPoint, LinearImage, UnitRgb,
};
pub use error::{Error, Result};
