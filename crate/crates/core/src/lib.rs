//! Fetal heart rate (FHR) artefact detection and reconstruction.
//!
//! The crate covers the whole desk-scale pipeline: signal handling and
//! segmentation, a deterministic synthetic corruption protocol with ground
//! truth masks, a small reverse-mode autodiff engine, a two-stage
//! detect-then-correct model, classical gap-filling baselines, evaluation
//! metrics and a rule-based normality screen with a time-to-decision loop.

pub mod error;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub mod signal;
pub mod noise;
pub mod synth;
pub mod baselines;
pub mod metrics;
pub mod screen;
pub mod detector;
pub mod reconstructor;
pub mod training;
pub mod io;
pub mod pipeline;
