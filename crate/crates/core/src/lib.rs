//! Multi-scale triplane neural fields trained with progressive schedules.
//!
//! The crate is organised around the training pipeline:
//!
//! * [`field`]: three triplanes plus a trivector, feature fusion, Fourier
//!   encoding and the MLP decoder, with hand-written reverse-mode gradients.
//! * [`render`]: camera sampling, ray generation and differentiable volume
//!   rendering.
//! * [`guidance`]: noise schedule, denoiser contract, score-distillation and
//!   photometric gradient steps.
//! * [`schedule`]: progressive time-step descent, camera radius interval and
//!   the stage plan.
//! * [`train`]: Adan, TV/L2 regularisers, stage-wise freezing, the training
//!   loop and the ablation runner.
//! * [`scenes`]: analytic reference scenes, PSNR, occupancy IoU and marching
//!   cubes.

pub mod config;
pub mod error;
pub mod field;
pub mod guidance;
pub mod image;
pub mod math;
pub mod render;
pub mod scenes;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
pub use field::{FieldConfig, FieldGrads, FieldSample, MultiScaleField, TensorId};
pub use image::Image;
