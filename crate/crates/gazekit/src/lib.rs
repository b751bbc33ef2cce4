//! Two-stage gaze estimation for table-top human-robot interaction.
//!
//! A frame of 19 facial keypoints (with detector confidences) is turned
//! into a normalized 57-element feature vector and pushed through two
//! layers:
//!
//! 1. a four-class one-vs-rest RBF SVM deciding whether the person looks at
//!    the robot's eyes (`eye_contact`), its body (`icub`), the table
//!    (`workspace`) or elsewhere (`other`);
//! 2. for `workspace` frames only, a confidence-gated regressor predicting
//!    the 2D gaze vector on the image plane, which a ray–sphere
//!    construction lifts back to a 3D gaze versor in camera coordinates.
//!
//! The crate also ships the annotation geometry that builds ground truth
//! from fiducial-board poses, participant-wise dataset splitting, the
//! training-set augmentation recipes, and a synthetic scene generator that
//! makes the whole pipeline trainable and verifiable without robot
//! hardware.
//!
//! Start with the runnable examples (`cargo run --release -p gazekit
//! --example end_to_end`) or the `gazekit` CLI, which wires the same
//! building blocks behind `synth`, `annotate`, `split`, `train`, `eval`
//! and `infer` subcommands.

pub mod augment;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod regressor;
pub mod synthgen;

pub use error::{Error, Result};
