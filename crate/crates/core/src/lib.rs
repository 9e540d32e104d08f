//! Ember: trainable multi-component fake news detection.
//!
//! A news item is modeled as the ordered set of components a reader walks
//! through on social media - headline, images, comments, body text. Each
//! component is encoded on its own, every pair of components is fused with
//! co-attention, and the pair sequence is aggregated backwards so later-read
//! pairs enter the recurrence first. Training, evaluation, ablation and a
//! synthetic desk-scale corpus generator are included; everything runs on a
//! small f64 autodiff core that is verified by finite differences.

pub mod data;
pub mod error;
pub mod extractors;
pub mod forensics;
pub mod fusion;
pub mod model;
pub mod numerics;

pub use error::{EmberError, Result};
