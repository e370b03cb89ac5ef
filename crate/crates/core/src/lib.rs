//! Core library for MRdIB: a multimodal information-bottleneck training
//! objective with explicit disentanglement of unique, redundant, and
//! synergistic information, attached to a latent-factor recommender.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: dense f64 tensors with reverse-mode autodiff, a seeded
//!   counter-based RNG, Xavier initialization, Adam, and a
//!   finite-difference gradient oracle.
//! - [`infotheory`]: diagonal Gaussians with closed-form KL to the standard
//!   normal, reparameterized sampling, and the Donsker-Varadhan mutual
//!   information bound with a learned statistics network.
//! - [`model`]: per-modality variational encoders, joint/unimodal decoders,
//!   and the host latent-factor recommender they plug into.
//! - [`objectives`]: the four loss terms, their weighted composition, and
//!   the alternating min-max training schedule.
//! - [`data`]: interaction ingestion, 5-core filtering, 8:1:1 splits, the
//!   MMF1 feature container, and a synthetic generator that plants
//!   ground-truth unique/redundant/synergistic bits.
//! - [`eval`]: top-K ranking metrics, split evaluation, early stopping.

pub mod data;
pub mod error;
pub mod eval;
pub mod infotheory;
pub mod model;
pub mod numcore;
pub mod objectives;

pub use error::{Error, Result};
