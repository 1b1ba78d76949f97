//! Personalized collaborative learning over multi-agent stochastic linear
//! systems.
//!
//! Each agent `i` wants the fixed point of its own expected system
//! `Ā^i x = b̄^i` while only observing noisy samples `A(s)`, `b^i(s)` drawn
//! from its private environment. The crate provides instance generators,
//! the learning rules (independent, federated averaging and the
//! bias/importance-corrected personalized scheme with its auxiliary
//! central learners), heterogeneity metrics, and a deterministic parallel
//! experiment harness.

pub mod algorithms;
pub mod environments;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod schedules;
pub mod seeding;
pub mod tdapp;
pub mod validation;

pub use error::{Error, Result};
