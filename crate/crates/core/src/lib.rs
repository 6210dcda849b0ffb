//! Trace-driven simulation and learning suite for edge-assisted visual SLAM
//! decision making.
//!
//! The crate is organized around three decision layers that share a common
//! set of exogenous input processes (network traces and frame arrivals):
//!
//! * [`tilesense`] — per-frame tile-importance prediction with an online
//!   (buffered) training workflow, backed by FAST corner ground truth.
//! * [`adapt`] — compression-configuration adaptation: an actor-critic agent
//!   picks a ⟨resolution, QP⟩ pair per frame to trade SLAM-relevant content
//!   against transmission time (the QoE objective in [`codec`]).
//! * [`schedsim`] / [`schedtrain`] — multi-server task scheduling with hidden
//!   FPS-derived deadlines, trained as a constrained RL problem gated by an
//!   input-dependent Gaussian-process safety model ([`gpsafe`]).
//!
//! [`traces`] supplies the input processes, [`neural`] the from-scratch MLP
//! and actor-critic training core shared by both agents.

pub mod adapt;
pub mod codec;
pub mod error;
pub mod gpsafe;
pub mod neural;
pub mod rng;
pub mod schedsim;
pub mod schedtrain;
pub mod tilesense;
pub mod traces;

pub use error::{Error, Result};
