//! Desk-scale workbench for robustifying tiny line-following vehicles:
//! synthetic line-scan camera data under parametric lighting, a
//! derivative-based computer-vision expert, from-scratch 1D CNN training,
//! fixed-point int8 deployment kernels, a runtime weight-swapping predictor,
//! a closed-loop imitation-learning pipeline, and a latency/energy harness.

pub mod closed_loop;
pub mod cva;
pub mod error;
pub mod harness;
pub mod nncore;
pub mod predictor;
pub mod quant;
pub mod rng;
pub mod simenv;

pub use error::{Error, Result};
