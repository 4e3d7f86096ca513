//! Closed-loop direction-of-arrival correction driven by speech-quality
//! feedback, simulated on a small microphone array.
//!
//! The pipeline is: [`scene`] renders a multichannel mixture, [`beamform`]
//! masks it toward a steering direction, [`quality`] turns the enhanced
//! output into a smoothed quality stream, and [`corrector`] nudges the
//! steering direction to maximize that quality. [`harness`] wires the loop
//! on a simulated clock and runs experiment grids.

pub mod beamform;
pub mod cli;
pub mod corrector;
pub mod error;
pub mod quality;
pub mod scene;
pub mod spectral;
pub mod wav;

pub use error::{Error, Result};
pub mod harness;
