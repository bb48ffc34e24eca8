//! Detector-agnostic vehicle tracking and traffic analytics for top-down UAV
//! video.
//!
//! Detections go in frame by frame; a SORT tracker (Kalman prediction plus
//! Hungarian IoU association) keeps vehicle identities, and the analytics
//! layer turns pixel motion into speed, acceleration, heading, direction and
//! lane-change events using the drone's altitude and lens angle. A bounded
//! latest-wins pipeline keeps processing in step with a live source.

pub mod analytics;
pub mod config;
pub mod engine;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod synth;
pub mod tracker;
