//! Synthetic disconnection, connectivity metrics and fixed-point
//! reconnection for binary vascular segmentations.

pub mod disconnect;
pub mod experiment;
pub mod image;
pub mod metrics;
pub mod morphology;
pub mod reconnect;
pub mod synth;
