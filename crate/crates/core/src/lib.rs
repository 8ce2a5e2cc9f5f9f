//! Two-stage visual reconstruction: a capsule network learns digit features
//! from images, and a voxel decoder maps fMRI activity onto those features
//! so the network's reconstruction decoder can redraw the stimulus.

pub mod capsnet;
pub mod checkpoint;
pub mod cli;
pub mod data_io;
pub mod encoding;
pub mod error;
pub mod fmri_decoder;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
