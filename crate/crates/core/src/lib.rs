//! Oriented object detection with boxes in polar coordinates.
//!
//! An oriented rectangle is a pole point (its centre), one radius and the
//! two smallest corner angles. The crate covers box conversion, target
//! encoding, the training losses, pole-point extraction and decoding,
//! rotated IoU and NMS, VOC-style evaluation, a small trainable network and
//! a synthetic scene generator.

pub mod cli;
pub mod encoding;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod pipeline;
pub mod postprocess;
pub mod synthdata;
pub mod toynet;
