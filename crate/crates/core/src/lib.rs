#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cam;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod reference;
pub mod synth;
pub mod training;
pub mod zone;
