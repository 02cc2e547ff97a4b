//! File formats, run directories, reports and the command line front end
//! around `gazezone-core`.

pub mod bench;
pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod detector;
pub mod eval;
pub mod frames;
pub mod manifest;
pub mod overlay;
pub mod prepare;
pub mod profile;
pub mod report;
pub mod run;
pub mod synthetic;
