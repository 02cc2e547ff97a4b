//! Writes a synthetic dataset for trying the command line tool.
//!
//! ```text
//! cargo run -p gazezone --example synth_dataset -- data/synth [subjects] [frames_per_zone]
//! ```

use std::path::PathBuf;

use gazezone::synthetic::write_synthetic;
use gazezone_core::synth::SynthConfig;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data/synth".into()));
    let mut config = SynthConfig::default();
    if let Some(n) = args.next() {
        config.subjects = n.parse()?;
    }
    if let Some(n) = args.next() {
        config.frames_per_zone = n.parse()?;
    }
    let ds = write_synthetic(&root, &config)?;
    println!("{} frames, {} manifests under {}", ds.frames.len(), ds.manifests.len(), root.display());
    println!("profile: {}", ds.profile.display());
    println!("detections: {}", ds.detections.display());
    Ok(())
}
