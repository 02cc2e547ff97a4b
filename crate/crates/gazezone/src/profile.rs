//! Camera profiles stored as JSON.

use std::path::Path;

use anyhow::{Context, Result};
use gazezone_core::preprocess::CameraProfile;

pub fn load_profile(path: &Path) -> Result<CameraProfile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let profile: CameraProfile =
        serde_json::from_str(&text).with_context(|| format!("parsing camera profile {}", path.display()))?;
    profile.validate().with_context(|| format!("camera profile {}", path.display()))?;
    Ok(profile)
}

pub fn save_profile(path: &Path, profile: &CameraProfile) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(profile)?).with_context(|| format!("writing {}", path.display()))
}
