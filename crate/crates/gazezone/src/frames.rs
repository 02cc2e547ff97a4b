//! Image files in and out.

use std::path::Path;

use anyhow::{Context, Result};
use gazezone_core::image::RgbImage;

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_raw(w, h, img.into_raw()).expect("buffer matches dimensions"))
}

/// Writes `img` as PNG, creating parent directories.
pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    image::save_buffer_with_format(
        path,
        img.as_raw(),
        img.width(),
        img.height(),
        image::ColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .with_context(|| format!("writing {}", path.display()))
}

/// Whether `path` names a file whose image header can be read.
pub fn is_readable_image(path: &Path) -> bool {
    image::image_dimensions(path).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::filled(5, 3, [10, 20, 30]);
        img.put(4, 2, [255, 0, 7]);
        let path = dir.path().join("sub/x.png");
        save_png(&path, &img).unwrap();
        assert!(is_readable_image(&path));
        assert_eq!(load_rgb(&path).unwrap(), img);
        assert!(!is_readable_image(&dir.path().join("missing.png")));
    }
}
