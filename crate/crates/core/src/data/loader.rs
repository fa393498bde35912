use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Decodes one file, centre-crops it to a square and resizes it to `side`.
pub fn load_image_file(path: &Path, side: usize) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let edge = w.min(h);
    let cropped = image::imageops::crop_imm(&rgb, (w - edge) / 2, (h - edge) / 2, edge, edge).to_image();
    let sized = if edge as usize == side {
        cropped
    } else {
        image::imageops::resize(&cropped, side as u32, side as u32, FilterType::Triangle)
    };
    Ok(Image::from_rgb8(&sized))
}

/// Every decodable image under `dir` (not recursive), in lexicographic
/// file-name order. Files that fail to decode are skipped with a warning.
pub fn load_face_directory(dir: &Path, side: usize) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        match load_image_file(p, side) {
            Ok(img) => images.push(img),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("no readable images in {}", dir.display())));
    }
    Ok(images)
}
