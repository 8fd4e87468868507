//! Depth sequences on disk: 16-bit PNG depth maps in millimeters plus a
//! `frames.json` list of intrinsics and world-from-camera matrices.

use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use super::{DepthFrame, FusionError};
use crate::geometry::CameraIntrinsics;
use crate::raster::RasterError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    /// PNG path relative to the sequence directory.
    pub depth: String,
    pub intrinsics: CameraIntrinsics,
    pub world_from_camera: [[f64; 4]; 4],
}

/// Depth in meters to a 16-bit PNG in millimeters (rounded, saturating).
pub fn encode_depth_png(width: usize, height: usize, depth: &[f64]) -> Result<Vec<u8>, FusionError> {
    if depth.len() != width * height {
        return Err(FusionError::InvalidFrame(format!("{} depths for {width}x{height}", depth.len())));
    }
    let mm: Vec<u16> = depth.iter().map(|d| (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, mm).expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(RasterError::from)?;
    Ok(out.into_inner())
}

/// Inverse of [`encode_depth_png`]: `(width, height, meters)`.
pub fn decode_depth_png(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), FusionError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(RasterError::from)?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.pixels().map(|p| p.0[0] as f64 / 1000.0).collect()))
}

pub fn write_depth_sequence(dir: &Path, frames: &[DepthFrame]) -> Result<(), FusionError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let name = format!("depth_{i:04}.png");
        let png = encode_depth_png(f.intrinsics.width, f.intrinsics.height, &f.depth)?;
        std::fs::write(dir.join(&name), png)?;
        entries.push(FrameEntry {
            depth: name,
            intrinsics: f.intrinsics,
            world_from_camera: f.world_from_camera,
        });
    }
    let json = serde_json::to_vec_pretty(&entries).map_err(|e| FusionError::Manifest(e.to_string()))?;
    std::fs::write(dir.join("frames.json"), json)?;
    Ok(())
}

pub fn load_depth_sequence(dir: &Path) -> Result<Vec<DepthFrame>, FusionError> {
    let bytes = std::fs::read(dir.join("frames.json"))?;
    let entries: Vec<FrameEntry> = serde_json::from_slice(&bytes).map_err(|e| FusionError::Manifest(e.to_string()))?;
    entries
        .into_iter()
        .map(|e| {
            let (w, h, depth) = decode_depth_png(&std::fs::read(dir.join(&e.depth))?)?;
            if (w, h) != (e.intrinsics.width, e.intrinsics.height) {
                return Err(FusionError::InvalidFrame(format!(
                    "{} is {w}x{h}, intrinsics say {}x{}",
                    e.depth, e.intrinsics.width, e.intrinsics.height
                )));
            }
            let frame = DepthFrame {
                depth,
                intrinsics: e.intrinsics,
                world_from_camera: e.world_from_camera,
            };
            frame.camera()?;
            Ok(frame)
        })
        .collect()
}
