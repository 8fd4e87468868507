//! Binary sketches and silhouettes, with PNG conversion.

use std::io::Cursor;

use image::{GrayImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dimensions {0}x{1} do not match {2} values")]
    Dimensions(usize, usize, usize),
    #[error("sketch values must be 0 (stroke) or 1 (background)")]
    NotBinary,
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
}

/// Binary sketch: 0 marks a pen stroke, 1 is background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl SketchImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if pixels.len() != width * height {
            return Err(RasterError::Dimensions(width, height, pixels.len()));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(RasterError::NotBinary);
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![1; width * height],
        }
    }

    #[inline]
    pub fn is_stroke(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x] == 0
    }

    pub fn stroke_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 0).count()
    }

    /// Network input: 1.0 on strokes, 0.0 elsewhere.
    pub fn stroke_mask(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| if p == 0 { 1.0 } else { 0.0 }).collect()
    }

    /// Silhouette enclosed by the strokes: every pixel that cannot reach the
    /// image border through 4-connected background pixels.
    pub fn filled_region(&self) -> SilhouetteImage {
        let (w, h) = (self.width, self.height);
        let mut outside = vec![false; w * h];
        let mut stack = Vec::new();
        for x in 0..w {
            stack.push((x, 0));
            stack.push((x, h - 1));
        }
        for y in 0..h {
            stack.push((0, y));
            stack.push((w - 1, y));
        }
        while let Some((x, y)) = stack.pop() {
            let i = y * w + x;
            if outside[i] || self.pixels[i] == 0 {
                continue;
            }
            outside[i] = true;
            if x > 0 {
                stack.push((x - 1, y));
            }
            if x + 1 < w {
                stack.push((x + 1, y));
            }
            if y > 0 {
                stack.push((x, y - 1));
            }
            if y + 1 < h {
                stack.push((x, y + 1));
            }
        }
        SilhouetteImage {
            width: w,
            height: h,
            values: outside.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect(),
        }
    }

    /// Grayscale PNG with strokes black and background white.
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let img: GrayImage = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.is_stroke(x as usize, y as usize) { 0 } else { 255 }])
        });
        encode_png(&img)
    }
}

/// Per-pixel coverage in `[0, 1]`, row-major with row 0 at the top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SilhouetteImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, RasterError> {
        if values.len() != width * height {
            return Err(RasterError::Dimensions(width, height, values.len()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Values thresholded at `level` (inclusive) to {0, 1}.
    pub fn threshold(&self, level: f64) -> SilhouetteImage {
        SilhouetteImage {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .map(|&v| if v >= level { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn coverage(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Outer contour as a sketch: silhouette pixels with a 4-neighbour
    /// outside the filled silhouette (or on the image border) become strokes.
    pub fn outer_contour(&self) -> SketchImage {
        let (w, h) = (self.width, self.height);
        let mask = SketchImage {
            width: w,
            height: h,
            pixels: self.values.iter().map(|&v| if v >= 0.5 { 0 } else { 1 }).collect(),
        };
        // holes enclosed by the silhouette count as inside
        let solid = mask.filled_region();
        let inside = |x: isize, y: isize| -> bool {
            x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && solid.get(x as usize, y as usize) > 0.5
        };
        let mut pixels = vec![1u8; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                if inside(x, y)
                    && !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1))
                {
                    pixels[y as usize * w + x as usize] = 0;
                }
            }
        }
        SketchImage {
            width: w,
            height: h,
            pixels,
        }
    }

    /// 8-bit grayscale PNG with value `round(255·p)`.
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let img: GrayImage = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([(self.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
        });
        encode_png(&img)
    }
}

fn encode_png(img: &GrayImage) -> Result<Vec<u8>, RasterError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Decodes any PNG into 8-bit grayscale.
pub fn decode_gray_png(bytes: &[u8]) -> Result<GrayImage, RasterError> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_silhouette(n: usize, lo: usize, hi: usize) -> SilhouetteImage {
        let mut s = SilhouetteImage::zeros(n, n);
        for y in lo..hi {
            for x in lo..hi {
                s.values[y * n + x] = 1.0;
            }
        }
        s
    }

    #[test]
    fn contour_then_fill_recovers_silhouette() {
        let s = square_silhouette(16, 4, 12);
        let sketch = s.outer_contour();
        assert_eq!(sketch.stroke_count(), 4 * 8 - 4);
        assert_eq!(sketch.filled_region(), s);
    }

    #[test]
    fn png_roundtrip_of_sketch() {
        let sketch = square_silhouette(12, 2, 9).outer_contour();
        let png = sketch.to_png().unwrap();
        let img = decode_gray_png(&png).unwrap();
        let back: Vec<u8> = img.pixels().map(|p| if p.0[0] < 128 { 0 } else { 1 }).collect();
        assert_eq!(back, sketch.pixels);
    }

    #[test]
    fn silhouette_png_quantizes() {
        let s = SilhouetteImage::new(8, 8, (0..64).map(|i| i as f64 / 63.0).collect()).unwrap();
        let img = decode_gray_png(&s.to_png().unwrap()).unwrap();
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(7, 7).0[0], 255);
        assert_eq!(img.get_pixel(1, 0).0[0], (255.0f64 / 63.0).round() as u8);
    }

    #[test]
    fn sketch_validation() {
        assert!(SketchImage::new(2, 2, vec![0, 1, 2, 1]).is_err());
        assert!(SketchImage::new(2, 2, vec![0, 1]).is_err());
    }
}
