//! 8-bit RGB raster images and boolean masks, plus PNG I/O.
//!
//! Screenshots cross every pipeline boundary in this form: the renderer and
//! augmentation rules produce them, the detector consumes them, and masks
//! carry the ground truth for saliency scoring (PNG grayscale, 255 = glitch).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB8 image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRGB {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageRGB {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be nonzero, got {width}x{height}"
            )));
        }
        Ok(ImageRGB { width, height, pixels: vec![0; (width * height * 3) as usize] })
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Result<Self> {
        let mut img = Self::new(width, height)?;
        for p in img.pixels.chunks_exact_mut(3) {
            p.copy_from_slice(&color);
        }
        Ok(img)
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be nonzero".into()));
        }
        if pixels.len() != (width * height * 3) as usize {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer of {} bytes does not match {width}x{height} RGB",
                pixels.len()
            )));
        }
        Ok(ImageRGB { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, color: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    /// Bilinear stretch-resize (no letterboxing). Identity dimensions return
    /// the exact original bytes.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Result<ImageRGB> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("resize target must be nonzero".into()));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let mut out = ImageRGB::new(width, height)?;
        let sx_scale = self.width as f64 / width as f64;
        let sy_scale = self.height as f64 / height as f64;
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = sy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = sy - y0 as f64;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = sx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = sx - x0 as f64;
                let mut color = [0u8; 3];
                for ch in 0..3 {
                    let p00 = self.get(x0, y0)[ch] as f64;
                    let p10 = self.get(x1, y0)[ch] as f64;
                    let p01 = self.get(x0, y1)[ch] as f64;
                    let p11 = self.get(x1, y1)[ch] as f64;
                    let top = p00 + (p10 - p00) * fx;
                    let bot = p01 + (p11 - p01) * fx;
                    let v = top + (bot - top) * fy;
                    color[ch] = v.round().clamp(0.0, 255.0) as u8;
                }
                out.set(x, y, color);
            }
        }
        Ok(out)
    }

    /// 90-degree clockwise rotation: a WxH image becomes HxW.
    pub fn rotate90_cw(&self) -> ImageRGB {
        let mut out = ImageRGB {
            width: self.height,
            height: self.width,
            pixels: vec![0; self.pixels.len()],
        };
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.height - 1 - y, x, self.get(x, y));
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer =
            encoder.write_header().map_err(|e| Error::image(path, e.to_string()))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::image(path, e.to_string()))?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<ImageRGB> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(file);
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader =
            decoder.read_info().map_err(|e| Error::image(path, e.to_string()))?;
        let mut buf = vec![0u8; reader.output_buffer_size()];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::image(path, e.to_string()))?;
        buf.truncate(info.buffer_size());
        let (width, height) = (info.width, info.height);
        let pixels = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => {
                buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
            }
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => {
                buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect()
            }
            other => {
                return Err(Error::image(path, format!("unsupported color type {other:?}")));
            }
        };
        ImageRGB::from_pixels(width, height, pixels)
    }
}

/// Per-pixel boolean glitch mask. Saved as 8-bit grayscale PNG, 255 = glitch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Fraction of pixels set.
    pub fn density(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// Marks every pixel where the two images differ (exact byte equality).
    pub fn from_difference(a: &ImageRGB, b: &ImageRGB) -> Result<Mask> {
        if a.width() != b.width() || a.height() != b.height() {
            return Err(Error::InvalidArgument(format!(
                "difference mask over {}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            )));
        }
        let mut mask = Mask::new(a.width(), a.height());
        for y in 0..a.height() {
            for x in 0..a.width() {
                if a.get(x, y) != b.get(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        Ok(mask)
    }

    pub fn resize_nearest(&self, width: u32, height: u32) -> Mask {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Mask::new(width, height);
        for y in 0..height {
            let sy = ((y as u64 * self.height as u64) / height as u64) as u32;
            for x in 0..width {
                let sx = ((x as u64 * self.width as u64) / width as u64) as u32;
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }

    pub fn rotate90_cw(&self) -> Mask {
        let mut out = Mask::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.height - 1 - y, x, self.get(x, y));
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer =
            encoder.write_header().map_err(|e| Error::image(path, e.to_string()))?;
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::image(path, e.to_string()))?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Mask> {
        let img = ImageRGB::load_png(path)?;
        let mut mask = Mask::new(img.width(), img.height());
        for y in 0..img.height() {
            for x in 0..img.width() {
                mask.set(x, y, img.get(x, y)[0] >= 128);
            }
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dimension_rejected() {
        assert!(ImageRGB::new(0, 4).is_err());
        assert!(ImageRGB::new(4, 0).is_err());
    }

    #[test]
    fn identity_resize_is_exact() {
        let mut img = ImageRGB::new(5, 3).unwrap();
        img.set(2, 1, [10, 200, 30]);
        let same = img.resize_bilinear(5, 3).unwrap();
        assert_eq!(same, img);
    }

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = ImageRGB::filled(8, 4, [90, 120, 33]).unwrap();
        let out = img.resize_bilinear(3, 5).unwrap();
        for y in 0..5 {
            for x in 0..3 {
                assert_eq!(out.get(x, y), [90, 120, 33]);
            }
        }
    }

    #[test]
    fn rotate_clockwise_maps_corners() {
        // 2x1 image: [A B] rotated clockwise becomes a 1x2 column [A; B].
        let mut img = ImageRGB::new(2, 1).unwrap();
        img.set(0, 0, [1, 1, 1]);
        img.set(1, 0, [2, 2, 2]);
        let rot = img.rotate90_cw();
        assert_eq!((rot.width(), rot.height()), (1, 2));
        assert_eq!(rot.get(0, 0), [1, 1, 1]);
        assert_eq!(rot.get(0, 1), [2, 2, 2]);
    }

    #[test]
    fn png_round_trip() {
        let dir = std::env::temp_dir().join("glitchkit_image_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.png");
        let mut img = ImageRGB::new(7, 5).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                img.set(x, y, [(x * 30) as u8, (y * 40) as u8, 77]);
            }
        }
        img.save_png(&path).unwrap();
        let loaded = ImageRGB::load_png(&path).unwrap();
        assert_eq!(loaded, img);
    }

    #[test]
    fn mask_round_trip_and_difference() {
        let dir = std::env::temp_dir().join("glitchkit_image_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mask.png");
        let a = ImageRGB::filled(4, 4, [0, 0, 0]).unwrap();
        let mut b = a.clone();
        b.set(1, 2, [255, 0, 0]);
        let mask = Mask::from_difference(&a, &b).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.get(1, 2));
        mask.save_png(&path).unwrap();
        assert_eq!(Mask::load_png(&path).unwrap(), mask);
    }

    #[test]
    fn nearest_resize_preserves_solid_regions() {
        let mut mask = Mask::new(4, 4);
        for y in 0..4 {
            for x in 0..2 {
                mask.set(x, y, true);
            }
        }
        let small = mask.resize_nearest(2, 2);
        assert!(small.get(0, 0) && small.get(0, 1));
        assert!(!small.get(1, 0) && !small.get(1, 1));
    }
}
