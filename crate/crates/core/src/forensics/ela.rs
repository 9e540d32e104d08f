use image::codecs::jpeg::JpegEncoder;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use rand::distributions::{Distribution, Uniform};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::error::{EmberError, Result};

/// Error level used when none is configured.
pub const DEFAULT_ERROR_LEVEL: f64 = 0.3;

/// Pooling grid used when projecting a map or image down to a feature vector.
const POOL_GRID: usize = 16;

/// Per-pixel recompression difference, normalized to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ElaMap {
    width: u32,
    height: u32,
    magnitudes: Vec<f64>,
}

impl ElaMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.magnitudes[(y * self.width + x) as usize]
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.magnitudes.is_empty() {
            return 0.0;
        }
        self.magnitudes.iter().sum::<f64>() / self.magnitudes.len() as f64
    }

    /// Mean over the half-open pixel rectangle `[x0, x1) x [y0, y1)`.
    pub fn mean_in_rect(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                sum += self.get(x, y);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Grayscale heatmap; magnitude 1.0 maps to white.
    pub fn to_heatmap(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([(self.get(x, y) * 255.0).round().clamp(0.0, 255.0) as u8])
        })
    }
}

fn encode_jpeg(img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let encoder = JpegEncoder::new_with_quality(&mut bytes, quality);
    img.write_with_encoder(encoder)?;
    Ok(bytes)
}

/// Map an error level to the recompression quality: `q = round((1 - r) * 100)`.
pub(crate) fn quality_for(error_level: f64) -> u8 {
    ((1.0 - error_level) * 100.0).round().clamp(1.0, 100.0) as u8
}

/// Error level analysis: recompress the image at a lossy quality derived from
/// `error_level`, take the per-pixel absolute difference against the source
/// and normalize by 255. Non-JPEG sources are first materialized at
/// quality 95 so every input has a compression history.
pub fn ela(image_bytes: &[u8], error_level: f64) -> Result<ElaMap> {
    if !(0.0..1.0).contains(&error_level) {
        return Err(EmberError::Config(format!(
            "error level must lie in [0, 1), got {error_level}"
        )));
    }
    let format = image::guess_format(image_bytes).ok();
    let decoded = image::load_from_memory(image_bytes)?;
    let original: RgbImage = if format == Some(ImageFormat::Jpeg) {
        decoded.to_rgb8()
    } else {
        let seeded = encode_jpeg(&decoded.to_rgb8(), 95)?;
        image::load_from_memory(&seeded)?.to_rgb8()
    };

    let recompressed_bytes = encode_jpeg(&original, quality_for(error_level))?;
    let recompressed = image::load_from_memory(&recompressed_bytes)?.to_rgb8();

    let (width, height) = original.dimensions();
    let mut magnitudes = Vec::with_capacity((width * height) as usize);
    for (a, b) in original.pixels().zip(recompressed.pixels()) {
        let diff =
            a.0.iter()
                .zip(b.0.iter())
                .map(|(&x, &y)| (x as i16 - y as i16).unsigned_abs())
                .max()
                .unwrap_or(0);
        magnitudes.push(diff as f64 / 255.0);
    }
    Ok(ElaMap {
        width,
        height,
        magnitudes,
    })
}

/// Mean-pool a grid of values down to `POOL_GRID x POOL_GRID` cells.
fn pool_grid(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut pooled = vec![0.0; POOL_GRID * POOL_GRID];
    let mut counts = vec![0usize; POOL_GRID * POOL_GRID];
    for y in 0..height {
        for x in 0..width {
            let gx = x * POOL_GRID / width.max(1);
            let gy = y * POOL_GRID / height.max(1);
            let cell = gy.min(POOL_GRID - 1) * POOL_GRID + gx.min(POOL_GRID - 1);
            pooled[cell] += values[y * width + x];
            counts[cell] += 1;
        }
    }
    for (p, c) in pooled.iter_mut().zip(counts) {
        if c > 0 {
            *p /= c as f64;
        }
    }
    pooled
}

/// Project pooled cells to a fixed-width vector through a seeded random map,
/// standing in for a backbone when no precomputed feature is supplied.
fn project(pooled: &[f64], width: usize, seed: u64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-1.0, 1.0);
    let scale = 1.0 / (pooled.len() as f64).sqrt();
    (0..width)
        .map(|_| {
            pooled
                .iter()
                .map(|&v| v * dist.sample(&mut rng) * scale)
                .sum()
        })
        .collect()
}

/// Fixed-width vector from an ELA map via mean pooling and a seeded random
/// projection. Deterministic for a given `(width, seed)`.
pub fn ela_feature_vector(map: &ElaMap, width: usize, seed: u64) -> Vec<f64> {
    let pooled = pool_grid(
        map.magnitudes(),
        map.width() as usize,
        map.height() as usize,
    );
    project(&pooled, width, seed)
}

/// Fixed-width vector from the image itself (luma grid), same projection
/// scheme as [`ela_feature_vector`] but a distinct seed stream.
pub fn luma_feature_vector(img: &DynamicImage, width: usize, seed: u64) -> Vec<f64> {
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let values: Vec<f64> = gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    let pooled = pool_grid(&values, w as usize, h as usize);
    project(&pooled, width, seed ^ 0x5f5f_5f5f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Smooth low-frequency texture plus seeded noise, so JPEG is genuinely lossy.
    pub(crate) fn textured_image(width: u32, height: u32, seed: u64) -> RgbImage {
        let mut rng = StdRng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..(width * height) as usize)
            .map(|_| rng.gen_range(-20.0..20.0))
            .collect();
        RgbImage::from_fn(width, height, |x, y| {
            let base = 128.0
                + 60.0 * ((x as f64) * 0.11).sin()
                + 50.0 * ((y as f64) * 0.07).cos()
                + noise[(y * width + x) as usize];
            let r = base.clamp(0.0, 255.0) as u8;
            let g = (base * 0.8).clamp(0.0, 255.0) as u8;
            let b = (255.0 - base).clamp(0.0, 255.0) as u8;
            image::Rgb([r, g, b])
        })
    }

    fn png_bytes(img: &RgbImage) -> Vec<u8> {
        let mut bytes = Vec::new();
        DynamicImage::ImageRgb8(img.clone())
            .write_to(&mut std::io::Cursor::new(&mut bytes), ImageFormat::Png)
            .unwrap();
        bytes
    }

    #[test]
    fn error_level_maps_to_quality() {
        assert_eq!(quality_for(0.3), 70);
        assert_eq!(quality_for(0.05), 95);
        assert_eq!(quality_for(0.0), 100);
    }

    #[test]
    fn solid_color_image_has_tiny_residual() {
        let img = RgbImage::from_pixel(96, 96, image::Rgb([120, 90, 200]));
        let map = ela(&png_bytes(&img), DEFAULT_ERROR_LEVEL).unwrap();
        assert_eq!((map.width(), map.height()), (96, 96));
        assert!(map.mean_magnitude() < 0.02, "mean {}", map.mean_magnitude());
        assert!(map.magnitudes().iter().all(|&m| (0.0..=1.0).contains(&m)));
    }

    #[test]
    fn double_compression_lowers_the_residual() {
        let img = textured_image(128, 128, 3);
        let q70 = encode_jpeg(&img, 70).unwrap();
        let q95 = encode_jpeg(&img, 95).unwrap();
        let m70 = ela(&q70, DEFAULT_ERROR_LEVEL).unwrap().mean_magnitude();
        let m95 = ela(&q95, DEFAULT_ERROR_LEVEL).unwrap().mean_magnitude();
        assert!(
            m70 < m95,
            "already-at-q70 image should re-compress more quietly: {m70} vs {m95}"
        );
    }

    #[test]
    fn spliced_patch_stands_out() {
        // Background with a settled compression history, fresh patch on top.
        let background = textured_image(128, 128, 5);
        let settled_bytes = encode_jpeg(&background, 70).unwrap();
        let mut canvas = image::load_from_memory(&settled_bytes).unwrap().to_rgb8();
        let patch = textured_image(32, 32, 99);
        for y in 0..32 {
            for x in 0..32 {
                canvas.put_pixel(48 + x, 48 + y, *patch.get_pixel(x, y));
            }
        }
        let tampered = encode_jpeg(&canvas, 95).unwrap();
        let map = ela(&tampered, DEFAULT_ERROR_LEVEL).unwrap();
        let inside = map.mean_in_rect(48, 48, 80, 80);
        let outside = (map.mean_in_rect(0, 0, 48, 128) + map.mean_in_rect(80, 0, 128, 128)) / 2.0;
        assert!(inside > outside, "patch {inside} vs background {outside}");
    }

    #[test]
    fn ela_is_deterministic() {
        let img = textured_image(64, 64, 11);
        let bytes = png_bytes(&img);
        let a = ela(&bytes, 0.3).unwrap();
        let b = ela(&bytes, 0.3).unwrap();
        assert_eq!(a.magnitudes(), b.magnitudes());
    }

    #[test]
    fn undecodable_bytes_error() {
        assert!(ela(b"not an image", 0.3).is_err());
    }

    #[test]
    fn feature_vectors_are_seed_deterministic() {
        let img = textured_image(64, 48, 2);
        let map = ela(&png_bytes(&img), 0.3).unwrap();
        let a = ela_feature_vector(&map, 32, 7);
        let b = ela_feature_vector(&map, 32, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
        let c = ela_feature_vector(&map, 32, 8);
        assert_ne!(a, c);
        let l = luma_feature_vector(&DynamicImage::ImageRgb8(img), 32, 7);
        assert_eq!(l.len(), 32);
        assert_ne!(a, l);
    }
}
