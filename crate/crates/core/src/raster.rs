//! Plane resampling and 8-bit PNG I/O for images and maps stored as
//! row-major `f64` planes in `[0, 1]`.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Min-max normalization to `[0, 1]`; a constant plane maps to zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

/// Point-sampled bilinear resampling of one plane on pixel centres with
/// clamped borders. Same-size requests return the input unchanged.
pub fn resize_bilinear(values: &[f64], width: usize, height: usize, new_width: usize, new_height: usize) -> Result<Vec<f64>> {
    if values.len() != width * height || width == 0 || height == 0 || new_width == 0 || new_height == 0 {
        return Err(Error::shape("resize", &[values.len()], &[width, height, new_width, new_height]));
    }
    if (width, height) == (new_width, new_height) {
        return Ok(values.to_vec());
    }
    let xs = taps(width, new_width);
    let ys = taps(height, new_height);
    let mut out = Vec::with_capacity(new_width * new_height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = values[y0 * width + x0] * (1.0 - fx) + values[y0 * width + x1] * fx;
            let bottom = values[y1 * width + x0] * (1.0 - fx) + values[y1 * width + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}

/// Source neighbours and blend weight for each output index along one axis.
fn taps(size: usize, new_size: usize) -> Vec<(usize, usize, f64)> {
    let scale = size as f64 / new_size as f64;
    let last = (size - 1) as f64;
    (0..new_size)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor();
            (lo as usize, (lo as usize + 1).min(size - 1), s - lo)
        })
        .collect()
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[0, 1]` plane as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, values.iter().map(|&v| to_byte(v)).collect())
        .ok_or_else(|| Error::shape("gray png", &[values.len()], &[width, height]))?;
    img.save(path)?;
    Ok(())
}

/// Reads any PNG as a grayscale plane in `[0, 1]`; returns `(values, width, height)`.
pub fn read_gray_png(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((img.into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect(), w as usize, h as usize))
}

/// Writes three channel planes (`[3 * H * W]`, channel-major) as an RGB PNG.
pub fn write_rgb_png(path: &Path, planes: &[f64], width: usize, height: usize) -> Result<()> {
    let plane = width * height;
    if planes.len() != 3 * plane {
        return Err(Error::shape("rgb png", &[planes.len()], &[3, height, width]));
    }
    let mut bytes = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            bytes.push(to_byte(planes[c * plane + p]));
        }
    }
    let img = RgbImage::from_raw(width as u32, height as u32, bytes).ok_or_else(|| Error::contract("rgb buffer size"))?;
    img.save(path)?;
    Ok(())
}

/// Reads any PNG as channel-major RGB planes in `[0, 1]`.
pub fn read_rgb_png(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut planes = vec![0.0; 3 * plane];
    for (p, px) in img.pixels().enumerate() {
        for c in 0..3 {
            planes[c * plane + p] = f64::from(px.0[c]) / 255.0;
        }
    }
    Ok((planes, w as usize, h as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_spans_the_unit_interval() {
        assert_eq!(min_max(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max(&[5.0, 5.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let v = vec![0.1, 0.7, 0.3, 0.9];
        assert_eq!(resize_bilinear(&v, 2, 2, 2, 2).unwrap(), v);
    }

    #[test]
    fn upsampling_a_constant_plane_keeps_it_constant() {
        let out = resize_bilinear(&[0.25; 16], 4, 4, 8, 8).unwrap();
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn png_round_trip_quantizes_to_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let v = vec![0.0, 0.5, 1.0, 0.2];
        write_gray_png(&path, &v, 2, 2).unwrap();
        let (back, w, h) = read_gray_png(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
