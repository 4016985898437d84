//! File formats: 8/16-bit PNG images and PFM float maps.
//!
//! Images are exchanged with the rest of the toolkit as `(H, W, C)` arrays
//! of `f64` in `[0, 1]`; PFM maps carry raw `f32` values (used here for
//! inverse depth). PFM scanlines are stored bottom-up per convention and the
//! sign of the scale token encodes endianness.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Loads an 8- or 16-bit, 1- or 3-channel PNG into `[0,1]` intensities.
pub fn load_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let arr = match img {
        DynamicImage::ImageLuma8(buf) => {
            Array3::from_shape_fn((h, w, 1), |(z, y, _)| buf.get_pixel(y as u32, z as u32)[0] as f64 / 255.0)
        }
        DynamicImage::ImageLuma16(buf) => {
            Array3::from_shape_fn((h, w, 1), |(z, y, _)| buf.get_pixel(y as u32, z as u32)[0] as f64 / 65535.0)
        }
        DynamicImage::ImageRgb8(buf) => Array3::from_shape_fn((h, w, 3), |(z, y, c)| {
            buf.get_pixel(y as u32, z as u32)[c] as f64 / 255.0
        }),
        DynamicImage::ImageRgb16(buf) => Array3::from_shape_fn((h, w, 3), |(z, y, c)| {
            buf.get_pixel(y as u32, z as u32)[c] as f64 / 65535.0
        }),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel layout {:?}; expected 8/16-bit gray or rgb",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(arr)
}

/// Loads a 16-bit grayscale PNG as raw integer values.
pub fn load_png16_gray(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma16(buf) => Ok(Array2::from_shape_fn((h, w), |(z, y)| {
            buf.get_pixel(y as u32, z as u32)[0] as f64
        })),
        other => Err(Error::Format(format!(
            "{}: expected 16-bit grayscale depth, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

fn quantize<const MAX: u32>(v: f64) -> u32 {
    (v.clamp(0.0, 1.0) * MAX as f64).round() as u32
}

/// Writes a 16-bit PNG; 1-channel arrays become grayscale, 3-channel rgb.
/// Values are clamped to `[0,1]`.
pub fn save_png16(path: &Path, img: &Array3<f64>) -> Result<()> {
    let (h, w, c) = img.dim();
    match c {
        1 => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |y, z| {
                Luma([quantize::<65535>(img[[z as usize, y as usize, 0]]) as u16])
            });
            buf.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
        3 => {
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |y, z| {
                Rgb([
                    quantize::<65535>(img[[z as usize, y as usize, 0]]) as u16,
                    quantize::<65535>(img[[z as usize, y as usize, 1]]) as u16,
                    quantize::<65535>(img[[z as usize, y as usize, 2]]) as u16,
                ])
            });
            buf.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
        _ => Err(Error::shape(format!("cannot encode {c}-channel image"))),
    }
}

/// Writes an 8-bit PNG for quick visualization.
pub fn save_png8(path: &Path, img: &Array3<f64>) -> Result<()> {
    let (h, w, c) = img.dim();
    match c {
        1 => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |y, z| {
                Luma([quantize::<255>(img[[z as usize, y as usize, 0]]) as u8])
            });
            buf.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
        3 => {
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |y, z| {
                Rgb([
                    quantize::<255>(img[[z as usize, y as usize, 0]]) as u8,
                    quantize::<255>(img[[z as usize, y as usize, 1]]) as u8,
                    quantize::<255>(img[[z as usize, y as usize, 2]]) as u8,
                ])
            });
            buf.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
        _ => Err(Error::shape(format!("cannot encode {c}-channel image"))),
    }
}

/// Reads a grayscale `Pf` map. The magnitude of the scale token is applied
/// as a multiplier.
pub fn read_pfm(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("{}: truncated header", path.display())));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(&bytes)?;
    if magic != "Pf" {
        return Err(Error::Format(format!(
            "{}: expected grayscale 'Pf' map, got '{magic}'",
            path.display()
        )));
    }
    let parse = |s: String, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("{}: bad {what} '{s}'", path.display())))
    };
    let w = parse(token(&bytes)?, "width")? as usize;
    let h = parse(token(&bytes)?, "height")? as usize;
    let scale = parse(token(&bytes)?, "scale")?;
    pos += 1; // single whitespace after the scale token
    let needed = w * h * 4;
    if bytes.len() < pos + needed {
        return Err(Error::Format(format!(
            "{}: expected {needed} bytes of samples, found {}",
            path.display(),
            bytes.len().saturating_sub(pos)
        )));
    }
    let little_endian = scale < 0.0;
    let mult = scale.abs();
    let mut out = Array2::zeros((h, w));
    for row in 0..h {
        // Scanlines run bottom-up.
        let z = h - 1 - row;
        for y in 0..w {
            let at = pos + (row * w + y) * 4;
            let raw: [u8; 4] = bytes[at..at + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            out[[z, y]] = v as f64 * mult;
        }
    }
    Ok(out)
}

/// Writes a grayscale `Pf` map, little-endian, bottom-up scanlines.
pub fn write_pfm(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let mut file = fs::File::create(path)?;
    write!(file, "Pf\n{w} {h}\n-1.0\n")?;
    let mut buf = Vec::with_capacity(w * h * 4);
    for row in 0..h {
        let z = h - 1 - row;
        for y in 0..w {
            buf.extend_from_slice(&(map[[z, y]] as f32).to_le_bytes());
        }
    }
    file.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn png16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = ChaCha12Rng::seed_from_u64(97);
        let img = Array::from_shape_fn((9, 7, 3), |_| rng.random::<f64>());
        save_png16(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.dim(), (9, 7, 3));
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn pfm_round_trip_is_exact_in_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pfm");
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let map = Array::from_shape_fn((6, 11), |_| (rng.random::<f64>() - 0.5) * 100.0);
        write_pfm(&path, &map).unwrap();
        let back = read_pfm(&path).unwrap();
        for (a, b) in map.iter().zip(back.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn pfm_rejects_color_maps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pfm");
        fs::write(&path, b"PF\n2 2\n-1.0\n").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Format(_))));
    }

    #[test]
    fn pfm_rejects_truncated_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pfm");
        fs::write(&path, b"Pf\n4 4\n-1.0\nxx").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Format(_))));
    }

    #[test]
    fn png_rejects_unsupported_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        let buf: image::ImageBuffer<image::Rgba<u8>, Vec<u8>> =
            image::ImageBuffer::from_fn(4, 4, |_, _| image::Rgba([1, 2, 3, 4]));
        buf.save(&path).unwrap();
        assert!(matches!(load_png(&path), Err(Error::Format(_))));
    }
}
