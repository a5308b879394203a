//! PNG reading and writing for images (`[0, 1]` floats) and binary masks.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image};

fn image_err(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| image_err(path, e))
}

/// Reads an 8-bit grayscale or RGB image. Alpha channels are dropped.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = match img {
        DynamicImage::ImageLuma8(g) => {
            Image::from_vec(1, h, w, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())?
        }
        DynamicImage::ImageLumaA8(_) => {
            let g = img.to_luma8();
            Image::from_vec(1, h, w, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())?
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let rgb = img.to_rgb8();
            Image::from_fn(3, h, w, |c, y, x| rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
        }
        other => return Err(image_err(path, format!("unsupported pixel format {:?}", other.color()))),
    };
    Ok(grid)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel image, clamping to `[0, 1]` first.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = match img.channels() {
        1 => {
            let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([quantize(img.get(0, y as usize, x as usize))]));
            buf.save(path)
        }
        3 => {
            let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
                Rgb([0, 1, 2].map(|c| quantize(img.get(c, y as usize, x as usize))))
            });
            buf.save(path)
        }
        c => return Err(image_err(path, format!("cannot write a {c}-channel image"))),
    };
    result.map_err(|e| image_err(path, e))
}

/// Reads a mask; pixels with intensity `>= 128` are on.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let g = open(path)?.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    BinaryMask::from_vec(h, w, g.into_raw().into_iter().map(|v| v >= 128).collect())
}

/// Writes a single-channel 0/255 mask.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let buf: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    buf.save(path).map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_is_exact_on_the_8bit_lattice() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(3, 5, 4, |c, y, x| ((c * 31 + y * 17 + x * 5) % 256) as f64 / 255.0);
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let img = Image::from_vec(1, 1, 3, vec![-0.5, 0.5, 1.7]).unwrap();
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn mask_threshold_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        GrayImage::from_raw(4, 1, vec![0, 127, 128, 255]).unwrap().save(&p).unwrap();
        let m = read_mask(&p).unwrap();
        assert_eq!(m.data(), &[false, false, true, true]);
        let q = dir.path().join("m2.png");
        write_mask(&q, &m).unwrap();
        assert_eq!(read_mask(&q).unwrap(), m);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_image(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
        assert_eq!(err.exit_code(), 4);
    }
}
