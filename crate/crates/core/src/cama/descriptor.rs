use crate::error::{Error, Result};
use crate::grid::Image;

/// Dense local feature provider. Any backend that yields a vector per pixel
/// can drive the alignment.
pub trait Descriptor: Send + Sync {
    /// Feature at `(x, y)`; `None` when the feature is degenerate (zero norm).
    fn describe(&self, image: &Image, x: usize, y: usize) -> Option<Vec<f64>>;
}

/// Mean-subtracted, L2-normalized `k×k` intensity patch over all channels,
/// zero padded at the borders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchDescriptor {
    size: usize,
}

impl PatchDescriptor {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::Parameter(format!("patch size must be odd and positive, got {size}")));
        }
        Ok(PatchDescriptor { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

impl Default for PatchDescriptor {
    fn default() -> Self {
        PatchDescriptor { size: 7 }
    }
}

impl Descriptor for PatchDescriptor {
    fn describe(&self, image: &Image, x: usize, y: usize) -> Option<Vec<f64>> {
        let r = (self.size / 2) as i64;
        let (h, w) = (image.height() as i64, image.width() as i64);
        let mut v = Vec::with_capacity(image.channels() * self.size * self.size);
        for c in 0..image.channels() {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                    let val = if sx >= 0 && sy >= 0 && sx < w && sy < h {
                        image.get(c, sy as usize, sx as usize)
                    } else {
                        0.0
                    };
                    v.push(val);
                }
            }
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|e| *e -= mean);
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return None;
        }
        v.iter_mut().for_each(|e| *e /= norm);
        Some(v)
    }
}

/// Cosine similarity of two feature vectors of equal length.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Descriptors for every pixel of one image, computed once and reused.
#[derive(Debug, Clone)]
pub struct DescriptorField {
    height: usize,
    width: usize,
    features: Vec<Option<Vec<f64>>>,
}

impl DescriptorField {
    pub fn compute<D: Descriptor + ?Sized>(image: &Image, descriptor: &D) -> Result<Self> {
        let first = image.data()[0];
        if image.data().iter().all(|&v| v == first) {
            return Err(Error::FlatImage);
        }
        let mut features = Vec::with_capacity(image.height() * image.width());
        for y in 0..image.height() {
            for x in 0..image.width() {
                features.push(descriptor.describe(image, x, y));
            }
        }
        if features.iter().all(Option::is_none) {
            return Err(Error::FlatImage);
        }
        Ok(DescriptorField {
            height: image.height(),
            width: image.width(),
            features,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&[f64]> {
        self.features[y * self.width + x].as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_is_unit_and_centered() {
        let img = Image::from_fn(1, 9, 9, |_, y, x| ((x * 7 + y * 3) % 5) as f64);
        let d = PatchDescriptor::default().describe(&img, 4, 4).unwrap();
        assert_eq!(d.len(), 49);
        assert!(d.iter().sum::<f64>().abs() < 1e-12);
        assert!((d.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_patch_is_degenerate() {
        let img = Image::filled(1, 9, 9, 0.5);
        assert!(PatchDescriptor::new(3).unwrap().describe(&img, 4, 4).is_none());
        assert!(matches!(
            DescriptorField::compute(&img, &PatchDescriptor::default()),
            Err(Error::FlatImage)
        ));
    }

    #[test]
    fn even_sizes_rejected() {
        assert!(PatchDescriptor::new(4).is_err());
        assert!(PatchDescriptor::new(0).is_err());
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }
}
