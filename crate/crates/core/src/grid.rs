//! Dense `C×H×W` grids and binary masks.
//!
//! The same [`Grid`] type carries images (values in `[0, 1]`) and latents;
//! the aliases [`Image`] and [`LatentGrid`] only document intent.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Integer pixel coordinate, `x` is the column and `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }
}

impl std::fmt::Display for Point {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

pub type LatentGrid = Grid;
pub type Image = Grid;

impl Grid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Grid {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Grid {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds a grid from channel-major data (`c`, then `y`, then `x`).
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "expected {} values for a {channels}x{height}x{width} grid, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite grid entry at index {i}")));
        }
        Ok(Grid {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Grid {
            channels,
            height,
            width,
            data,
        }
    }

    /// I.i.d. standard normal entries.
    pub fn standard_normal<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..channels * height * width)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Grid {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn ensure_mask_fits(&self, mask: &BinaryMask, what: &str) -> Result<()> {
        if (self.height, self.width) == (mask.height(), mask.width()) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: grid is {}x{}, mask is {}x{}",
                self.height,
                self.width,
                mask.height(),
                mask.width()
            )))
        }
    }

    /// Per-pixel intensity, the mean over channels.
    pub fn intensity(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(&self.data[c * plane..(c + 1) * plane]) {
                *o += v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    /// `(1 − M) ⊙ self`: zeroes every pixel covered by the mask.
    pub fn masked_out(&self, mask: &BinaryMask) -> Result<Grid> {
        self.ensure_mask_fits(mask, "masking")?;
        let mut out = self.clone();
        let plane = self.height * self.width;
        for c in 0..self.channels {
            for (p, &m) in mask.data().iter().enumerate() {
                if m {
                    out.data[c * plane + p] = 0.0;
                }
            }
        }
        Ok(out)
    }

    /// Takes `self` outside the mask and `inside` under it.
    ///
    /// Pixels with `M = 0` are copied verbatim, so they compare bit-equal to `self`.
    pub fn composite(&self, inside: &Grid, mask: &BinaryMask) -> Result<Grid> {
        self.ensure_same_shape(inside, "composite")?;
        self.ensure_mask_fits(mask, "composite")?;
        let mut out = self.clone();
        let plane = self.height * self.width;
        for c in 0..self.channels {
            for (p, &m) in mask.data().iter().enumerate() {
                if m {
                    out.data[c * plane + p] = inside.data[c * plane + p];
                }
            }
        }
        Ok(out)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Grid {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        out
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Grid {
        Grid::from_fn(self.channels, height, width, |c, y, x| {
            let sy = y * self.height / height;
            let sx = x * self.width / width;
            self.get(c, sy, sx)
        })
    }

    /// Translates contents by `(dx, dy)`; uncovered pixels take `fill`.
    pub fn shifted(&self, dx: i64, dy: i64, fill: f64) -> Grid {
        Grid::from_fn(self.channels, self.height, self.width, |c, y, x| {
            let sx = x as i64 - dx;
            let sy = y as i64 - dy;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                self.get(c, sy as usize, sx as usize)
            } else {
                fill
            }
        })
    }
}

/// `H×W` binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} mask values for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask {
            height,
            width,
            data,
        }
    }

    /// Binarizes real values: `v >= threshold` is on.
    pub fn from_threshold(height: usize, width: usize, values: &[f64], threshold: f64) -> Result<Self> {
        Self::from_vec(height, width, values.iter().map(|&v| v >= threshold).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-frame points read as off.
    pub fn get_point(&self, p: Point) -> bool {
        self.contains_point(p) && self.get(p.x as usize, p.y as usize)
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&m| m)
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.data.iter().enumerate().filter(|(_, &m)| m).map(move |(i, _)| {
            Point::new((i % self.width) as i64, (i / self.width) as i64)
        })
    }

    /// Mean `(x, y)` of the on pixels, `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for p in self.points() {
            sx += p.x as f64;
            sy += p.y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Centroid rounded to the nearest pixel (halves round away from zero).
    pub fn rounded_centroid(&self) -> Option<Point> {
        self.centroid()
            .map(|(x, y)| Point::new(x.round() as i64, y.round() as i64))
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.ensure_same_dims(other)?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        })
    }

    /// `true` when every on pixel of `self` is also on in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn ensure_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if (self.height, self.width) == (other.height, other.width) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "mask dims {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Integer translation; pixels leaving the frame are dropped.
    pub fn translated(&self, dx: i64, dy: i64) -> BinaryMask {
        let mut out = BinaryMask::empty(self.height, self.width);
        for p in self.points() {
            let q = Point::new(p.x + dx, p.y + dy);
            if out.contains_point(q) {
                out.set(q.x as usize, q.y as usize, true);
            }
        }
        out
    }

    pub fn flipped_horizontal(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn flipped_vertical(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |x, y| self.get(x, self.height - 1 - y))
    }

    pub fn to_grid(&self) -> Grid {
        Grid {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(Grid::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Grid::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Grid::from_vec(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn composite_keeps_background_bits() {
        let base = Grid::from_fn(2, 3, 3, |c, y, x| (c * 9 + y * 3 + x) as f64 / 17.0);
        let inside = Grid::filled(2, 3, 3, -1.0);
        let mask = BinaryMask::from_fn(3, 3, |x, y| x == 1 && y == 1);
        let out = base.composite(&inside, &mask).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    let want = if mask.get(x, y) { -1.0 } else { base.get(c, y, x) };
                    assert_eq!(out.get(c, y, x).to_bits(), want.to_bits());
                }
            }
        }
    }

    #[test]
    fn translation_clips_at_frame() {
        let m = BinaryMask::from_fn(4, 4, |x, y| x >= 2 && y < 2);
        let t = m.translated(1, 1);
        assert_eq!(t.count(), 2);
        assert!(t.get(3, 1) && t.get(3, 2));
        assert!(m.translated(10, 0).is_empty());
    }

    #[test]
    fn centroid_of_square() {
        let m = BinaryMask::from_fn(5, 5, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y));
        assert_eq!(m.rounded_centroid(), Some(Point::new(2, 2)));
        assert_eq!(BinaryMask::empty(3, 3).centroid(), None);
    }

    #[test]
    fn flips_are_involutions() {
        let m = BinaryMask::from_fn(3, 5, |x, y| x + 2 * y < 4);
        assert_eq!(m.flipped_horizontal().flipped_horizontal(), m);
        assert_eq!(m.flipped_vertical().flipped_vertical(), m);
        assert_eq!(m.flipped_horizontal().count(), m.count());
    }
}
