//! Default object-support extractor: Otsu threshold, largest connected
//! component, hole filling.

use std::collections::VecDeque;

use crate::grid::{BinaryMask, Image};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Foreground {
    pub mask: BinaryMask,
    /// Set when the image offered no usable contrast.
    pub low_confidence: bool,
}

/// Otsu threshold over a 256-bin histogram spanning `[min, max]`.
/// Values strictly above the returned threshold form the upper class.
/// `None` when all values are equal.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    const BINS: usize = 256;
    let scale = (BINS - 1) as f64 / (hi - lo);
    let mut hist = [0usize; BINS];
    for &v in values {
        hist[((v - lo) * scale).round() as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0usize);
    for (i, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    // Midway between the last bin of the lower class and the next one.
    Some(lo + (best_bin as f64 + 0.5) / scale)
}

fn neighbours(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let mut out = [usize::MAX; 4];
    if x > 0 {
        out[0] = i - 1;
    }
    if x + 1 < w {
        out[1] = i + 1;
    }
    if y > 0 {
        out[2] = i - w;
    }
    if y + 1 < h {
        out[3] = i + w;
    }
    out.into_iter().filter(|&j| j != usize::MAX)
}

/// Largest 4-connected component; ties go to the one found first in scan order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![0usize; w * h];
    let mut next = 0;
    let (mut best_label, mut best_size) = (0, 0);
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for j in neighbours(i, w, h) {
                if mask.data()[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if size > best_size {
            best_size = size;
            best_label = next;
        }
    }
    let data = label.iter().map(|&l| l != 0 && l == best_label).collect();
    BinaryMask::from_vec(h, w, data).expect("same dims")
}

/// Turns on every off pixel not 4-connected to the frame border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        let (x, y) = (i % w, i / w);
        let border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
        if border && !mask.data()[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in neighbours(i, w, h) {
            if !mask.data()[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    BinaryMask::from_vec(h, w, outside.iter().map(|&o| !o).collect()).expect("same dims")
}

/// Default foreground extractor.
///
/// The class holding the majority of border pixels is taken as background.
pub fn foreground_mask(image: &Image) -> Foreground {
    let (h, w) = (image.height(), image.width());
    let intensity = image.intensity();
    let Some(thr) = otsu_threshold(&intensity) else {
        log::warn!("uniform image: foreground covers the whole frame");
        return Foreground {
            mask: BinaryMask::full(h, w),
            low_confidence: true,
        };
    };
    let mut upper = BinaryMask::from_fn(h, w, |x, y| intensity[y * w + x] > thr);
    let border: Vec<bool> = (0..h * w)
        .filter(|i| {
            let (x, y) = (i % w, i / w);
            x == 0 || y == 0 || x + 1 == w || y + 1 == h
        })
        .map(|i| upper.data()[i])
        .collect();
    if border.iter().filter(|&&b| b).count() * 2 > border.len() {
        upper = BinaryMask::from_fn(h, w, |x, y| !upper.get(x, y));
    }
    let mask = fill_holes(&largest_component(&upper));
    let low_confidence = mask.is_empty();
    Foreground { mask, low_confidence }
}
