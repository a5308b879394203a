//! Context-aware mask alignment.
//!
//! Three keypoints on the vertical line through an exemplar mask's centroid
//! are matched into the normal image. The matched upper and lower points
//! span a candidate line; the relocated centre is the best-scoring pixel on
//! that line inside the object foreground, and the mask is translated there
//! and intersected with the foreground.

mod descriptor;
mod foreground;

pub use descriptor::{cosine, Descriptor, DescriptorField, PatchDescriptor};
pub use foreground::{fill_holes, foreground_mask, largest_component, otsu_threshold, Foreground};

use std::fmt::Write as _;

use crate::error::{AlignStage, Error, Result};
use crate::grid::{BinaryMask, Image, Point};
use crate::trainer::AnomalyExemplar;

/// Centre, upper and lower keypoints sharing one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeypointTriple {
    pub center: Point,
    pub upper: Point,
    pub lower: Point,
}

/// Picks the keypoints from a mask.
///
/// The centre is the rounded centroid; upper and lower are the extreme mask
/// pixels of its column. When that column holds no mask pixel, the nearest
/// column that does is used (ties go to the smaller `x`) and the centre moves
/// to the midpoint of that column's mask pixels.
pub fn extract_keypoints(mask: &BinaryMask) -> Result<KeypointTriple> {
    let centroid = mask
        .rounded_centroid()
        .ok_or_else(|| Error::EmptyMask("cannot place keypoints on an empty mask".into()))?;
    let span = |x: usize| -> Option<(i64, i64)> {
        let mut ys = (0..mask.height()).filter(|&y| mask.get(x, y));
        let top = ys.next()? as i64;
        let bottom = ys.next_back().map_or(top, |b| b as i64);
        Some((top, bottom))
    };
    let cx = centroid.x as usize;
    let triple = match span(cx) {
        Some((top, bottom)) => KeypointTriple {
            center: Point::new(centroid.x, centroid.y.clamp(top, bottom)),
            upper: Point::new(centroid.x, top),
            lower: Point::new(centroid.x, bottom),
        },
        None => {
            let x = (0..mask.width())
                .filter(|&x| span(x).is_some())
                .min_by_key(|&x| (x.abs_diff(cx), x))
                .expect("mask is nonempty");
            let (top, bottom) = span(x).unwrap();
            let x = x as i64;
            KeypointTriple {
                center: Point::new(x, (top + bottom) / 2),
                upper: Point::new(x, top),
                lower: Point::new(x, bottom),
            }
        }
    };
    if triple.upper == triple.lower {
        log::warn!("mask column at x = {} is a single pixel; keypoints coincide", triple.center.x);
    }
    Ok(triple)
}

/// Dense per-pixel match scores in the normal image's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SimilarityMap {
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || data.is_empty() {
            return Err(Error::Shape(format!(
                "similarity map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("similarity map has non-finite scores".into()));
        }
        Ok(SimilarityMap { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, p: Point) -> f64 {
        self.data[p.y as usize * self.width + p.x as usize]
    }

    /// Global argmax; ties go to smaller `y`, then smaller `x`.
    pub fn argmax(&self) -> Point {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        Point::new((best % self.width) as i64, (best / self.width) as i64)
    }
}

fn similarity_against(keypoint: Point, anomaly: &Image, field: &DescriptorField, descriptor: &(impl Descriptor + ?Sized)) -> Result<SimilarityMap> {
    let inside = keypoint.x >= 0
        && keypoint.y >= 0
        && (keypoint.x as usize) < anomaly.width()
        && (keypoint.y as usize) < anomaly.height();
    if !inside {
        return Err(Error::Parameter(format!("keypoint ({keypoint}) lies outside the exemplar image")));
    }
    let (x, y) = (keypoint.x as usize, keypoint.y as usize);
    let key = descriptor
        .describe(anomaly, x, y)
        .ok_or(Error::DegenerateDescriptor { x, y })?;
    let mut data = Vec::with_capacity(field.height() * field.width());
    for qy in 0..field.height() {
        for qx in 0..field.width() {
            data.push(field.get(qx, qy).map_or(0.0, |f| cosine(&key, f)));
        }
    }
    SimilarityMap::from_vec(field.height(), field.width(), data)
}

/// Cosine similarity between the exemplar descriptor at `keypoint` and the
/// normal image's descriptor at every pixel. Degenerate normal-image pixels
/// score 0.
pub fn similarity_map<D: Descriptor + ?Sized>(
    keypoint: Point,
    anomaly: &Image,
    normal: &Image,
    descriptor: &D,
) -> Result<SimilarityMap> {
    let field = DescriptorField::compute(normal, descriptor)?;
    similarity_against(keypoint, anomaly, &field, descriptor)
}

/// Rasterized segment between two points, endpoints included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateLine {
    pub start: Point,
    pub end: Point,
    pub pixels: Vec<Point>,
}

impl CandidateLine {
    /// Integer Bresenham walk from `start` to `end`.
    pub fn new(start: Point, end: Point) -> Self {
        let (dx, dy) = ((end.x - start.x).abs(), -(end.y - start.y).abs());
        let (sx, sy) = ((end.x - start.x).signum(), (end.y - start.y).signum());
        let mut err = dx + dy;
        let mut p = start;
        let mut pixels = Vec::with_capacity((dx.max(-dy) + 1) as usize);
        loop {
            pixels.push(p);
            if p == end {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                p.x += sx;
            }
            if e2 <= dx {
                err += dx;
                p.y += sy;
            }
        }
        CandidateLine { start, end, pixels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenterChoice {
    pub point: Point,
    /// The line missed the foreground; the point is the foreground-wide argmax.
    pub fallback: bool,
}

fn best_of(scores: &SimilarityMap, points: impl Iterator<Item = Point>) -> Option<Point> {
    points.fold(None, |best: Option<Point>, p| match best {
        None => Some(p),
        Some(b) => {
            let (sp, sb) = (scores.get(p), scores.get(b));
            if sp > sb || (sp == sb && (p.y, p.x) < (b.y, b.x)) {
                Some(p)
            } else {
                Some(b)
            }
        }
    })
}

/// Best `S_c` pixel on the segment `upper → lower` inside the foreground.
///
/// Ties go to smaller `y`, then smaller `x`. When no segment pixel is in the
/// foreground, falls back to the best foreground pixel overall.
pub fn constrained_center(
    scores: &SimilarityMap,
    upper: Point,
    lower: Point,
    foreground: &BinaryMask,
) -> Result<CenterChoice> {
    if (foreground.height(), foreground.width()) != (scores.height(), scores.width()) {
        return Err(Error::Shape(format!(
            "foreground {}x{} vs similarity map {}x{}",
            foreground.height(),
            foreground.width(),
            scores.height(),
            scores.width()
        )));
    }
    if foreground.is_empty() {
        return Err(Error::EmptyMask("foreground mask is empty".into()));
    }
    for p in [upper, lower] {
        if !foreground.contains_point(p) {
            return Err(Error::Parameter(format!("line endpoint ({p}) lies outside the image")));
        }
    }
    let line = CandidateLine::new(upper, lower);
    if let Some(point) = best_of(scores, line.pixels.iter().copied().filter(|&p| foreground.get_point(p))) {
        return Ok(CenterChoice { point, fallback: false });
    }
    let point = best_of(scores, foreground.points()).expect("foreground is nonempty");
    Ok(CenterChoice { point, fallback: true })
}

/// Moves the mask's rounded centroid onto `center`, drops pixels leaving the
/// frame, and intersects with the foreground.
pub fn relocate_mask(mask: &BinaryMask, center: Point, foreground: &BinaryMask) -> Result<BinaryMask> {
    mask.ensure_same_dims(foreground)?;
    let c = mask
        .rounded_centroid()
        .ok_or_else(|| Error::EmptyMask("cannot relocate an empty mask".into()))?;
    let moved = mask.translated(center.x - c.x, center.y - c.y).and(foreground)?;
    if moved.is_empty() {
        return Err(Error::EmptyMask(format!(
            "mask moved to ({center}) has no pixels inside the frame and foreground"
        )));
    }
    Ok(moved)
}

/// Outcome of one alignment with everything needed for the sidecar file.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub mask: BinaryMask,
    pub exemplar_id: String,
    pub keypoints: KeypointTriple,
    pub upper_match: Point,
    pub lower_match: Point,
    pub center: Point,
    pub fallback: bool,
}

impl Alignment {
    /// `key = value` sidecar text.
    pub fn sidecar(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "exemplar = {}", self.exemplar_id);
        let _ = writeln!(s, "p_u = {}", self.keypoints.upper);
        let _ = writeln!(s, "p_c = {}", self.keypoints.center);
        let _ = writeln!(s, "p_l = {}", self.keypoints.lower);
        let _ = writeln!(s, "q_u = {}", self.upper_match);
        let _ = writeln!(s, "q_l = {}", self.lower_match);
        let _ = writeln!(s, "q_c = {}", self.center);
        let _ = writeln!(s, "fallback = {}", self.fallback);
        s
    }
}

/// Full alignment of `mask` onto `normal` using `exemplar` for correspondence.
pub fn align<D: Descriptor + ?Sized>(
    mask: &BinaryMask,
    exemplar: &AnomalyExemplar,
    normal: &Image,
    descriptor: &D,
    foreground: &BinaryMask,
) -> Result<Alignment> {
    if (mask.height(), mask.width()) != (normal.height(), normal.width()) {
        return Err(Error::Shape(format!(
            "mask {}x{} does not fit normal image {}x{}",
            mask.height(),
            mask.width(),
            normal.height(),
            normal.width()
        )));
    }
    if foreground.is_empty() {
        return Err(Error::EmptyMask("foreground mask is empty".into()).at_stage(AlignStage::Foreground));
    }
    let keypoints = extract_keypoints(exemplar.mask()).map_err(|e| e.at_stage(AlignStage::Keypoints))?;
    let field = DescriptorField::compute(normal, descriptor).map_err(|e| e.at_stage(AlignStage::Similarity))?;
    let sim = |p| similarity_against(p, exemplar.image(), &field, descriptor).map_err(|e| e.at_stage(AlignStage::Similarity));
    let s_u = sim(keypoints.upper)?;
    let s_c = sim(keypoints.center)?;
    let s_l = sim(keypoints.lower)?;
    let (upper_match, lower_match) = (s_u.argmax(), s_l.argmax());
    let choice = constrained_center(&s_c, upper_match, lower_match, foreground)
        .map_err(|e| e.at_stage(AlignStage::Center))?;
    let aligned = relocate_mask(mask, choice.point, foreground).map_err(|e| e.at_stage(AlignStage::Relocate))?;
    Ok(Alignment {
        mask: aligned,
        exemplar_id: exemplar.id().to_string(),
        keypoints,
        upper_match,
        lower_match,
        center: choice.point,
        fallback: choice.fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_keypoints() {
        let m = BinaryMask::from_fn(5, 5, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y));
        let k = extract_keypoints(&m).unwrap();
        assert_eq!(k.center, Point::new(2, 2));
        assert_eq!(k.upper, Point::new(2, 1));
        assert_eq!(k.lower, Point::new(2, 3));
    }

    #[test]
    fn single_pixel_keypoints_coincide() {
        let m = BinaryMask::from_fn(6, 6, |x, y| x == 4 && y == 4);
        let k = extract_keypoints(&m).unwrap();
        assert!(k.center == Point::new(4, 4) && k.upper == k.center && k.lower == k.center);
        assert!(matches!(extract_keypoints(&BinaryMask::empty(3, 3)), Err(Error::EmptyMask(_))));
    }

    /// Exhaustive nearest-column search used as the reference.
    fn column_fallback_oracle(m: &BinaryMask) -> KeypointTriple {
        let c = m.rounded_centroid().unwrap();
        let mut best: Option<(u64, i64)> = None;
        for x in 0..m.width() as i64 {
            if (0..m.height()).any(|y| m.get(x as usize, y)) {
                let d = (x - c.x).unsigned_abs();
                if best.is_none_or(|(bd, bx)| d < bd || (d == bd && x < bx)) {
                    best = Some((d, x));
                }
            }
        }
        let x = best.unwrap().1;
        let ys: Vec<i64> = (0..m.height()).filter(|&y| m.get(x as usize, y)).map(|y| y as i64).collect();
        let (top, bottom) = (ys[0], *ys.last().unwrap());
        KeypointTriple {
            center: Point::new(x, (top + bottom) / 2),
            upper: Point::new(x, top),
            lower: Point::new(x, bottom),
        }
    }

    #[test]
    fn hollow_column_uses_nearest_column() {
        // U shape: two vertical bars joined at the bottom, with the joining
        // row cut at the centroid column.
        let m = BinaryMask::from_fn(9, 11, |x, y| {
            let bars = (x == 2 || x == 8) && (1..8).contains(&y);
            let base = y == 7 && (2..=8).contains(&x) && x != 5;
            bars || base
        });
        assert_eq!(m.rounded_centroid().unwrap().x, 5);
        assert!((0..9).all(|y| !m.get(5, y)));
        let k = extract_keypoints(&m).unwrap();
        assert_eq!(k, column_fallback_oracle(&m));
        assert_eq!(k.upper.x, 4);
    }

    fn texture(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(1, h, w, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn self_match_peaks_at_keypoint() {
        let img = texture(20, 20, 1);
        let s = similarity_map(Point::new(9, 11), &img, &img, &PatchDescriptor::default()).unwrap();
        assert_eq!(s.argmax(), Point::new(9, 11));
        assert!((s.get(Point::new(9, 11)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translated_match() {
        let a = texture(24, 24, 2);
        let fill = texture(24, 24, 3);
        let (dx, dy) = (3, -2);
        let shifted = a.shifted(dx, dy, 0.0);
        let n = Image::from_fn(1, 24, 24, |c, y, x| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            if (0..24).contains(&sx) && (0..24).contains(&sy) {
                shifted.get(c, y, x)
            } else {
                fill.get(c, y, x)
            }
        });
        let s = similarity_map(Point::new(10, 12), &a, &n, &PatchDescriptor::default()).unwrap();
        assert_eq!(s.argmax(), Point::new(13, 10));
    }

    #[test]
    fn constant_normal_image_is_an_error() {
        let a = texture(10, 10, 4);
        let n = Image::filled(1, 10, 10, 0.4);
        assert!(matches!(
            similarity_map(Point::new(5, 5), &a, &n, &PatchDescriptor::default()),
            Err(Error::FlatImage)
        ));
        let flat = Image::filled(1, 10, 10, 0.4);
        assert!(matches!(
            similarity_map(Point::new(5, 5), &flat, &a, &PatchDescriptor::default()),
            Err(Error::DegenerateDescriptor { x: 5, y: 5 })
        ));
    }

    #[test]
    fn vertical_line_picks_bottom() {
        let s = SimilarityMap::from_vec(8, 8, (0..64).map(|i| (i / 8) as f64).collect()).unwrap();
        let fg = BinaryMask::full(8, 8);
        let c = constrained_center(&s, Point::new(3, 1), Point::new(3, 5), &fg).unwrap();
        assert_eq!(c, CenterChoice { point: Point::new(3, 5), fallback: false });
    }

    #[test]
    fn fallback_when_line_misses_foreground() {
        let mut data = vec![0.0; 100];
        data[3 * 10 + 7] = 5.0;
        data[9 * 10 + 1] = 9.0;
        let s = SimilarityMap::from_vec(10, 10, data).unwrap();
        let fg = BinaryMask::from_fn(10, 10, |x, _| x >= 5);
        let c = constrained_center(&s, Point::new(1, 0), Point::new(1, 9), &fg).unwrap();
        assert_eq!(c, CenterChoice { point: Point::new(7, 3), fallback: true });
        assert!(constrained_center(&s, Point::new(1, 0), Point::new(1, 9), &BinaryMask::empty(10, 10)).is_err());
    }

    #[test]
    fn bresenham_endpoints_and_connectivity() {
        let l = CandidateLine::new(Point::new(0, 0), Point::new(5, 2));
        assert_eq!(l.pixels.first(), Some(&Point::new(0, 0)));
        assert_eq!(l.pixels.last(), Some(&Point::new(5, 2)));
        assert_eq!(l.pixels.len(), 6);
        for w in l.pixels.windows(2) {
            assert!((w[1].x - w[0].x).abs() <= 1 && (w[1].y - w[0].y).abs() <= 1);
        }
        assert_eq!(CandidateLine::new(Point::new(2, 2), Point::new(2, 2)).pixels.len(), 1);
    }

    #[test]
    fn relocation_examples() {
        let m = BinaryMask::from_fn(8, 8, |x, y| (2..4).contains(&x) && (3..6).contains(&y));
        let c = m.rounded_centroid().unwrap();
        assert_eq!(relocate_mask(&m, c, &BinaryMask::full(8, 8)).unwrap(), m);
        assert!(matches!(
            relocate_mask(&m, Point::new(40, 3), &BinaryMask::full(8, 8)),
            Err(Error::EmptyMask(_))
        ));

        // 4×4 block, shift (+2, −1), foreground on the left half.
        let block = BinaryMask::from_fn(10, 10, |x, y| (2..6).contains(&x) && (3..7).contains(&y));
        let c = block.rounded_centroid().unwrap();
        let fg = BinaryMask::from_fn(10, 10, |x, _| x < 5);
        let got = relocate_mask(&block, Point::new(c.x + 2, c.y - 1), &fg).unwrap();
        let want = BinaryMask::from_fn(10, 10, |x, y| (4..5).contains(&x) && (2..6).contains(&y));
        assert_eq!(got, want);
    }

    #[test]
    fn self_alignment_returns_mask_and_foreground() {
        let img = texture(24, 24, 5);
        let m = BinaryMask::from_fn(24, 24, |x, y| (9..14).contains(&x) && (8..15).contains(&y));
        let ex = AnomalyExemplar::new(img.clone(), m.clone(), "c", "e0").unwrap();
        let fg = BinaryMask::from_fn(24, 24, |x, _| x < 13);
        let a = align(&m, &ex, &img, &PatchDescriptor::default(), &fg).unwrap();
        assert_eq!(a.mask, m.and(&fg).unwrap());
        assert!(!a.fallback);
        assert!(a.sidecar().contains("exemplar = e0"));
    }

    #[test]
    fn blank_normal_image_fails_with_stage() {
        let img = texture(16, 16, 6);
        let m = BinaryMask::from_fn(16, 16, |x, y| (6..9).contains(&x) && (6..9).contains(&y));
        let ex = AnomalyExemplar::new(img, m.clone(), "c", "e").unwrap();
        let blank = Image::filled(1, 16, 16, 0.0);
        let err = align(&m, &ex, &blank, &PatchDescriptor::default(), &BinaryMask::full(16, 16)).unwrap_err();
        assert!(matches!(err, Error::Alignment { stage: AlignStage::Similarity, .. }), "{err}");
        let err = align(&m, &ex, &blank, &PatchDescriptor::default(), &BinaryMask::empty(16, 16)).unwrap_err();
        assert!(matches!(err, Error::Alignment { stage: AlignStage::Foreground, .. }));
    }

    fn brute_force_center(s: &SimilarityMap, u: Point, l: Point, fg: &BinaryMask) -> Option<Point> {
        let line = CandidateLine::new(u, l);
        let mut best: Option<Point> = None;
        for y in 0..s.height() as i64 {
            for x in 0..s.width() as i64 {
                let p = Point::new(x, y);
                if !line.pixels.contains(&p) || !fg.get_point(p) {
                    continue;
                }
                if best.is_none_or(|b| s.get(p) > s.get(b)) {
                    best = Some(p);
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn center_matches_scan(seed in any::<u64>(), h in 2usize..40, w in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..h * w).map(|_| (rng.random::<f64>() * 8.0).floor()).collect();
            let s = SimilarityMap::from_vec(h, w, scores).unwrap();
            let fg = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(0.6));
            prop_assume!(!fg.is_empty());
            let u = Point::new(rng.random_range(0..w) as i64, rng.random_range(0..h) as i64);
            let l = Point::new(rng.random_range(0..w) as i64, rng.random_range(0..h) as i64);
            let got = constrained_center(&s, u, l, &fg).unwrap();
            match brute_force_center(&s, u, l, &fg) {
                Some(p) => prop_assert_eq!(got, CenterChoice { point: p, fallback: false }),
                None => prop_assert!(got.fallback),
            }
        }

        #[test]
        fn relocated_mask_is_bounded(seed in any::<u64>(), cx in 0i64..16, cy in 0i64..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = BinaryMask::from_fn(16, 16, |_, _| rng.random_bool(0.2));
            let fg = BinaryMask::from_fn(16, 16, |_, _| rng.random_bool(0.7));
            prop_assume!(!m.is_empty());
            if let Ok(out) = relocate_mask(&m, Point::new(cx, cy), &fg) {
                prop_assert!(out.is_subset_of(&fg));
                prop_assert!(out.count() <= m.count());
            }
        }
    }
}
