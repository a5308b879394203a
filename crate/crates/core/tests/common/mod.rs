#![allow(dead_code)]

use std::fs;
use std::path::Path;

use magic_core::io::{write_image, write_mask};
use magic_core::{BinaryMask, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BACKGROUND: f64 = 0.05;

/// Square object with a fixed non-repeating texture, placed at `(ox, oy)`.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub size: usize,
    pub object: usize,
    texture: Vec<f64>,
}

impl ToyScene {
    pub fn new(size: usize, object: usize, texture_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(texture_seed);
        let texture = (0..object * object).map(|_| rng.random_range(0.4..0.9)).collect();
        ToyScene { size, object, texture }
    }

    pub fn support(&self, ox: usize, oy: usize) -> BinaryMask {
        let o = self.object;
        BinaryMask::from_fn(self.size, self.size, |x, y| (ox..ox + o).contains(&x) && (oy..oy + o).contains(&y))
    }

    pub fn render(&self, channels: usize, ox: usize, oy: usize) -> Image {
        let o = self.object;
        Image::from_fn(channels, self.size, self.size, |c, y, x| {
            if (ox..ox + o).contains(&x) && (oy..oy + o).contains(&y) {
                let v = self.texture[(y - oy) * o + (x - ox)];
                v * (1.0 - 0.1 * c as f64)
            } else {
                BACKGROUND
            }
        })
    }

    /// Object with a bright `k×k` defect at object-local `(dx, dy)`.
    pub fn anomaly(&self, channels: usize, ox: usize, oy: usize, dx: usize, dy: usize, k: usize) -> (Image, BinaryMask) {
        let mask = BinaryMask::from_fn(self.size, self.size, |x, y| {
            (ox + dx..ox + dx + k).contains(&x) && (oy + dy..oy + dy + k).contains(&y)
        });
        let mut img = self.render(channels, ox, oy);
        for p in mask.points() {
            for c in 0..channels {
                img.set(c, p.y as usize, p.x as usize, 1.0);
            }
        }
        (img, mask)
    }
}

pub struct ToyClass {
    pub channels: usize,
    pub normals: usize,
    pub anomalies: usize,
    pub normal_at: (usize, usize),
    pub anomaly_at: (usize, usize),
}

/// Writes `<root>/<class>/{normal,anomaly,mask}` for a toy scene.
pub fn write_class(root: &Path, class: &str, scene: &ToyScene, class_spec: &ToyClass) {
    let dir = root.join(class);
    for sub in ["normal", "anomaly", "mask"] {
        fs::create_dir_all(dir.join(sub)).unwrap();
    }
    for i in 0..class_spec.normals {
        let img = scene.render(class_spec.channels, class_spec.normal_at.0, class_spec.normal_at.1);
        write_image(&dir.join("normal").join(format!("good_{i:03}.png")), &img).unwrap();
    }
    let span = scene.object.saturating_sub(3).max(1);
    for i in 0..class_spec.anomalies {
        let (dx, dy) = (i % span, (i * 2 + 1) % span);
        let (img, mask) = scene.anomaly(class_spec.channels, class_spec.anomaly_at.0, class_spec.anomaly_at.1, dx, dy, 3);
        write_image(&dir.join("anomaly").join(format!("defect_{i:03}.png")), &img).unwrap();
        write_mask(&dir.join("mask").join(format!("defect_{i:03}.png")), &mask).unwrap();
    }
}

pub fn small_class(root: &Path, class: &str) -> ToyScene {
    let scene = ToyScene::new(16, 8, 5);
    write_class(
        root,
        class,
        &scene,
        &ToyClass {
            channels: 1,
            normals: 3,
            anomalies: 10,
            normal_at: (4, 4),
            anomaly_at: (4, 4),
        },
    );
    scene
}

/// Fast settings for end-to-end runs.
pub const FAST: &str = "train_steps = 20\nddim_steps = 10\nhidden = 8\nbatch = 2\n";
