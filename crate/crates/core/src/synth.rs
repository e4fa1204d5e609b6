//! Procedural 10-class shape dataset used for the reference model and the
//! fixture cohorts. Every image is a pure function of
//! `(seed, split, class, index)`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetEntry, DatasetIndex};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::interventions::RectMask;

pub const SIZE: usize = 36;

/// Class names, sorted so that directory order equals class index.
pub const CLASSES: [&str; 10] = [
    "checkerboard",
    "cross",
    "diagonal-cross",
    "disk",
    "dots",
    "frame",
    "horizontal-stripes",
    "ring",
    "triangle",
    "vertical-stripes",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Fixture,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
            Split::Fixture => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub class_index: usize,
    /// Bounding box of the drawn object.
    pub bbox: RectMask,
}

impl Sample {
    pub fn label(&self) -> &'static str {
        CLASSES[self.class_index]
    }
}

type Rgb = [f32; 3];

fn luma(c: Rgb) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

/// Whether local point `(u, v)` in `[0, s)²` is foreground for `class`.
struct Shape {
    class: usize,
    s: f32,
    period: f32,
    thickness: f32,
}

impl Shape {
    fn contains(&self, u: f32, v: f32) -> bool {
        let s = self.s;
        let (cu, cv) = (u - s / 2.0, v - s / 2.0);
        let r = (cu * cu + cv * cv).sqrt();
        let t = self.thickness;
        match CLASSES[self.class] {
            "checkerboard" => ((u / self.period).floor() as i64 + (v / self.period).floor() as i64) % 2 == 0,
            "cross" => cu.abs() < t || cv.abs() < t,
            "diagonal-cross" => (cu - cv).abs() < t * 1.2 || (cu + cv).abs() < t * 1.2,
            "disk" => r < s / 2.0,
            "dots" => {
                let p = self.period * 1.6;
                let du = u % p - p / 2.0;
                let dv = v % p - p / 2.0;
                (du * du + dv * dv).sqrt() < p * 0.3
            }
            "frame" => u < t || v < t || u > s - t || v > s - t,
            "horizontal-stripes" => (v / self.period).floor() as i64 % 2 == 0,
            "ring" => r < s / 2.0 && r > s / 2.0 - t * 1.1,
            "triangle" => v > s * 0.1 && cu.abs() < (v - s * 0.1) * 0.55,
            "vertical-stripes" => (u / self.period).floor() as i64 % 2 == 0,
            other => unreachable!("unknown class {other}"),
        }
    }
}

/// Generates one sample.
pub fn sample(seed: u64, split: Split, class_index: usize, index: usize) -> Sample {
    assert!(class_index < CLASSES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream() << 48) | ((class_index as u64) << 32) | index as u64);

    let bg = random_color(&mut rng);
    let fg = loop {
        let c = random_color(&mut rng);
        if (luma(c) - luma(bg)).abs() > 0.3 {
            break c;
        }
    };
    let gradient: [f32; 2] = [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)];
    let size = rng.random_range(14..=22usize);
    let x0 = rng.random_range(0..=SIZE - size);
    let y0 = rng.random_range(0..=SIZE - size);
    let shape = Shape {
        class: class_index,
        s: size as f32,
        period: rng.random_range(2.5f32..4.0),
        thickness: size as f32 * rng.random_range(0.12f32..0.18),
    };

    let mut bytes = Vec::with_capacity(SIZE * SIZE * 3);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let inside = (x0..x0 + size).contains(&x)
                && (y0..y0 + size).contains(&y)
                && shape.contains((x - x0) as f32 + 0.5, (y - y0) as f32 + 0.5);
            let shade = gradient[0] * (x as f32 / SIZE as f32 - 0.5) + gradient[1] * (y as f32 / SIZE as f32 - 0.5);
            for c in 0..3 {
                let base = if inside { fg[c] } else { bg[c] + shade };
                let noise: f32 = rng.random_range(-0.04..0.04);
                bytes.push(((base + noise).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Sample {
        image: Image::from_rgb8(SIZE, SIZE, &bytes).expect("valid synthetic image"),
        class_index,
        bbox: RectMask {
            x: x0,
            y: y0,
            w: size,
            h: size,
        },
    }
}

/// `per_class` samples of every class, class-major order.
pub fn samples(seed: u64, split: Split, per_class: usize) -> Vec<Sample> {
    (0..CLASSES.len())
        .flat_map(|c| (0..per_class).map(move |i| sample(seed, split, c, i)))
        .collect()
}

pub fn file_name(index: usize) -> String {
    format!("{index:04}.png")
}

/// Writes `root/<class>/<index>.png` for `per_class` samples per class and
/// returns the index.
pub fn write_dataset(root: &Path, seed: u64, split: Split, per_class: usize) -> Result<DatasetIndex> {
    let mut entries = Vec::new();
    for (c, class) in CLASSES.iter().enumerate() {
        let dir = root.join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let path = dir.join(file_name(i));
            sample(seed, split, c, i).image.save_png(&path)?;
            entries.push(DatasetEntry {
                path,
                label: (*class).to_owned(),
            });
        }
    }
    Ok(DatasetIndex::from_entries(entries))
}
