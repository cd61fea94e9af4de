//! Grow/shrink square sequences.
//!
//! Each sample draws `T` distinct side lengths from one shared pool and shows
//! them in increasing (grow) or decreasing (shrink) order as nested squares
//! around a random anchor. Both classes see the same set of sizes, so a frame
//! taken without its time index says nothing about the label.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::write_frame;
use super::manifest::{Manifest, ManifestSample, Split};
use crate::error::{Error, Result};
use crate::segmentation::Frame;

pub const CLASSES: [&str; 2] = ["grow", "shrink"];

/// Square and background colours.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Palette {
    /// Light square on a dark background.
    #[default]
    Fixed,
    /// Per-sample random colours with at least 0.3 mean contrast; the same
    /// pair is used for every frame of a sample.
    RandomPerSample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub samples_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub width: usize,
    pub height: usize,
    pub timesteps: usize,
    pub min_side: usize,
    pub max_side: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    pub palette: Palette,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples_per_class: 140,
            val_per_class: 20,
            test_per_class: 20,
            width: 32,
            height: 32,
            timesteps: 3,
            min_side: 6,
            max_side: 26,
            noise: 0.05,
            palette: Palette::Fixed,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps < 2 {
            return Err(Error::contract(format!(
                "synthetic sequences need T >= 2, got T = {}",
                self.timesteps
            )));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::contract("frames must be at least 2x2"));
        }
        if self.min_side == 0 || self.min_side > self.max_side {
            return Err(Error::contract("need 1 <= min_side <= max_side"));
        }
        if self.max_side > self.width.min(self.height) {
            return Err(Error::contract(format!(
                "a square of side {} cannot fit in a {}x{} frame",
                self.max_side, self.width, self.height
            )));
        }
        if self.max_side - self.min_side + 1 < self.timesteps {
            return Err(Error::contract(format!(
                "side range {}..={} has fewer than T = {} distinct sizes",
                self.min_side, self.max_side, self.timesteps
            )));
        }
        if self.val_per_class + self.test_per_class > self.samples_per_class {
            return Err(Error::contract("validation and test counts exceed samples per class"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::contract("noise level must be finite and >= 0"));
        }
        Ok(())
    }

    fn split_of(&self, within_class: usize) -> Split {
        let train = self.samples_per_class - self.val_per_class - self.test_per_class;
        if within_class < train {
            Split::Train
        } else if within_class < train + self.val_per_class {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    /// 0 = grow, 1 = shrink.
    pub label: usize,
    pub split: Split,
    /// Side length per frame.
    pub sides: Vec<usize>,
    /// Top-left corner per frame.
    pub corners: Vec<(usize, usize)>,
    pub frames: Vec<Frame>,
}

fn palette(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
    match spec.palette {
        Palette::Fixed => ([0.15; 3], [0.85; 3]),
        Palette::RandomPerSample => loop {
            let bg: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
            let fg: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
            let contrast = bg.iter().zip(&fg).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0;
            if contrast >= 0.3 {
                break (bg, fg);
            }
        },
    }
}

/// Render the dataset in memory. Samples alternate grow/shrink; within each
/// class the first samples are train, then validation, then test.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let pool = spec.max_side - spec.min_side + 1;
    let mut out = Vec::with_capacity(2 * spec.samples_per_class);
    for k in 0..2 * spec.samples_per_class {
        let label = k % 2;
        let mut sides: Vec<usize> = sample(&mut rng, pool, spec.timesteps)
            .into_iter()
            .map(|i| spec.min_side + i)
            .collect();
        sides.sort_unstable();
        let largest = sides[spec.timesteps - 1];
        if label == 1 {
            sides.reverse();
        }
        let ax = rng.random_range(0..=spec.width - largest);
        let ay = rng.random_range(0..=spec.height - largest);
        let corners: Vec<(usize, usize)> = sides
            .iter()
            .map(|&s| (ax + (largest - s) / 2, ay + (largest - s) / 2))
            .collect();
        let (bg, fg) = palette(spec, &mut rng);
        let mut frames = Vec::with_capacity(spec.timesteps);
        for (&s, &(x0, y0)) in sides.iter().zip(&corners) {
            let mut values = Vec::with_capacity(spec.width * spec.height * 3);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let inside = (x0..x0 + s).contains(&x) && (y0..y0 + s).contains(&y);
                    let base = if inside { fg } else { bg };
                    for c in base {
                        let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        values.push((c + n).clamp(0.0, 1.0));
                    }
                }
            }
            frames.push(Frame::new(spec.width, spec.height, values)?);
        }
        out.push(SyntheticSample {
            id: format!("s{k:04}"),
            label,
            split: spec.split_of(k / 2),
            sides,
            corners,
            frames,
        });
    }
    Ok(out)
}

/// Render the dataset to `dir` as PPM frames plus `manifest.txt`.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<Manifest> {
    let samples = generate_synthetic(spec)?;
    fs::create_dir_all(dir.join("frames"))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let mut paths = Vec::with_capacity(s.frames.len());
        for (t, f) in s.frames.iter().enumerate() {
            let rel = PathBuf::from(format!("frames/{}_t{t}.ppm", s.id));
            write_frame(&dir.join(&rel), f)?;
            paths.push(rel);
        }
        entries.push(ManifestSample {
            id: s.id.clone(),
            label: s.label,
            split: s.split,
            frames: paths,
        });
    }
    let manifest = Manifest {
        classes: CLASSES.iter().map(|c| c.to_string()).collect(),
        timesteps: spec.timesteps,
        width: spec.width,
        height: spec.height,
        samples: entries,
    };
    manifest.save(&dir.join("manifest.txt"))?;
    Ok(manifest)
}
