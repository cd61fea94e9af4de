//! Per-segment node features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Frame, Segmentation};
use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

/// Bank of 3x3 filters over all three colour channels, applied with a
/// replicate border. Weights are indexed `[filter][channel][dy][dx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    weights: Vec<[[[f64; 3]; 3]; 3]>,
}

impl FilterBank {
    pub fn new(weights: Vec<[[[f64; 3]; 3]; 3]>) -> Self {
        Self { weights }
    }

    /// Fixed pseudo-random bank, uniform in `±1/sqrt(27)`.
    pub fn seeded(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / 27f64.sqrt();
        let weights = (0..count)
            .map(|_| {
                let mut k = [[[0.0; 3]; 3]; 3];
                for plane in &mut k {
                    for row in plane.iter_mut() {
                        for w in row.iter_mut() {
                            *w = rng.random_range(-bound..bound);
                        }
                    }
                }
                k
            })
            .collect();
        Self { weights }
    }

    /// Flat layout `[filter][channel][dy][dx]`, as stored on disk.
    pub fn from_flat(count: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != count * 27 {
            return Err(Error::contract(format!(
                "{count} filters need {} weights, got {}",
                count * 27,
                flat.len()
            )));
        }
        let weights = flat
            .chunks(27)
            .map(|c| {
                let mut k = [[[0.0; 3]; 3]; 3];
                for (i, &v) in c.iter().enumerate() {
                    k[i / 9][(i / 3) % 3][i % 3] = v;
                }
                k
            })
            .collect();
        Ok(Self { weights })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.weights.iter().flatten().flatten().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Response of filter `f` at pixel (x, y).
    pub fn response(&self, frame: &Frame, f: usize, x: usize, y: usize) -> f64 {
        let k = &self.weights[f];
        let mut acc = 0.0;
        for (c, plane) in k.iter().enumerate() {
            for (dy, row) in plane.iter().enumerate() {
                for (dx, &w) in row.iter().enumerate() {
                    acc += w * frame.clamped(x as isize + dx as isize - 1, y as isize + dy as isize - 1, c);
                }
            }
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExtractorKind {
    MeanColor,
    /// Colour plus filter responses from a seeded bank.
    FilterBank(FilterBank),
    /// Colour plus filter responses with weights loaded from a file.
    ExternalFile(FilterBank),
}

/// Maps a frame and its segmentation to an `n x d` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub kind: ExtractorKind,
    pub pooling: Pooling,
}

impl FeatureExtractor {
    pub fn mean_color() -> Self {
        Self {
            kind: ExtractorKind::MeanColor,
            pooling: Pooling::Mean,
        }
    }

    pub fn filter_bank(bank: FilterBank) -> Self {
        Self {
            kind: ExtractorKind::FilterBank(bank),
            pooling: Pooling::Mean,
        }
    }

    pub fn dim(&self) -> usize {
        3 + self.bank().map_or(0, FilterBank::len)
    }

    fn bank(&self) -> Option<&FilterBank> {
        match &self.kind {
            ExtractorKind::MeanColor => None,
            ExtractorKind::FilterBank(b) | ExtractorKind::ExternalFile(b) => Some(b),
        }
    }

    fn pixel_features(&self, frame: &Frame, x: usize, y: usize, out: &mut [f64]) {
        out[..3].copy_from_slice(&frame.pixel(x, y));
        if let Some(bank) = self.bank() {
            for f in 0..bank.len() {
                out[3 + f] = bank.response(frame, f, x, y);
            }
        }
    }
}

/// Pool per-pixel features over each segment (mean by default).
pub fn node_features<T: Scalar>(
    frame: &Frame,
    seg: &Segmentation,
    fx: &FeatureExtractor,
    expected_dim: usize,
) -> Result<Tensor<T>> {
    let d = fx.dim();
    if d != expected_dim {
        return Err(Error::contract(format!(
            "feature extractor produces {d} features, configured d = {expected_dim}"
        )));
    }
    if seg.width() != frame.width() || seg.height() != frame.height() {
        return Err(Error::contract("segmentation does not match frame size"));
    }
    let n = seg.segment_count();
    let mut acc = vec![0.0; n * d];
    let mut counts = vec![0usize; n];
    let mut px = vec![0.0; d];
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let l = seg.label(x, y);
            fx.pixel_features(frame, x, y, &mut px);
            for (a, &v) in acc[l * d..(l + 1) * d].iter_mut().zip(&px) {
                *a += v;
            }
            counts[l] += 1;
        }
    }
    if fx.pooling == Pooling::Mean {
        for (row, &c) in acc.chunks_mut(d).zip(&counts) {
            for v in row {
                *v /= c as f64;
            }
        }
    }
    Tensor::new(vec![n, d], acc.into_iter().map(T::of).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_frame_mean_color() {
        let frame = Frame::filled(4, 4, [0.5; 3]).unwrap();
        let seg = Segmentation::from_labels(4, 4, (0..16).map(|i| (i % 4) / 2).collect()).unwrap();
        let x = node_features::<f64>(&frame, &seg, &FeatureExtractor::mean_color(), 3).unwrap();
        assert_eq!(x.as_slice(), &[0.5; 6]);
    }

    #[test]
    fn red_and_blue_halves() {
        let frame = Frame::from_fn(4, 2, |x, _| if x < 2 { [1., 0., 0.] } else { [0., 0., 1.] }).unwrap();
        let seg = Segmentation::from_labels(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        let x = node_features::<f64>(&frame, &seg, &FeatureExtractor::mean_color(), 3).unwrap();
        assert_eq!(x.as_slice(), &[1., 0., 0., 0., 0., 1.]);
    }

    #[test]
    fn averaging_filter_on_constant_frame() {
        // Replicate border keeps every 3x3 window constant, so a filter with
        // weight 1/9 on the red plane returns the red value everywhere.
        let mut k = [[[0.0; 3]; 3]; 3];
        k[0] = [[1.0 / 9.0; 3]; 3];
        let fx = FeatureExtractor::filter_bank(FilterBank::new(vec![k]));
        let frame = Frame::filled(5, 4, [0.3, 0.6, 0.9]).unwrap();
        let seg = Segmentation::from_labels(5, 4, vec![0; 20]).unwrap();
        let x = node_features::<f64>(&frame, &seg, &fx, 4).unwrap();
        assert!((x.get(0, 3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let frame = Frame::filled(2, 2, [0.5; 3]).unwrap();
        let seg = Segmentation::from_labels(2, 2, vec![0; 4]).unwrap();
        let fx = FeatureExtractor::filter_bank(FilterBank::seeded(16, 0));
        assert!(node_features::<f64>(&frame, &seg, &fx, 3).is_err());
        assert_eq!(fx.dim(), 19);
    }

    #[test]
    fn sum_pooling_scales_with_area() {
        let frame = Frame::filled(4, 2, [0.5; 3]).unwrap();
        let seg = Segmentation::from_labels(4, 2, vec![0, 1, 1, 1, 0, 1, 1, 1]).unwrap();
        let fx = FeatureExtractor {
            kind: ExtractorKind::MeanColor,
            pooling: Pooling::Sum,
        };
        let x = node_features::<f64>(&frame, &seg, &fx, 3).unwrap();
        assert_eq!(x.get(0, 0), 1.0);
        assert_eq!(x.get(1, 0), 3.0);
    }

    #[test]
    fn flat_round_trip() {
        let bank = FilterBank::seeded(3, 7);
        assert_eq!(FilterBank::from_flat(3, &bank.to_flat()).unwrap(), bank);
    }
}
