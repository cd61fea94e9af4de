use super::Segmentation;
use crate::numcore::{Scalar, Tensor};

/// Binary Region Adjacency Graph: segments are adjacent iff two of their
/// pixels are 4-neighbours. Symmetric with zero diagonal.
pub fn region_adjacency<T: Scalar>(seg: &Segmentation) -> Tensor<T> {
    let n = seg.segment_count();
    let (w, h) = (seg.width(), seg.height());
    let mut adj = Tensor::zeros(&[n, n]);
    let mut link = |a: usize, b: usize| {
        if a != b {
            adj.set(a, b, T::one());
            adj.set(b, a, T::one());
        }
    };
    for y in 0..h {
        for x in 0..w {
            let l = seg.label(x, y);
            if x + 1 < w {
                link(l, seg.label(x + 1, y));
            }
            if y + 1 < h {
                link(l, seg.label(x, y + 1));
            }
        }
    }
    adj
}
