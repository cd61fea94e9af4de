//! Shared fixtures and brute-force references for the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stbam::numcore::{Tape, Tensor};
use stbam::supergraph::{assemble, SuperGraph, TimestepGraph};
use stbam::training::{LossConfig, Model, Sample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric nonnegative matrix with zero diagonal; roughly `density`
/// of the off-diagonal pairs carry a weight in (0, 1].
pub fn random_weights(rng: &mut ChaCha8Rng, m: usize, density: f64) -> Tensor<f64> {
    let mut w = Tensor::zeros(&[m, m]);
    for i in 0..m {
        for j in i + 1..m {
            if rng.random::<f64>() < density {
                let v = 1.0 - rng.random::<f64>();
                w.set(i, j, v);
                w.set(j, i, v);
            }
        }
    }
    w
}

/// Connected random graph: a random spanning tree plus extra edges.
pub fn connected_adjacency(rng: &mut ChaCha8Rng, n: usize, extra: f64) -> Tensor<f64> {
    let mut a = Tensor::zeros(&[n, n]);
    for i in 1..n {
        let j = rng.random_range(0..i);
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < extra {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    a
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Supergraph of `t` connected random blocks with `n` nodes and `d` features.
pub fn random_supergraph(rng: &mut ChaCha8Rng, n: usize, t: usize, d: usize) -> SuperGraph<f64> {
    let graphs: Vec<TimestepGraph<f64>> = (0..t)
        .map(|_| {
            let a = connected_adjacency(rng, n, 0.3);
            let x = Tensor::from_fn(n, d, |_, _| rng.random::<f64>());
            TimestepGraph::new(a, x).unwrap()
        })
        .collect();
    assemble(&graphs, n).unwrap()
}

/// Connected components by breadth-first search over `w[i][j] > 0`.
pub fn bfs_components(w: &Tensor<f64>) -> usize {
    let m = w.rows();
    let mut seen = vec![false; m];
    let mut count = 0;
    for s in 0..m {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for v in 0..m {
                if !seen[v] && (w.get(u, v) > 0.0 || w.get(v, u) > 0.0) {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
    }
    count
}

/// `1/2 * sum_ij w_ij ||x_i - x_j||^2`.
pub fn dirichlet_double_sum(x: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    let m = w.rows();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            total += w.get(i, j) * d2;
        }
    }
    0.5 * total
}

pub fn count_zero_entries(w: &Tensor<f64>) -> f64 {
    let mut zeros = 0usize;
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            if w.get(i, j) == 0.0 {
                zeros += 1;
            }
        }
    }
    zeros as f64 / (w.rows() * w.cols()) as f64
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn sample_loss_value(model: &Model<f64>, sample: &Sample<f64>, cfg: &LossConfig) -> f64 {
    let tape = Tape::new();
    let (loss, _) = model.sample_loss(&tape, sample, cfg).unwrap();
    let v = tape.value(loss).item().unwrap();
    v
}

#[derive(Debug, Default)]
pub struct GradReport {
    /// (tensor name, entries compared, entries skipped near a kink, worst relative error)
    pub tensors: Vec<(String, usize, usize, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.3).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.1).sum()
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.2).sum()
    }
}

/// Compare every parameter entry's analytic gradient with the central
/// difference `(f(p + h) - f(p - h)) / 2h`.
///
/// An entry whose one-sided slopes disagree has a ReLU, LeakyReLU or |.|
/// kink inside `[p - h, p + h]`, where the central difference is not a
/// derivative estimate; those entries are counted and skipped.
pub fn finite_difference_check(model: &mut Model<f64>, sample: &Sample<f64>, cfg: &LossConfig, h: f64) -> GradReport {
    model.store.zero_grad();
    let tape = Tape::new();
    let (loss, _) = model.sample_loss(&tape, sample, cfg).unwrap();
    tape.backward(loss, &mut model.store).unwrap();
    let f0 = tape.value(loss).item().unwrap();
    drop(tape);
    let ids: Vec<_> = model.store.ids().collect();
    let mut report = GradReport::default();
    for id in ids {
        let analytic = model.store.grad(id).clone();
        let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
        for k in 0..analytic.len() {
            let orig = model.store.value(id).as_slice()[k];
            model.store.value_mut(id).as_mut_slice()[k] = orig + h;
            let fp = sample_loss_value(model, sample, cfg);
            model.store.value_mut(id).as_mut_slice()[k] = orig - h;
            let fm = sample_loss_value(model, sample, cfg);
            model.store.value_mut(id).as_mut_slice()[k] = orig;
            let right = (fp - f0) / h;
            let left = (f0 - fm) / h;
            let central = (fp - fm) / (2.0 * h);
            let scale = right.abs().max(left.abs()).max(1e-6);
            if (right - left).abs() > 1e-3 * scale {
                skipped += 1;
                continue;
            }
            let a = analytic.as_slice()[k];
            // Rounding in f(p +- h) leaves about 1e-10 of absolute noise in the
            // central difference; gradients below 1e-5 are held to an
            // absolute 1e-9 instead.
            let err = (a - central).abs() / a.abs().max(central.abs()).max(1e-5);
            worst = worst.max(err);
            checked += 1;
        }
        report
            .tensors
            .push((model.store.name(id).to_string(), checked, skipped, worst));
    }
    report
}

/// Render a synthetic dataset and build every supergraph with `nodes`
/// superpixels per frame; returns (train, val, test).
pub fn synthetic_splits(
    spec: &stbam::dataio::SyntheticSpec,
    nodes: usize,
) -> (Vec<Sample<f64>>, Vec<Sample<f64>>, Vec<Sample<f64>>) {
    use stbam::dataio::{generate_synthetic, Split};
    use stbam::supergraph::{build_supergraph, GraphBuildParams};
    let mut params = GraphBuildParams::default();
    params.slic.n_segments = nodes;
    params.nodes = nodes;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in generate_synthetic(spec).unwrap() {
        let sample = Sample {
            id: s.id.clone(),
            graph: build_supergraph(&s.frames, &params).unwrap(),
            label: s.label,
        };
        match s.split {
            Split::Train => train.push(sample),
            Split::Val => val.push(sample),
            Split::Test => test.push(sample),
        }
    }
    (train, val, test)
}
