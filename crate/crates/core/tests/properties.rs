mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use stbam::dataio::{
    dump_supergraph, generate_synthetic, load_supergraph, Checkpoint, Manifest, Split, SyntheticSpec,
};
use stbam::diagnostics::{connected_components, dirichlet, fiedler, sparsity, spectrum, zero_count};
use stbam::gnn::{neighbourhood_mask, GatLayer, GnnConfig, GnnKind, Readout};
use stbam::mending::fixed_temporal;
use stbam::numcore::{softmax_rows_value, Adam, AdamConfig, ParamStore, Tape, Tensor};
use stbam::supergraph::laplacian;
use stbam::training::{MendingStrategy, Model, ModelConfig};

fn small_config(mending: MendingStrategy, n: usize, t: usize, d: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        nodes_per_step: n,
        timesteps: t,
        feature_dim: d,
        classes: 2,
        mending,
        encoder: Default::default(),
        gnn: GnnConfig {
            hidden: 8,
            heads: 2,
            out_dim: 4,
            ..GnnConfig::default()
        },
        seed,
    }
}

const STRATEGIES: [MendingStrategy; 7] = [
    MendingStrategy::Encoder,
    MendingStrategy::EncoderTemporal,
    MendingStrategy::Fixed { k: 1 },
    MendingStrategy::Fixed { k: 2 },
    MendingStrategy::RandomWeighted { edges_per_node: 2 },
    MendingStrategy::RandomBinary { edges_per_node: 1 },
    MendingStrategy::None,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_distributes_over_addition(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, m, k);
        let b = random_matrix(&mut r, k, n);
        let c = random_matrix(&mut r, k, n);
        let left = a.matmul(&b.add(&c).unwrap()).unwrap();
        let right = a.matmul(&b).unwrap().add(&a.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(left.is_finite());
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in any::<u64>(), scale in -3.0f64..3.0) {
        let mut r = rng(seed);
        let w0 = random_matrix(&mut r, 3, 4);
        let x = random_matrix(&mut r, 2, 3);
        let grad_of = |s: f64| {
            let mut store = ParamStore::new();
            let w = store.add("w", w0.clone()).unwrap();
            let tape = Tape::new();
            let y = tape.elu(tape.matmul(tape.constant(x.clone()), tape.param(&store, w)).unwrap(), 1.0);
            let loss = tape.scale(tape.sum(y), s);
            tape.backward(loss, &mut store).unwrap();
            store.grad(w).clone()
        };
        let g1 = grad_of(1.0);
        let gs = grad_of(scale);
        for (a, b) in g1.as_slice().iter().zip(gs.as_slice()) {
            prop_assert!((a * scale - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sparsity_and_dirichlet_match_brute_force(seed in any::<u64>(), m in 1usize..25, d in 1usize..5, density in 0.0f64..1.0) {
        let mut r = rng(seed);
        let w = random_weights(&mut r, m, density);
        let x = random_matrix(&mut r, m, d);
        prop_assert_eq!(sparsity(&w), count_zero_entries(&w));
        let h = dirichlet(&x, &w).unwrap();
        let brute = dirichlet_double_sum(&x, &w);
        prop_assert!((h - brute).abs() <= 1e-9 * brute.abs().max(1e-12), "{} vs {}", h, brute);
        prop_assert!(h >= -1e-12);
    }

    #[test]
    fn zero_eigenvalues_count_components(seed in any::<u64>(), m in 1usize..30, density in 0.0f64..0.3) {
        let mut r = rng(seed);
        let w = random_weights(&mut r, m, density);
        let ev = spectrum(&laplacian(&w).unwrap()).unwrap();
        prop_assert_eq!(zero_count(&ev), bfs_components(&w));
        prop_assert_eq!(connected_components(&w), bfs_components(&w));
        prop_assert!(ev.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn fixed_mending_connects_connected_blocks(seed in any::<u64>(), n in 2usize..8, t in 2usize..5) {
        let mut r = rng(seed);
        let sg = random_supergraph(&mut r, n, t, 2);
        let mended = fixed_temporal(&sg, 1).unwrap().mended;
        prop_assert!(fiedler(&laplacian(&mended).unwrap()).unwrap() > 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_mending_is_symmetric_and_nonnegative(seed in any::<u64>(), n in 2usize..6, t in 1usize..4, d in 1usize..4) {
        let mut r = rng(seed);
        let sg = random_supergraph(&mut r, n, t, d);
        for strategy in STRATEGIES {
            let model = Model::<f64>::new(small_config(strategy, n, t, d, seed)).unwrap();
            let a = model.mend(&sg).unwrap().mended;
            prop_assert!(a.is_symmetric(0.0), "{:?}", strategy);
            prop_assert!(a.as_slice().iter().all(|&v| v >= 0.0), "{:?}", strategy);
            // Mending only adds edges to A_B.
            for (m, o) in a.as_slice().iter().zip(sg.adjacency.as_slice()) {
                prop_assert!(*o == 0.0 || *m > 0.0, "{:?} removed an edge", strategy);
            }
        }
    }

    #[test]
    fn attention_is_a_distribution_over_the_neighbourhood(seed in any::<u64>(), m in 1usize..12, heads in 1usize..4, weighted in any::<bool>()) {
        let mut r = rng(seed);
        let adj = random_weights(&mut r, m, 0.3);
        let x = random_matrix(&mut r, m, 3);
        let mut store = ParamStore::new();
        let mut layer = GatLayer::new(&mut store, "gat", 3, 4, heads, true, &mut r).unwrap();
        layer.edge_weighted = weighted;
        let tape = Tape::new();
        let trace = layer.forward(&tape, &store, tape.constant(x), tape.constant(adj.clone())).unwrap();
        let mask = neighbourhood_mask(&adj);
        prop_assert_eq!(trace.attention.len(), heads);
        for alpha in &trace.attention {
            let alpha = tape.value(*alpha);
            for i in 0..m {
                let s: f64 = alpha.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
                for j in 0..m {
                    if !mask[i * m + j] {
                        prop_assert_eq!(alpha.get(i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..10, spread in 0.1f64..300.0) {
        let mut r = rng(seed);
        let x = Tensor::from_fn(rows, cols, |_, _| r.random_range(-spread..spread));
        let p = softmax_rows_value(&x, None);
        for i in 0..rows {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn readout_probabilities_sum_to_one(seed in any::<u64>(), rows in 1usize..10, classes in 2usize..6) {
        let mut r = rng(seed);
        let z = random_matrix(&mut r, rows, 4).scale(10.0);
        let mut store = ParamStore::new();
        let head = Readout::new(&mut store, "readout", rows * 4, classes, &mut r).unwrap();
        let tape = Tape::new();
        let y = head.forward(&tape, &store, tape.constant(z)).unwrap();
        let y = tape.value(y);
        prop_assert_eq!(y.len(), classes);
        prop_assert!((y.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn without_mending_blocks_do_not_exchange_messages(seed in any::<u64>(), n in 2usize..6, t in 2usize..4, gcn in any::<bool>()) {
        let mut r = rng(seed);
        let sg = random_supergraph(&mut r, n, t, 3);
        let mut cfg = small_config(MendingStrategy::None, n, t, 3, seed);
        if gcn {
            cfg.gnn.kind = GnnKind::Gcn;
        }
        let model = Model::<f64>::new(cfg).unwrap();
        let repr = |g: &stbam::SuperGraph64| {
            let tape = Tape::new();
            let tr = model.forward(&tape, g).unwrap();
            let v = tape.value(tr.node_repr).clone();
            v
        };
        let before = repr(&sg);
        let mut changed = sg.clone();
        let victim = r.random_range(0..t);
        for i in victim * n..(victim + 1) * n {
            for c in 0..3 {
                changed.features.set(i, c, r.random_range(-5.0..5.0));
            }
        }
        let after = repr(&changed);
        for i in 0..n * t {
            if i / n != victim {
                prop_assert_eq!(before.row(i), after.row(i));
            }
        }
    }

    #[test]
    fn gat_is_permutation_equivariant(seed in any::<u64>(), m in 2usize..10) {
        let mut r = rng(seed);
        let adj = random_weights(&mut r, m, 0.4);
        let x = random_matrix(&mut r, m, 3);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut r);
        let px = Tensor::from_fn(m, 3, |i, c| x.get(perm[i], c));
        let padj = Tensor::from_fn(m, m, |i, j| adj.get(perm[i], perm[j]));
        let mut store = ParamStore::new();
        let layer = GatLayer::new(&mut store, "gat", 3, 4, 2, true, &mut r).unwrap();
        let run = |x: Tensor<f64>, a: Tensor<f64>| {
            let tape = Tape::new();
            let out = layer.forward(&tape, &store, tape.constant(x), tape.constant(a)).unwrap().output;
            let v = tape.value(out).clone();
            v
        };
        let out = run(x, adj);
        let pout = run(px, padj);
        for i in 0..m {
            for (a, b) in pout.row(i).iter().zip(out.row(perm[i])) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_is_deterministic(seed in any::<u64>(), steps in 1usize..6) {
        let run = || {
            let mut r = rng(seed);
            let mut store = ParamStore::new();
            let w = store.add("w", random_matrix(&mut r, 3, 3)).unwrap();
            let mut adam = Adam::new(AdamConfig::default());
            for s in 0..steps {
                store.zero_grad();
                let tape = Tape::new();
                let loss = tape.frobenius(tape.param(&store, w));
                tape.backward(loss, &mut store).unwrap();
                adam.step(&mut store).unwrap();
                assert_eq!(adam.step_count(), s as u64 + 1);
                assert_eq!(adam.first_moment()[0].shape(), store.value(w).shape());
            }
            store.value(w).clone()
        };
        let (a, b) = (run(), run());
        prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_round_trips_bitwise(seed in any::<u64>(), n in 1usize..5, t in 1usize..3) {
        let model = Model::<f64>::new(small_config(MendingStrategy::Encoder, n, t, 2, seed)).unwrap();
        let mut cfg = BTreeMap::new();
        cfg.insert("seed".to_string(), seed.to_string());
        let ck = Checkpoint::from_store(&model.store, cfg);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(&back, &ck);
        let mut other = Model::<f64>::new(small_config(MendingStrategy::Encoder, n, t, 2, seed.wrapping_add(1))).unwrap();
        back.apply(&mut other.store).unwrap();
        for (a, b) in model.store.entries().iter().zip(other.store.entries()) {
            prop_assert!(a.value.as_slice().iter().zip(b.value.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn supergraph_dump_round_trips(seed in any::<u64>(), n in 1usize..6, t in 1usize..4) {
        let mut r = rng(seed);
        let sg = random_supergraph(&mut r, n, t, 3);
        let dir = tempfile::tempdir().unwrap();
        dump_supergraph(&sg, dir.path()).unwrap();
        let back = load_supergraph::<f64>(dir.path()).unwrap();
        prop_assert_eq!(&back.adjacency, &sg.adjacency);
        prop_assert_eq!(&back.features, &sg.features);
        prop_assert_eq!(&back.padded, &sg.padded);
        prop_assert_eq!(back.timesteps(), t);
    }

    #[test]
    fn manifest_round_trips(per_class in 3usize..10, t in 2usize..4, seed in any::<u64>()) {
        let spec = SyntheticSpec {
            samples_per_class: per_class,
            val_per_class: 1,
            test_per_class: 1,
            width: 8,
            height: 8,
            timesteps: t,
            min_side: 2,
            max_side: 7,
            seed,
            ..SyntheticSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let m = stbam::dataio::write_synthetic(&spec, dir.path()).unwrap();
        let text = m.to_text();
        let back = Manifest::parse(&text, Path::new("m")).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn synthetic_splits_are_balanced(per_class in 2usize..30, val in 0usize..3, test in 0usize..3, t in 2usize..5) {
        prop_assume!(val + test <= per_class);
        let spec = SyntheticSpec {
            samples_per_class: per_class,
            val_per_class: val,
            test_per_class: test,
            width: 12,
            height: 12,
            timesteps: t,
            min_side: 2,
            max_side: 10,
            ..SyntheticSpec::default()
        };
        let samples = generate_synthetic(&spec).unwrap();
        for (split, want) in [(Split::Train, per_class - val - test), (Split::Val, val), (Split::Test, test)] {
            for label in 0..2 {
                let got = samples.iter().filter(|s| s.split == split && s.label == label).count();
                prop_assert_eq!(got, want);
            }
        }
        for s in &samples {
            let increasing = s.sides.windows(2).all(|w| w[0] < w[1]);
            let decreasing = s.sides.windows(2).all(|w| w[0] > w[1]);
            let ok = if s.label == 0 { increasing } else { decreasing };
            prop_assert!(ok);
        }
    }
}

/// Position-blind probe: each sample contributes one frame at a random time
/// index, described by its foreground fraction. Sizes come from one pool for
/// both classes, so a logistic model on this feature stays near chance.
#[test]
fn single_frame_probe_is_near_chance() {
    let features = |seed: u64| -> Vec<(f64, usize)> {
        let spec = SyntheticSpec {
            samples_per_class: 100,
            val_per_class: 0,
            test_per_class: 0,
            seed,
            ..SyntheticSpec::default()
        };
        let mut r = rng(seed ^ 0x5eed);
        generate_synthetic(&spec)
            .unwrap()
            .into_iter()
            .map(|s| {
                let f = &s.frames[r.random_range(0..s.frames.len())];
                let bright = f.values().chunks(3).filter(|p| p[0] > 0.5).count();
                (bright as f64 / f.pixel_count() as f64, s.label)
            })
            .collect()
    };
    let train = features(11);
    let test = features(12);
    assert_eq!(train.len(), 200);
    // Logistic regression on (1, x, x^2) by gradient descent.
    let basis = |x: f64| [1.0, x, x * x];
    let mut w = [0.0f64; 3];
    for _ in 0..5000 {
        let mut g = [0.0; 3];
        for &(x, y) in &train {
            let b = basis(x);
            let z: f64 = b.iter().zip(&w).map(|(a, c)| a * c).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            for k in 0..3 {
                g[k] += (p - y as f64) * b[k] / train.len() as f64;
            }
        }
        for k in 0..3 {
            w[k] -= 2.0 * g[k];
        }
    }
    let acc = |set: &[(f64, usize)]| {
        let correct = set
            .iter()
            .filter(|&&(x, y)| {
                let z: f64 = basis(x).iter().zip(&w).map(|(a, c)| a * c).sum();
                usize::from(z > 0.0) == y
            })
            .count();
        correct as f64 / set.len() as f64
    };
    let a = acc(&test);
    assert!((a - 0.5).abs() <= 0.1, "probe accuracy {a}");
}
