mod common;

use common::*;

use stbam::dataio::{history_csv, SyntheticSpec};
use stbam::gnn::GnnConfig;
use stbam::numcore::Tape;
use stbam::supergraph::GraphBuildParams;
use stbam::training::{
    evaluate, one_hot, train, LossConfig, MendingStrategy, Model, ModelConfig, NormOrder, Sample, TrainConfig,
};
use stbam::Error;

const NODES: usize = 8;

fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        samples_per_class: 10,
        val_per_class: 3,
        test_per_class: 2,
        width: 16,
        height: 16,
        timesteps: 3,
        min_side: 3,
        max_side: 14,
        seed,
        ..SyntheticSpec::default()
    }
}

fn model(mending: MendingStrategy, seed: u64) -> Model<f64> {
    Model::new(ModelConfig {
        nodes_per_step: NODES,
        timesteps: 3,
        feature_dim: GraphBuildParams::default().extractor.dim(),
        classes: 2,
        mending,
        encoder: Default::default(),
        gnn: GnnConfig {
            hidden: 16,
            heads: 2,
            out_dim: 4,
            ..GnnConfig::default()
        },
        seed,
    })
    .unwrap()
}

fn tcfg(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        max_epochs,
        patience,
        seed: 0,
    }
}

#[test]
fn pure_cross_entropy_without_penalty() {
    let (train_set, _, _) = synthetic_splits(&tiny_spec(1), NODES);
    let m = model(MendingStrategy::Encoder, 1);
    let cfg = LossConfig {
        lambda: 0.0,
        norm: NormOrder::None,
        ..LossConfig::default()
    };
    for s in &train_set[..4] {
        let tape = Tape::new();
        let (loss, trace) = m.sample_loss(&tape, s, &cfg).unwrap();
        let p = tape.value(trace.probs).as_slice()[s.label];
        assert_eq!(tape.value(loss).item().unwrap(), -p.ln());
    }
}

#[test]
fn training_is_deterministic() {
    let (tr, va, _) = synthetic_splits(&tiny_spec(2), NODES);
    let run = || {
        let out = train(model(MendingStrategy::Encoder, 2), &tr, &va, &tcfg(3, 3), &LossConfig::default()).unwrap();
        history_csv(&out.history)
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_patience_stops_at_first_stale_epoch() {
    let (tr, va, _) = synthetic_splits(&tiny_spec(3), NODES);
    let out = train(model(MendingStrategy::None, 3), &tr, &va, &tcfg(30, 0), &LossConfig::default()).unwrap();
    let h = &out.history;
    let last = h.len() - 1;
    if last + 1 < 30 {
        let best_before = h[..last].iter().map(|r| r.val_acc).fold(f64::MIN, f64::max);
        assert!(h[last].val_acc <= best_before);
        assert!(h[..last].windows(2).all(|w| w[1].val_acc > w[0].val_acc));
    }
}

#[test]
fn best_checkpoint_is_never_worse_than_an_earlier_epoch() {
    let (tr, va, _) = synthetic_splits(&tiny_spec(4), NODES);
    let out = train(model(MendingStrategy::Fixed { k: 1 }, 4), &tr, &va, &tcfg(12, 4), &LossConfig::default()).unwrap();
    let best = &out.history[out.best_epoch - 1];
    assert_eq!(best.val_acc, out.best_val_acc);
    assert!(out.history[..out.best_epoch].iter().all(|r| r.val_acc <= out.best_val_acc));
    // Earliest epoch wins ties.
    assert!(out.history[..out.best_epoch - 1].iter().all(|r| r.val_acc < out.best_val_acc));
    assert!(out.history[out.best_epoch..].iter().all(|r| r.val_acc <= out.best_val_acc));
    let restored = evaluate(&out.model, &va).unwrap();
    assert_eq!(restored.accuracy, out.best_val_acc);
}

#[test]
fn loss_decreases_over_first_epochs() {
    let mut decreasing = 0;
    for seed in 0..3 {
        let (tr, va, _) = synthetic_splits(&tiny_spec(10 + seed), NODES);
        let out = train(model(MendingStrategy::Encoder, seed), &tr, &va, &tcfg(5, 5), &LossConfig::default()).unwrap();
        let h = &out.history;
        if h.len() == 5 && h[4].train_loss < h[0].train_loss {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 2, "{decreasing} of 3 seeds");
}

#[test]
fn every_parameter_tensor_receives_gradient() {
    let (tr, _, _) = synthetic_splits(&tiny_spec(5), NODES);
    let mut m = model(MendingStrategy::Encoder, 5);
    let cfg = LossConfig::default();
    let mut touched = vec![false; m.store.len()];
    for s in &tr {
        m.store.zero_grad();
        let tape = Tape::new();
        let (loss, _) = m.sample_loss(&tape, s, &cfg).unwrap();
        tape.backward(loss, &mut m.store).unwrap();
        for (k, e) in m.store.entries().iter().enumerate() {
            touched[k] |= e.grad.as_slice().iter().any(|&g| g != 0.0);
        }
    }
    for (k, e) in m.store.entries().iter().enumerate() {
        assert!(touched[k], "{} never received a gradient", e.name);
    }
}

#[test]
fn empty_split_and_bad_labels_are_contract_errors() {
    let (tr, va, _) = synthetic_splits(&tiny_spec(6), NODES);
    let e = train(model(MendingStrategy::None, 0), &[], &va, &tcfg(1, 0), &LossConfig::default()).unwrap_err();
    assert!(matches!(e, Error::Contract(_)));
    let mut bad: Vec<Sample<f64>> = tr[..2].to_vec();
    bad[0].label = 5;
    let e = train(model(MendingStrategy::None, 0), &bad, &va, &tcfg(1, 0), &LossConfig::default()).unwrap_err();
    assert!(matches!(e, Error::Contract(_)));
    assert!(one_hot::<f64>(2, 2).is_err());
}

#[test]
fn divergence_reports_the_epoch() {
    let (tr, va, _) = synthetic_splits(&tiny_spec(7), NODES);
    let mut m = model(MendingStrategy::None, 0);
    let id = m.store.find("readout.b_g").unwrap();
    m.store.value_mut(id).as_mut_slice()[0] = f64::NAN;
    let e = train(m, &tr, &va, &tcfg(3, 3), &LossConfig::default()).unwrap_err();
    assert!(matches!(e, Error::Numeric { .. }), "{e}");
    assert!(e.to_string().contains("epoch 1"), "{e}");
}
