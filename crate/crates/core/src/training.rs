//! Loss, end-to-end model, training loop with early stopping, and metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{dirichlet, sparsity};
use crate::error::{Error, Result};
use crate::gnn::{Gnn, GnnConfig, Readout};
use crate::mending::{fixed_temporal, random_mending, Encoder, EncoderConfig, MendedAdjacency, RandomMode};
use crate::numcore::{Adam, AdamConfig, ParamStore, Scalar, Tape, Tensor, Var};
use crate::supergraph::SuperGraph;

/// Probability floor inside the logarithm of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormOrder {
    #[default]
    L1,
    /// Frobenius norm.
    L2,
    None,
}

/// Matrix the sparsity penalty is applied to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PenaltyTarget {
    /// Skew part `(E - E^T) / 2` of the raw encoder output.
    #[default]
    Skew,
    /// The mended adjacency itself.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub norm: NormOrder,
    pub target: PenaltyTarget,
    pub classes: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-6,
            norm: NormOrder::L1,
            target: PenaltyTarget::Skew,
            classes: 2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.classes < 2 {
            return Err(Error::contract("need at least two classes"));
        }
        Ok(())
    }
}

fn check_one_hot<T: Scalar>(y_true: &[T], classes: usize) -> Result<()> {
    if y_true.len() != classes {
        return Err(Error::contract(format!(
            "target has {} entries for {classes} classes",
            y_true.len()
        )));
    }
    let total: f64 = y_true.iter().map(|v| v.to_f64_lossy()).sum();
    if y_true.iter().any(|&v| v < T::zero()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("target is not a distribution (sums to {total})")));
    }
    Ok(())
}

/// The penalty norm of `s` (before multiplying by lambda).
pub fn penalty<T: Scalar>(tape: &Tape<T>, s: Var, cfg: &LossConfig) -> Result<Option<Var>> {
    let target = match cfg.target {
        PenaltyTarget::Skew => tape.scale(tape.sub(s, tape.transpose(s))?, T::of(0.5)),
        PenaltyTarget::Full => s,
    };
    Ok(match cfg.norm {
        NormOrder::L1 => Some(tape.abs_sum(target)),
        NormOrder::L2 => Some(tape.frobenius(target)),
        NormOrder::None => None,
    })
}

/// Cross-entropy plus `lambda * penalty(s)` recorded on `tape`.
pub fn loss_on_tape<T: Scalar>(
    tape: &Tape<T>,
    y_true: &[T],
    probs: Var,
    s: Option<Var>,
    cfg: &LossConfig,
) -> Result<Var> {
    check_one_hot(y_true, cfg.classes)?;
    let ce = tape.nll(probs, y_true, T::of(PROB_FLOOR))?;
    if cfg.lambda == 0.0 {
        return Ok(ce);
    }
    match s {
        Some(s) => match penalty(tape, s, cfg)? {
            Some(p) => tape.add(ce, tape.scale(p, T::of(cfg.lambda))),
            None => Ok(ce),
        },
        None => Ok(ce),
    }
}

/// Value-only loss for a single sample.
pub fn loss<T: Scalar>(y_true: &[T], y_pred: &[T], s: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    let tape = Tape::new();
    let probs = tape.constant(Tensor::new(vec![1, y_pred.len()], y_pred.to_vec())?);
    let s = tape.constant(s.clone());
    let out = loss_on_tape(&tape, y_true, probs, Some(s), cfg)?;
    let v = tape.value(out).item()?;
    Ok(v)
}

/// How the block adjacency is mended before message passing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MendingStrategy {
    Encoder,
    /// Encoder whose within-block output is masked out.
    EncoderTemporal,
    Fixed { k: usize },
    RandomWeighted { edges_per_node: usize },
    RandomBinary { edges_per_node: usize },
    None,
}

impl MendingStrategy {
    pub fn uses_encoder(self) -> bool {
        matches!(self, MendingStrategy::Encoder | MendingStrategy::EncoderTemporal)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub nodes_per_step: usize,
    pub timesteps: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub mending: MendingStrategy,
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    /// Seeds parameter initialization and random mending.
    pub seed: u64,
}

/// Mending, message passing and readout with their parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    encoder: Option<Encoder>,
    gnn: Gnn,
    readout: Readout,
}

/// Tape handles from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub probs: Var,
    pub mended: Var,
    pub encoder_output: Option<Var>,
    pub node_repr: Var,
    pub attention: Vec<Var>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.classes < 2 {
            return Err(Error::contract("need at least two classes"));
        }
        if config.nodes_per_step == 0 || config.timesteps == 0 || config.feature_dim == 0 {
            return Err(Error::contract("node count, timesteps and feature dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let m = config.nodes_per_step * config.timesteps;
        let encoder = if config.mending.uses_encoder() {
            Some(Encoder::new(&mut store, "encoder", m, config.feature_dim, &config.encoder, &mut rng)?)
        } else {
            None
        };
        let gnn = Gnn::new(&mut store, "gnn", config.feature_dim, &config.gnn, &mut rng)?;
        let readout = Readout::new(&mut store, "readout", m * gnn.output_dim(), config.classes, &mut rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            gnn,
            readout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.encoder.as_ref()
    }

    pub fn gnn(&self) -> &Gnn {
        &self.gnn
    }

    pub fn readout(&self) -> &Readout {
        &self.readout
    }

    fn check_graph(&self, sg: &SuperGraph<T>) -> Result<()> {
        let c = &self.config;
        if sg.nodes_per_step() != c.nodes_per_step || sg.timesteps() != c.timesteps || sg.feature_dim() != c.feature_dim {
            return Err(Error::contract(format!(
                "model expects n={}, T={}, d={} but supergraph has n={}, T={}, d={}",
                c.nodes_per_step,
                c.timesteps,
                c.feature_dim,
                sg.nodes_per_step(),
                sg.timesteps(),
                sg.feature_dim()
            )));
        }
        Ok(())
    }

    /// Non-learnable mendings; `None` for the encoder strategies.
    fn fixed_mending(&self, sg: &SuperGraph<T>) -> Result<Option<MendedAdjacency<T>>> {
        Ok(match self.config.mending {
            MendingStrategy::Fixed { k } => Some(fixed_temporal(sg, k)?),
            MendingStrategy::RandomWeighted { edges_per_node } => {
                Some(random_mending(sg, RandomMode::Weighted, edges_per_node, self.config.seed)?)
            }
            MendingStrategy::RandomBinary { edges_per_node } => {
                Some(random_mending(sg, RandomMode::Binary, edges_per_node, self.config.seed)?)
            }
            MendingStrategy::None => Some(MendedAdjacency {
                augmented: None,
                encoder_output: None,
                mended: sg.adjacency.clone(),
            }),
            MendingStrategy::Encoder | MendingStrategy::EncoderTemporal => None,
        })
    }

    pub fn forward(&self, tape: &Tape<T>, sg: &SuperGraph<T>) -> Result<ForwardTrace> {
        self.check_graph(sg)?;
        let (mended, encoder_output) = match (&self.encoder, self.fixed_mending(sg)?) {
            (Some(enc), None) => {
                let temporal = self.config.mending == MendingStrategy::EncoderTemporal;
                let trace = enc.forward(tape, &self.store, sg, temporal)?;
                (trace.mended, Some(trace.output))
            }
            (_, Some(m)) => (tape.constant(m.mended), None),
            (None, None) => unreachable!("encoder strategies always build an encoder"),
        };
        let x = tape.constant(sg.features.clone());
        let gnn = self.gnn.forward(tape, &self.store, x, mended)?;
        let probs = self.readout.forward(tape, &self.store, gnn.output)?;
        Ok(ForwardTrace {
            probs,
            mended,
            encoder_output,
            node_repr: gnn.output,
            attention: gnn.attention,
        })
    }

    /// Class probabilities and the mended adjacency, without gradients.
    pub fn predict(&self, sg: &SuperGraph<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let tape = Tape::new();
        let trace = self.forward(&tape, sg)?;
        let probs = tape.value(trace.probs).as_slice().to_vec();
        let mended = tape.value(trace.mended).clone();
        Ok((probs, mended))
    }

    pub fn mend(&self, sg: &SuperGraph<T>) -> Result<MendedAdjacency<T>> {
        self.check_graph(sg)?;
        if let Some(m) = self.fixed_mending(sg)? {
            return Ok(m);
        }
        let tape = Tape::new();
        let enc = self.encoder.as_ref().expect("encoder strategy");
        let temporal = self.config.mending == MendingStrategy::EncoderTemporal;
        let trace = enc.forward(&tape, &self.store, sg, temporal)?;
        let out = MendedAdjacency {
            augmented: Some(tape.value(trace.augmented).clone()),
            encoder_output: Some(tape.value(trace.output).clone()),
            mended: tape.value(trace.mended).clone(),
        };
        Ok(out)
    }

    /// Loss of one labelled sample recorded on `tape`.
    pub fn sample_loss(&self, tape: &Tape<T>, sample: &Sample<T>, cfg: &LossConfig) -> Result<(Var, ForwardTrace)> {
        let trace = self.forward(tape, &sample.graph)?;
        let y = one_hot::<T>(sample.label, self.config.classes)?;
        let s = match cfg.target {
            PenaltyTarget::Skew => trace.encoder_output,
            PenaltyTarget::Full => Some(trace.mended),
        };
        let l = loss_on_tape(tape, &y, trace.probs, s, cfg)?;
        Ok((l, trace))
    }
}

pub fn one_hot<T: Scalar>(label: usize, classes: usize) -> Result<Vec<T>> {
    if label >= classes {
        return Err(Error::contract(format!("label {label} out of range for {classes} classes")));
    }
    let mut v = vec![T::zero(); classes];
    v[label] = T::one();
    Ok(v)
}

/// One labelled supergraph.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub id: String,
    pub graph: SuperGraph<T>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::contract("max epochs must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::contract(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Metrics logged after each epoch. Sparsity and energy columns are means
/// over the validation split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub rho: f64,
    pub delta_rho: f64,
    pub delta_h: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Model with the parameters of the best validation epoch.
    pub model: Model<T>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub history: Vec<EpochRecord>,
}

struct ValidationPass {
    accuracy: f64,
    rho: f64,
    delta_rho: f64,
    delta_h: f64,
}

fn validation_pass<T: Scalar>(model: &Model<T>, samples: &[Sample<T>]) -> Result<ValidationPass> {
    let mut correct = 0usize;
    let (mut rho, mut delta_rho, mut delta_h) = (0.0, 0.0, 0.0);
    for s in samples {
        let (probs, mended) = model.predict(&s.graph)?;
        if argmax(&probs) == s.label {
            correct += 1;
        }
        let r = sparsity(&mended);
        rho += r;
        delta_rho += sparsity(&s.graph.adjacency) - r;
        delta_h += (dirichlet(&s.graph.features, &mended)? - dirichlet(&s.graph.features, &s.graph.adjacency)?)
            .to_f64_lossy();
    }
    let k = samples.len() as f64;
    Ok(ValidationPass {
        accuracy: correct as f64 / k,
        rho: rho / k,
        delta_rho: delta_rho / k,
        delta_h: delta_h / k,
    })
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_labels<T>(samples: &[Sample<T>], classes: usize, split: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::contract(format!("{split} split is empty")));
    }
    if let Some(s) = samples.iter().find(|s| s.label >= classes) {
        return Err(Error::contract(format!(
            "sample {} has label {} but the model has {classes} classes",
            s.id, s.label
        )));
    }
    Ok(())
}

/// Per-sample Adam training with early stopping on validation accuracy.
///
/// Stops once validation accuracy has not improved for more than `patience`
/// consecutive epochs and returns the earliest best epoch's parameters.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    tcfg: &TrainConfig,
    lcfg: &LossConfig,
) -> Result<TrainOutcome<T>> {
    tcfg.validate()?;
    lcfg.validate()?;
    if lcfg.classes != model.config.classes {
        return Err(Error::contract(format!(
            "loss configured for {} classes but model has {}",
            lcfg.classes, model.config.classes
        )));
    }
    check_labels(train_set, model.config.classes, "train")?;
    check_labels(val_set, model.config.classes, "validation")?;
    let mut adam = Adam::new(AdamConfig {
        learning_rate: T::of(tcfg.learning_rate),
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;
    let mut stale = 0usize;
    for epoch in 1..=tcfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            model.store.zero_grad();
            let tape = Tape::new();
            let (l, _) = model.sample_loss(&tape, &train_set[i], lcfg)?;
            let lv = tape.value(l).item()?.to_f64_lossy();
            if !lv.is_finite() {
                return Err(Error::numeric(
                    "train",
                    format!("loss diverged at epoch {epoch} (sample {})", train_set[i].id),
                ));
            }
            total += lv;
            tape.backward(l, &mut model.store)?;
            adam.step(&mut model.store)?;
        }
        let v = validation_pass(&model, val_set)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_acc: v.accuracy,
            rho: v.rho,
            delta_rho: v.delta_rho,
            delta_h: v.delta_h,
        });
        if best.as_ref().is_none_or(|b| v.accuracy > b.1) {
            best = Some((epoch, v.accuracy, model.store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale > tcfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_acc, store) = best.expect("at least one epoch ran");
    model.store = store;
    model.store.zero_grad();
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_acc,
        history,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    /// Mean F1 over classes that occur in the truth or the predictions.
    pub macro_f1: f64,
    /// Support-weighted mean F1.
    pub weighted_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn metrics_from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Metrics> {
    if truth.len() != predicted.len() {
        return Err(Error::contract(format!(
            "{} labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::contract("cannot evaluate an empty split"));
    }
    if let Some(&c) = truth.iter().chain(predicted).find(|&&c| c >= classes) {
        return Err(Error::contract(format!("class {c} out of range for {classes} classes")));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let mut per_class_f1 = Vec::with_capacity(classes);
    let (mut macro_sum, mut macro_n, mut weighted) = (0.0, 0usize, 0.0);
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let pred: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let denom = (support + pred) as f64;
        let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        per_class_f1.push(f1);
        if support + pred > 0 {
            macro_sum += f1;
            macro_n += 1;
        }
        weighted += f1 * support as f64;
    }
    Ok(Metrics {
        accuracy: correct as f64 / truth.len() as f64,
        per_class_f1,
        macro_f1: macro_sum / macro_n as f64,
        weighted_f1: weighted / truth.len() as f64,
        confusion,
    })
}

pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample<T>]) -> Result<Metrics> {
    check_labels(samples, model.config.classes, "evaluation")?;
    let mut predicted = Vec::with_capacity(samples.len());
    for s in samples {
        predicted.push(argmax(&model.predict(&s.graph)?.0));
    }
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    metrics_from_predictions(&truth, &predicted, model.config.classes)
}
