//! Turning the block-diagonal adjacency into a connected one.
//!
//! The learnable path is a self-attention encoder that reads the rows of the
//! feature-augmented adjacency as tokens; its output `E` is symmetrized and
//! added onto the original adjacency:
//!
//! ```text
//! A~   = A_B + X W_p
//! A~   = LayerNorm(A~ + MultiHeadAttention(A~))      (per layer)
//! E    = LayerNorm(A~ + FFN(A~))
//! A^   = ReLU(A_B + (E + E^T) / 2)
//! ```
//!
//! The non-learnable baselines add fixed or random edges between
//! consecutive timesteps.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::supergraph::SuperGraph;

/// Result of any mending strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct MendedAdjacency<T> {
    /// `A_B + X W_p`; encoder path only.
    pub augmented: Option<Tensor<T>>,
    /// Encoder output before symmetrization; encoder path only.
    pub encoder_output: Option<Tensor<T>>,
    pub mended: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward width; `None` means twice the token dimension.
    pub d_ff: Option<usize>,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            heads: 1,
            layers: 1,
            d_ff: None,
            layer_norm_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_1: ParamId,
    b_1: ParamId,
    w_2: ParamId,
    b_2: ParamId,
    ln1_scale: ParamId,
    ln1_shift: ParamId,
    ln2_scale: ParamId,
    ln2_shift: ParamId,
}

/// Parameter handles of the mending encoder.
#[derive(Clone, Debug)]
pub struct Encoder {
    token_dim: usize,
    feature_dim: usize,
    heads: usize,
    eps: f64,
    w_p: ParamId,
    layers: Vec<EncoderLayer>,
}

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn uniform_init<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

/// Record `stage` as a numeric failure if `v` holds NaN or infinity.
pub(crate) fn check_finite<T: Scalar>(tape: &Tape<T>, v: Var, stage: &str) -> Result<Var> {
    if tape.value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(stage, "non-finite values"))
    }
}

impl Encoder {
    /// Register encoder parameters for `token_dim = nT` tokens and `feature_dim`
    /// node features under the `prefix.` namespace.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        token_dim: usize,
        feature_dim: usize,
        cfg: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.heads == 0 || (cfg.heads > 1 && token_dim % cfg.heads != 0) {
            return Err(Error::contract(format!(
                "token dimension {token_dim} not divisible by {} heads",
                cfg.heads
            )));
        }
        if cfg.layers == 0 {
            return Err(Error::contract("encoder needs at least one layer"));
        }
        let m = token_dim;
        let d_ff = cfg.d_ff.unwrap_or(2 * m);
        let w_p = store.add(format!("{prefix}.w_p"), uniform_init(rng, &[feature_dim, m], feature_dim))?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("{prefix}.layer{l}");
            layers.push(EncoderLayer {
                w_q: store.add(format!("{p}.w_q"), uniform_init(rng, &[m, m], m))?,
                w_k: store.add(format!("{p}.w_k"), uniform_init(rng, &[m, m], m))?,
                w_v: store.add(format!("{p}.w_v"), uniform_init(rng, &[m, m], m))?,
                w_1: store.add(format!("{p}.w_1"), uniform_init(rng, &[m, d_ff], m))?,
                b_1: store.add(format!("{p}.b_1"), uniform_init(rng, &[d_ff], m))?,
                w_2: store.add(format!("{p}.w_2"), uniform_init(rng, &[d_ff, m], d_ff))?,
                b_2: store.add(format!("{p}.b_2"), uniform_init(rng, &[m], d_ff))?,
                ln1_scale: store.add(format!("{p}.ln1_scale"), Tensor::ones(&[m]))?,
                ln1_shift: store.add(format!("{p}.ln1_shift"), Tensor::zeros(&[m]))?,
                ln2_scale: store.add(format!("{p}.ln2_scale"), Tensor::ones(&[m]))?,
                ln2_shift: store.add(format!("{p}.ln2_shift"), Tensor::zeros(&[m]))?,
            });
        }
        Ok(Self {
            token_dim,
            feature_dim,
            heads: cfg.heads,
            eps: cfg.layer_norm_eps,
            w_p,
            layers,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Every parameter handle, projection first.
    pub fn params(&self) -> Vec<ParamId> {
        let mut out = vec![self.w_p];
        for l in &self.layers {
            out.extend([
                l.w_q, l.w_k, l.w_v, l.w_1, l.b_1, l.w_2, l.b_2, l.ln1_scale, l.ln1_shift, l.ln2_scale,
                l.ln2_shift,
            ]);
        }
        out
    }

    fn attention<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, l: &EncoderLayer, x: Var) -> Result<Var> {
        let q = tape.matmul(x, tape.param(store, l.w_q))?;
        let k = tape.matmul(x, tape.param(store, l.w_k))?;
        let v = tape.matmul(x, tape.param(store, l.w_v))?;
        let dh = self.token_dim / self.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, (h + 1) * dh)?,
                    tape.slice_cols(k, h * dh, (h + 1) * dh)?,
                    tape.slice_cols(v, h * dh, (h + 1) * dh)?,
                )
            };
            let scores = tape.scale(tape.matmul(qh, tape.transpose(kh))?, scale);
            let weights = tape.softmax_rows(scores, None)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            tape.concat_cols(&heads)
        }
    }

    /// Record the encoder on `tape`. With `temporal_only`, within-block entries
    /// of `E` are zeroed before the skip connection.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        sg: &SuperGraph<T>,
        temporal_only: bool,
    ) -> Result<EncoderTrace> {
        let m = sg.node_count();
        if m != self.token_dim || sg.feature_dim() != self.feature_dim {
            return Err(Error::contract(format!(
                "encoder built for nT={}, d={} but supergraph has nT={m}, d={}",
                self.token_dim,
                self.feature_dim,
                sg.feature_dim()
            )));
        }
        let eps = T::of(self.eps);
        let a_b = tape.constant(sg.adjacency.clone());
        let x = tape.constant(sg.features.clone());
        let proj = tape.matmul(x, tape.param(store, self.w_p))?;
        let augmented = check_finite(tape, tape.add(a_b, proj)?, "augment")?;
        let mut h = augmented;
        for l in &self.layers {
            let att = check_finite(tape, self.attention(tape, store, l, h)?, "attention")?;
            let res = tape.add(h, att)?;
            h = check_finite(
                tape,
                tape.layer_norm_rows(res, tape.param(store, l.ln1_scale), tape.param(store, l.ln1_shift), eps)?,
                "attention layer norm",
            )?;
            let hidden = tape.relu(tape.add_row(tape.matmul(h, tape.param(store, l.w_1))?, tape.param(store, l.b_1))?);
            let ff = tape.add_row(tape.matmul(hidden, tape.param(store, l.w_2))?, tape.param(store, l.b_2))?;
            let ff = check_finite(tape, ff, "feed-forward")?;
            let res = tape.add(h, ff)?;
            h = check_finite(
                tape,
                tape.layer_norm_rows(res, tape.param(store, l.ln2_scale), tape.param(store, l.ln2_shift), eps)?,
                "feed-forward layer norm",
            )?;
        }
        let output = if temporal_only {
            tape.mul_const(h, sg.cross_block_mask())?
        } else {
            h
        };
        let mended = symmetrize_and_anchor(tape, a_b, output)?;
        Ok(EncoderTrace {
            augmented,
            output,
            mended: check_finite(tape, mended, "symmetrize")?,
        })
    }
}

/// Tape handles produced by [`Encoder::forward`].
#[derive(Clone, Copy, Debug)]
pub struct EncoderTrace {
    pub augmented: Var,
    /// Pre-symmetrization output `E` (masked when temporal-only).
    pub output: Var,
    pub mended: Var,
}

/// `ReLU(A_B + (E + E^T) / 2)`.
pub fn symmetrize_and_anchor<T: Scalar>(tape: &Tape<T>, a_b: Var, e: Var) -> Result<Var> {
    let sym = tape.scale(tape.add(e, tape.transpose(e))?, T::of(0.5));
    Ok(tape.relu(tape.add(a_b, sym)?))
}

fn anchor_value<T: Scalar>(a_b: &Tensor<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
    let sym = e.add(&e.transpose())?.scale(T::of(0.5));
    Ok(a_b.add(&sym)?.map(|v| if v > T::zero() { v } else { T::zero() }))
}

/// Run the encoder without keeping gradients.
pub fn encode<T: Scalar>(
    sg: &SuperGraph<T>,
    store: &ParamStore<T>,
    encoder: &Encoder,
    temporal_only: bool,
) -> Result<MendedAdjacency<T>> {
    let tape = Tape::new();
    let trace = encoder.forward(&tape, store, sg, temporal_only)?;
    let out = MendedAdjacency {
        augmented: Some(tape.value(trace.augmented).clone()),
        encoder_output: Some(tape.value(trace.output).clone()),
        mended: tape.value(trace.mended).clone(),
    };
    Ok(out)
}

/// Zero the within-block entries of the encoder output and redo the skip
/// connection, so spatial structure comes from `A_B` alone.
pub fn mask_to_temporal<T: Scalar>(mended: &MendedAdjacency<T>, sg: &SuperGraph<T>) -> Result<MendedAdjacency<T>> {
    let e = mended
        .encoder_output
        .as_ref()
        .ok_or_else(|| Error::contract("temporal masking needs an encoder output"))?;
    let masked = e.hadamard(&sg.cross_block_mask())?;
    Ok(MendedAdjacency {
        augmented: mended.augmented.clone(),
        mended: anchor_value(&sg.adjacency, &masked)?,
        encoder_output: Some(masked),
    })
}

/// Link every node to its counterpart(s) in the next timestep with unit
/// weight. `k = 1` joins equal spatial indices; larger `k` also joins the
/// `k - 1` nearest other nodes by centroid distance (index distance when no
/// centroids are known).
pub fn fixed_temporal<T: Scalar>(sg: &SuperGraph<T>, k: usize) -> Result<MendedAdjacency<T>> {
    if k == 0 {
        return Err(Error::contract("fixed temporal mending needs k >= 1"));
    }
    let n = sg.nodes_per_step();
    let mut a = sg.adjacency.clone();
    for t in 0..sg.timesteps().saturating_sub(1) {
        for i in 0..n {
            let src = t * n + i;
            let mut targets = vec![i];
            if k > 1 {
                let mut others: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d = match &sg.centroids {
                            Some(c) => {
                                let (p, q) = (c[src], c[(t + 1) * n + j]);
                                let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                                if d.is_nan() {
                                    f64::INFINITY
                                } else {
                                    d
                                }
                            }
                            None => (i as f64 - j as f64).abs(),
                        };
                        (d, j)
                    })
                    .collect();
                others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                targets.extend(others.iter().take(k - 1).map(|&(_, j)| j));
            }
            for j in targets {
                let dst = (t + 1) * n + j;
                a.set(src, dst, T::one());
                a.set(dst, src, T::one());
            }
        }
    }
    Ok(MendedAdjacency {
        augmented: None,
        encoder_output: None,
        mended: a,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandomMode {
    /// Edge weight drawn from Uniform(0, 1].
    Weighted,
    Binary,
}

/// Join each node of block `t` to `edges_per_node` distinct uniformly chosen
/// nodes of block `t + 1`.
pub fn random_mending<T: Scalar>(
    sg: &SuperGraph<T>,
    mode: RandomMode,
    edges_per_node: usize,
    seed: u64,
) -> Result<MendedAdjacency<T>> {
    if edges_per_node == 0 {
        return Err(Error::contract("random mending needs edges_per_node >= 1"));
    }
    let n = sg.nodes_per_step();
    let per = edges_per_node.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = sg.adjacency.clone();
    for t in 0..sg.timesteps().saturating_sub(1) {
        for i in 0..n {
            for j in sample(&mut rng, n, per) {
                let w = match mode {
                    RandomMode::Binary => T::one(),
                    RandomMode::Weighted => T::of(1.0 - rng.random::<f64>()),
                };
                let (src, dst) = (t * n + i, (t + 1) * n + j);
                a.set(src, dst, w);
                a.set(dst, src, w);
            }
        }
    }
    Ok(MendedAdjacency {
        augmented: None,
        encoder_output: None,
        mended: a,
    })
}
