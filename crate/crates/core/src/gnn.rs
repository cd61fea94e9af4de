//! Message passing over the (mended) supergraph and the classification head.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mending::{check_finite, uniform_init};
use crate::numcore::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, tape: &Tape<T>, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x, T::one()),
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Neighbourhood of every node: nonzero adjacency entries plus a self loop.
pub fn neighbourhood_mask<T: Scalar>(adj: &Tensor<T>) -> Vec<bool> {
    let m = adj.rows();
    (0..m * m)
        .map(|k| k / m == k % m || adj.as_slice()[k] > T::zero())
        .collect()
}

/// One graph attention layer.
///
/// Per head: `h' = X W`, logits `LeakyReLU(a_src . h'_i + a_dst . h'_j)` over
/// `N(i)`, softmax, then the attention-weighted sum of `h'_j`. Hidden layers
/// concatenate the activated heads; a non-concatenating layer averages heads
/// before the activation.
#[derive(Clone, Debug)]
pub struct GatLayer {
    heads: Vec<(ParamId, ParamId)>,
    in_dim: usize,
    out_dim: usize,
    concat: bool,
    pub slope: f64,
    pub activation: Activation,
    /// Add `ln A_ij` to the logits so edge weights shape attention.
    pub edge_weighted: bool,
}

/// Values recorded by a GAT layer.
#[derive(Clone, Debug)]
pub struct GatTrace {
    pub output: Var,
    /// Attention coefficients, one `m x m` matrix per head.
    pub attention: Vec<Var>,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        concat: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::contract("GAT layer needs at least one head"));
        }
        let heads = (0..heads)
            .map(|h| {
                let w = store.add(format!("{prefix}.head{h}.w"), uniform_init(rng, &[in_dim, out_dim], in_dim))?;
                let a = store.add(format!("{prefix}.head{h}.a"), uniform_init(rng, &[2 * out_dim], out_dim))?;
                Ok((w, a))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            heads,
            in_dim,
            out_dim,
            concat,
            slope: 0.2,
            activation: Activation::Elu,
            edge_weighted: false,
        })
    }

    pub fn output_dim(&self) -> usize {
        if self.concat {
            self.out_dim * self.heads.len()
        } else {
            self.out_dim
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.heads.iter().flat_map(|&(w, a)| [w, a]).collect()
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var, adj: Var) -> Result<GatTrace> {
        let (m, d_in) = {
            let xv = tape.value(x);
            (xv.rows(), xv.cols())
        };
        if d_in != self.in_dim || tape.shape(adj) != [m, m] {
            return Err(Error::Dimension {
                op: "gat_layer",
                left: tape.shape(x),
                right: tape.shape(adj),
            });
        }
        let mask = neighbourhood_mask(&tape.value(adj));
        let ones_row = tape.constant(Tensor::ones(&[1, m]));
        let ones_col = tape.constant(Tensor::ones(&[m, 1]));
        let weight_logits = if self.edge_weighted {
            let with_loops = tape.add(adj, tape.constant(Tensor::eye(m)))?;
            Some(tape.ln_floor(with_loops, T::of(1e-12)))
        } else {
            None
        };
        let d = self.out_dim;
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for &(w, a) in &self.heads {
            let h = tape.matmul(x, tape.param(store, w))?;
            let a = tape.reshape(tape.param(store, a), &[2 * d, 1])?;
            let a_src = tape.transpose(tape.slice_cols(tape.transpose(a), 0, d)?);
            let a_dst = tape.transpose(tape.slice_cols(tape.transpose(a), d, 2 * d)?);
            let s = tape.matmul(h, a_src)?;
            let t = tape.matmul(h, a_dst)?;
            let logits = tape.add(tape.matmul(s, ones_row)?, tape.matmul(ones_col, tape.transpose(t))?)?;
            let mut e = tape.leaky_relu(logits, T::of(self.slope));
            if let Some(wl) = weight_logits {
                e = tape.add(e, wl)?;
            }
            let alpha = tape.softmax_rows(e, Some(mask.clone()))?;
            attention.push(alpha);
            outputs.push(tape.matmul(alpha, h)?);
        }
        let output = if self.concat {
            let acts: Vec<Var> = outputs.iter().map(|&o| self.activation.apply(tape, o)).collect();
            if acts.len() == 1 {
                acts[0]
            } else {
                tape.concat_cols(&acts)?
            }
        } else {
            let mut sum = outputs[0];
            for &o in &outputs[1..] {
                sum = tape.add(sum, o)?;
            }
            let mean = tape.scale(sum, T::one() / T::of(outputs.len() as f64));
            self.activation.apply(tape, mean)
        };
        Ok(GatTrace {
            output: check_finite(tape, output, "gat layer")?,
            attention,
        })
    }
}

/// Symmetric-normalized graph convolution `σ(D^-1/2 (A + I) D^-1/2 X W)`.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    w: ParamId,
    in_dim: usize,
    out_dim: usize,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = store.add(format!("{prefix}.w"), uniform_init(rng, &[in_dim, out_dim], in_dim))?;
        Ok(Self {
            w,
            in_dim,
            out_dim,
            activation: Activation::Elu,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w]
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var, adj: Var) -> Result<Var> {
        let m = tape.value(x).rows();
        if tape.value(x).cols() != self.in_dim || tape.shape(adj) != [m, m] {
            return Err(Error::Dimension {
                op: "gcn_layer",
                left: tape.shape(x),
                right: tape.shape(adj),
            });
        }
        let out = gcn_propagate(tape, x, adj)?;
        let out = tape.matmul(out, tape.param(store, self.w))?;
        check_finite(tape, self.activation.apply(tape, out), "gcn layer")
    }
}

/// `D^-1/2 (A + I) D^-1/2 X`, differentiable in both `A` and `X`.
pub fn gcn_propagate<T: Scalar>(tape: &Tape<T>, x: Var, adj: Var) -> Result<Var> {
    let m = tape.value(adj).rows();
    let a_hat = tape.add(adj, tape.constant(Tensor::eye(m)))?;
    let deg = tape.matmul(a_hat, tape.constant(Tensor::ones(&[m, 1])))?;
    let inv_sqrt = tape.powf(deg, T::of(-0.5));
    let outer = tape.matmul(inv_sqrt, tape.transpose(inv_sqrt))?;
    let norm = tape.mul(a_hat, outer)?;
    tape.matmul(norm, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnnKind {
    Gat,
    Gcn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnConfig {
    pub kind: GnnKind,
    /// Width of the hidden representation (all heads together).
    pub hidden: usize,
    /// Heads of the hidden GAT layer; the output layer uses one.
    pub heads: usize,
    pub out_dim: usize,
    pub slope: f64,
    pub activation: Activation,
    pub edge_weighted: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            kind: GnnKind::Gat,
            hidden: 64,
            heads: 4,
            out_dim: 16,
            slope: 0.2,
            activation: Activation::Elu,
            edge_weighted: false,
        }
    }
}

#[derive(Clone, Debug)]
pub enum GnnLayer {
    Gat(GatLayer),
    Gcn(GcnLayer),
}

/// Two-layer message passing stack.
#[derive(Clone, Debug)]
pub struct Gnn {
    pub layers: Vec<GnnLayer>,
}

/// Output of [`Gnn::forward`].
#[derive(Clone, Debug)]
pub struct GnnTrace {
    pub output: Var,
    pub attention: Vec<Var>,
}

impl Gnn {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        cfg: &GnnConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let layers = match cfg.kind {
            GnnKind::Gat => {
                if cfg.heads == 0 || cfg.hidden % cfg.heads != 0 {
                    return Err(Error::contract(format!(
                        "hidden width {} not divisible by {} heads",
                        cfg.hidden, cfg.heads
                    )));
                }
                let mut l1 = GatLayer::new(store, &format!("{prefix}.layer0"), in_dim, cfg.hidden / cfg.heads, cfg.heads, true, rng)?;
                let mut l2 = GatLayer::new(store, &format!("{prefix}.layer1"), cfg.hidden, cfg.out_dim, 1, false, rng)?;
                for l in [&mut l1, &mut l2] {
                    l.slope = cfg.slope;
                    l.activation = cfg.activation;
                    l.edge_weighted = cfg.edge_weighted;
                }
                vec![GnnLayer::Gat(l1), GnnLayer::Gat(l2)]
            }
            GnnKind::Gcn => {
                let mut l1 = GcnLayer::new(store, &format!("{prefix}.layer0"), in_dim, cfg.hidden, rng)?;
                let mut l2 = GcnLayer::new(store, &format!("{prefix}.layer1"), cfg.hidden, cfg.out_dim, rng)?;
                l1.activation = cfg.activation;
                l2.activation = cfg.activation;
                vec![GnnLayer::Gcn(l1), GnnLayer::Gcn(l2)]
            }
        };
        Ok(Self { layers })
    }

    pub fn output_dim(&self) -> usize {
        match self.layers.last() {
            Some(GnnLayer::Gat(l)) => l.output_dim(),
            Some(GnnLayer::Gcn(l)) => l.output_dim(),
            None => 0,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                GnnLayer::Gat(g) => g.params(),
                GnnLayer::Gcn(g) => g.params(),
            })
            .collect()
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var, adj: Var) -> Result<GnnTrace> {
        let mut h = x;
        let mut attention = Vec::new();
        for layer in &self.layers {
            h = match layer {
                GnnLayer::Gat(g) => {
                    let t = g.forward(tape, store, h, adj)?;
                    attention.extend(t.attention);
                    t.output
                }
                GnnLayer::Gcn(g) => g.forward(tape, store, h, adj)?,
            };
        }
        Ok(GnnTrace { output: h, attention })
    }
}

/// Flatten-then-linear classification head with softmax output.
#[derive(Clone, Debug)]
pub struct Readout {
    w_g: ParamId,
    b_g: ParamId,
    classes: usize,
}

impl Readout {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        flat_dim: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::contract("readout needs at least two classes"));
        }
        Ok(Self {
            w_g: store.add(format!("{prefix}.w_g"), uniform_init(rng, &[flat_dim, classes], flat_dim))?,
            b_g: store.add(format!("{prefix}.b_g"), uniform_init(rng, &[classes], flat_dim))?,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_g, self.b_g]
    }

    /// Class probabilities `softmax(W_g^T vec(Z) + b_G)` as a `1 x C` row.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        let len = tape.value(z).len();
        let flat = tape.reshape(z, &[1, len])?;
        let logits = tape.add_row(tape.matmul(flat, tape.param(store, self.w_g))?, tape.param(store, self.b_g))?;
        tape.softmax_rows(logits, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store_rng() -> (ParamStore<f64>, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let (mut store, mut rng) = store_rng();
        let layer = GatLayer::new(&mut store, "gat", 2, 3, 1, true, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[2, 2], &[0.3, -0.1, 0.8, 0.5]).unwrap());
        let adj = tape.constant(Tensor::zeros(&[2, 2]));
        let trace = layer.forward(&tape, &store, x, adj).unwrap();
        assert_eq!(tape.value(trace.attention[0]).as_slice(), &[1., 0., 0., 1.]);
        let wh = tape.value(x).matmul(store.value(layer.heads[0].0)).unwrap();
        let expected = wh.map(|v| if v > 0.0 { v } else { v.exp() - 1.0 });
        assert_eq!(*tape.value(trace.output), expected);
    }

    #[test]
    fn zero_attention_vector_is_uniform() {
        let (mut store, mut rng) = store_rng();
        let layer = GatLayer::new(&mut store, "gat", 1, 2, 1, true, &mut rng).unwrap();
        *store.value_mut(layer.heads[0].1) = Tensor::zeros(&[4]);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[3, 1], &[1., 2., 3.]).unwrap());
        let adj = tape.constant(Tensor::from_f64(&[3, 3], &[0., 1., 1., 1., 0., 0., 1., 0., 0.]).unwrap());
        let trace = layer.forward(&tape, &store, x, adj).unwrap();
        let alpha = tape.value(trace.attention[0]).clone();
        for j in 0..3 {
            assert!((alpha.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(alpha.get(1, 2), 0.0);
        assert!((alpha.get(1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gcn_without_edges_is_identity() {
        let (mut store, mut rng) = store_rng();
        let mut layer = GcnLayer::new(&mut store, "gcn", 2, 2, &mut rng).unwrap();
        layer.activation = Activation::Identity;
        *store.value_mut(layer.w) = Tensor::eye(2);
        let tape = Tape::new();
        let xv = Tensor::from_f64(&[3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let x = tape.constant(xv.clone());
        let adj = tape.constant(Tensor::zeros(&[3, 3]));
        let out = layer.forward(&tape, &store, x, adj).unwrap();
        assert_eq!(*tape.value(out), xv);
    }

    #[test]
    fn gcn_on_k2_averages() {
        // D~ = diag(2, 2), so the normalized operator is [[.5, .5], [.5, .5]].
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[2, 1], &[1., 0.]).unwrap());
        let adj = tape.constant(Tensor::from_f64(&[2, 2], &[0., 1., 1., 0.]).unwrap());
        let out = gcn_propagate(&tape, x, adj).unwrap();
        for &v in tape.value(out).as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_readout_is_uniform() {
        let (mut store, mut rng) = store_rng();
        let head = Readout::new(&mut store, "readout", 6, 4, &mut rng).unwrap();
        *store.value_mut(head.w_g) = Tensor::zeros(&[6, 4]);
        *store.value_mut(head.b_g) = Tensor::zeros(&[4]);
        let tape = Tape::new();
        let z = tape.constant(Tensor::from_fn(3, 2, |i, j| (i + j) as f64));
        let y = head.forward(&tape, &store, z).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[0.25; 4]);
    }

    #[test]
    fn readout_needs_two_classes() {
        let (mut store, mut rng) = store_rng();
        assert!(Readout::new(&mut store, "r", 4, 1, &mut rng).is_err());
    }
}
