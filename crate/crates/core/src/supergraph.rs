//! Per-timestep graphs and the block-diagonal supergraph that joins them.

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};
use crate::segmentation::{node_features, region_adjacency, slic, FeatureExtractor, FilterBank, Frame, SlicParams};

/// One Region Adjacency Graph: `n_t` nodes, adjacency and `n_t x d` features.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepGraph<T> {
    pub adjacency: Tensor<T>,
    pub features: Tensor<T>,
    /// True for nodes introduced by zero padding.
    pub padded: Vec<bool>,
    /// Optional superpixel centroids (x, y), used by fixed temporal mending.
    pub centroids: Option<Vec<(f64, f64)>>,
}

impl<T: Scalar> TimestepGraph<T> {
    pub fn new(adjacency: Tensor<T>, features: Tensor<T>) -> Result<Self> {
        let n = adjacency.rows();
        if !adjacency.is_square() || features.rows() != n || features.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "timestep graph",
                left: adjacency.shape().to_vec(),
                right: features.shape().to_vec(),
            });
        }
        check_adjacency(&adjacency)?;
        Ok(Self {
            adjacency,
            features,
            padded: vec![false; n],
            centroids: None,
        })
    }

    pub fn with_centroids(mut self, centroids: Vec<(f64, f64)>) -> Result<Self> {
        if centroids.len() != self.node_count() {
            return Err(Error::contract("one centroid per node required"));
        }
        self.centroids = Some(centroids);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    fn degree(&self, i: usize) -> T {
        self.adjacency.row(i).iter().copied().sum()
    }

    /// Fuse node `b` into node `a` (a < b): adjacency rows OR-ed, features
    /// averaged, `b` removed.
    fn merge(&mut self, a: usize, b: usize) {
        let n = self.node_count();
        let keep: Vec<usize> = (0..n).filter(|&k| k != b).collect();
        let mut adj = self.adjacency.clone();
        for k in 0..n {
            let v = if adj.get(a, k) > T::zero() || adj.get(b, k) > T::zero() {
                T::one()
            } else {
                T::zero()
            };
            adj.set(a, k, v);
            adj.set(k, a, v);
        }
        adj.set(a, a, T::zero());
        self.adjacency = adj.select(&keep);
        let d = self.feature_dim();
        let half = T::of(0.5);
        let mut feats = Vec::with_capacity((n - 1) * d);
        for &k in &keep {
            if k == a {
                feats.extend(
                    self.features
                        .row(a)
                        .iter()
                        .zip(self.features.row(b))
                        .map(|(&x, &y)| (x + y) * half),
                );
            } else {
                feats.extend_from_slice(self.features.row(k));
            }
        }
        self.features = Tensor::new(vec![n - 1, d], feats).expect("shape preserved");
        self.padded[a] = self.padded[a] && self.padded[b];
        self.padded.remove(b);
        if let Some(c) = &mut self.centroids {
            c[a] = ((c[a].0 + c[b].0) / 2.0, (c[a].1 + c[b].1) / 2.0);
            c.remove(b);
        }
    }
}

fn check_adjacency<T: Scalar>(a: &Tensor<T>) -> Result<()> {
    let tol = symmetry_tolerance(a);
    if !a.is_symmetric(tol) {
        return Err(Error::contract("adjacency must be symmetric"));
    }
    let n = a.rows();
    if (0..n).any(|i| a.get(i, i) != T::zero()) {
        return Err(Error::contract("adjacency must have a zero diagonal"));
    }
    if a.as_slice().iter().any(|&v| v < T::zero()) {
        return Err(Error::contract("adjacency must be nonnegative"));
    }
    Ok(())
}

fn symmetry_tolerance<T: Scalar>(a: &Tensor<T>) -> T {
    T::epsilon() * T::of(16.0) * a.max_abs().max(T::one())
}

/// Bring a graph to exactly `n` nodes.
///
/// Smaller graphs gain isolated zero-feature nodes. Larger graphs repeatedly
/// merge the adjacent pair with the smallest combined degree (ties: lowest
/// index pair); if no edges remain, the two lowest-degree nodes are merged.
pub fn normalize_node_count<T: Scalar>(g: &TimestepGraph<T>, n: usize) -> Result<TimestepGraph<T>> {
    if n == 0 {
        return Err(Error::contract("node budget must be at least 1"));
    }
    let nt = g.node_count();
    let mut out = g.clone();
    if nt < n {
        let d = g.feature_dim();
        let mut adj = Tensor::zeros(&[n, n]);
        for i in 0..nt {
            for j in 0..nt {
                adj.set(i, j, g.adjacency.get(i, j));
            }
        }
        let mut feats = g.features.as_slice().to_vec();
        feats.resize(n * d, T::zero());
        out.adjacency = adj;
        out.features = Tensor::new(vec![n, d], feats)?;
        out.padded.resize(n, true);
        if let Some(c) = &mut out.centroids {
            c.resize(n, (f64::NAN, f64::NAN));
        }
    }
    while out.node_count() > n {
        let m = out.node_count();
        let deg: Vec<T> = (0..m).map(|i| out.degree(i)).collect();
        let mut best: Option<(T, usize, usize)> = None;
        for i in 0..m {
            for j in i + 1..m {
                if out.adjacency.get(i, j) > T::zero() {
                    let c = deg[i] + deg[j];
                    if best.is_none_or(|(bc, _, _)| c < bc) {
                        best = Some((c, i, j));
                    }
                }
            }
        }
        let (a, b) = match best {
            Some((_, i, j)) => (i, j),
            None => {
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&x, &y| deg[x].partial_cmp(&deg[y]).unwrap().then(x.cmp(&y)));
                (order[0].min(order[1]), order[0].max(order[1]))
            }
        };
        out.merge(a, b);
    }
    Ok(out)
}

/// All timesteps joined into one graph with block-diagonal adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperGraph<T> {
    timesteps: usize,
    nodes_per_step: usize,
    pub adjacency: Tensor<T>,
    pub features: Tensor<T>,
    pub padded: Vec<bool>,
    pub centroids: Option<Vec<(f64, f64)>>,
}

impl<T: Scalar> SuperGraph<T> {
    pub fn from_parts(
        timesteps: usize,
        nodes_per_step: usize,
        adjacency: Tensor<T>,
        features: Tensor<T>,
        padded: Vec<bool>,
    ) -> Result<Self> {
        let m = timesteps * nodes_per_step;
        if adjacency.shape() != [m, m] || features.rows() != m || padded.len() != m {
            return Err(Error::contract(format!(
                "supergraph with T={timesteps}, n={nodes_per_step} needs {m}x{m} adjacency, got {:?}",
                adjacency.shape()
            )));
        }
        Ok(Self {
            timesteps,
            nodes_per_step,
            adjacency,
            features,
            padded,
            centroids: None,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn nodes_per_step(&self) -> usize {
        self.nodes_per_step
    }

    pub fn node_count(&self) -> usize {
        self.timesteps * self.nodes_per_step
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn block_of(&self, node: usize) -> usize {
        node / self.nodes_per_step
    }

    /// Adjacency and features of timestep `t`.
    pub fn block(&self, t: usize) -> (Tensor<T>, Tensor<T>) {
        let n = self.nodes_per_step;
        let r = t * n..(t + 1) * n;
        (
            self.adjacency.submatrix(r.clone(), r.clone()),
            self.features.submatrix(r, 0..self.feature_dim()),
        )
    }

    /// 1 where row and column belong to different timesteps, else 0.
    pub fn cross_block_mask(&self) -> Tensor<T> {
        let m = self.node_count();
        Tensor::from_fn(m, m, |i, j| {
            if self.block_of(i) == self.block_of(j) {
                T::zero()
            } else {
                T::one()
            }
        })
    }

    /// Indices of nodes that are not padding.
    pub fn real_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| !self.padded[i]).collect()
    }
}

/// Normalize every graph to `n` nodes and concatenate them diagonally.
/// Adjacency is binarized; features are row-stacked in time order.
pub fn assemble<T: Scalar>(graphs: &[TimestepGraph<T>], n: usize) -> Result<SuperGraph<T>> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::contract("cannot assemble an empty graph list"))?;
    let d = first.feature_dim();
    if let Some(g) = graphs.iter().find(|g| g.feature_dim() != d) {
        return Err(Error::contract(format!(
            "feature dimension mismatch: {d} vs {}",
            g.feature_dim()
        )));
    }
    let t = graphs.len();
    let m = t * n;
    let mut adjacency = Tensor::zeros(&[m, m]);
    let mut features = Vec::with_capacity(m * d);
    let mut padded = Vec::with_capacity(m);
    let mut centroids = Vec::with_capacity(m);
    let mut have_centroids = true;
    for (k, g) in graphs.iter().enumerate() {
        let g = normalize_node_count(g, n)?;
        for i in 0..n {
            for j in 0..n {
                if g.adjacency.get(i, j) > T::zero() {
                    adjacency.set(k * n + i, k * n + j, T::one());
                }
            }
        }
        features.extend_from_slice(g.features.as_slice());
        padded.extend_from_slice(&g.padded);
        match &g.centroids {
            Some(c) => centroids.extend_from_slice(c),
            None => have_centroids = false,
        }
    }
    let mut sg = SuperGraph::from_parts(t, n, adjacency, Tensor::new(vec![m, d], features)?, padded)?;
    if have_centroids {
        sg.centroids = Some(centroids);
    }
    Ok(sg)
}

/// Settings for turning raw frames into a supergraph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBuildParams {
    pub slic: SlicParams,
    pub extractor: FeatureExtractor,
    /// Node budget per timestep.
    pub nodes: usize,
}

impl Default for GraphBuildParams {
    fn default() -> Self {
        Self {
            slic: SlicParams::default(),
            extractor: FeatureExtractor::filter_bank(FilterBank::seeded(16, 0)),
            nodes: 64,
        }
    }
}

/// Segment one frame and build its RAG with pooled node features.
pub fn timestep_graph<T: Scalar>(frame: &Frame, params: &GraphBuildParams) -> Result<TimestepGraph<T>> {
    let seg = slic(frame, &params.slic)?;
    let adjacency = region_adjacency(&seg);
    let features = node_features(frame, &seg, &params.extractor, params.extractor.dim())?;
    TimestepGraph::new(adjacency, features)?.with_centroids(seg.centroids())
}

/// Segment every frame, normalize node counts and assemble.
pub fn build_supergraph<T: Scalar>(frames: &[Frame], params: &GraphBuildParams) -> Result<SuperGraph<T>> {
    let graphs = frames
        .iter()
        .map(|f| timestep_graph(f, params))
        .collect::<Result<Vec<_>>>()?;
    assemble(&graphs, params.nodes)
}

/// Combinatorial Laplacian `D - W`.
pub fn laplacian<T: Scalar>(w: &Tensor<T>) -> Result<Tensor<T>> {
    if !w.is_square() {
        return Err(Error::contract(format!(
            "laplacian needs a square matrix, got {:?}",
            w.shape()
        )));
    }
    if !w.is_symmetric(symmetry_tolerance(w)) {
        return Err(Error::contract("laplacian needs a symmetric weight matrix"));
    }
    let m = w.rows();
    let mut l = w.scale(-T::one());
    for i in 0..m {
        let deg: T = w.row(i).iter().copied().sum();
        l.set(i, i, deg - w.get(i, i));
    }
    Ok(l)
}
