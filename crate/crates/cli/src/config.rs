//! Run configuration file (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use stbam::dataio::{Palette, SyntheticSpec};
use stbam::gnn::{Activation, GnnConfig, GnnKind};
use stbam::mending::EncoderConfig;
use stbam::segmentation::{FeatureExtractor, FilterBank, Pooling, SlicParams};
use stbam::supergraph::GraphBuildParams;
use stbam::training::{LossConfig, MendingStrategy, NormOrder, PenaltyTarget, TrainConfig};
use stbam::{Error, Result};

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub mending: MendingSection,
    #[serde(default)]
    pub gnn: GnnSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
    #[serde(default = "d::samples_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "d::per_class_20")]
    pub val_per_class: usize,
    #[serde(default = "d::per_class_20")]
    pub test_per_class: usize,
    #[serde(default = "d::side_32")]
    pub width: usize,
    #[serde(default = "d::side_32")]
    pub height: usize,
    #[serde(default = "d::timesteps")]
    pub timesteps: usize,
    #[serde(default = "d::min_side")]
    pub min_side: usize,
    #[serde(default = "d::max_side")]
    pub max_side: usize,
    #[serde(default = "d::noise")]
    pub noise: f64,
    #[serde(default)]
    pub palette: PaletteName,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PaletteName {
    #[default]
    Fixed,
    Random,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(default = "d::superpixels")]
    pub superpixels: usize,
    #[serde(default = "d::compactness")]
    pub compactness: f64,
    #[serde(default = "d::slic_iters")]
    pub slic_iters: usize,
    #[serde(default)]
    pub extractor: ExtractorName,
    #[serde(default = "d::filters")]
    pub filters: usize,
    #[serde(default)]
    pub filter_seed: u64,
    #[serde(default)]
    pub filter_file: Option<PathBuf>,
    #[serde(default)]
    pub pooling: PoolingName,
}

impl Default for GraphSection {
    fn default() -> Self {
        toml::from_str("").expect("all graph keys have defaults")
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorName {
    MeanColor,
    #[default]
    FilterBank,
    File,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingName {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MendingSection {
    #[serde(default)]
    pub strategy: StrategyName,
    #[serde(default = "d::one")]
    pub heads: usize,
    #[serde(default = "d::one")]
    pub layers: usize,
    /// 0 selects twice the token dimension.
    #[serde(default)]
    pub d_ff: usize,
    #[serde(default = "d::one")]
    pub fixed_k: usize,
    #[serde(default = "d::one")]
    pub random_edges: usize,
}

impl Default for MendingSection {
    fn default() -> Self {
        toml::from_str("").expect("all mending keys have defaults")
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    #[default]
    Encoder,
    EncoderTemporal,
    Fixed,
    RandomWeighted,
    RandomBinary,
    None,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GnnSection {
    #[serde(default)]
    pub kind: GnnKindName,
    #[serde(default = "d::hidden")]
    pub hidden: usize,
    #[serde(default = "d::gat_heads")]
    pub heads: usize,
    #[serde(default = "d::out_dim")]
    pub out_dim: usize,
    #[serde(default = "d::slope")]
    pub slope: f64,
    #[serde(default)]
    pub activation: ActivationName,
    #[serde(default)]
    pub edge_weighted: bool,
}

impl Default for GnnSection {
    fn default() -> Self {
        toml::from_str("").expect("all gnn keys have defaults")
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum GnnKindName {
    #[default]
    Gat,
    Gcn,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationName {
    #[default]
    Elu,
    Relu,
    Identity,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "d::lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub norm: NormName,
    #[serde(default)]
    pub penalty_target: TargetName,
}

impl Default for LossSection {
    fn default() -> Self {
        toml::from_str("").expect("all loss keys have defaults")
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum NormName {
    #[default]
    L1,
    L2,
    None,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TargetName {
    #[default]
    Skew,
    Full,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "d::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d::patience")]
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("all train keys have defaults")
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

mod d {
    pub fn samples_per_class() -> usize {
        140
    }
    pub fn per_class_20() -> usize {
        20
    }
    pub fn side_32() -> usize {
        32
    }
    pub fn timesteps() -> usize {
        3
    }
    pub fn min_side() -> usize {
        6
    }
    pub fn max_side() -> usize {
        26
    }
    pub fn noise() -> f64 {
        0.05
    }
    pub fn superpixels() -> usize {
        64
    }
    pub fn compactness() -> f64 {
        10.0
    }
    pub fn slic_iters() -> usize {
        10
    }
    pub fn filters() -> usize {
        16
    }
    pub fn one() -> usize {
        1
    }
    pub fn hidden() -> usize {
        64
    }
    pub fn gat_heads() -> usize {
        4
    }
    pub fn out_dim() -> usize {
        16
    }
    pub fn slope() -> f64 {
        0.2
    }
    pub fn lambda() -> f64 {
        1e-6
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn max_epochs() -> usize {
        200
    }
    pub fn patience() -> usize {
        20
    }
}

/// Every key the file may contain, grouped by section, for `--help` output.
pub const ALL_KEYS: &[(&str, &[&str])] = &[
    ("", &["seed"]),
    (
        "data",
        &[
            "dir",
            "samples_per_class",
            "val_per_class",
            "test_per_class",
            "width",
            "height",
            "timesteps",
            "min_side",
            "max_side",
            "noise",
            "palette",
        ],
    ),
    (
        "graph",
        &[
            "superpixels",
            "compactness",
            "slic_iters",
            "extractor",
            "filters",
            "filter_seed",
            "filter_file",
            "pooling",
        ],
    ),
    ("mending", &["strategy", "heads", "layers", "d_ff", "fixed_k", "random_edges"]),
    ("gnn", &["kind", "hidden", "heads", "out_dim", "slope", "activation", "edge_weighted"]),
    ("loss", &["lambda", "norm", "penalty_target"]),
    ("train", &["learning_rate", "max_epochs", "patience"]),
    ("output", &["dir"]),
];

fn range(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(what.to_string()))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.dir = base.join(&cfg.data.dir);
        cfg.output.dir = base.join(&cfg.output.dir);
        if let Some(f) = &cfg.graph.filter_file {
            cfg.graph.filter_file = Some(base.join(f));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        range(d.timesteps >= 1, "data.timesteps must be >= 1")?;
        range(d.width >= 2 && d.height >= 2, "data.width and data.height must be >= 2")?;
        range(d.noise >= 0.0 && d.noise.is_finite(), "data.noise must be >= 0")?;
        range(d.min_side >= 1 && d.min_side <= d.max_side, "need 1 <= data.min_side <= data.max_side")?;
        let g = &self.graph;
        range(g.superpixels >= 1, "graph.superpixels must be >= 1")?;
        range(g.compactness > 0.0 && g.compactness.is_finite(), "graph.compactness must be > 0")?;
        range(g.slic_iters >= 1, "graph.slic_iters must be >= 1")?;
        range(
            g.extractor != ExtractorName::FilterBank || g.filters >= 1,
            "graph.filters must be >= 1 for the filter-bank extractor",
        )?;
        range(
            g.extractor != ExtractorName::File || g.filter_file.is_some(),
            "graph.filter_file is required when graph.extractor = \"file\"",
        )?;
        let m = &self.mending;
        range(m.heads >= 1 && m.layers >= 1, "mending.heads and mending.layers must be >= 1")?;
        range(m.fixed_k >= 1, "mending.fixed_k must be >= 1")?;
        range(m.random_edges >= 1, "mending.random_edges must be >= 1")?;
        let n = &self.gnn;
        range(n.hidden >= 1 && n.out_dim >= 1 && n.heads >= 1, "gnn widths and heads must be >= 1")?;
        range(
            n.kind != GnnKindName::Gat || n.hidden % n.heads == 0,
            "gnn.hidden must be divisible by gnn.heads",
        )?;
        range(n.slope >= 0.0 && n.slope.is_finite(), "gnn.slope must be >= 0")?;
        range(self.loss.lambda >= 0.0 && self.loss.lambda.is_finite(), "loss.lambda must be >= 0")?;
        let t = &self.train;
        range(
            t.learning_rate > 0.0 && t.learning_rate.is_finite(),
            "train.learning_rate must be > 0",
        )?;
        range(t.max_epochs >= 1, "train.max_epochs must be >= 1")?;
        range(t.patience <= t.max_epochs, "train.patience must not exceed train.max_epochs")?;
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let d = &self.data;
        SyntheticSpec {
            samples_per_class: d.samples_per_class,
            val_per_class: d.val_per_class,
            test_per_class: d.test_per_class,
            width: d.width,
            height: d.height,
            timesteps: d.timesteps,
            min_side: d.min_side,
            max_side: d.max_side,
            noise: d.noise,
            palette: match d.palette {
                PaletteName::Fixed => Palette::Fixed,
                PaletteName::Random => Palette::RandomPerSample,
            },
            seed: self.seed,
        }
    }

    pub fn extractor(&self) -> Result<FeatureExtractor> {
        let g = &self.graph;
        let mut fx = match g.extractor {
            ExtractorName::MeanColor => FeatureExtractor::mean_color(),
            ExtractorName::FilterBank => FeatureExtractor::filter_bank(FilterBank::seeded(g.filters, g.filter_seed)),
            ExtractorName::File => {
                let path = g.filter_file.as_ref().expect("validated");
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                let flat = text
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                if flat.is_empty() || flat.len() % 27 != 0 {
                    return Err(Error::Config(format!(
                        "{}: expected a multiple of 27 weights, found {}",
                        path.display(),
                        flat.len()
                    )));
                }
                let bank = FilterBank::from_flat(flat.len() / 27, &flat)?;
                FeatureExtractor {
                    kind: stbam::segmentation::ExtractorKind::ExternalFile(bank),
                    pooling: Pooling::Mean,
                }
            }
        };
        fx.pooling = match g.pooling {
            PoolingName::Mean => Pooling::Mean,
            PoolingName::Sum => Pooling::Sum,
        };
        Ok(fx)
    }

    pub fn graph_params(&self) -> Result<GraphBuildParams> {
        Ok(GraphBuildParams {
            slic: SlicParams {
                n_segments: self.graph.superpixels,
                compactness: self.graph.compactness,
                max_iters: self.graph.slic_iters,
            },
            extractor: self.extractor()?,
            nodes: self.graph.superpixels,
        })
    }

    pub fn strategy(&self) -> MendingStrategy {
        let m = &self.mending;
        match m.strategy {
            StrategyName::Encoder => MendingStrategy::Encoder,
            StrategyName::EncoderTemporal => MendingStrategy::EncoderTemporal,
            StrategyName::Fixed => MendingStrategy::Fixed { k: m.fixed_k },
            StrategyName::RandomWeighted => MendingStrategy::RandomWeighted {
                edges_per_node: m.random_edges,
            },
            StrategyName::RandomBinary => MendingStrategy::RandomBinary {
                edges_per_node: m.random_edges,
            },
            StrategyName::None => MendingStrategy::None,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            heads: self.mending.heads,
            layers: self.mending.layers,
            d_ff: (self.mending.d_ff > 0).then_some(self.mending.d_ff),
            ..EncoderConfig::default()
        }
    }

    pub fn gnn(&self) -> GnnConfig {
        let g = &self.gnn;
        GnnConfig {
            kind: match g.kind {
                GnnKindName::Gat => GnnKind::Gat,
                GnnKindName::Gcn => GnnKind::Gcn,
            },
            hidden: g.hidden,
            heads: g.heads,
            out_dim: g.out_dim,
            slope: g.slope,
            activation: match g.activation {
                ActivationName::Elu => Activation::Elu,
                ActivationName::Relu => Activation::Relu,
                ActivationName::Identity => Activation::Identity,
            },
            edge_weighted: g.edge_weighted,
        }
    }

    pub fn loss(&self, classes: usize) -> LossConfig {
        LossConfig {
            lambda: self.loss.lambda,
            norm: match self.loss.norm {
                NormName::L1 => NormOrder::L1,
                NormName::L2 => NormOrder::L2,
                NormName::None => NormOrder::None,
            },
            target: match self.loss.penalty_target {
                TargetName::Skew => PenaltyTarget::Skew,
                TargetName::Full => PenaltyTarget::Full,
            },
            classes,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed: self.seed,
        }
    }
}
