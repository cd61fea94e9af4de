//! Commands behind the `stbam` binary.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use stbam::dataio::{
    diagnostics_csv, diagnostics_jsonl, dump_supergraph, history_csv, load_sequence, matrix_csv, spectrum_csv,
    write_synthetic, Checkpoint, DiagnosticsRow, DiagnosticsSummary, Manifest, Split,
};
use stbam::diagnostics::{diagnose, DiagnosticsOptions, SpectralSummary};
use stbam::segmentation::{node_features, region_adjacency, slic};
use stbam::supergraph::{build_supergraph, SuperGraph};
use stbam::training::{evaluate, train, Metrics, Model, ModelConfig, Sample};
use stbam::{Error, Result};

pub use config::RunConfig;

/// Process exit status for an error: 1 usage/config, 2 data, 3 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) => 1,
        Error::Data { .. } | Error::Io(_) | Error::Checkpoint(_) | Error::Dimension { .. } => 2,
        Error::Numeric { .. } => 3,
    }
}

pub fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.data.dir.join("manifest.txt")
}

pub fn cmd_generate_data(cfg: &RunConfig) -> Result<String> {
    let m = write_synthetic(&cfg.synthetic_spec(), &cfg.data.dir)?;
    Ok(format!(
        "wrote {} samples to {}",
        m.samples.len(),
        manifest_path(cfg).display()
    ))
}

fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let m = Manifest::load(&manifest_path(cfg))?;
    if m.timesteps != cfg.data.timesteps {
        return Err(Error::Config(format!(
            "config says data.timesteps = {} but the manifest has T = {}",
            cfg.data.timesteps, m.timesteps
        )));
    }
    Ok(m)
}

fn sample_graph(cfg: &RunConfig, m: &Manifest, id: &str) -> Result<SuperGraph<f64>> {
    let entry = m
        .sample(id)
        .ok_or_else(|| Error::data(manifest_path(cfg), format!("no sample named {id:?}")))?;
    let frames = load_sequence(m, &cfg.data.dir, entry)?;
    build_supergraph(&frames, &cfg.graph_params()?)
}

/// Write per-frame label maps, RAG adjacency and node features.
pub fn cmd_segment(cfg: &RunConfig, id: &str) -> Result<String> {
    let m = load_manifest(cfg)?;
    let entry = m
        .sample(id)
        .ok_or_else(|| Error::data(manifest_path(cfg), format!("no sample named {id:?}")))?;
    let frames = load_sequence(&m, &cfg.data.dir, entry)?;
    let params = cfg.graph_params()?;
    let dir = cfg.output.dir.join("segments").join(id);
    fs::create_dir_all(&dir)?;
    let mut counts = Vec::new();
    for (t, frame) in frames.iter().enumerate() {
        let seg = slic(frame, &params.slic)?;
        let mut labels = String::new();
        for row in seg.labels().chunks(seg.width()) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(labels, "{}", cells.join(","));
        }
        fs::write(dir.join(format!("t{t}_labels.csv")), labels)?;
        let adj = region_adjacency::<f64>(&seg);
        fs::write(dir.join(format!("t{t}_adjacency.csv")), matrix_csv(&adj))?;
        let x = node_features::<f64>(frame, &seg, &params.extractor, params.extractor.dim())?;
        fs::write(dir.join(format!("t{t}_features.csv")), matrix_csv(&x))?;
        counts.push(seg.segment_count().to_string());
    }
    Ok(format!("segments per frame: {} (written to {})", counts.join(" "), dir.display()))
}

pub fn cmd_build_supergraph(cfg: &RunConfig, id: &str) -> Result<String> {
    let m = load_manifest(cfg)?;
    let sg = sample_graph(cfg, &m, id)?;
    let dir = cfg.output.dir.join("supergraph").join(id);
    dump_supergraph(&sg, &dir)?;
    Ok(format!(
        "{}x{} block adjacency written to {}",
        sg.node_count(),
        sg.node_count(),
        dir.display()
    ))
}

/// Labelled supergraphs of one split, in manifest order.
pub fn load_split(cfg: &RunConfig, m: &Manifest, split: Split) -> Result<Vec<Sample<f64>>> {
    let params = cfg.graph_params()?;
    m.split(split)
        .map(|entry| {
            let frames = load_sequence(m, &cfg.data.dir, entry)?;
            Ok(Sample {
                id: entry.id.clone(),
                graph: build_supergraph(&frames, &params)?,
                label: entry.label,
            })
        })
        .collect()
}

pub fn model_config(cfg: &RunConfig, m: &Manifest) -> Result<ModelConfig> {
    Ok(ModelConfig {
        nodes_per_step: cfg.graph.superpixels,
        timesteps: m.timesteps,
        feature_dim: cfg.extractor()?.dim(),
        classes: m.classes.len(),
        mending: cfg.strategy(),
        encoder: cfg.encoder(),
        gnn: cfg.gnn(),
        seed: cfg.seed,
    })
}

/// Summary of the settings that determine parameter shapes and the loss.
pub fn config_echo(cfg: &RunConfig, mc: &ModelConfig) -> BTreeMap<String, String> {
    let mut e = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        e.insert(k.to_string(), v);
    };
    put("n", mc.nodes_per_step.to_string());
    put("T", mc.timesteps.to_string());
    put("d", mc.feature_dim.to_string());
    put("C", mc.classes.to_string());
    put("mending", format!("{:?}", mc.mending));
    put("encoder", format!("{:?}", mc.encoder));
    put("gnn", format!("{:?}", mc.gnn));
    put("lambda", cfg.loss.lambda.to_string());
    put("norm", format!("{:?}", cfg.loss.norm));
    put("penalty_target", format!("{:?}", cfg.loss.penalty_target));
    put("seed", cfg.seed.to_string());
    e
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.output.dir.join("checkpoint.stbam")
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let m = load_manifest(cfg)?;
    let train_set = load_split(cfg, &m, Split::Train)?;
    let val_set = load_split(cfg, &m, Split::Val)?;
    let test_set = load_split(cfg, &m, Split::Test)?;
    let mc = model_config(cfg, &m)?;
    let model = Model::<f64>::new(mc.clone())?;
    let out = train(model, &train_set, &val_set, &cfg.train_config(), &cfg.loss(m.classes.len()))?;
    fs::create_dir_all(&cfg.output.dir)?;
    fs::write(cfg.output.dir.join("history.csv"), history_csv(&out.history))?;
    Checkpoint::from_store(&out.model.store, config_echo(cfg, &mc)).save(&checkpoint_path(cfg))?;
    let test = evaluate(&out.model, &test_set)?;
    Ok(format!(
        "epochs run: {}\nbest epoch: {}\nvalidation accuracy: {:.4}\ntest accuracy: {:.4}\ncheckpoint: {}",
        out.history.len(),
        out.best_epoch,
        out.best_val_acc,
        test.accuracy,
        checkpoint_path(cfg).display()
    ))
}

/// Build the configured model and load checkpoint weights: from `checkpoint`
/// if given, else from the run directory. Without `require`, a missing
/// default checkpoint is fine for strategies whose mending has no
/// parameters.
pub fn restore_model(cfg: &RunConfig, m: &Manifest, checkpoint: Option<&Path>, require: bool) -> Result<Model<f64>> {
    let mut model = Model::<f64>::new(model_config(cfg, m)?)?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(cfg));
    if checkpoint.is_some() || path.exists() || require || cfg.strategy().uses_encoder() {
        Checkpoint::load(&path)?.apply(&mut model.store)?;
    }
    Ok(model)
}

fn metrics_json(m: &Metrics) -> String {
    serde_json::json!({
        "accuracy": m.accuracy,
        "per_class_f1": m.per_class_f1,
        "macro_f1": m.macro_f1,
        "weighted_f1": m.weighted_f1,
        "confusion": m.confusion,
    })
    .to_string()
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, split: Split) -> Result<String> {
    let m = load_manifest(cfg)?;
    let model = restore_model(cfg, &m, checkpoint, true)?;
    let samples = load_split(cfg, &m, split)?;
    let metrics = evaluate(&model, &samples)?;
    fs::create_dir_all(&cfg.output.dir)?;
    let json = metrics_json(&metrics);
    fs::write(cfg.output.dir.join(format!("metrics_{}.json", split.as_str())), format!("{json}\n"))?;
    Ok(json)
}

/// Per-sample diagnostics for a split, plus spectra for the requested ids.
pub fn cmd_diagnose(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    split: Split,
    spectra: &[String],
    include_padded: bool,
) -> Result<String> {
    let m = load_manifest(cfg)?;
    let model = restore_model(cfg, &m, checkpoint, false)?;
    let samples = load_split(cfg, &m, split)?;
    let opts = DiagnosticsOptions { include_padded };
    let dir = cfg.output.dir.join("diagnostics");
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in &samples {
        let mended = model.mend(&s.graph)?;
        let report = diagnose(&s.graph, &mended.mended, opts)?;
        if spectra.contains(&s.id) {
            write_spectra(&dir, &s.id, &report.original, &report.mended)?;
        }
        rows.push(DiagnosticsRow::new(&s.id, &report));
    }
    if let Some(missing) = spectra.iter().find(|id| !samples.iter().any(|s| &s.id == *id)) {
        return Err(Error::data(
            manifest_path(cfg),
            format!("no {} sample named {missing:?}", split.as_str()),
        ));
    }
    let summary = DiagnosticsSummary::of(&rows);
    fs::write(dir.join("diagnostics.csv"), diagnostics_csv(&rows))?;
    fs::write(dir.join("diagnostics.jsonl"), diagnostics_jsonl(&rows, &summary))?;
    Ok(serde_json::to_string(&summary).expect("plain data serializes"))
}

fn write_spectra(dir: &Path, id: &str, original: &SpectralSummary, mended: &SpectralSummary) -> Result<()> {
    fs::write(dir.join(format!("{id}_spectrum_original.csv")), spectrum_csv(&original.eigenvalues))?;
    fs::write(dir.join(format!("{id}_spectrum_mended.csv")), spectrum_csv(&mended.eigenvalues))?;
    Ok(())
}

pub fn cmd_spectrum(cfg: &RunConfig, checkpoint: Option<&Path>, id: &str, include_padded: bool) -> Result<String> {
    let m = load_manifest(cfg)?;
    let model = restore_model(cfg, &m, checkpoint, false)?;
    let sg = sample_graph(cfg, &m, id)?;
    let report = diagnose(&sg, &model.mend(&sg)?.mended, DiagnosticsOptions { include_padded })?;
    let dir = cfg.output.dir.join("spectra");
    fs::create_dir_all(&dir)?;
    write_spectra(&dir, id, &report.original, &report.mended)?;
    Ok(format!(
        "zero eigenvalues {} -> {}, Fiedler {:.6e} -> {:.6e}",
        report.original.zero_count, report.mended.zero_count, report.original.fiedler, report.mended.fiedler
    ))
}
