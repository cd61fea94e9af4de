//! Text outputs: supergraph dumps, training history, diagnostics and spectra.
//!
//! Reals are written with Rust's shortest round-trip formatting, so parsing a
//! file and writing it again reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};
use crate::supergraph::SuperGraph;
use crate::training::EpochRecord;

pub fn matrix_csv<T: Scalar>(m: &Tensor<T>) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_f64_lossy().to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv<T: Scalar>(text: &str, origin: &Path) -> Result<Tensor<T>> {
    let mut rows = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let row = line
            .split(',')
            .map(|f| {
                f.parse::<f64>()
                    .map(T::of)
                    .map_err(|_| Error::data(origin, format!("line {}: bad number {f:?}", no + 1)))
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| Error::data(origin, e.to_string()))
}

/// Write `adjacency.csv`, `features.csv` and `meta.txt` into `dir`.
pub fn dump_supergraph<T: Scalar>(sg: &SuperGraph<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("adjacency.csv"), matrix_csv(&sg.adjacency))?;
    fs::write(dir.join("features.csv"), matrix_csv(&sg.features))?;
    let mut meta = String::new();
    let _ = writeln!(meta, "timesteps {}", sg.timesteps());
    let _ = writeln!(meta, "nodes_per_step {}", sg.nodes_per_step());
    let _ = writeln!(meta, "feature_dim {}", sg.feature_dim());
    let flags: String = sg.padded.iter().map(|&p| if p { '1' } else { '0' }).collect();
    let _ = writeln!(meta, "padded {flags}");
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}

pub fn load_supergraph<T: Scalar>(dir: &Path) -> Result<SuperGraph<T>> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::data(&p, e.to_string()))
    };
    let meta_path = dir.join("meta.txt");
    let meta = read("meta.txt")?;
    let field = |key: &str| -> Result<&str> {
        meta.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
            .ok_or_else(|| Error::data(&meta_path, format!("missing {key}")))
    };
    let num = |key: &str| -> Result<usize> {
        field(key)?
            .parse()
            .map_err(|_| Error::data(&meta_path, format!("bad {key}")))
    };
    let (t, n) = (num("timesteps")?, num("nodes_per_step")?);
    let padded: Vec<bool> = field("padded")?.chars().map(|c| c == '1').collect();
    let adjacency = parse_matrix_csv(&read("adjacency.csv")?, &dir.join("adjacency.csv"))?;
    let features = parse_matrix_csv(&read("features.csv")?, &dir.join("features.csv"))?;
    if features.cols() != num("feature_dim")? {
        return Err(Error::data(&meta_path, "feature_dim disagrees with features.csv"));
    }
    SuperGraph::from_parts(t, n, adjacency, features, padded)
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_acc,rho,delta_rho,delta_h";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_acc, r.rho, r.delta_rho, r.delta_h
        );
    }
    out
}

/// One sample's before/after comparison, as written to CSV and JSON lines.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub sample: String,
    pub rho_original: f64,
    pub rho_mended: f64,
    pub delta_rho: f64,
    pub h_original: f64,
    pub h_mended: f64,
    pub delta_h: f64,
    pub zero_count_original: usize,
    pub zero_count_mended: usize,
    pub components_original: usize,
    pub components_mended: usize,
    pub fiedler_original: f64,
    pub fiedler_mended: f64,
}

impl DiagnosticsRow {
    pub fn new(sample: impl Into<String>, r: &DiagnosticsReport) -> Self {
        Self {
            sample: sample.into(),
            rho_original: r.rho_original,
            rho_mended: r.rho_mended,
            delta_rho: r.delta_rho,
            h_original: r.h_original,
            h_mended: r.h_mended,
            delta_h: r.delta_h,
            zero_count_original: r.original.zero_count,
            zero_count_mended: r.mended.zero_count,
            components_original: r.original.component_count,
            components_mended: r.mended.component_count,
            fiedler_original: r.original.fiedler,
            fiedler_mended: r.mended.fiedler,
        }
    }
}

pub const DIAGNOSTICS_HEADER: &str = "sample,rho_original,rho_mended,delta_rho,h_original,h_mended,delta_h,\
zero_count_original,zero_count_mended,components_original,components_mended,fiedler_original,fiedler_mended";

pub fn diagnostics_csv(rows: &[DiagnosticsRow]) -> String {
    let mut out = format!("{DIAGNOSTICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sample,
            r.rho_original,
            r.rho_mended,
            r.delta_rho,
            r.h_original,
            r.h_mended,
            r.delta_h,
            r.zero_count_original,
            r.zero_count_mended,
            r.components_original,
            r.components_mended,
            r.fiedler_original,
            r.fiedler_mended
        );
    }
    out
}

/// Means over all rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsSummary {
    pub samples: usize,
    pub mean_rho_original: f64,
    pub mean_rho_mended: f64,
    pub delta_rho: f64,
    pub mean_delta_h: f64,
    /// Fraction of samples whose mended Laplacian has more nonzero eigenvalues.
    pub more_nonzero_eigenvalues: f64,
}

impl DiagnosticsSummary {
    pub fn of(rows: &[DiagnosticsRow]) -> Self {
        let k = rows.len().max(1) as f64;
        let mean = |f: fn(&DiagnosticsRow) -> f64| rows.iter().map(f).sum::<f64>() / k;
        // Both spectra cover the same nodes, so fewer zero eigenvalues means
        // more nonzero ones.
        let improved = rows
            .iter()
            .filter(|r| r.zero_count_mended < r.zero_count_original)
            .count();
        Self {
            samples: rows.len(),
            mean_rho_original: mean(|r| r.rho_original),
            mean_rho_mended: mean(|r| r.rho_mended),
            delta_rho: mean(|r| r.delta_rho),
            mean_delta_h: mean(|r| r.delta_h),
            more_nonzero_eigenvalues: improved as f64 / k,
        }
    }
}

/// One JSON object per row, then the summary object.
pub fn diagnostics_jsonl(rows: &[DiagnosticsRow], summary: &DiagnosticsSummary) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("plain data serializes"));
        out.push('\n');
    }
    out.push_str(&serde_json::json!({ "summary": summary }).to_string());
    out.push('\n');
    out
}

pub fn spectrum_csv(eigenvalues: &[f64]) -> String {
    let mut out = String::from("index,eigenvalue\n");
    for (i, v) in eigenvalues.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}
