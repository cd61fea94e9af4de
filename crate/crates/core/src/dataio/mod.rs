//! Frames, manifests, synthetic data and serialized artifacts.

mod checkpoint;
mod image;
mod manifest;
mod reports;
mod synthetic;

pub use checkpoint::{Checkpoint, NamedTensor, MAGIC};
pub use image::{decode_png, decode_ppm, encode_png, encode_ppm, read_frame, write_frame};
pub use manifest::{load_sequence, Manifest, ManifestSample, Split, MANIFEST_VERSION};
pub use reports::{
    diagnostics_csv, diagnostics_jsonl, dump_supergraph, history_csv, load_supergraph, matrix_csv, parse_matrix_csv,
    spectrum_csv, DiagnosticsRow, DiagnosticsSummary, DIAGNOSTICS_HEADER, HISTORY_HEADER,
};
pub use synthetic::{generate_synthetic, write_synthetic, Palette, SyntheticSample, SyntheticSpec, CLASSES};
