//! Line-oriented dataset manifest.
//!
//! ```text
//! stbam-manifest 1
//! classes grow shrink
//! timesteps 3
//! size 32 32
//! sample s0000 grow train frames/s0000_t0.ppm,frames/s0000_t1.ppm,frames/s0000_t2.ppm
//! ```
//!
//! Frame paths are relative to the manifest's directory. Blank lines and
//! lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::image::read_frame;
use crate::error::{Error, Result};
use crate::segmentation::Frame;

pub const MANIFEST_VERSION: u32 = 1;
const HEADER: &str = "stbam-manifest";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestSample {
    pub id: String,
    /// Index into [`Manifest::classes`].
    pub label: usize,
    pub split: Split,
    pub frames: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub timesteps: usize,
    pub width: usize,
    pub height: usize,
    pub samples: Vec<ManifestSample>,
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains(|c: char| c.is_whitespace() || c == ',') {
        return Err(Error::contract(format!("{kind} {s:?} must be non-empty without whitespace or commas")));
    }
    Ok(())
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::contract("manifest needs at least two classes"));
        }
        for c in &self.classes {
            check_token("class name", c)?;
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.samples {
            check_token("sample id", &s.id)?;
            if !ids.insert(&s.id) {
                return Err(Error::contract(format!("duplicate sample id {}", s.id)));
            }
            if s.label >= self.classes.len() {
                return Err(Error::contract(format!("sample {} has unknown label index {}", s.id, s.label)));
            }
            if s.frames.len() != self.timesteps {
                return Err(Error::contract(format!(
                    "sample {} has {} frames, manifest declares T = {}",
                    s.id,
                    s.frames.len(),
                    self.timesteps
                )));
            }
            for p in &s.frames {
                check_token("frame path", &p.to_string_lossy())?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER} {MANIFEST_VERSION}");
        let _ = writeln!(out, "classes {}", self.classes.join(" "));
        let _ = writeln!(out, "timesteps {}", self.timesteps);
        let _ = writeln!(out, "size {} {}", self.width, self.height);
        for s in &self.samples {
            let frames: Vec<String> = s.frames.iter().map(|p| p.to_string_lossy().into_owned()).collect();
            let _ = writeln!(
                out,
                "sample {} {} {} {}",
                s.id,
                self.classes[s.label],
                s.split.as_str(),
                frames.join(",")
            );
        }
        out
    }

    /// Parse manifest text; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::data(origin, format!("line {line}: {msg}"));
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut header = |key: &str| -> Result<(usize, Vec<&str>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::data(origin, format!("missing {key:?} line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(err(no, format!("expected {key:?}")));
            }
            Ok((no, parts.collect()))
        };
        let (no, version) = header(HEADER)?;
        if version != [MANIFEST_VERSION.to_string().as_str()] {
            return Err(err(no, format!("unsupported manifest version {version:?}")));
        }
        let (_, classes) = header("classes")?;
        let classes: Vec<String> = classes.into_iter().map(String::from).collect();
        let (no, t) = header("timesteps")?;
        let timesteps = match t.as_slice() {
            [v] => v.parse().map_err(|_| err(no, format!("bad timestep count {v:?}")))?,
            _ => return Err(err(no, "expected one timestep count".into())),
        };
        let (no, size) = header("size")?;
        let (width, height) = match size.as_slice() {
            [w, h] => (
                w.parse().map_err(|_| err(no, format!("bad width {w:?}")))?,
                h.parse().map_err(|_| err(no, format!("bad height {h:?}")))?,
            ),
            _ => return Err(err(no, "expected width and height".into())),
        };
        let mut samples = Vec::new();
        for (no, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [kind, id, label, split, frames] = parts.as_slice() else {
                return Err(err(no, "expected: sample <id> <label> <split> <frames>".into()));
            };
            if *kind != "sample" {
                return Err(err(no, format!("unexpected record {kind:?}")));
            }
            let label = classes
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| err(no, format!("label {label:?} is not a declared class")))?;
            samples.push(ManifestSample {
                id: id.to_string(),
                label,
                split: split.parse().map_err(|e| err(no, e))?,
                frames: frames.split(',').map(PathBuf::from).collect(),
            });
        }
        let m = Manifest {
            classes,
            timesteps,
            width,
            height,
            samples,
        };
        m.validate().map_err(|e| Error::data(origin, e.to_string()))?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::data(path, format!("cannot read manifest: {e}")))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn sample(&self, id: &str) -> Option<&ManifestSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Decode a sample's frames in order, checking them against the manifest size.
pub fn load_sequence(manifest: &Manifest, root: &Path, sample: &ManifestSample) -> Result<Vec<Frame>> {
    sample
        .frames
        .iter()
        .map(|rel| {
            let path = root.join(rel);
            let f = read_frame(&path)?;
            if (f.width(), f.height()) != (manifest.width, manifest.height) {
                return Err(Error::data(
                    &path,
                    format!(
                        "frame is {}x{} but the manifest declares {}x{}",
                        f.width(),
                        f.height(),
                        manifest.width,
                        manifest.height
                    ),
                ));
            }
            Ok(f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Manifest {
        Manifest {
            classes: vec!["grow".into(), "shrink".into()],
            timesteps: 2,
            width: 8,
            height: 6,
            samples: vec![
                ManifestSample {
                    id: "a".into(),
                    label: 1,
                    split: Split::Val,
                    frames: vec!["f/a0.ppm".into(), "f/a1.png".into()],
                },
                ManifestSample {
                    id: "b".into(),
                    label: 0,
                    split: Split::Train,
                    frames: vec!["b0.ppm".into(), "b1.ppm".into()],
                },
            ],
        }
    }

    #[test]
    fn text_round_trip() {
        let m = example();
        let text = m.to_text();
        let back = Manifest::parse(&text, Path::new("m.txt")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_label_is_rejected() {
        let text = example().to_text().replace("shrink val", "spin val");
        let e = Manifest::parse(&text, Path::new("m.txt")).unwrap_err();
        assert!(e.to_string().contains("spin"), "{e}");
    }

    #[test]
    fn wrong_frame_count_is_rejected() {
        let text = example().to_text().replace("b0.ppm,b1.ppm", "b0.ppm");
        assert!(Manifest::parse(&text, Path::new("m.txt")).is_err());
    }

    #[test]
    fn version_is_checked() {
        let text = example().to_text().replace("stbam-manifest 1", "stbam-manifest 9");
        assert!(Manifest::parse(&text, Path::new("m.txt")).is_err());
    }
}
