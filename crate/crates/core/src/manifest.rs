//! Dataset manifests: one JSON record per line, UTF-8.
//!
//! Schema per record:
//! - `image_path`: path to the screenshot, relative to the manifest file
//! - `label`: `"normal"` or `"glitch"`
//! - `glitch_class`: optional category (see [`GlitchClass`])
//! - `mask_path`: optional ground-truth mask, relative like `image_path`
//! - `generator`: `"captured"`, `"rule_R"`, `"rule_F"`, or `"injection"`
//! - `seed`: the 64-bit seed this sample's randomness derived from

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary classification label. Glitch is the positive class throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Glitch,
}

impl Label {
    /// Class index used by the model: 0 = normal, 1 = glitch.
    pub fn class_index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Glitch => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Label {
        if index == 0 {
            Label::Normal
        } else {
            Label::Glitch
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Normal => write!(f, "normal"),
            Label::Glitch => write!(f, "glitch"),
        }
    }
}

/// The eight glitch manifestation categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlitchClass {
    AbnormalColorBlock,
    RandomNoise,
    PartialRepetition,
    FrameOverlay,
    ObjectMissing,
    AbnormalText,
    Overexposed,
    BlackBorder,
}

impl fmt::Display for GlitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GlitchClass::AbnormalColorBlock => "abnormal_color_block",
            GlitchClass::RandomNoise => "random_noise",
            GlitchClass::PartialRepetition => "partial_repetition",
            GlitchClass::FrameOverlay => "frame_overlay",
            GlitchClass::ObjectMissing => "object_missing",
            GlitchClass::AbnormalText => "abnormal_text",
            GlitchClass::Overexposed => "overexposed",
            GlitchClass::BlackBorder => "black_border",
        };
        write!(f, "{s}")
    }
}

/// How a sample came to exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    #[serde(rename = "captured")]
    Captured,
    #[serde(rename = "rule_R")]
    RuleR,
    #[serde(rename = "rule_F")]
    RuleF,
    #[serde(rename = "injection")]
    Injection,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Generator::Captured => "captured",
            Generator::RuleR => "rule_R",
            Generator::RuleF => "rule_F",
            Generator::Injection => "injection",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glitch_class: Option<GlitchClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    pub generator: Generator,
    pub seed: u64,
}

/// An ordered collection of sample records plus the directory its relative
/// paths resolve against.
#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let manifest = DatasetManifest { records, base_dir: base_dir.into() };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Resolves a record's image path against the manifest location.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Manifest-level invariants: unique paths, and generated glitch entries
    /// must carry a ground-truth mask.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.records {
            if !seen.insert(rec.image_path.as_str()) {
                return Err(Error::Dataset(format!(
                    "duplicate image path in manifest: {}",
                    rec.image_path
                )));
            }
            if rec.generator != Generator::Captured
                && rec.label == Label::Glitch
                && rec.mask_path.is_none()
            {
                return Err(Error::Dataset(format!(
                    "generated glitch entry without mask: {}",
                    rec.image_path
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(line).map_err(|e| {
                Error::json(path, format!("line {}: {}", lineno + 1, e))
            })?;
            records.push(rec);
        }
        let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Self::new(records, base_dir)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for rec in &self.records {
            let line = serde_json::to_string(rec)
                .map_err(|e| Error::json(path, e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}
