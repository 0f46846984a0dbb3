use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::axes::AxisScores;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
const EMB_PREFIX: &str = "emb.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl Default for ScoreRange {
    fn default() -> Self {
        Self {
            min: 1.0,
            max: 10.0,
        }
    }
}

impl ScoreRange {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// One clip: its generating system, optional labels, and embedding files.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub system_id: String,
    pub scores: Option<AxisScores>,
    /// encoder id → absolute path of its MEB1 file
    pub embedding_paths: BTreeMap<String, PathBuf>,
    pub duration_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    manifest_version: u32,
    score_min: f64,
    score_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    utt_id: String,
    system_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cu: Option<f64>,
    duration_s: f64,
    #[serde(flatten)]
    rest: BTreeMap<String, serde_json::Value>,
}

/// A list of utterances stored as JSON lines: an optional header object
/// followed by one flat record per line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub score_range: ScoreRange,
    pub entries: Vec<Utterance>,
}

impl Manifest {
    pub fn new(score_range: ScoreRange, entries: Vec<Utterance>) -> Result<Self> {
        let m = Self {
            score_range,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.entries.iter().all(|e| e.scores.is_some())
    }

    /// Encoders available for every entry, in canonical order.
    pub fn common_encoders(&self) -> Vec<String> {
        let mut it = self.entries.iter();
        let Some(first) = it.next() else {
            return Vec::new();
        };
        let mut set: BTreeSet<&String> = first.embedding_paths.keys().collect();
        for e in it {
            set.retain(|k| e.embedding_paths.contains_key(*k));
        }
        super::canonical_encoder_order(set.into_iter().cloned().collect())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let r = self.score_range;
        if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
            return Err(Error::Data(format!(
                "invalid score range [{}, {}]",
                r.min, r.max
            )));
        }
        for e in &self.entries {
            if e.utt_id.is_empty() || e.system_id.is_empty() {
                return Err(Error::Data("utt_id and system_id must be non-empty".into()));
            }
            if !seen.insert(e.utt_id.as_str()) {
                return Err(Error::Data(format!("duplicate utt_id `{}`", e.utt_id)));
            }
            if !(e.duration_s.is_finite() && e.duration_s >= 0.0) {
                return Err(Error::Data(format!("`{}`: invalid duration", e.utt_id)));
            }
            if let Some(s) = e.scores {
                if !s.to_array().iter().all(|&v| r.contains(v)) {
                    return Err(Error::Data(format!(
                        "`{}`: scores {:?} outside [{}, {}]",
                        e.utt_id,
                        s.to_array(),
                        r.min,
                        r.max
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads and validates a manifest. Relative embedding paths resolve
    /// against the manifest's directory and must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = absolute(path)?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut manifest = Manifest::default();
        let mut offset = 0u64;
        for (lineno, line) in text.split_inclusive('\n').enumerate() {
            let line_off = offset;
            offset += line.len() as u64;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| Error::format(path, line_off, format!("line {}: {e}", lineno + 1)))?;
            if value.get("manifest_version").is_some() {
                if lineno != 0 {
                    return Err(Error::format(
                        path,
                        line_off,
                        "header must be the first line",
                    ));
                }
                let h: Header = serde_json::from_value(value)
                    .map_err(|e| Error::format(path, line_off, format!("header: {e}")))?;
                if h.manifest_version != MANIFEST_VERSION {
                    return Err(Error::format(
                        path,
                        line_off,
                        format!("unsupported manifest version {}", h.manifest_version),
                    ));
                }
                manifest.score_range = ScoreRange {
                    min: h.score_min,
                    max: h.score_max,
                };
                continue;
            }
            let rec: Record = serde_json::from_value(value)
                .map_err(|e| Error::format(path, line_off, format!("line {}: {e}", lineno + 1)))?;
            manifest
                .entries
                .push(record_to_utterance(rec, &base, path, line_off)?);
        }
        manifest.validate()?;
        for e in &manifest.entries {
            for (enc, p) in &e.embedding_paths {
                if !p.is_file() {
                    return Err(Error::Data(format!(
                        "`{}`: {enc} embedding file {} does not exist",
                        e.utt_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(manifest)
    }

    /// Writes the manifest with embedding paths relative to its directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let base = absolute(path)?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut out = Vec::new();
        let header = Header {
            manifest_version: MANIFEST_VERSION,
            score_min: self.score_range.min,
            score_max: self.score_range.max,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for e in &self.entries {
            let rest = e
                .embedding_paths
                .iter()
                .map(|(enc, p)| {
                    let rel = pathdiff::diff_paths(p, &base).unwrap_or_else(|| p.clone());
                    let s = rel.to_string_lossy().replace('\\', "/");
                    (format!("{EMB_PREFIX}{enc}"), serde_json::Value::String(s))
                })
                .collect();
            let rec = Record {
                utt_id: e.utt_id.clone(),
                system_id: e.system_id.clone(),
                pq: e.scores.map(|s| s.pq),
                pc: e.scores.map(|s| s.pc),
                ce: e.scores.map(|s| s.ce),
                cu: e.scores.map(|s| s.cu),
                duration_s: e.duration_s,
                rest,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        crate::fsio::write_atomic(path, &out)
    }

    pub fn get(&self, utt_id: &str) -> Option<&Utterance> {
        self.entries.iter().find(|e| e.utt_id == utt_id)
    }

    /// Sub-manifest keeping entries whose ids are in `keep`, in original order.
    pub fn filter_ids(&self, keep: &BTreeSet<&str>) -> Manifest {
        Manifest {
            score_range: self.score_range,
            entries: self
                .entries
                .iter()
                .filter(|e| keep.contains(e.utt_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

fn record_to_utterance(rec: Record, base: &Path, path: &Path, off: u64) -> Result<Utterance> {
    let scores = match (rec.pq, rec.pc, rec.ce, rec.cu) {
        (Some(pq), Some(pc), Some(ce), Some(cu)) => Some(AxisScores::new(pq, pc, ce, cu)),
        (None, None, None, None) => None,
        _ => {
            return Err(Error::format(
                path,
                off,
                format!("`{}`: either all four axis scores or none", rec.utt_id),
            ))
        }
    };
    let mut embedding_paths = BTreeMap::new();
    for (key, value) in rec.rest {
        let Some(enc) = key.strip_prefix(EMB_PREFIX).filter(|e| !e.is_empty()) else {
            return Err(Error::format(path, off, format!("unknown field `{key}`")));
        };
        let serde_json::Value::String(p) = value else {
            return Err(Error::format(
                path,
                off,
                format!("`{key}` must be a path string"),
            ));
        };
        embedding_paths.insert(enc.to_string(), base.join(p));
    }
    Ok(Utterance {
        utt_id: rec.utt_id,
        system_id: rec.system_id,
        scores,
        embedding_paths,
        duration_s: rec.duration_s,
    })
}

pub(crate) fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e))
}
