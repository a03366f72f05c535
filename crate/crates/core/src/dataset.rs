//! Dataset manifests, prediction files and the synthetic clip generator.
//!
//! Manifest layout:
//!
//! ```json
//! {"clips": [{"clip_id": "c1",
//!             "frames": [{"index": 1, "image": "frames/c1_001.jpg"}],
//!             "identities": [{"label": "bean", "frames": [1]}]}]}
//! ```
//!
//! Clips may additionally carry `"source"` and identities a `"profile"`
//! object; both are omitted when empty so plain manifests round-trip
//! unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sfslab::FeatureCatalog;
use crate::types::{AnnotatedClip, FeatureProfile, FrameRef, IdSequence};

/// Image keys with this prefix name synthetic frames that have no pixels.
pub const SYNTHETIC_SCHEME: &str = "synthetic://";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error in {location}: {message}")]
    Schema { location: String, message: String },
    #[error("clip '{clip_id}' frame {index}: image '{key}' not found")]
    MissingImage {
        clip_id: String,
        index: u32,
        key: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn schema(location: impl Into<String>, message: impl ToString) -> DatasetError {
    DatasetError::Schema {
        location: location.into(),
        message: message.to_string(),
    }
}

/// What to do when a frame's image file does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingImagePolicy {
    Fail,
    #[default]
    Warn,
    Ignore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    clips: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestClip {
    clip_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    frames: Vec<ManifestFrame>,
    identities: Vec<IdentityEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFrame {
    index: u32,
    image: String,
}

/// One identity entry of a manifest or prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityEntry {
    pub label: String,
    pub frames: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<FeatureProfile>,
}

/// Predicted identities for one clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub clip_id: String,
    pub identities: Vec<IdentityEntry>,
}

impl PredictionFile {
    pub fn from_sequences(clip_id: impl Into<String>, seqs: &[IdSequence]) -> Self {
        Self {
            clip_id: clip_id.into(),
            identities: seqs
                .iter()
                .map(|s| IdentityEntry {
                    label: s.label().to_string(),
                    frames: s.frames().to_vec(),
                    profile: None,
                })
                .collect(),
        }
    }

    pub fn sequences(&self) -> Result<Vec<IdSequence>, DatasetError> {
        let mut labels = BTreeSet::new();
        self.identities
            .iter()
            .map(|e| {
                if !labels.insert(e.label.as_str()) {
                    return Err(schema(
                        format!("prediction '{}'", self.clip_id),
                        format!("duplicate identity label '{}'", e.label),
                    ));
                }
                IdSequence::new(e.label.clone(), e.frames.clone()).map_err(|err| {
                    schema(
                        format!("prediction '{}' identity '{}'", self.clip_id, e.label),
                        err,
                    )
                })
            })
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn has_scheme(key: &str) -> bool {
    key.contains("://")
}

/// Loads and validates a dataset manifest. Relative image paths are
/// resolved against the manifest's directory.
pub fn load_dataset(
    path: &Path,
    missing_images: MissingImagePolicy,
) -> Result<Vec<AnnotatedClip>, DatasetError> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_dataset(&text, Some(base), missing_images)
}

/// Parses manifest text. With `base` set, relative image keys are joined to it
/// and checked for existence according to `missing_images`.
pub fn parse_dataset(
    text: &str,
    base: Option<&Path>,
    missing_images: MissingImagePolicy,
) -> Result<Vec<AnnotatedClip>, DatasetError> {
    let file: ManifestFile = serde_json::from_str(text).map_err(|e| schema("manifest", e))?;
    let mut ids = BTreeSet::new();
    let mut clips = Vec::with_capacity(file.clips.len());
    for (pos, raw) in file.clips.into_iter().enumerate() {
        let hint = raw
            .get("clip_id")
            .and_then(|v| v.as_str())
            .map(|s| format!("clip '{s}'"))
            .unwrap_or_else(|| format!("clip #{pos}"));
        let mc: ManifestClip = serde_json::from_value(raw).map_err(|e| schema(&hint, e))?;
        if !ids.insert(mc.clip_id.clone()) {
            return Err(schema(&hint, "duplicate clip_id"));
        }
        clips.push(clip_from_manifest(mc, base, missing_images)?);
    }
    Ok(clips)
}

fn clip_from_manifest(
    mc: ManifestClip,
    base: Option<&Path>,
    missing_images: MissingImagePolicy,
) -> Result<AnnotatedClip, DatasetError> {
    let loc = format!("clip '{}'", mc.clip_id);
    let mut frames = Vec::with_capacity(mc.frames.len());
    for f in mc.frames {
        let key = match base {
            Some(b) if !has_scheme(&f.image) && Path::new(&f.image).is_relative() => {
                b.join(&f.image).to_string_lossy().into_owned()
            }
            _ => f.image,
        };
        if base.is_some() && !has_scheme(&key) && !Path::new(&key).exists() {
            match missing_images {
                MissingImagePolicy::Fail => {
                    return Err(DatasetError::MissingImage {
                        clip_id: mc.clip_id.clone(),
                        index: f.index,
                        key,
                    })
                }
                MissingImagePolicy::Warn => {
                    log::warn!("{loc} frame {}: image '{key}' not found", f.index)
                }
                MissingImagePolicy::Ignore => {}
            }
        }
        frames.push(
            FrameRef::new(mc.clip_id.clone(), f.index, key)
                .map_err(|e| schema(format!("{loc} frames"), e))?,
        );
    }
    let mut gt = Vec::with_capacity(mc.identities.len());
    let mut profiles = BTreeMap::new();
    for e in mc.identities {
        let seq = IdSequence::new(e.label.clone(), e.frames)
            .map_err(|err| schema(format!("{loc} identity '{}'", e.label), err))?;
        if let Some(p) = e.profile {
            profiles.insert(e.label, p);
        }
        gt.push(seq);
    }
    AnnotatedClip::new(mc.clip_id, frames, gt, mc.source.unwrap_or_default())
        .and_then(|c| c.with_profiles(profiles))
        .map_err(|e| schema(&loc, e))
}

/// Serializes clips in manifest format.
pub fn dataset_to_json(clips: &[AnnotatedClip]) -> String {
    let clips: Vec<serde_json::Value> = clips
        .iter()
        .map(|c| {
            let mc = ManifestClip {
                clip_id: c.clip_id.clone(),
                source: (!c.source.is_empty()).then(|| c.source.clone()),
                frames: c
                    .frames
                    .iter()
                    .map(|f| ManifestFrame {
                        index: f.index,
                        image: f.image_key.clone(),
                    })
                    .collect(),
                identities: c
                    .ground_truth
                    .iter()
                    .map(|g| IdentityEntry {
                        label: g.label().to_string(),
                        frames: g.frames().to_vec(),
                        profile: c.profiles.get(g.label()).cloned(),
                    })
                    .collect(),
            };
            serde_json::to_value(mc).expect("manifest clip serializes")
        })
        .collect();
    serde_json::to_string_pretty(&ManifestFile { clips }).expect("manifest serializes")
}

pub fn write_dataset(path: &Path, clips: &[AnnotatedClip]) -> Result<(), DatasetError> {
    write_atomic(path, dataset_to_json(clips).as_bytes())
}

/// Writes via a temporary sibling file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Loads predictions from a single object, an array of objects, or a
/// directory of `*.json` files (sorted by file name).
pub fn load_predictions(path: &Path) -> Result<Vec<PredictionFile>, DatasetError> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|source| DatasetError::Io {
                path: path.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        let mut out = Vec::new();
        for p in entries {
            out.extend(parse_predictions(&read_text(&p)?, &p.display().to_string())?);
        }
        return Ok(out);
    }
    parse_predictions(&read_text(path)?, &path.display().to_string())
}

pub fn parse_predictions(text: &str, origin: &str) -> Result<Vec<PredictionFile>, DatasetError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| schema(origin, e))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    items
        .into_iter()
        .map(|v| serde_json::from_value(v).map_err(|e| schema(origin, e)))
        .collect()
}

/// Deterministic synthetic clip using the built-in feature catalog.
pub fn synthesize_clip(
    seed: u64,
    n_frames: u32,
    n_ids: u32,
    appearance_rate: f64,
) -> Result<AnnotatedClip, DatasetError> {
    synthesize_clip_with(&FeatureCatalog::builtin(), seed, n_frames, n_ids, appearance_rate)
}

/// Deterministic synthetic clip. Each identity appears in at least one frame
/// and carries a profile over every catalog feature; profiles are pairwise
/// distinct on the strong feature set.
pub fn synthesize_clip_with(
    catalog: &FeatureCatalog,
    seed: u64,
    n_frames: u32,
    n_ids: u32,
    appearance_rate: f64,
) -> Result<AnnotatedClip, DatasetError> {
    if n_frames < 2 {
        return Err(DatasetError::InvalidArgument("n_frames must be >= 2".into()));
    }
    if n_ids < 1 {
        return Err(DatasetError::InvalidArgument("n_ids must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&appearance_rate) {
        return Err(DatasetError::InvalidArgument(
            "appearance_rate must lie in [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip_id = format!("synth-{seed}");
    let frames = (1..=n_frames)
        .map(|i| FrameRef::new(&clip_id, i, format!("{SYNTHETIC_SCHEME}{clip_id}/{i}")))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DatasetError::InvalidArgument(e.to_string()))?;

    let mut gt = Vec::with_capacity(n_ids as usize);
    let mut profiles = BTreeMap::new();
    let mut strong_seen = BTreeSet::new();
    for k in 1..=n_ids {
        let label = format!("person-{k}");
        let mut appear: Vec<u32> = (1..=n_frames)
            .filter(|_| rng.random::<f64>() < appearance_rate)
            .collect();
        if appear.is_empty() {
            appear.push(rng.random_range(1..=n_frames));
        }
        let profile = loop {
            let p: FeatureProfile = catalog
                .features
                .iter()
                .map(|f| {
                    let v = &f.values[rng.random_range(0..f.values.len())];
                    (f.name.clone(), v.clone())
                })
                .collect();
            let strong = p.restricted_to(catalog.sfs.iter().map(String::as_str));
            if strong_seen.insert(strong) {
                break p;
            }
        };
        profiles.insert(label.clone(), profile);
        gt.push(IdSequence::new(label, appear).expect("generated frames are sorted"));
    }
    AnnotatedClip::new(clip_id, frames, gt, "synthetic")
        .and_then(|c| c.with_profiles(profiles))
        .map_err(|e| DatasetError::InvalidArgument(e.to_string()))
}
