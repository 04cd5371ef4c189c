//! File formats: scene JSON Lines and network checkpoints.
//!
//! Floats are written with the shortest decimal that parses back to the same
//! `f64`, so every load of a saved file is exact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{PointSet, Pose};
use crate::io_util::write_atomic;
use crate::net::{ModelParams, NetConfig};

pub const CHECKPOINT_VERSION: u64 = 1;

/// One timestamped frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub t: f64,
    pub gt_pose: Pose,
    pub gps_pose: Pose,
    pub measurements: PointSet,
    /// Vehicle-frame landmarks for scenes that are not map-backed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<PointSet>,
}

const SCENE_FIELDS: [&str; 4] = ["t", "gt_pose", "gps_pose", "measurements"];

pub fn scenes_to_jsonl(scenes: &[Scene]) -> Result<String> {
    let mut out = String::new();
    for s in scenes {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    write_atomic(path, scenes_to_jsonl(scenes)?.as_bytes())
}

pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    parse_scenes(&std::fs::read_to_string(path)?, path)
}

/// Parses JSON Lines; blank lines are skipped and unknown fields ignored.
pub fn parse_scenes(text: &str, path: &Path) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: PathBuf::from(path),
            line: line_no,
            msg,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("expected a JSON object".into()))?;
        if let Some(field) = SCENE_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::MissingField { field, line: line_no });
        }
        let scene: Scene = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        scenes.push(scene);
    }
    Ok(scenes)
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u64,
    config: NetConfig,
    arrays: Vec<NamedArray>,
}

pub fn checkpoint_to_json(params: &ModelParams, cfg: &NetConfig) -> Result<String> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        arrays: params
            .names()
            .iter()
            .zip(params.arrays())
            .map(|(n, t)| NamedArray {
                name: n.clone(),
                shape: [t.rows(), t.cols()],
                data: t.data().to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, cfg: &NetConfig) -> Result<()> {
    write_atomic(path, checkpoint_to_json(params, cfg)?.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, NetConfig)> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

/// Validates the version, the configuration and every array shape.
pub fn parse_checkpoint(text: &str) -> Result<(ModelParams, NetConfig)> {
    let value: Value = serde_json::from_str(text)?;
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or(Error::MissingField {
            field: "format_version",
            line: 1,
        })?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_value(value)?;
    file.config.validate()?;
    let named = file
        .arrays
        .into_iter()
        .map(|a| {
            let [r, c] = a.shape;
            if a.data.len() != r * c {
                return Err(Error::ArrayShape {
                    name: a.name,
                    found: (a.data.len(), 1),
                    expected: (r, c),
                });
            }
            Ok((a.name, Tensor::new(r, c, a.data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_named(&file.config, named)?;
    Ok((params, file.config))
}
