//! Checkpoints: the Gaussian cloud as a splat-viewer compatible PLY, plus an
//! optional JSON sidecar with the optimizer state needed to resume.
//!
//! Vertex properties, all `float`: `x y z nx ny nz f_dc_0..2 f_rest_*
//! opacity scale_0..2 rot_0..3`. `f_rest_*` is channel-major (all red
//! coefficients, then green, then blue), opacity is the logit, scales are
//! logs and `rot` is the raw `(w, x, y, z)` quaternion. Normals are written
//! as zeros and ignored on load.

use std::fs;
use std::path::{Path, PathBuf};

use omnisplat_core::scene::{GaussianCloud, ParamGroup, SceneError};
use omnisplat_core::sh;
use omnisplat_core::trainer::TrainerState;
use serde::{Deserialize, Serialize};

use crate::ply::{self, PlyError, ScalarType, VertexTable};

pub const CHECKPOINT_VERSION: u32 = 1;
const VERSION_TAG: &str = "omnisplat checkpoint";
const DEGREE_TAG: &str = "sh_degree";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
    #[error("invalid checkpoint: {0}")]
    Scene(#[from] SceneError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("optimizer state {}: {source}", path.display())]
    State {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn rest_names(k: usize) -> Vec<String> {
    (0..3 * (k - 1)).map(|i| format!("f_rest_{i}")).collect()
}

pub fn save_checkpoint(cloud: &GaussianCloud, path: &Path) -> Result<(), CheckpointError> {
    let n = cloud.len();
    let k = sh::coeff_count(cloud.sh_degree());
    let col = |group: ParamGroup, j: usize| -> Vec<f64> {
        let stride = cloud.stride(group);
        let p = cloud.params(group);
        (0..n).map(|i| p[i * stride + j] as f64).collect()
    };
    let zeros = vec![0.0; n];
    let mut owned: Vec<(String, Vec<f64>)> = Vec::new();
    for (j, name) in ["x", "y", "z"].iter().enumerate() {
        owned.push((name.to_string(), col(ParamGroup::Position, j)));
    }
    for name in ["nx", "ny", "nz"] {
        owned.push((name.to_string(), zeros.clone()));
    }
    for j in 0..3 {
        owned.push((format!("f_dc_{j}"), col(ParamGroup::ShDc, j)));
    }
    // Storage is coefficient-major with RGB inner; the file is channel-major.
    for (i, name) in rest_names(k).into_iter().enumerate() {
        let (c, coeff) = (i / (k - 1), i % (k - 1));
        owned.push((name, col(ParamGroup::ShRest, 3 * coeff + c)));
    }
    owned.push(("opacity".to_string(), col(ParamGroup::Opacity, 0)));
    for j in 0..3 {
        owned.push((format!("scale_{j}"), col(ParamGroup::Scale, j)));
    }
    for j in 0..4 {
        owned.push((format!("rot_{j}"), col(ParamGroup::Rotation, j)));
    }
    let columns: Vec<(&str, ScalarType, &[f64])> = owned
        .iter()
        .map(|(name, v)| (name.as_str(), ScalarType::F32, v.as_slice()))
        .collect();
    let comments = [
        format!("{VERSION_TAG} {CHECKPOINT_VERSION}"),
        format!("{DEGREE_TAG} {}", cloud.sh_degree()),
    ];
    ply::write_file(path, |w| ply::write_vertices(w, &comments, n, &columns))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GaussianCloud, CheckpointError> {
    cloud_from_table(&ply::read_vertices(path)?)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<GaussianCloud, CheckpointError> {
    cloud_from_table(&ply::parse_vertices(bytes)?)
}

fn tagged(comments: &[String], tag: &str) -> Result<Option<u32>, CheckpointError> {
    for c in comments {
        if let Some(rest) = c.strip_prefix(tag) {
            let v = rest
                .trim()
                .parse()
                .map_err(|_| CheckpointError::Invalid(format!("bad \"{tag}\" comment: {c}")))?;
            return Ok(Some(v));
        }
    }
    Ok(None)
}

fn cloud_from_table(table: &VertexTable) -> Result<GaussianCloud, CheckpointError> {
    let comments = &table.header.comments;
    // Files without the tag are accepted as generic splat PLYs.
    if let Some(found) = tagged(comments, VERSION_TAG)? {
        if found != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
    }
    let n_rest = table.names().filter(|n| n.starts_with("f_rest_")).count();
    let degree = (0..=sh::MAX_DEGREE)
        .find(|&d| 3 * (sh::coeff_count(d) - 1) == n_rest)
        .ok_or_else(|| {
            CheckpointError::Invalid(format!("{n_rest} f_rest properties match no SH degree"))
        })?;
    if let Some(declared) = tagged(comments, DEGREE_TAG)? {
        if declared as usize != degree {
            return Err(CheckpointError::Invalid(format!(
                "header declares SH degree {declared} but has {n_rest} f_rest properties"
            )));
        }
    }

    let float = |name: &str| -> Result<&[f64], CheckpointError> {
        let (ty, col) = table.column_typed(name)?;
        if ty != ScalarType::F32 {
            return Err(
                PlyError::UnsupportedFormat(format!("property {name} must be float")).into(),
            );
        }
        Ok(col)
    };
    let n = table.count;
    let gather = |names: &[String]| -> Result<Vec<f32>, CheckpointError> {
        let cols = names
            .iter()
            .map(|s| float(s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::with_capacity(n * names.len());
        for i in 0..n {
            out.extend(cols.iter().map(|c| c[i] as f32));
        }
        Ok(out)
    };
    let names = |prefix: &str, count: usize| {
        (0..count)
            .map(|j| format!("{prefix}{j}"))
            .collect::<Vec<_>>()
    };

    let k = sh::coeff_count(degree);
    let rest_file = gather(&rest_names(k))?;
    let mut rest = vec![0.0f32; rest_file.len()];
    let stride = 3 * (k - 1);
    for i in 0..n {
        for c in 0..3 {
            for coeff in 0..k - 1 {
                rest[i * stride + 3 * coeff + c] = rest_file[i * stride + c * (k - 1) + coeff];
            }
        }
    }
    let groups = [
        (
            ParamGroup::Position,
            gather(&["x".into(), "y".into(), "z".into()])?,
        ),
        (ParamGroup::ShDc, gather(&names("f_dc_", 3))?),
        (ParamGroup::ShRest, rest),
        (ParamGroup::Opacity, gather(&["opacity".into()])?),
        (ParamGroup::Scale, gather(&names("scale_", 3))?),
        (ParamGroup::Rotation, gather(&names("rot_", 4))?),
    ];
    Ok(GaussianCloud::from_groups(degree, groups)?)
}

/// Sidecar path for a checkpoint: `final.ply` -> `final.state.json`.
pub fn state_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("state.json")
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    version: u32,
    state: TrainerState,
}

pub fn save_state(state: &TrainerState, path: &Path) -> Result<(), CheckpointError> {
    let file = StateFile {
        version: CHECKPOINT_VERSION,
        state: state.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|source| CheckpointError::State {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_state(path: &Path) -> Result<TrainerState, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: StateFile = serde_json::from_str(&text).map_err(|source| CheckpointError::State {
        path: path.to_path_buf(),
        source,
    })?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: file.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(file.state)
}
