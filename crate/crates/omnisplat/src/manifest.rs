//! Scene manifests: a TOML file listing posed equirectangular frames, the
//! sparse point cloud and an optional train/test split.
//!
//! ```toml
//! width = 2048
//! height = 1024
//! points = "sparse/points.ply"
//!
//! [split]
//! train = ["hall_000", "hall_001"]
//! test = ["hall_002"]
//!
//! [[frames]]
//! name = "hall_000"
//! image = "images/hall_000.png"
//! T_cw = [1, 0, 0, 0,  0, 1, 0, 0,  0, 0, 1, 0,  0, 0, 0, 1]
//! ```
//!
//! `T_cw` is the row-major world-to-camera transform. Relative paths are
//! resolved against the manifest's directory. Without a `[split]` table
//! every frame is a training frame and the test split is empty.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use omnisplat_core::camera::{EquirectCamera, Pose};
use omnisplat_core::trainer::TrainView;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::images::{self, ImageError};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: frame \"{frame}\": {message}", path.display())]
    Validation {
        path: PathBuf,
        frame: String,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// On-disk layout, also used by the COLMAP converter to write manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitFile>,
    pub frames: Vec<FrameFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameFile {
    /// Defaults to the image file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub image: PathBuf,
    #[serde(rename = "T_cw")]
    pub t_cw: [f64; 16],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub image: PathBuf,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub path: PathBuf,
    pub camera: EquirectCamera,
    pub points: Option<PathBuf>,
    pub frames: Vec<Frame>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl SceneManifest {
    pub fn split(&self, split: Split) -> Vec<&Frame> {
        match split {
            Split::Train => self.train.iter().map(|&i| &self.frames[i]).collect(),
            Split::Test => self.test.iter().map(|&i| &self.frames[i]).collect(),
            Split::All => self.frames.iter().collect(),
        }
    }

    /// Loads the images of `split`, checking their size against the manifest.
    pub fn load_views(&self, split: Split) -> Result<Vec<(String, TrainView)>, ManifestError> {
        self.split(split)
            .par_iter()
            .map(|f| {
                let image = images::load_image(&f.image)?;
                if image.width() != self.camera.width() || image.height() != self.camera.height() {
                    return Err(ManifestError::Validation {
                        path: self.path.clone(),
                        frame: f.name.clone(),
                        message: format!(
                            "image is {}x{}, manifest says {}x{}",
                            image.width(),
                            image.height(),
                            self.camera.width(),
                            self.camera.height()
                        ),
                    });
                }
                Ok((
                    f.name.clone(),
                    TrainView {
                        image,
                        pose: f.pose,
                    },
                ))
            })
            .collect()
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Parses and validates manifest text without touching the file system.
/// Relative paths are joined onto `base`.
pub fn parse_manifest(
    text: &str,
    path: &Path,
    base: &Path,
) -> Result<SceneManifest, ManifestError> {
    let file: ManifestFile = toml::from_str(text).map_err(|e| ManifestError::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let invalid = |message: String| ManifestError::Invalid {
        path: path.to_path_buf(),
        message,
    };
    let camera =
        EquirectCamera::new(file.width, file.height).map_err(|e| invalid(e.to_string()))?;
    if file.frames.is_empty() {
        return Err(invalid("no frames".into()));
    }
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    let mut frames = Vec::with_capacity(file.frames.len());
    let mut names = HashSet::new();
    for (i, f) in file.frames.iter().enumerate() {
        let name = match &f.name {
            Some(n) => n.clone(),
            None => f
                .image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| invalid(format!("frame {i} has no name and no image file name")))?,
        };
        let bad = |message: String| ManifestError::Validation {
            path: path.to_path_buf(),
            frame: name.clone(),
            message,
        };
        if !names.insert(name.clone()) {
            return Err(bad("duplicate frame name".into()));
        }
        let m = &f.t_cw;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(bad("T_cw has non-finite entries".into()));
        }
        if m[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(bad("T_cw bottom row must be 0 0 0 1".into()));
        }
        let pose = Pose::from_matrix4(m).map_err(|e| bad(e.to_string()))?;
        frames.push(Frame {
            name,
            image: resolve(&f.image),
            pose,
        });
    }

    let index_of = |list: &[String], which: &str| -> Result<Vec<usize>, ManifestError> {
        let mut seen = HashSet::new();
        list.iter()
            .map(|n| {
                if !seen.insert(n) {
                    return Err(invalid(format!("{which} split lists \"{n}\" twice")));
                }
                frames
                    .iter()
                    .position(|f| &f.name == n)
                    .ok_or_else(|| invalid(format!("{which} split names unknown frame \"{n}\"")))
            })
            .collect()
    };
    let (train, test) = match &file.split {
        Some(s) => (index_of(&s.train, "train")?, index_of(&s.test, "test")?),
        None => ((0..frames.len()).collect(), Vec::new()),
    };
    Ok(SceneManifest {
        path: path.to_path_buf(),
        camera,
        points: file.points.as_deref().map(resolve),
        frames,
        train,
        test,
    })
}

/// Reads, parses and validates a manifest; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<SceneManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let m = parse_manifest(&text, path, base)?;
    for f in &m.frames {
        if !f.image.is_file() {
            return Err(ManifestError::Validation {
                path: path.to_path_buf(),
                frame: f.name.clone(),
                message: format!("image {} does not exist", f.image.display()),
            });
        }
    }
    if let Some(p) = &m.points {
        if !p.is_file() {
            return Err(ManifestError::Invalid {
                path: path.to_path_buf(),
                message: format!("points file {} does not exist", p.display()),
            });
        }
    }
    Ok(m)
}
