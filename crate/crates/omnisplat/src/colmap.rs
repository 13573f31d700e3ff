//! Conversion of COLMAP text exports (`cameras.txt`, `images.txt`,
//! `points3D.txt`) into a scene manifest and a sparse point PLY.
//!
//! COLMAP stores world-to-camera rotations as `(qw, qx, qy, qz)` and the
//! matching translation, which is exactly the manifest's `T_cw`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use omnisplat_core::camera::Pose;

use crate::manifest::{FrameFile, ManifestFile, SplitFile};
use crate::ply::{self, PlyError, SparsePoints};

#[derive(Debug, thiserror::Error)]
pub enum ColmapError {
    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {message}", file.display())]
    Missing { file: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Ply(#[from] PlyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub model: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// `(w, x, y, z)`, world to camera.
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    pub camera_id: u32,
    pub name: String,
}

impl ColmapImage {
    /// Row-major world-to-camera matrix.
    pub fn t_cw(&self) -> [f64; 16] {
        let n = self.quaternion.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = self.quaternion.map(|v| v / n);
        let r = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], //
            r[1][0], r[1][1], r[1][2], t[1], //
            r[2][0], r[2][1], r[2][2], t[2], //
            0.0, 0.0, 0.0, 1.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapModel {
    pub cameras: Vec<ColmapCamera>,
    pub images: Vec<ColmapImage>,
    pub points: SparsePoints,
}

fn read(file: &Path) -> Result<String, ColmapError> {
    fs::read_to_string(file).map_err(|e| ColmapError::Missing {
        file: file.to_path_buf(),
        message: e.to_string(),
    })
}

/// Non-comment lines with their 1-based line numbers. Blank lines are kept
/// because `images.txt` uses them for images without observations.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.trim()))
}

struct Fields<'a> {
    file: &'a Path,
    line: usize,
    toks: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn new(file: &'a Path, line: usize, text: &'a str) -> Self {
        Self {
            file,
            line,
            toks: text.split_whitespace(),
        }
    }

    fn err(&self, message: String) -> ColmapError {
        ColmapError::Parse {
            file: self.file.to_path_buf(),
            line: self.line,
            message,
        }
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ColmapError> {
        let tok = self
            .toks
            .next()
            .ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| self.err(format!("invalid {what} \"{tok}\"")))
    }

    fn finite(&mut self, what: &str) -> Result<f64, ColmapError> {
        let v: f64 = self.next(what)?;
        if !v.is_finite() {
            return Err(self.err(format!("{what} is not finite")));
        }
        Ok(v)
    }

    fn rest(self) -> String {
        self.toks.collect::<Vec<_>>().join(" ")
    }
}

pub fn parse_cameras(text: &str, file: &Path) -> Result<Vec<ColmapCamera>, ColmapError> {
    let mut out = Vec::new();
    for (line, l) in data_lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut f = Fields::new(file, line, l);
        out.push(ColmapCamera {
            id: f.next("camera id")?,
            model: f.next("camera model")?,
            width: f.next("width")?,
            height: f.next("height")?,
        });
    }
    Ok(out)
}

pub fn parse_images(text: &str, file: &Path) -> Result<Vec<ColmapImage>, ColmapError> {
    let mut out = Vec::new();
    let mut lines = data_lines(text).peekable();
    // Leading blank lines carry no image.
    while lines.peek().is_some_and(|(_, l)| l.is_empty()) {
        lines.next();
    }
    while let Some((line, l)) = lines.next() {
        if l.is_empty() {
            continue;
        }
        let mut f = Fields::new(file, line, l);
        let id = f.next("image id")?;
        let mut q = [0.0; 4];
        for (v, n) in q.iter_mut().zip(["QW", "QX", "QY", "QZ"]) {
            *v = f.finite(n)?;
        }
        let mut t = [0.0; 3];
        for (v, n) in t.iter_mut().zip(["TX", "TY", "TZ"]) {
            *v = f.finite(n)?;
        }
        let camera_id = f.next("camera id")?;
        let err = f.err("missing image name".into());
        let name = f.rest();
        if name.is_empty() {
            return Err(err);
        }
        if q.iter().map(|v| v * v).sum::<f64>() < 1e-12 {
            return Err(ColmapError::Parse {
                file: file.to_path_buf(),
                line,
                message: "zero quaternion".into(),
            });
        }
        // The following line lists 2D observations; it is not needed.
        lines.next();
        out.push(ColmapImage {
            id,
            quaternion: q,
            translation: t,
            camera_id,
            name,
        });
    }
    Ok(out)
}

pub fn parse_points3d(text: &str, file: &Path) -> Result<SparsePoints, ColmapError> {
    let mut out = SparsePoints::default();
    for (line, l) in data_lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut f = Fields::new(file, line, l);
        let _id: u64 = f.next("point id")?;
        let p = [f.finite("X")?, f.finite("Y")?, f.finite("Z")?];
        let c = [f.next("R")?, f.next("G")?, f.next("B")?];
        out.positions.push(p);
        out.colors.push(c);
    }
    Ok(out)
}

pub fn read_model(dir: &Path) -> Result<ColmapModel, ColmapError> {
    let cam_file = dir.join("cameras.txt");
    let img_file = dir.join("images.txt");
    let pts_file = dir.join("points3D.txt");
    Ok(ColmapModel {
        cameras: parse_cameras(&read(&cam_file)?, &cam_file)?,
        images: parse_images(&read(&img_file)?, &img_file)?,
        points: parse_points3d(&read(&pts_file)?, &pts_file)?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ConvertOptions {
    /// Every `n`-th image (by name order) goes to the test split.
    pub test_every: Option<usize>,
}

/// Builds the manifest for `model`. Image paths are `images_dir/NAME`.
pub fn to_manifest(
    model: &ColmapModel,
    images_dir: &Path,
    points: &Path,
    opts: &ConvertOptions,
    source: &Path,
) -> Result<ManifestFile, ColmapError> {
    let missing = |message: String| ColmapError::Missing {
        file: source.join("cameras.txt"),
        message,
    };
    let cams: HashMap<u32, &ColmapCamera> = model.cameras.iter().map(|c| (c.id, c)).collect();
    let mut images: Vec<&ColmapImage> = model.images.iter().collect();
    images.sort_by(|a, b| a.name.cmp(&b.name));
    let first = images.first().ok_or_else(|| ColmapError::Missing {
        file: source.join("images.txt"),
        message: "no images".into(),
    })?;
    let size = |img: &ColmapImage| {
        cams.get(&img.camera_id)
            .map(|c| (c.width, c.height))
            .ok_or_else(|| {
                missing(format!(
                    "image {} uses unknown camera {}",
                    img.name, img.camera_id
                ))
            })
    };
    let (width, height) = size(first)?;
    let mut frames = Vec::with_capacity(images.len());
    for img in &images {
        if size(img)? != (width, height) {
            return Err(missing(format!(
                "image {} has a different resolution than {}",
                img.name, first.name
            )));
        }
        let t_cw = img.t_cw();
        Pose::from_matrix4(&t_cw).map_err(|e| ColmapError::Parse {
            file: source.join("images.txt"),
            line: 0,
            message: format!("image {}: {e}", img.name),
        })?;
        frames.push(FrameFile {
            name: Some(img.name.clone()),
            image: images_dir.join(&img.name),
            t_cw,
        });
    }
    let split = opts.test_every.filter(|&n| n > 0).map(|n| {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, img) in images.iter().enumerate() {
            if i % n == 0 { &mut test } else { &mut train }.push(img.name.clone());
        }
        SplitFile { train, test }
    });
    Ok(ManifestFile {
        width,
        height,
        points: Some(points.to_path_buf()),
        split,
        frames,
    })
}

/// Reads the export in `colmap_dir` and writes `out_manifest` plus
/// `points.ply` beside it. Paths in the manifest are relative to its
/// directory when the target lies below it, absolute otherwise.
pub fn convert(
    colmap_dir: &Path,
    images_dir: &Path,
    out_manifest: &Path,
    opts: &ConvertOptions,
) -> Result<ManifestFile, ColmapError> {
    let model = read_model(colmap_dir)?;
    let out_dir = out_manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(out_dir).map_err(|source| ColmapError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let points_path = out_dir.join("points.ply");
    ply::save_points(&model.points, &points_path)?;

    let abs = |p: &Path| {
        fs::canonicalize(p).unwrap_or_else(|_| std::path::absolute(p).unwrap_or(p.to_path_buf()))
    };
    let out_abs = abs(out_dir);
    let images_abs = abs(images_dir);
    let rel = |p: &Path| {
        p.strip_prefix(&out_abs)
            .map(Path::to_path_buf)
            .unwrap_or(p.to_path_buf())
    };
    let manifest = to_manifest(
        &model,
        &rel(&images_abs),
        Path::new("points.ply"),
        opts,
        colmap_dir,
    )?;
    let text = toml::to_string(&manifest).expect("manifest serializes");
    fs::write(out_manifest, text).map_err(|source| ColmapError::Write {
        path: out_manifest.to_path_buf(),
        source,
    })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMAGES: &str = "# Image list with two lines of data per image:
#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME
#   POINTS2D[] as (X, Y, POINT3D_ID)
1 1 0 0 0 0 0 0 1 a.png
10.0 20.0 1

2 0.7071067811865476 0 0.7071067811865476 0 1 2 3 1 b.png
";

    #[test]
    fn images_with_and_without_observations() {
        let imgs = parse_images(IMAGES, Path::new("images.txt")).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].t_cw(), Pose::identity().to_matrix4());
        assert_eq!(imgs[1].name, "b.png");
        let m = imgs[1].t_cw();
        // 90 degrees about +Y maps +Z to +X.
        assert!((m[2] - 1.0).abs() < 1e-12 && (m[8] + 1.0).abs() < 1e-12);
        assert_eq!([m[3], m[7], m[11]], [1.0, 2.0, 3.0]);
    }

    #[test]
    fn parse_errors_name_file_and_line() {
        let text = "# c\n1 EQUIRECTANGULAR 64 thirty-two\n";
        let err = parse_cameras(text, Path::new("cameras.txt")).unwrap_err();
        match &err {
            ColmapError::Parse { line, .. } => assert_eq!(*line, 2),
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().starts_with("cameras.txt:2"));
        let pts = "1 0 0 0 255 0 300 0.1\n";
        assert!(parse_points3d(pts, Path::new("points3D.txt")).is_err());
    }

    #[test]
    fn points_with_tracks() {
        let text = "# 3D point list\n7 1.5 -2 3 10 20 30 0.5 1 0 2 5\n8 0 0 1 0 0 0 0.1\n";
        let p = parse_points3d(text, Path::new("points3D.txt")).unwrap();
        assert_eq!(p.positions, vec![[1.5, -2.0, 3.0], [0.0, 0.0, 1.0]]);
        assert_eq!(p.colors[0], [10, 20, 30]);
    }

    #[test]
    fn test_every_splits_by_name_order() {
        let model = ColmapModel {
            cameras: vec![ColmapCamera {
                id: 1,
                model: "SPHERE".into(),
                width: 64,
                height: 32,
            }],
            images: (0..5)
                .rev()
                .map(|i| ColmapImage {
                    id: i,
                    quaternion: [1.0, 0.0, 0.0, 0.0],
                    translation: [0.0; 3],
                    camera_id: 1,
                    name: format!("{i}.png"),
                })
                .collect(),
            points: SparsePoints::default(),
        };
        let opts = ConvertOptions {
            test_every: Some(2),
        };
        let m = to_manifest(
            &model,
            Path::new("imgs"),
            Path::new("p.ply"),
            &opts,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(m.frames[0].image, Path::new("imgs/0.png"));
        let split = m.split.unwrap();
        assert_eq!(split.test, vec!["0.png", "2.png", "4.png"]);
        assert_eq!(split.train, vec!["1.png", "3.png"]);
    }
}
