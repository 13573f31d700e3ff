//! A tiny posed dataset on disk and helpers to run the binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use omnisplat::images::save_image;
use omnisplat::ply::{save_points, SparsePoints};
use omnisplat_core::camera::{rotation_y, EquirectCamera, Pose};
use omnisplat_core::rasterizer::{render, RenderOptions};
use omnisplat_core::scene::{GaussianCloud, GaussianPoint};
use omnisplat_core::sh;

pub const WIDTH: u32 = 64;
pub const HEIGHT: u32 = 32;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_omnisplat"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn ground_truth() -> GaussianCloud {
    let mut cloud = GaussianCloud::new(0).unwrap();
    let spots = [
        ([0.0, 0.0, 2.0], [0.9, 0.2, 0.1]),
        ([2.0, 0.3, 0.5], [0.1, 0.8, 0.2]),
        ([-1.5, -0.4, -1.5], [0.2, 0.3, 0.9]),
        ([0.5, 0.6, -2.2], [0.8, 0.8, 0.2]),
        ([-2.0, 0.1, 1.0], [0.7, 0.2, 0.7]),
        ([1.2, -0.8, -1.0], [0.3, 0.7, 0.8]),
    ];
    for (pos, rgb) in spots {
        let g = GaussianPoint::from_activated(
            pos,
            &[sh::rgb_to_dc(rgb)],
            [1.0, 0.1, 0.2, 0.0],
            [0.35, 0.2, 0.25],
            0.85,
        );
        cloud.push(&g).unwrap();
    }
    cloud
}

pub fn poses() -> Vec<Pose> {
    (0..4)
        .map(|i| {
            let c = [0.15 * i as f64, 0.0, -0.1 * i as f64];
            Pose::from_center(rotation_y(0.8 * i as f64), c).unwrap()
        })
        .collect()
}

pub struct Dataset {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub points: SparsePoints,
}

/// Renders the ground truth from four poses; the last one is held out
/// unless `split` is false.
pub fn dataset(split: bool) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("images")).unwrap();
    let cam = EquirectCamera::new(WIDTH, HEIGHT).unwrap();
    let gt = ground_truth();
    let mut frames = String::new();
    for (i, pose) in poses().iter().enumerate() {
        let img = render(&gt, pose, &cam, &RenderOptions::default()).image;
        save_image(&img, &dir.path().join(format!("images/v{i}.png"))).unwrap();
        let m: Vec<String> = pose.to_matrix4().iter().map(|v| format!("{v:?}")).collect();
        frames.push_str(&format!(
            "[[frames]]\nname = \"v{i}\"\nimage = \"images/v{i}.png\"\nT_cw = [{}]\n\n",
            m.join(", ")
        ));
    }
    let mut points = SparsePoints::default();
    for (k, g) in gt.iter().enumerate() {
        let c = g.position();
        let rgb = sh::eval_sh(&g.sh_coeffs()[..1], &[0.0, 0.0, 1.0], 0);
        for j in 0..3 {
            let off = 0.1 * (j as f64 - 1.0) * if k % 2 == 0 { 1.0 } else { -1.0 };
            points
                .positions
                .push([c.x + off, c.y - off, c.z + 0.5 * off]);
            points.colors.push(rgb.map(|v| (v * 255.0).round() as u8));
        }
    }
    save_points(&points, &dir.path().join("points.ply")).unwrap();
    let split_table = if split {
        "[split]\ntrain = [\"v0\", \"v1\", \"v2\"]\ntest = [\"v3\"]\n\n"
    } else {
        ""
    };
    let manifest = dir.path().join("scene.toml");
    std::fs::write(
        &manifest,
        format!(
            "width = {WIDTH}\nheight = {HEIGHT}\npoints = \"points.ply\"\n\n{split_table}{frames}"
        ),
    )
    .unwrap();
    Dataset {
        dir,
        manifest,
        points,
    }
}
