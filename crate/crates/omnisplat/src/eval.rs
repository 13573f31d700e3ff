//! Held-out evaluation: PSNR and SSIM per view, forward-pass timing, and
//! the perspective-crop variant that compares pinhole crops of the rendered
//! and ground-truth panoramas.

use std::time::Instant;

use omnisplat_core::camera::{EquirectCamera, PerspectiveCamera};
use omnisplat_core::crop::{self, CropOrientation};
use omnisplat_core::metrics;
use omnisplat_core::rasterizer::{self, RenderOptions};
use omnisplat_core::scene::GaussianCloud;
use omnisplat_core::trainer::TrainView;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Omnidirectional,
    PerspectiveCrop,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameTime {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    /// One entry per panorama, or per crop in perspective mode.
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Forward render time of each panorama.
    pub frame_times: Vec<FrameTime>,
    pub mean_render_seconds: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("the evaluation split has no views")]
    EmptySplit,
}

/// A pinhole crop: intrinsics plus the viewing direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    pub camera: PerspectiveCamera,
    pub orientation: CropOrientation,
    pub label: &'static str,
}

const CUBE_LABELS: [&str; 6] = ["front", "right", "back", "left", "up", "down"];

/// The six 90-degree cube faces for panoramas of height `pano_height`.
pub fn cube_crops(pano_height: u32) -> Vec<CropSpec> {
    let camera = crop::cube_face_camera(pano_height);
    crop::cube_orientations()
        .into_iter()
        .zip(CUBE_LABELS)
        .map(|(orientation, label)| CropSpec {
            camera,
            orientation,
            label,
        })
        .collect()
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

/// Renders every view, timing only the forward pass, and scores it against
/// its image. With `crops`, metrics are computed on each crop instead of the
/// whole panorama.
pub fn evaluate(
    cloud: &GaussianCloud,
    views: &[(String, TrainView)],
    cam: &EquirectCamera,
    opts: &RenderOptions,
    crops: Option<&[CropSpec]>,
) -> Result<EvalReport, EvalError> {
    if views.is_empty() || crops.is_some_and(|c| c.is_empty()) {
        return Err(EvalError::EmptySplit);
    }
    let mut scores = Vec::new();
    let mut frame_times = Vec::with_capacity(views.len());
    for (name, view) in views {
        let start = Instant::now();
        let out = rasterizer::render(cloud, &view.pose, cam, opts);
        let seconds = start.elapsed().as_secs_f64();
        frame_times.push(FrameTime {
            name: name.clone(),
            seconds,
        });
        match crops {
            None => scores.push(ViewMetrics {
                name: name.clone(),
                psnr: metrics::psnr(&out.image, &view.image),
                ssim: metrics::ssim(&out.image, &view.image),
            }),
            Some(specs) => {
                for (k, spec) in specs.iter().enumerate() {
                    let r = crop::perspective_crop(&out.image, &spec.camera, spec.orientation);
                    let g = crop::perspective_crop(&view.image, &spec.camera, spec.orientation);
                    let label = if spec.label.is_empty() {
                        format!("crop{k}")
                    } else {
                        spec.label.to_string()
                    };
                    scores.push(ViewMetrics {
                        name: format!("{name}/{label}"),
                        psnr: metrics::psnr(&r, &g),
                        ssim: metrics::ssim(&r, &g),
                    });
                }
            }
        }
    }
    let mean_render_seconds = mean(frame_times.iter().map(|t| t.seconds));
    Ok(EvalReport {
        mode: if crops.is_some() {
            EvalMode::PerspectiveCrop
        } else {
            EvalMode::Omnidirectional
        },
        mean_psnr: mean(scores.iter().map(|s| s.psnr)),
        mean_ssim: mean(scores.iter().map(|s| s.ssim)),
        views: scores,
        frame_times,
        mean_render_seconds,
        fps: if mean_render_seconds > 0.0 {
            1.0 / mean_render_seconds
        } else {
            f64::INFINITY
        },
    })
}
