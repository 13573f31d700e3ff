//! Command-line interface: `train`, `render`, `eval` and `convert-colmap`.
//!
//! Exit codes: 0 on success, 1 when a command fails while running, 2 for
//! usage errors and unreadable or invalid inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use omnisplat_core::camera::{EquirectCamera, PerspectiveCamera, Pose};
use omnisplat_core::crop::{self, CropOrientation};
use omnisplat_core::metrics;
use omnisplat_core::rasterizer::{self, RenderOptions};
use omnisplat_core::scene::{init_from_points, GaussianCloud};
use omnisplat_core::trainer::{TrainConfig, TrainView, Trainer};

use crate::checkpoint::{self, load_checkpoint, save_checkpoint, save_state, state_path};
use crate::colmap::{self, ConvertOptions};
use crate::config::{self, load_config};
use crate::eval::{self, CropSpec};
use crate::images::save_image;
use crate::manifest::{load_manifest, Split};
use crate::metrics_log::{LogRecord, MetricsLog};
use crate::ply::load_points;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "OMNISPLAT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "omnisplat",
    version,
    about = "Omnidirectional Gaussian splatting: train, render, evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct a scene from posed panoramas and sparse points.
    Train(Box<TrainArgs>),
    /// Render panoramas (and optional perspective crops) from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint against held-out views.
    Eval(EvalArgs),
    /// Convert a COLMAP text export into a manifest and point cloud.
    ConvertColmap(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints, the metrics log and the effective config.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML training configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint and its `.state.json` sidecar.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Iterations between intermediate checkpoints (0 disables them).
    #[arg(long, default_value_t = 5000)]
    pub checkpoint_every: u64,
    /// Iterations between metrics log records.
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

/// One flag per [`TrainConfig`] field.
#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub lambda_ssim: Option<f64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub densify_until: Option<u64>,
    #[arg(long)]
    pub densify_interval: Option<u64>,
    #[arg(long)]
    pub opacity_reset_interval: Option<u64>,
    #[arg(long)]
    pub densify_grad_threshold: Option<f64>,
    #[arg(long)]
    pub scale_split_threshold: Option<f64>,
    #[arg(long)]
    pub split_factor: Option<f64>,
    #[arg(long)]
    pub prune_opacity: Option<f64>,
    #[arg(long)]
    pub prune_scale_world: Option<f64>,
    #[arg(long)]
    pub prune_radius_px: Option<f64>,
    #[arg(long)]
    pub opacity_reset_ceiling: Option<f64>,
    #[arg(long)]
    pub lr_position_init: Option<f64>,
    #[arg(long)]
    pub lr_position_final: Option<f64>,
    #[arg(long)]
    pub lr_sh_dc: Option<f64>,
    #[arg(long)]
    pub lr_sh_rest: Option<f64>,
    #[arg(long)]
    pub lr_opacity: Option<f64>,
    #[arg(long)]
    pub lr_scale: Option<f64>,
    #[arg(long)]
    pub lr_rotation: Option<f64>,
    #[arg(long)]
    pub sh_increase_interval: Option<u64>,
    #[arg(long)]
    pub sh_degree: Option<usize>,
    #[arg(long)]
    pub mask_bottom_fraction: Option<f64>,
    #[arg(long, num_args = 3, value_names = ["R", "G", "B"])]
    pub background: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            lambda_ssim,
            iterations,
            densify_until,
            densify_interval,
            opacity_reset_interval,
            densify_grad_threshold,
            scale_split_threshold,
            split_factor,
            prune_opacity,
            prune_scale_world,
            prune_radius_px,
            opacity_reset_ceiling,
            lr_position_init,
            lr_position_final,
            lr_sh_dc,
            lr_sh_rest,
            lr_opacity,
            lr_scale,
            lr_rotation,
            sh_increase_interval,
            sh_degree,
            mask_bottom_fraction,
            seed
        );
        if let Some(bg) = &self.background {
            cfg.background = [bg[0], bg[1], bg[2]];
        }
    }
}

/// Render settings shared by `render` and `eval`.
#[derive(Debug, Args)]
pub struct ViewArgs {
    /// Cap on the SH degree used for view-dependent color.
    #[arg(long)]
    pub sh_degree: Option<usize>,
    #[arg(long, num_args = 3, value_names = ["R", "G", "B"])]
    pub background: Option<Vec<f64>>,
    /// Explicit pinhole crop; repeatable. Yaw and pitch are in degrees,
    /// positive yaw turns right and positive pitch looks up.
    #[arg(
        long,
        num_args = 8,
        action = clap::ArgAction::Append,
        allow_negative_numbers = true,
        value_names = ["FX", "FY", "CX", "CY", "W", "H", "YAW", "PITCH"]
    )]
    pub perspective: Vec<f64>,
}

impl ViewArgs {
    fn render_options(&self) -> RenderOptions {
        RenderOptions {
            sh_degree: self.sh_degree,
            background: self
                .background
                .as_ref()
                .map_or([0.0; 3], |b| [b[0], b[1], b[2]]),
            ..RenderOptions::default()
        }
    }

    fn explicit_crops(&self) -> Result<Vec<CropSpec>, Failure> {
        self.perspective
            .chunks(8)
            .map(|v| {
                let size = |x: f64, what: &str| {
                    if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                        Ok(x as u32)
                    } else {
                        Err(input(anyhow!(
                            "--perspective {what} must be a positive integer, got {x}"
                        )))
                    }
                };
                let camera = PerspectiveCamera::new(
                    v[0],
                    v[1],
                    v[2],
                    v[3],
                    size(v[4], "width")?,
                    size(v[5], "height")?,
                )
                .map_err(|e| input(anyhow!("--perspective: {e}")))?;
                Ok(CropSpec {
                    camera,
                    orientation: CropOrientation::new(v[6].to_radians(), v[7].to_radians()),
                    label: "",
                })
            })
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Render the poses of this manifest.
    #[arg(long, required_unless_present = "pose", conflicts_with = "pose")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
    /// Single row-major world-to-camera matrix instead of a manifest.
    #[arg(long, num_args = 16, allow_negative_numbers = true, requires_all = ["width", "height"])]
    pub pose: Option<Vec<f64>>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// Also write the six cube-map faces of every panorama.
    #[arg(long)]
    pub cube: bool,
    #[command(flatten)]
    pub view: ViewArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Score perspective crops instead of whole panoramas. Uses the
    /// `--perspective` crops when given, the six cube faces otherwise.
    #[arg(long)]
    pub perspective_crop: bool,
    /// Write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub view: ViewArgs,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directory with cameras.txt, images.txt and points3D.txt.
    #[arg(long)]
    pub colmap: PathBuf,
    /// Directory holding the images named in images.txt.
    #[arg(long)]
    pub images: PathBuf,
    /// Manifest to write; points.ply is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Put every n-th image (in name order) into the test split.
    #[arg(long)]
    pub test_every: Option<usize>,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad usage or unreadable/invalid input.
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Runtime(e) => e,
        }
    }
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

/// Sizes the global thread pool from [`THREADS_ENV`], if set.
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            input(anyhow!(
                "{THREADS_ENV} must be a positive integer, got \"{value}\""
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(runtime)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => train(*a),
        Command::Render(a) => render(a),
        Command::Eval(a) => evaluate(a),
        Command::ConvertColmap(a) => convert(a),
    }
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(runtime)
}

fn write_checkpoint(
    cloud: &GaussianCloud,
    trainer: &Trainer<'_>,
    path: &Path,
) -> Result<(), Failure> {
    save_checkpoint(cloud, path).map_err(runtime)?;
    save_state(trainer.state(), &state_path(path)).map_err(runtime)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let manifest = load_manifest(&args.manifest).map_err(input)?;
    let mut cfg = match &args.config {
        Some(p) => load_config(p).map_err(input)?,
        None => TrainConfig::default(),
    };
    args.overrides.apply(&mut cfg);
    cfg.validate().map_err(input)?;
    if args.log_every == 0 {
        return Err(input(anyhow!("--log-every must be positive")));
    }

    let views: Vec<TrainView> = manifest
        .load_views(Split::Train)
        .map_err(input)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let test_views = manifest.load_views(Split::Test).map_err(input)?;
    info!(
        "{} training views, {} held out",
        views.len(),
        test_views.len()
    );

    let (cloud, state) = match &args.resume {
        Some(ckpt) => {
            let cloud = load_checkpoint(ckpt).map_err(input)?;
            let state = checkpoint::load_state(&state_path(ckpt)).map_err(input)?;
            info!(
                "resuming from {} at iteration {}",
                ckpt.display(),
                state.iteration
            );
            (cloud, Some(state))
        }
        None => {
            let points_path = manifest.points.as_ref().ok_or_else(|| {
                input(anyhow!(
                    "{}: no points file to initialize from",
                    manifest.path.display()
                ))
            })?;
            let points = load_points(points_path).map_err(input)?;
            if points.is_empty() {
                return Err(input(anyhow!(
                    "{}: point cloud is empty",
                    points_path.display()
                )));
            }
            let cloud = init_from_points(&points.to_init_points(), cfg.sh_degree).map_err(input)?;
            info!(
                "initialized {} gaussians from {}",
                cloud.len(),
                points_path.display()
            );
            (cloud, None)
        }
    };

    create_dir(&args.out)?;
    let ckpt_dir = args.out.join("checkpoints");
    if args.checkpoint_every > 0 {
        create_dir(&ckpt_dir)?;
    }
    let cfg_path = args.out.join("config.toml");
    fs::write(&cfg_path, config::to_toml(&cfg))
        .with_context(|| format!("cannot write {}", cfg_path.display()))
        .map_err(runtime)?;

    let cam = manifest.camera;
    let mut trainer = match state {
        Some(s) => Trainer::resume(cloud, &views, cam, cfg, s),
        None => Trainer::new(cloud, &views, cam, cfg),
    }
    .map_err(input)?;

    let log_path = args.out.join("metrics.jsonl");
    let mut log = MetricsLog::append(&log_path)
        .with_context(|| format!("cannot open {}", log_path.display()))
        .map_err(runtime)?;
    let start = Instant::now();
    let (mut window_loss, mut window_l1, mut window_ssim, mut window_n) = (0.0, 0.0, 0.0, 0u64);
    while !trainer.is_finished() {
        let rep = trainer.step().map_err(runtime)?;
        window_loss += rep.loss;
        window_l1 += rep.l1;
        window_ssim += rep.ssim;
        window_n += 1;
        let j = rep.iteration;
        if let Some(edit) = &rep.densified {
            info!(
                "iteration {j}: cloned {}, split {}, pruned {} -> {} gaussians",
                edit.cloned, edit.split, edit.pruned, rep.gaussians
            );
        }
        if j % args.log_every == 0 || trainer.is_finished() {
            let test_psnr = test_views.first().map(|(_, v)| {
                let opts = trainer.render_options(rep.sh_degree);
                metrics::psnr(
                    &rasterizer::render(trainer.cloud(), &v.pose, &cam, &opts).image,
                    &v.image,
                )
            });
            let n = window_n as f64;
            let record = LogRecord {
                iteration: j,
                loss: window_loss / n,
                l1: window_l1 / n,
                ssim: window_ssim / n,
                gaussians: rep.gaussians,
                test_psnr,
                elapsed_seconds: start.elapsed().as_secs_f64(),
            };
            log.write(&record)
                .with_context(|| format!("cannot write {}", log_path.display()))
                .map_err(runtime)?;
            info!(
                "iteration {j}: loss {:.5}, {} gaussians{}",
                record.loss,
                record.gaussians,
                test_psnr.map_or(String::new(), |p| format!(", held-out PSNR {p:.2} dB"))
            );
            (window_loss, window_l1, window_ssim, window_n) = (0.0, 0.0, 0.0, 0);
        }
        if args.checkpoint_every > 0 && j % args.checkpoint_every == 0 && !trainer.is_finished() {
            write_checkpoint(
                trainer.cloud(),
                &trainer,
                &ckpt_dir.join(format!("iter_{j:06}.ply")),
            )?;
        }
    }
    write_checkpoint(trainer.cloud(), &trainer, &args.out.join("final.ply"))
}

fn render(args: RenderArgs) -> Result<(), Failure> {
    let cloud = load_checkpoint(&args.checkpoint).map_err(input)?;
    let (cam, poses) = match (&args.manifest, &args.pose) {
        (Some(path), _) => {
            let m = load_manifest(path).map_err(input)?;
            let poses: Vec<(String, Pose)> = m
                .split(args.split)
                .iter()
                .map(|f| (f.name.clone(), f.pose))
                .collect();
            (m.camera, poses)
        }
        (None, Some(values)) => {
            let m: [f64; 16] = values
                .as_slice()
                .try_into()
                .expect("clap enforces 16 values");
            let pose = Pose::from_matrix4(&m).map_err(|e| input(anyhow!("--pose: {e}")))?;
            let (w, h) = (
                args.width.expect("required by clap"),
                args.height.expect("required by clap"),
            );
            let cam =
                EquirectCamera::new(w, h).map_err(|e| input(anyhow!("--width/--height: {e}")))?;
            (cam, vec![("pose".to_string(), pose)])
        }
        (None, None) => unreachable!("clap requires --manifest or --pose"),
    };
    let mut crops = args.view.explicit_crops()?;
    if args.cube {
        crops.extend(eval::cube_crops(cam.height()));
    }
    let opts = args.view.render_options();
    create_dir(&args.out)?;
    for (name, pose) in &poses {
        let start = Instant::now();
        let pano = rasterizer::render(&cloud, pose, &cam, &opts).image;
        info!("{name}: rendered in {:.3} s", start.elapsed().as_secs_f64());
        save_image(&pano, &args.out.join(format!("{name}.png"))).map_err(runtime)?;
        for (k, spec) in crops.iter().enumerate() {
            let img = crop::perspective_crop(&pano, &spec.camera, spec.orientation);
            let label = if spec.label.is_empty() {
                format!("crop{k}")
            } else {
                spec.label.to_string()
            };
            save_image(&img, &args.out.join(format!("{name}_{label}.png"))).map_err(runtime)?;
        }
    }
    Ok(())
}

fn evaluate(args: EvalArgs) -> Result<(), Failure> {
    let cloud = load_checkpoint(&args.checkpoint).map_err(input)?;
    let manifest = load_manifest(&args.manifest).map_err(input)?;
    let views = manifest.load_views(args.split).map_err(input)?;
    let explicit = args.view.explicit_crops()?;
    if !explicit.is_empty() && !args.perspective_crop {
        return Err(input(anyhow!(
            "--perspective needs --perspective-crop in eval"
        )));
    }
    let crops = if explicit.is_empty() {
        eval::cube_crops(manifest.camera.height())
    } else {
        explicit
    };
    let report = eval::evaluate(
        &cloud,
        &views,
        &manifest.camera,
        &args.view.render_options(),
        args.perspective_crop.then_some(crops.as_slice()),
    )
    .map_err(input)?;
    for v in &report.views {
        println!("{:<24} PSNR {:7.3} dB  SSIM {:.4}", v.name, v.psnr, v.ssim);
    }
    println!(
        "mean ({:?}, {} views): PSNR {:.3} dB  SSIM {:.4}  render {:.4} s/frame  {:.2} FPS",
        report.mode,
        report.views.len(),
        report.mean_psnr,
        report.mean_ssim,
        report.mean_render_seconds,
        report.fps
    );
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(runtime)?;
    }
    Ok(())
}

fn convert(args: ConvertArgs) -> Result<(), Failure> {
    let opts = ConvertOptions {
        test_every: args.test_every,
    };
    let manifest =
        colmap::convert(&args.colmap, &args.images, &args.out, &opts).map_err(|e| match e {
            colmap::ColmapError::Write { .. } => runtime(e),
            other => input(other),
        })?;
    info!(
        "wrote {} with {} frames",
        args.out.display(),
        manifest.frames.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_config_field_has_a_flag() {
        let cfg_fields: Vec<String> = toml::Table::try_from(TrainConfig::default())
            .unwrap()
            .keys()
            .map(|k| k.replace('_', "-"))
            .collect();
        let cmd = Cli::command();
        let train = cmd.find_subcommand("train").unwrap();
        let flags: Vec<&str> = train.get_arguments().filter_map(|a| a.get_long()).collect();
        for f in &cfg_fields {
            assert!(flags.contains(&f.as_str()), "no --{f}");
        }
    }

    #[test]
    fn overrides_apply() {
        let cli = Cli::try_parse_from([
            "omnisplat",
            "train",
            "--manifest",
            "m.toml",
            "--out",
            "o",
            "--iterations",
            "7",
            "--lambda-ssim",
            "0.5",
            "--background",
            "0.1",
            "0.2",
            "0.3",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        let mut cfg = TrainConfig::default();
        a.overrides.apply(&mut cfg);
        assert_eq!(cfg.iterations, 7);
        assert_eq!(cfg.lambda_ssim, 0.5);
        assert_eq!(cfg.background, [0.1, 0.2, 0.3]);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn perspective_values_parse_in_groups_of_eight() {
        let cli = Cli::try_parse_from([
            "omnisplat",
            "render",
            "--checkpoint",
            "c.ply",
            "--out",
            "o",
            "--pose",
            "1",
            "0",
            "0",
            "0",
            "0",
            "1",
            "0",
            "0",
            "0",
            "0",
            "1",
            "0",
            "0",
            "0",
            "0",
            "1",
            "--width",
            "64",
            "--height",
            "32",
            "--perspective",
            "20",
            "20",
            "16",
            "16",
            "32",
            "32",
            "-90",
            "10",
            "--perspective",
            "10",
            "10",
            "8",
            "8",
            "16",
            "16",
            "0",
            "-45",
        ])
        .unwrap();
        let Command::Render(a) = cli.command else {
            panic!()
        };
        let crops = a.view.explicit_crops().unwrap();
        assert_eq!(crops.len(), 2);
        assert_eq!(crops[0].orientation.yaw, (-90f64).to_radians());
        assert_eq!(crops[1].camera.width, 16);
        assert!(
            Cli::try_parse_from(["omnisplat", "render", "--checkpoint", "c", "--out", "o"])
                .is_err()
        );
    }
}
