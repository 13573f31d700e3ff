//! Photometric reconstruction: loss, Adam, densification and the training
//! loop that ties them to the rasterizer.
//!
//! One iteration renders a view chosen from a per-epoch seeded shuffle,
//! backpropagates the L1 + D-SSIM loss, updates densification statistics,
//! densifies and prunes on the interval, resets opacities on theirs, and
//! takes an Adam step. Every random choice derives from `(seed, iteration)`,
//! so a run resumed from a saved [`TrainerState`] continues bit-identically.

mod adam;
mod config;
mod densify;
mod loss;

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState, LrSchedule, Moments, BETA1, BETA2, EPSILON};
pub use config::{ConfigError, TrainConfig};
pub use densify::{densify_and_prune, reset_opacity, scene_extent, DensifyStats, EditSummary};
pub use loss::{loss, unmasked_rows, DimensionMismatch, LossOutput};

use crate::camera::{EquirectCamera, Pose};
use crate::gradients::{self, GradError};
use crate::image::Image;
use crate::rasterizer::{self, RenderOptions};
use crate::scene::{self, GaussianCloud, ParamGroup, SceneError};

/// One posed training image.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub image: Image,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("no training views")]
    EmptyDataset,
    #[error("view {view} is {got:?}, camera is {expected:?}")]
    ViewSize {
        view: usize,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Gradient(#[from] GradError),
    #[error("resume state does not match the cloud")]
    StateMismatch,
}

/// Everything besides the cloud needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainerState {
    pub iteration: u64,
    pub adam: AdamState,
    pub stats: DensifyStats,
}

/// Outcome of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: u64,
    pub view: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub sh_degree: usize,
    pub gaussians: usize,
    pub densified: Option<EditSummary>,
    pub opacity_reset: bool,
}

/// Hook called after every iteration, e.g. for logging and checkpoints.
pub trait TrainObserver {
    fn on_iteration(&mut self, trainer: &Trainer<'_>, report: &IterationReport);
}

impl<F: FnMut(&Trainer<'_>, &IterationReport)> TrainObserver for F {
    fn on_iteration(&mut self, trainer: &Trainer<'_>, report: &IterationReport) {
        self(trainer, report)
    }
}

/// View index used at zero-based step `step`: epochs are seeded shuffles of
/// all views.
pub fn view_for_step(seed: u64, n_views: usize, step: u64) -> usize {
    let epoch = step / n_views as u64;
    let mut order: Vec<usize> = (0..n_views).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch);
    order.shuffle(&mut rng);
    order[(step % n_views as u64) as usize]
}

fn split_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * iteration + 1);
    rng
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    views: &'a [TrainView],
    cam: EquirectCamera,
    cloud: GaussianCloud,
    extent: f64,
    lr: LrSchedule,
    state: TrainerState,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cloud: GaussianCloud,
        views: &'a [TrainView],
        cam: EquirectCamera,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        let state = TrainerState {
            iteration: 0,
            adam: AdamState::new(&cloud),
            stats: DensifyStats::new(cloud.len()),
        };
        Self::resume(cloud, views, cam, cfg, state)
    }

    pub fn resume(
        cloud: GaussianCloud,
        views: &'a [TrainView],
        cam: EquirectCamera,
        cfg: TrainConfig,
        state: TrainerState,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        cloud.validate()?;
        if views.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        for (i, v) in views.iter().enumerate() {
            if v.image.width() != cam.width() || v.image.height() != cam.height() {
                return Err(TrainError::ViewSize {
                    view: i,
                    expected: (cam.width(), cam.height()),
                    got: (v.image.width(), v.image.height()),
                });
            }
        }
        if !state.adam.matches(&cloud) || state.stats.len() != cloud.len() {
            return Err(TrainError::StateMismatch);
        }
        let poses: Vec<Pose> = views.iter().map(|v| v.pose).collect();
        let extent = scene_extent(&poses);
        Ok(Self {
            lr: LrSchedule::from_config(&cfg, extent),
            cfg,
            views,
            cam,
            cloud,
            extent,
            state,
        })
    }

    pub fn cloud(&self) -> &GaussianCloud {
        &self.cloud
    }

    pub fn into_cloud(self) -> GaussianCloud {
        self.cloud
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn camera(&self) -> &EquirectCamera {
        &self.cam
    }

    pub fn scene_extent(&self) -> f64 {
        self.extent
    }

    pub fn is_finished(&self) -> bool {
        self.state.iteration >= self.cfg.iterations
    }

    /// SH degree active at one-based iteration `j`.
    pub fn active_sh_degree(&self, j: u64) -> usize {
        let steps = (j / self.cfg.sh_increase_interval) as usize;
        steps.min(self.cloud.sh_degree()).min(self.cfg.sh_degree)
    }

    pub fn render_options(&self, sh_degree: usize) -> RenderOptions {
        RenderOptions {
            background: self.cfg.background,
            sh_degree: Some(sh_degree),
            ..RenderOptions::default()
        }
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<IterationReport, TrainError> {
        let j = self.state.iteration + 1;
        let view = view_for_step(self.cfg.seed, self.views.len(), j - 1);
        let v = &self.views[view];
        let degree = self.active_sh_degree(j);
        let out = rasterizer::render(
            &self.cloud,
            &v.pose,
            &self.cam,
            &self.render_options(degree),
        );
        let l = loss(
            &out.image,
            &v.image,
            self.cfg.lambda_ssim,
            self.cfg.mask_bottom_fraction,
        )
        .expect("view sizes checked on construction");
        let mut grads = gradients::backward(&out, &l.d_image, &self.cloud, &v.pose, &self.cam)?;

        let mut densified = None;
        let mut opacity_reset = false;
        if j <= self.cfg.densify_until {
            self.state.stats.accumulate(&grads, &out.radii());
            if j % self.cfg.densify_interval == 0 {
                let mut rng = split_rng(self.cfg.seed, j);
                let prune_large = j > self.cfg.opacity_reset_interval;
                let edit = densify_and_prune(
                    &mut self.cloud,
                    &mut self.state.stats,
                    &self.cfg,
                    self.extent,
                    prune_large,
                    &mut rng,
                );
                self.state.adam = self.state.adam.remap(&self.cloud, &edit.sources);
                grads = grads.remap(&edit.sources);
                densified = Some(edit);
            }
            if j % self.cfg.opacity_reset_interval == 0 {
                reset_opacity(&mut self.cloud, self.cfg.opacity_reset_ceiling);
                self.state.adam.zero_group(ParamGroup::Opacity);
                opacity_reset = true;
            }
        }

        adam_step(&mut self.cloud, &grads, &mut self.state.adam, &self.lr, j);
        self.state.iteration = j;
        Ok(IterationReport {
            iteration: j,
            view,
            loss: l.value,
            l1: l.l1,
            ssim: l.ssim,
            sh_degree: degree,
            gaussians: self.cloud.len(),
            densified,
            opacity_reset,
        })
    }

    /// Runs the remaining iterations, reporting each to `observer`.
    pub fn run<O: TrainObserver + ?Sized>(&mut self, observer: &mut O) -> Result<(), TrainError> {
        while !self.is_finished() {
            let report = self.step()?;
            observer.on_iteration(self, &report);
        }
        Ok(())
    }
}

/// Initializes a cloud from colored points and trains it on `views`.
pub fn train(
    views: &[TrainView],
    cam: EquirectCamera,
    init_points: &[([f64; 3], [f64; 3])],
    cfg: &TrainConfig,
) -> Result<GaussianCloud, TrainError> {
    train_with_observer(
        views,
        cam,
        init_points,
        cfg,
        &mut |_: &Trainer<'_>, _: &IterationReport| {},
    )
}

pub fn train_with_observer<O: TrainObserver + ?Sized>(
    views: &[TrainView],
    cam: EquirectCamera,
    init_points: &[([f64; 3], [f64; 3])],
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<GaussianCloud, TrainError> {
    let cloud = scene::init_from_points(init_points, cfg.sh_degree)?;
    let mut trainer = Trainer::new(cloud, views, cam, cfg.clone())?;
    trainer.run(observer)?;
    Ok(trainer.into_cloud())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::render;
    use crate::scene::GaussianPoint;

    fn views(cloud: &GaussianCloud, cam: &EquirectCamera, n: usize) -> Vec<TrainView> {
        (0..n)
            .map(|i| {
                let pose = Pose::new(
                    crate::camera::rotation_y(i as f64 * 0.7),
                    [0.05 * i as f64, 0.0, 0.0],
                )
                .unwrap();
                let image = render(cloud, &pose, cam, &RenderOptions::default()).image;
                TrainView { image, pose }
            })
            .collect()
    }

    fn gt() -> GaussianCloud {
        let mut c = GaussianCloud::new(0).unwrap();
        c.push(&GaussianPoint::from_activated(
            [0.0, 0.0, 2.0],
            &[crate::sh::rgb_to_dc([0.9, 0.2, 0.4])],
            [1.0, 0.0, 0.0, 0.0],
            [0.3; 3],
            0.9,
        ))
        .unwrap();
        c
    }

    #[test]
    fn view_order_is_a_permutation_per_epoch() {
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (0..5).map(|k| view_for_step(9, 5, epoch * 5 + k)).collect();
            seen.sort();
            assert_eq!(seen, (0..5).collect::<Vec<_>>());
        }
        let a: Vec<usize> = (0..20).map(|s| view_for_step(1, 5, s)).collect();
        let b: Vec<usize> = (0..20).map(|s| view_for_step(2, 5, s)).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let cam = EquirectCamera::new(32, 16).unwrap();
        let vs = views(&gt(), &cam, 2);
        let pts = [
            ([0.0, 0.0, 2.0], [0.5, 0.5, 0.5]),
            ([0.3, 0.0, 2.0], [0.1, 0.5, 0.5]),
        ];
        let cfg = TrainConfig {
            iterations: 0,
            ..Default::default()
        };
        let out = train(&vs, cam, &pts, &cfg).unwrap();
        assert_eq!(out, scene::init_from_points(&pts, 3).unwrap());
    }

    #[test]
    fn empty_dataset_rejected() {
        let cam = EquirectCamera::new(32, 16).unwrap();
        let pts = [([0.0, 0.0, 2.0], [0.5, 0.5, 0.5])];
        assert_eq!(
            train(&[], cam, &pts, &TrainConfig::default()),
            Err(TrainError::EmptyDataset)
        );
    }

    #[test]
    fn color_only_optimization_converges() {
        let cam = EquirectCamera::new(64, 32).unwrap();
        let target = gt();
        let vs = views(&target, &cam, 1);
        let mut start = target.clone();
        start
            .params_mut(ParamGroup::ShDc)
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let cfg = TrainConfig {
            iterations: 500,
            sh_degree: 0,
            densify_until: 0,
            lr_position_init: 0.0,
            lr_position_final: 0.0,
            lr_opacity: 0.0,
            lr_scale: 0.0,
            lr_rotation: 0.0,
            lr_sh_dc: 1e-2,
            ..Default::default()
        };
        let mut t = Trainer::new(start, &vs, cam, cfg).unwrap();
        t.run(&mut |_: &Trainer<'_>, _: &IterationReport| {})
            .unwrap();
        let got = crate::sh::eval_sh(&[t.cloud().get(0).sh_coeffs()[0]], &[0.0, 0.0, 1.0], 0);
        for (g, w) in got.iter().zip([0.9, 0.2, 0.4]) {
            assert!((g - w).abs() < 1e-2, "{got:?}");
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cam = EquirectCamera::new(32, 16).unwrap();
        let vs = views(&gt(), &cam, 3);
        let pts = [
            ([0.1, 0.0, 2.0], [0.5, 0.5, 0.5]),
            ([-0.2, 0.1, 1.8], [0.1, 0.5, 0.5]),
        ];
        let cfg = TrainConfig {
            iterations: 30,
            densify_interval: 10,
            ..Default::default()
        };
        let init = scene::init_from_points(&pts, 3).unwrap();
        let mut full = Trainer::new(init.clone(), &vs, cam, cfg.clone()).unwrap();
        full.run(&mut |_: &Trainer<'_>, _: &IterationReport| {})
            .unwrap();

        let mut first = Trainer::new(init, &vs, cam, cfg.clone()).unwrap();
        for _ in 0..15 {
            first.step().unwrap();
        }
        let state = first.state().clone();
        let mut second = Trainer::resume(first.into_cloud(), &vs, cam, cfg, state).unwrap();
        second
            .run(&mut |_: &Trainer<'_>, _: &IterationReport| {})
            .unwrap();
        assert_eq!(second.cloud(), full.cloud());
        assert_eq!(second.state(), full.state());
    }
}
