use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::Pose;
use crate::gradients::GradientBuffer;
use crate::math::{self, Vec3};
use crate::scene::{self, GaussianCloud, ParamGroup};

use super::config::TrainConfig;

/// Screen-gradient and footprint statistics gathered between two
/// densification events.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensifyStats {
    pub grad_norm_sum: Vec<f64>,
    pub hits: Vec<u32>,
    pub max_radius: Vec<f64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_norm_sum: vec![0.0; n],
            hits: vec![0; n],
            max_radius: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// Adds one backward pass. `radii` holds each Gaussian's pixel radius in
    /// that view, zero if culled.
    pub fn accumulate(&mut self, grads: &GradientBuffer, radii: &[f64]) {
        assert_eq!(
            grads.len(),
            self.len(),
            "gradient buffer does not match the statistics"
        );
        for i in 0..self.len() {
            self.grad_norm_sum[i] += grads.screen_norm_sum[i];
            self.hits[i] += grads.screen_hits[i];
            if let Some(&r) = radii.get(i) {
                self.max_radius[i] = self.max_radius[i].max(r);
            }
        }
    }

    /// Mean `|dL/ds|` over the views in which Gaussian `i` was visible.
    pub fn mean_grad(&self, i: usize) -> f64 {
        match self.hits[i] {
            0 => 0.0,
            n => self.grad_norm_sum[i] / n as f64,
        }
    }
}

/// What one densification event did. `sources[i]` is the pre-edit index of
/// surviving Gaussian `i`, or `None` for a clone or split child.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EditSummary {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub sources: Vec<Option<usize>>,
}

impl EditSummary {
    /// Net change in Gaussian count: each clone adds one, each split trades
    /// its parent for two children, each prune removes one.
    pub fn count_delta(&self) -> i64 {
        self.cloned as i64 + self.split as i64 - self.pruned as i64
    }
}

/// Radius of the bounding sphere of the camera centers (around their mean),
/// times 1.1. Falls back to 1 for a single camera.
pub fn scene_extent(poses: &[Pose]) -> f64 {
    if poses.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vec3> = poses.iter().map(|p| p.center()).collect();
    let mean = centers.iter().fold(Vec3::zeros(), |a, c| a + c) / centers.len() as f64;
    let radius = centers
        .iter()
        .map(|c| math::norm3(&(c - mean)))
        .fold(0.0, f64::max);
    if radius < 1e-6 {
        1.0
    } else {
        1.1 * radius
    }
}

/// Clones small and splits large high-gradient Gaussians, then prunes
/// transparent ones and, when `prune_large` is set, ones whose world scale or
/// observed screen radius is too big. Resets `stats` for the edited cloud.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    stats: &mut DensifyStats,
    cfg: &TrainConfig,
    scene_extent: f64,
    prune_large: bool,
    rng: &mut R,
) -> EditSummary {
    let n = cloud.len();
    assert_eq!(
        stats.len(),
        n,
        "densification statistics do not match the cloud"
    );
    let split_limit = cfg.scale_split_threshold * scene_extent;

    let max_scale = |c: &GaussianCloud, i: usize| c.get(i).scale().into_iter().fold(0.0, f64::max);
    let mut clone_ids = Vec::new();
    let mut split_ids = Vec::new();
    for i in 0..n {
        if stats.mean_grad(i) < cfg.densify_grad_threshold {
            continue;
        }
        if max_scale(cloud, i) > split_limit {
            split_ids.push(i);
        } else {
            clone_ids.push(i);
        }
    }

    let mut new_points = cloud.gather(&clone_ids);
    let log_div = math::ln(cfg.split_factor);
    for &i in &split_ids {
        let parent = cloud.get(i);
        let scale = parent.scale();
        let rot = scene::rotation_matrix(parent.rotation());
        let center = parent.position();
        for _ in 0..2 {
            let z = Vec3::from_fn(|k, _| {
                let s: f64 = StandardNormal.sample(rng);
                s * scale[k]
            });
            let pos = center + rot * z;
            let mut child = parent.to_point();
            child.position = [pos.x as f32, pos.y as f32, pos.z as f32];
            child.log_scale = parent.log_scale().map(|l| (l - log_div) as f32);
            new_points.push(&child).expect("same SH degree");
        }
    }

    let mut sources: Vec<Option<usize>> = (0..n).map(Some).collect();
    sources.extend(core::iter::repeat_n(None, new_points.len()));
    let mut radii = stats.max_radius.clone();
    radii.resize(sources.len(), 0.0);
    let mut candidate = cloud.clone();
    candidate.append(&new_points).expect("same SH degree");

    let mut is_parent = vec![false; candidate.len()];
    for &i in &split_ids {
        is_parent[i] = true;
    }
    let world_limit = cfg.prune_scale_world * scene_extent;
    let mut keep = Vec::with_capacity(candidate.len());
    let mut pruned = 0;
    for i in 0..candidate.len() {
        if is_parent[i] {
            continue;
        }
        let g = candidate.get(i);
        let mut remove = g.opacity() < cfg.prune_opacity;
        if prune_large {
            remove |= max_scale(&candidate, i) > world_limit || radii[i] > cfg.prune_radius_px;
        }
        if remove {
            pruned += 1;
        } else {
            keep.push(i);
        }
    }

    *cloud = candidate.gather(&keep);
    *stats = DensifyStats::new(cloud.len());
    EditSummary {
        cloned: clone_ids.len(),
        split: split_ids.len(),
        pruned,
        sources: keep.iter().map(|&i| sources[i]).collect(),
    }
}

/// Caps every opacity at `ceiling`. Opacities already below are untouched.
pub fn reset_opacity(cloud: &mut GaussianCloud, ceiling: f64) {
    let cap = math::logit(ceiling) as f32;
    for v in cloud.params_mut(ParamGroup::Opacity) {
        if *v > cap {
            *v = cap;
        }
    }
}
