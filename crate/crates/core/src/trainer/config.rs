/// Every knob of the reconstruction loop. Scene-relative quantities
/// (position learning rate, split and prune scales) are fractions of the
/// scene extent.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub lambda_ssim: f64,
    pub iterations: u64,
    pub densify_until: u64,
    pub densify_interval: u64,
    pub opacity_reset_interval: u64,
    /// Mean `|dL/ds|` in uniform screen units.
    pub densify_grad_threshold: f64,
    pub scale_split_threshold: f64,
    pub split_factor: f64,
    pub prune_opacity: f64,
    pub prune_scale_world: f64,
    pub prune_radius_px: f64,
    pub opacity_reset_ceiling: f64,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    /// Iterations between SH degree increments.
    pub sh_increase_interval: u64,
    pub sh_degree: usize,
    pub mask_bottom_fraction: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            iterations: 30_000,
            densify_until: 15_000,
            densify_interval: 100,
            opacity_reset_interval: 3000,
            densify_grad_threshold: 2e-4,
            scale_split_threshold: 0.01,
            split_factor: 1.6,
            prune_opacity: 0.005,
            prune_scale_world: 0.1,
            prune_radius_px: 20.0,
            opacity_reset_ceiling: 0.01,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh_dc: 2.5e-3,
            lr_sh_rest: 2.5e-3 / 20.0,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            sh_increase_interval: 1000,
            sh_degree: 3,
            mask_bottom_fraction: 0.0,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid training configuration: {0}")]
pub struct ConfigError(pub &'static str);

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(ConfigError("lambda_ssim must lie in [0, 1]"));
        }
        if self.densify_interval == 0
            || self.opacity_reset_interval == 0
            || self.sh_increase_interval == 0
        {
            return Err(ConfigError("intervals must be positive"));
        }
        let thresholds = [
            self.densify_grad_threshold,
            self.scale_split_threshold,
            self.prune_opacity,
            self.prune_scale_world,
            self.prune_radius_px,
        ];
        if !thresholds.into_iter().all(positive) {
            return Err(ConfigError("thresholds must be positive"));
        }
        if !(self.split_factor.is_finite() && self.split_factor > 1.0) {
            return Err(ConfigError("split_factor must exceed 1"));
        }
        if !(self.opacity_reset_ceiling > 0.0 && self.opacity_reset_ceiling < 1.0) {
            return Err(ConfigError("opacity_reset_ceiling must lie in (0, 1)"));
        }
        let lrs = [
            self.lr_position_init,
            self.lr_position_final,
            self.lr_sh_dc,
            self.lr_sh_rest,
            self.lr_opacity,
            self.lr_scale,
            self.lr_rotation,
        ];
        if !lrs.into_iter().all(|v| v.is_finite() && v >= 0.0) {
            return Err(ConfigError(
                "learning rates must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.mask_bottom_fraction) {
            return Err(ConfigError("mask_bottom_fraction must lie in [0, 1)"));
        }
        if self.sh_degree > crate::sh::MAX_DEGREE {
            return Err(ConfigError("sh_degree must be at most 3"));
        }
        if !self.background.iter().all(|v| v.is_finite()) {
            return Err(ConfigError("background must be finite"));
        }
        Ok(())
    }
}
