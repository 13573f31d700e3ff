use alloc::vec;
use alloc::vec::Vec;

use crate::gradients::GradientBuffer;
use crate::math;
use crate::scene::{GaussianCloud, ParamGroup};

use super::config::TrainConfig;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Per-group learning rates; the position rate decays log-linearly from
/// `position_init` to `position_final` over `decay_steps` iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub position_init: f64,
    pub position_final: f64,
    pub decay_steps: u64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl LrSchedule {
    pub fn from_config(cfg: &TrainConfig, scene_extent: f64) -> Self {
        Self {
            position_init: cfg.lr_position_init * scene_extent,
            position_final: cfg.lr_position_final * scene_extent,
            decay_steps: cfg.iterations,
            sh_dc: cfg.lr_sh_dc,
            sh_rest: cfg.lr_sh_rest,
            opacity: cfg.lr_opacity,
            scale: cfg.lr_scale,
            rotation: cfg.lr_rotation,
        }
    }

    /// Uniform rate for every group, no decay.
    pub fn constant(lr: f64) -> Self {
        Self {
            position_init: lr,
            position_final: lr,
            decay_steps: 0,
            sh_dc: lr,
            sh_rest: lr,
            opacity: lr,
            scale: lr,
            rotation: lr,
        }
    }

    pub fn lr(&self, group: ParamGroup, iteration: u64) -> f64 {
        match group {
            ParamGroup::Position => self.position_lr(iteration),
            ParamGroup::ShDc => self.sh_dc,
            ParamGroup::ShRest => self.sh_rest,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Scale => self.scale,
            ParamGroup::Rotation => self.rotation,
        }
    }

    fn position_lr(&self, iteration: u64) -> f64 {
        let (a, b) = (self.position_init, self.position_final);
        if self.decay_steps == 0 || a <= 0.0 || b <= 0.0 || a == b {
            return a;
        }
        let t = (iteration as f64 / self.decay_steps as f64).clamp(0.0, 1.0);
        math::exp(math::ln(a) * (1.0 - t) + math::ln(b) * t)
    }
}

/// First and second moments of one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam state for all six parameter groups, in [`ParamGroup::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub step: u64,
    pub groups: Vec<Moments>,
}

fn group_index(group: ParamGroup) -> usize {
    ParamGroup::ALL
        .iter()
        .position(|g| *g == group)
        .expect("listed group")
}

impl AdamState {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let groups = ParamGroup::ALL
            .iter()
            .map(|&g| {
                let n = cloud.params(g).len();
                Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                }
            })
            .collect();
        Self { step: 0, groups }
    }

    pub fn moments(&self, group: ParamGroup) -> &Moments {
        &self.groups[group_index(group)]
    }

    /// True if the moment arrays fit `cloud`.
    pub fn matches(&self, cloud: &GaussianCloud) -> bool {
        self.groups.len() == ParamGroup::ALL.len()
            && ParamGroup::ALL.iter().all(|&g| {
                let m = self.moments(g);
                m.m.len() == cloud.params(g).len() && m.v.len() == m.m.len()
            })
    }

    /// Moments for an edited cloud: entry `i` copies old Gaussian
    /// `sources[i]`; `None` starts from zero.
    pub fn remap(&self, cloud: &GaussianCloud, sources: &[Option<usize>]) -> Self {
        let groups = ParamGroup::ALL
            .iter()
            .map(|&g| {
                let stride = cloud.stride(g);
                let old = self.moments(g);
                let mut out = Moments {
                    m: Vec::with_capacity(sources.len() * stride),
                    v: Vec::with_capacity(sources.len() * stride),
                };
                for src in sources {
                    match *src {
                        Some(i) => {
                            out.m
                                .extend_from_slice(&old.m[i * stride..(i + 1) * stride]);
                            out.v
                                .extend_from_slice(&old.v[i * stride..(i + 1) * stride]);
                        }
                        None => {
                            out.m.extend(core::iter::repeat_n(0.0, stride));
                            out.v.extend(core::iter::repeat_n(0.0, stride));
                        }
                    }
                }
                out
            })
            .collect();
        Self {
            step: self.step,
            groups,
        }
    }

    pub fn zero_group(&mut self, group: ParamGroup) {
        let m = &mut self.groups[group_index(group)];
        m.m.iter_mut().for_each(|v| *v = 0.0);
        m.v.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// One Adam update of every parameter group. `iteration` selects the
/// scheduled learning rate; bias correction uses the state's own step count.
pub fn adam_step(
    cloud: &mut GaussianCloud,
    grads: &GradientBuffer,
    state: &mut AdamState,
    lr: &LrSchedule,
    iteration: u64,
) {
    assert_eq!(
        grads.len(),
        cloud.len(),
        "gradient buffer does not match the cloud"
    );
    assert!(
        state.matches(cloud),
        "optimizer state does not match the cloud"
    );
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(BETA1, t);
    let bc2 = 1.0 - math::powi(BETA2, t);
    for group in ParamGroup::ALL {
        let g = grads.group(group);
        let rate = lr.lr(group, iteration);
        let moments = &mut state.groups[group_index(group)];
        let params = cloud.params_mut(group);
        for i in 0..params.len() {
            let m = BETA1 * moments.m[i] + (1.0 - BETA1) * g[i];
            let v = BETA2 * moments.v[i] + (1.0 - BETA2) * g[i] * g[i];
            moments.m[i] = m;
            moments.v[i] = v;
            let update = rate * (m / bc1) / (math::sqrt(v / bc2) + EPSILON);
            params[i] = (params[i] as f64 - update) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPoint;
    use approx::assert_relative_eq;

    fn one() -> GaussianCloud {
        let mut c = GaussianCloud::new(0).unwrap();
        c.push(&GaussianPoint::from_activated(
            [0.0, 0.0, 1.0],
            &[[0.0; 3]],
            [1.0, 0.0, 0.0, 0.0],
            [0.1; 3],
            0.5,
        ))
        .unwrap();
        c
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut c = one();
        let before = c.clone();
        let mut st = AdamState::new(&c);
        adam_step(
            &mut c,
            &GradientBuffer::zeros(1, 0),
            &mut st,
            &LrSchedule::constant(0.1),
            1,
        );
        assert_eq!(c, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut c = one();
        let mut st = AdamState::new(&c);
        let mut g = GradientBuffer::zeros(1, 0);
        g.d_opacity_logit[0] = 1.0;
        adam_step(&mut c, &g, &mut st, &LrSchedule::constant(0.1), 1);
        assert_relative_eq!(
            c.params(ParamGroup::Opacity)[0] as f64,
            -0.1,
            epsilon = 1e-7
        );
    }

    #[test]
    fn position_rate_decays_log_linearly() {
        let s = LrSchedule {
            position_init: 1e-2,
            position_final: 1e-4,
            decay_steps: 100,
            ..LrSchedule::constant(0.0)
        };
        assert_relative_eq!(s.lr(ParamGroup::Position, 0), 1e-2, max_relative = 1e-12);
        assert_relative_eq!(s.lr(ParamGroup::Position, 50), 1e-3, max_relative = 1e-12);
        assert_relative_eq!(s.lr(ParamGroup::Position, 100), 1e-4, max_relative = 1e-12);
        assert_relative_eq!(s.lr(ParamGroup::Position, 500), 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn remap_zero_fills() {
        let mut c = one();
        let mut st = AdamState::new(&c);
        let mut g = GradientBuffer::zeros(1, 0);
        g.d_position[0] = [1.0, 2.0, 3.0];
        adam_step(&mut c, &g, &mut st, &LrSchedule::constant(0.1), 1);
        let c2 = c.gather(&[0, 0]);
        let st2 = st.remap(&c2, &[None, Some(0)]);
        assert!(st2.matches(&c2));
        let m = &st2.moments(ParamGroup::Position).m;
        assert_eq!(&m[..3], &[0.0; 3]);
        assert_relative_eq!(m[4], 0.2, epsilon = 1e-12);
    }
}
