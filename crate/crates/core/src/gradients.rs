//! Analytic backward pass of the equirectangular rasterizer.
//!
//! Gradients flow from `dL/dpixel` through alpha blending (replayed back to
//! front per pixel from the stored final transmittance), the 2D Gaussian
//! sample, the conic, the projected covariance `J W Sigma W^T J^T`, and the
//! projection itself. Camera-space position receives two contributions: the
//! mean path through `ds/dt`, and the covariance path through the
//! derivative of the projection Jacobian. Parameter gradients are reported
//! for the raw storage (quaternion before normalization, log-scale, opacity
//! logit), so the optimizer can consume them directly.
//!
//! Accumulation is privatized per tile and reduced in tile order, so the
//! result is identical regardless of thread count.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{self, EquirectCamera, Pose};
use crate::image::Image;
use crate::math::{self, Mat3, Vec3};
use crate::par;
use crate::rasterizer::{BlendSplat, RenderOutput, SplatProjection, ALPHA_MAX, ALPHA_MIN};
use crate::scene::{self, GaussianCloud, ParamGroup};
use crate::sh;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradError {
    #[error("render output does not correspond to the given cloud, pose and camera")]
    StateMismatch,
    #[error("pixel gradient is {got:?}, render is {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },
}

/// Per-Gaussian gradients of one backward pass, plus the uniform-screen
/// position gradient statistics that drive densification.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    sh_coeffs: usize,
    pub d_position: Vec<[f64; 3]>,
    /// `(deg+1)^2` entries per Gaussian, DC first.
    pub d_sh: Vec<[f64; 3]>,
    /// With respect to the raw (unnormalized) quaternion.
    pub d_rotation: Vec<[f64; 4]>,
    pub d_log_scale: Vec<[f64; 3]>,
    pub d_opacity_logit: Vec<f64>,
    /// `dL/dp` of the projected center, pixels.
    pub d_pixel: Vec<[f64; 2]>,
    /// `dL/ds` of the projected center, uniform screen units.
    pub d_screen: Vec<[f64; 2]>,
    /// Sum of `|dL/ds|` over hits.
    pub screen_norm_sum: Vec<f64>,
    pub screen_hits: Vec<u32>,
}

impl GradientBuffer {
    pub fn zeros(n: usize, sh_degree: usize) -> Self {
        let k = sh::coeff_count(sh_degree);
        Self {
            sh_coeffs: k,
            d_position: vec![[0.0; 3]; n],
            d_sh: vec![[0.0; 3]; n * k],
            d_rotation: vec![[0.0; 4]; n],
            d_log_scale: vec![[0.0; 3]; n],
            d_opacity_logit: vec![0.0; n],
            d_pixel: vec![[0.0; 2]; n],
            d_screen: vec![[0.0; 2]; n],
            screen_norm_sum: vec![0.0; n],
            screen_hits: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_opacity_logit.is_empty()
    }

    pub fn sh_coeffs_per_gaussian(&self) -> usize {
        self.sh_coeffs
    }

    pub fn d_sh_of(&self, i: usize) -> &[[f64; 3]] {
        &self.d_sh[i * self.sh_coeffs..(i + 1) * self.sh_coeffs]
    }

    pub fn is_finite(&self) -> bool {
        let f3 = |v: &[[f64; 3]]| v.iter().flatten().all(|x| x.is_finite());
        f3(&self.d_position)
            && f3(&self.d_sh)
            && f3(&self.d_log_scale)
            && self.d_rotation.iter().flatten().all(|x| x.is_finite())
            && self.d_opacity_logit.iter().all(|x| x.is_finite())
            && self.d_screen.iter().flatten().all(|x| x.is_finite())
    }

    /// Flat gradient of one parameter group, laid out like
    /// [`GaussianCloud::params`].
    pub fn group(&self, group: ParamGroup) -> Vec<f64> {
        let k = self.sh_coeffs;
        match group {
            ParamGroup::Position => self.d_position.iter().flatten().copied().collect(),
            ParamGroup::ShDc => self.d_sh.chunks(k).flat_map(|c| c[0]).collect(),
            ParamGroup::ShRest => self
                .d_sh
                .chunks(k)
                .flat_map(|c| c[1..].iter().flatten().copied())
                .collect(),
            ParamGroup::Opacity => self.d_opacity_logit.clone(),
            ParamGroup::Scale => self.d_log_scale.iter().flatten().copied().collect(),
            ParamGroup::Rotation => self.d_rotation.iter().flatten().copied().collect(),
        }
    }

    /// Rebuilds the buffer for an edited cloud: entry `i` copies old entry
    /// `sources[i]`, or is zero for `None`.
    pub fn remap(&self, sources: &[Option<usize>]) -> Self {
        let k = self.sh_coeffs;
        let mut out = Self {
            sh_coeffs: k,
            ..Self::zeros(0, 0)
        };
        for src in sources {
            match *src {
                Some(i) => {
                    out.d_position.push(self.d_position[i]);
                    out.d_sh.extend_from_slice(self.d_sh_of(i));
                    out.d_rotation.push(self.d_rotation[i]);
                    out.d_log_scale.push(self.d_log_scale[i]);
                    out.d_opacity_logit.push(self.d_opacity_logit[i]);
                    out.d_pixel.push(self.d_pixel[i]);
                    out.d_screen.push(self.d_screen[i]);
                    out.screen_norm_sum.push(self.screen_norm_sum[i]);
                    out.screen_hits.push(self.screen_hits[i]);
                }
                None => {
                    out.d_position.push([0.0; 3]);
                    out.d_sh.extend(core::iter::repeat_n([0.0; 3], k));
                    out.d_rotation.push([0.0; 4]);
                    out.d_log_scale.push([0.0; 3]);
                    out.d_opacity_logit.push(0.0);
                    out.d_pixel.push([0.0; 2]);
                    out.d_screen.push([0.0; 2]);
                    out.screen_norm_sum.push(0.0);
                    out.screen_hits.push(0);
                }
            }
        }
        out
    }

    /// Adds another pass's screen-gradient statistics to this buffer.
    pub fn absorb_screen_stats(&mut self, other: &GradientBuffer) {
        for i in 0..self.len().min(other.len()) {
            self.screen_norm_sum[i] += other.screen_norm_sum[i];
            self.screen_hits[i] += other.screen_hits[i];
        }
    }
}

/// Mean `|dL/ds|` over the passes in which Gaussian `id` was visible; zero
/// if it never was.
pub fn d_screen_norm(buf: &GradientBuffer, id: usize) -> f64 {
    match buf.screen_hits[id] {
        0 => 0.0,
        n => buf.screen_norm_sum[id] / n as f64,
    }
}

/// Screen-space gradient of one projected splat, summed over its instances.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    d_pixel: [f64; 2],
    /// With respect to the conic entries `(a, b, c)` where
    /// `power = -0.5 (a dx^2 + c dy^2) - b dx dy`.
    d_conic: [f64; 3],
    d_color: [f64; 3],
    d_opacity: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for i in 0..2 {
            self.d_pixel[i] += o.d_pixel[i];
        }
        for i in 0..3 {
            self.d_conic[i] += o.d_conic[i];
            self.d_color[i] += o.d_color[i];
        }
        self.d_opacity += o.d_opacity;
    }
}

fn blend_backward(out: &RenderOutput, d_image: &Image) -> Vec<SplatGrad> {
    let grid = &out.grid;
    let cam = out.camera();
    let (w, wf) = (cam.width() as usize, cam.width() as f64);
    let bg = out.background();

    let per_tile: Vec<Vec<SplatGrad>> = par::map_collect(grid.num_tiles(), |t| {
        let list = grid.tile(t);
        let splats: Vec<BlendSplat> = list
            .iter()
            .map(|&i| BlendSplat::from_projection(&out.projections[i as usize]))
            .collect();
        let mut acc = vec![SplatGrad::default(); list.len()];
        let (x0, y0, x1, y1) = grid.tile_rect(t);
        for y in y0..y1 {
            for x in x0..x1 {
                let idx = y as usize * w + x as usize;
                let n = out.contributors[idx] as usize;
                if n == 0 {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let d_c = d_image.pixel(x, y);
                let t_final = out.transmittance[idx];
                let bg_dot = bg[0] * d_c[0] + bg[1] * d_c[1] + bg[2] * d_c[2];
                let mut t_acc = t_final;
                let mut accum = [0.0; 3];
                let mut last_alpha = 0.0;
                let mut last_color = [0.0; 3];
                for k in (0..n).rev() {
                    let s = &splats[k];
                    let (dx, dy, g, alpha) = s.sample(px, py, wf);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    t_acc /= 1.0 - alpha;
                    let a = &mut acc[k];
                    let weight = alpha * t_acc;
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        a.d_color[ch] += weight * d_c[ch];
                        accum[ch] = last_alpha * last_color[ch] + (1.0 - last_alpha) * accum[ch];
                        d_alpha += (s.color[ch] - accum[ch]) * d_c[ch];
                    }
                    last_alpha = alpha;
                    last_color = s.color;
                    d_alpha *= t_acc;
                    d_alpha -= t_final / (1.0 - alpha) * bg_dot;

                    if s.opacity * g > ALPHA_MAX {
                        // Clamped alpha is locally constant.
                        continue;
                    }
                    a.d_opacity += g * d_alpha;
                    let d_power = s.opacity * d_alpha * g;
                    let [ca, cb, cc] = s.conic;
                    a.d_pixel[0] -= d_power * (ca * dx + cb * dy);
                    a.d_pixel[1] -= d_power * (cb * dx + cc * dy);
                    a.d_conic[0] -= 0.5 * d_power * dx * dx;
                    a.d_conic[1] -= d_power * dx * dy;
                    a.d_conic[2] -= 0.5 * d_power * dy * dy;
                }
            }
        }
        acc
    });

    let mut total = vec![SplatGrad::default(); out.projections.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        for (slot, &proj) in grid.tile(t).iter().enumerate() {
            total[proj as usize].add(&acc[slot]);
        }
    }
    total
}

struct ParamGrad {
    d_position: [f64; 3],
    d_sh: [[f64; 3]; 16],
    d_rotation: [f64; 4],
    d_log_scale: [f64; 3],
    d_opacity_logit: f64,
    d_pixel: [f64; 2],
    d_screen: [f64; 2],
}

/// `dL/dq` for the unit quaternion `q = (w, x, y, z)` given `dL/dR`.
pub fn rotation_matrix_vjp(q: [f64; 4], d_r: &nalgebra::Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |i: usize, j: usize| d_r[(i, j)];
    [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ]
}

fn splat_param_grad(
    p: &SplatProjection,
    sg: &SplatGrad,
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &EquirectCamera,
    sh_degree: usize,
) -> ParamGrad {
    let g = cloud.get(p.gaussian_id as usize);
    let t = camera::CameraSpacePoint::new(p.camera_point);
    let w_rot = pose.rotation();

    // Conic -> projected covariance.
    let conic = nalgebra::Matrix2::new(
        p.cov2.conic[0],
        p.cov2.conic[1],
        p.cov2.conic[1],
        p.cov2.conic[2],
    );
    let g_conic = nalgebra::Matrix2::new(
        sg.d_conic[0],
        0.5 * sg.d_conic[1],
        0.5 * sg.d_conic[1],
        sg.d_conic[2],
    );
    let d_cov2 = -(conic * g_conic * conic);

    // Projected covariance -> (J W) and Sigma.
    let jac = camera::jacobian_equirect(&t, cam)
        .expect("visible splats are off the pole")
        .0;
    let tw = jac * w_rot;
    let q_raw = g.raw_rotation();
    let q = scene::normalize_quat(q_raw);
    let scale = g.scale();
    let rot = scene::rotation_matrix(q);
    let m_half = rot * Mat3::from_diagonal(&Vec3::from(scale));
    let sigma = m_half * m_half.transpose();
    let d_tw = 2.0 * d_cov2 * tw * sigma;
    let d_sigma = tw.transpose() * d_cov2 * tw;
    let d_jac = d_tw * w_rot.transpose();

    let d_jac_dt =
        camera::jacobian_equirect_derivative(&t, cam).expect("visible splats are off the pole");
    let mut d_t = Vec3::from_fn(|k, _| d_jac.component_mul(&d_jac_dt[k]).sum());

    // Mean path: pixel -> screen -> camera space.
    let [kx, ky] = cam.screen_to_pixel_scale();
    let d_screen = [sg.d_pixel[0] * kx, sg.d_pixel[1] * ky];
    let ds_dt = camera::screen_jacobian(&t).expect("visible splats are off the pole");
    d_t += ds_dt.transpose() * nalgebra::Vector2::new(d_screen[0], d_screen[1]);

    let mut d_m = w_rot.transpose() * d_t;

    // View-dependent color.
    let mut d_color = sg.d_color;
    for ch in 0..3 {
        if p.color_clamped[ch] {
            d_color[ch] = 0.0;
        }
    }
    let basis = sh::basis(&p.view_dir, sh_degree);
    let mut d_sh = [[0.0; 3]; 16];
    for k in 0..sh::coeff_count(sh_degree) {
        d_sh[k] = d_color.map(|c| c * basis[k]);
    }
    if sh_degree > 0 {
        let coeffs = g.sh_coeffs();
        let grads = sh::basis_gradient(&p.view_dir, sh_degree);
        let mut d_dir = Vec3::zeros();
        for k in 1..sh::coeff_count(sh_degree) {
            let w =
                coeffs[k][0] * d_color[0] + coeffs[k][1] * d_color[1] + coeffs[k][2] * d_color[2];
            d_dir += w * Vec3::from(grads[k]);
        }
        let dir = Vec3::from(p.view_dir);
        let dist = math::norm3(&(g.position() - pose.center()));
        d_m += (d_dir - dir * dir.dot(&d_dir)) / dist;
    }

    // Sigma = M M^T with M = R diag(S).
    let d_m_half = 2.0 * d_sigma * m_half;
    let mut d_scale = [0.0; 3];
    let mut d_rot = Mat3::zeros();
    for i in 0..3 {
        for k in 0..3 {
            d_scale[k] += d_m_half[(i, k)] * rot[(i, k)];
            d_rot[(i, k)] = d_m_half[(i, k)] * scale[k];
        }
    }
    let d_q = rotation_matrix_vjp(q, &d_rot);
    let q_norm = math::sqrt(q_raw.iter().map(|v| v * v).sum());
    let q_dot = (0..4).map(|i| q[i] * d_q[i]).sum::<f64>();
    let d_rotation: [f64; 4] = core::array::from_fn(|i| (d_q[i] - q[i] * q_dot) / q_norm);

    let d_log_scale: [f64; 3] = core::array::from_fn(|k| d_scale[k] * scale[k]);
    let o = p.opacity;

    ParamGrad {
        d_position: [d_m.x, d_m.y, d_m.z],
        d_sh,
        d_rotation,
        d_log_scale,
        d_opacity_logit: sg.d_opacity * o * (1.0 - o),
        d_pixel: sg.d_pixel,
        d_screen,
    }
}

/// Propagates `d_image = dL/d(rendered pixel)` to every Gaussian parameter.
pub fn backward(
    out: &RenderOutput,
    d_image: &Image,
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &EquirectCamera,
) -> Result<GradientBuffer, GradError> {
    let sig = &out.signature;
    if sig.n_gaussians != cloud.len() || sig.pose != *pose || sig.cam != *cam {
        return Err(GradError::StateMismatch);
    }
    if out
        .projections
        .iter()
        .any(|p| p.gaussian_id as usize >= cloud.len())
    {
        return Err(GradError::StateMismatch);
    }
    if !d_image.same_size(&out.image) {
        return Err(GradError::DimensionMismatch {
            expected: (out.image.width(), out.image.height()),
            got: (d_image.width(), d_image.height()),
        });
    }

    let splat_grads = blend_backward(out, d_image);
    let sh_degree = sig.sh_degree;
    let per_splat: Vec<ParamGrad> = par::map_collect(out.projections.len(), |i| {
        splat_param_grad(
            &out.projections[i],
            &splat_grads[i],
            cloud,
            pose,
            cam,
            sh_degree,
        )
    });

    let mut buf = GradientBuffer::zeros(cloud.len(), cloud.sh_degree());
    let k = buf.sh_coeffs;
    for (p, pg) in out.projections.iter().zip(per_splat) {
        let id = p.gaussian_id as usize;
        buf.d_position[id] = pg.d_position;
        buf.d_sh[id * k..(id + 1) * k].copy_from_slice(&pg.d_sh[..k]);
        buf.d_rotation[id] = pg.d_rotation;
        buf.d_log_scale[id] = pg.d_log_scale;
        buf.d_opacity_logit[id] = pg.d_opacity_logit;
        buf.d_pixel[id] = pg.d_pixel;
        buf.d_screen[id] = pg.d_screen;
        buf.screen_norm_sum[id] =
            math::sqrt(pg.d_screen[0] * pg.d_screen[0] + pg.d_screen[1] * pg.d_screen[1]);
        buf.screen_hits[id] = 1;
    }
    Ok(buf)
}
