//! Shared fixtures and oracles for the integration and acceptance suites.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use omnisplat_core::camera::{self, EquirectCamera, Pose};
use omnisplat_core::image::Image;
use omnisplat_core::rasterizer::{
    self, project_gaussian, RenderOptions, RenderOutput, SplatProjection,
};
use omnisplat_core::scene::{GaussianCloud, GaussianPoint, ParamGroup};
use omnisplat_core::sh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const ALPHA_MAX: f64 = 0.99;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

pub fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 && n <= 1.0 {
            // Leave the quaternion unnormalized to exercise that path.
            return q.map(|v| v / n * rng.random_range(0.7..1.3));
        }
    }
}

/// Rotation about a random axis, as rows.
pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let q = random_quat(rng);
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
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
    ]
}

pub fn random_pose(rng: &mut impl Rng) -> Pose {
    let center: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
    Pose::from_center(random_rotation(rng), center).unwrap()
}

pub struct SceneSpec {
    pub count: usize,
    pub sh_degree: usize,
    pub distance: (f64, f64),
    pub scale: (f64, f64),
    pub opacity: (f64, f64),
}

/// Gaussians scattered in every direction around the pose's center,
/// including behind it and across the seam.
pub fn random_scene(rng: &mut impl Rng, pose: &Pose, spec: &SceneSpec) -> GaussianCloud {
    let mut cloud = GaussianCloud::new(spec.sh_degree).unwrap();
    let c = pose.center();
    for _ in 0..spec.count {
        let dir = random_unit(rng);
        let d = rng.random_range(spec.distance.0..spec.distance.1);
        let pos = [c.x + d * dir[0], c.y + d * dir[1], c.z + d * dir[2]];
        let mut coeffs = vec![[0.0; 3]; sh::coeff_count(spec.sh_degree)];
        coeffs[0] = sh::rgb_to_dc(std::array::from_fn(|_| rng.random_range(0.1..0.9)));
        for k in coeffs.iter_mut().skip(1) {
            *k = std::array::from_fn(|_| rng.random_range(-0.15..0.15));
        }
        let scale: [f64; 3] = std::array::from_fn(|_| rng.random_range(spec.scale.0..spec.scale.1));
        let opacity = rng.random_range(spec.opacity.0..spec.opacity.1);
        cloud
            .push(&GaussianPoint::from_activated(
                pos,
                &coeffs,
                random_quat(rng),
                scale,
                opacity,
            ))
            .unwrap();
    }
    cloud
}

pub fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> Image {
    Image::from_fn(w, h, |_, _| {
        std::array::from_fn(|_| rng.random_range(0.0..1.0))
    })
}

pub fn l1(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q).abs())
        .sum::<f64>()
        / n
}

/// `d mean|r - gt| / dr`.
pub fn l1_grad(r: &Image, gt: &Image) -> Image {
    let n = r.data().len() as f64;
    let data = r
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b).signum() / n)
        .collect();
    Image::from_vec(r.width(), r.height(), data).unwrap()
}

/// Smooth surrogate of the renderer and L1 loss around fixed parameters.
///
/// Per pixel, the ordered list of blended splats and whether each hit the
/// alpha ceiling are frozen at construction, as is the sign of every
/// residual `r - gt`. Re-evaluating with perturbed parameters then follows
/// the exact blending formula without the discontinuous skip, stop, clamp
/// and absolute-value decisions, so central differences of it are the
/// derivative the analytic backward pass computes.
pub struct FrozenOracle {
    pub pose: Pose,
    pub cam: EquirectCamera,
    pub opts: RenderOptions,
    pub gt: Image,
    lists: Vec<Vec<(u32, bool)>>,
    touched: HashMap<u32, Vec<usize>>,
    base: HashMap<u32, SplatProjection>,
    base_colors: Vec<[f64; 3]>,
}

fn sample(p: &SplatProjection, px: f64, py: f64, width: f64) -> f64 {
    let mut dx = p.center.x - px;
    dx -= width * (dx / width).round();
    let dy = p.center.y - py;
    let [a, b, c] = p.cov2.conic;
    (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp()
}

impl FrozenOracle {
    pub fn new(
        out: &RenderOutput,
        pose: Pose,
        cam: EquirectCamera,
        opts: RenderOptions,
        gt: Image,
    ) -> Self {
        let (w, h) = (cam.width(), cam.height());
        let wf = w as f64;
        let mut lists = Vec::with_capacity((w * h) as usize);
        let mut touched: HashMap<u32, Vec<usize>> = HashMap::new();
        for y in 0..h {
            for x in 0..w {
                let idx = (y * w + x) as usize;
                let tile = out.grid.tile(out.grid.tile_of(x, y));
                let mut list = Vec::new();
                for &inst in &tile[..out.contributors[idx] as usize] {
                    let p = &out.projections[inst as usize];
                    let g = sample(p, x as f64 + 0.5, y as f64 + 0.5, wf);
                    if (p.opacity * g).min(ALPHA_MAX) < ALPHA_MIN {
                        continue;
                    }
                    list.push((p.gaussian_id, p.opacity * g > ALPHA_MAX));
                    touched.entry(p.gaussian_id).or_default().push(idx);
                }
                lists.push(list);
            }
        }
        let base = out
            .projections
            .iter()
            .map(|p| (p.gaussian_id, *p))
            .collect();
        let mut oracle = Self {
            pose,
            cam,
            opts,
            gt,
            lists,
            touched,
            base,
            base_colors: Vec::new(),
        };
        oracle.base_colors = (0..(w * h) as usize)
            .map(|i| oracle.pixel(i, None))
            .collect();
        oracle
    }

    fn pixel(&self, idx: usize, replaced: Option<&SplatProjection>) -> [f64; 3] {
        let w = self.cam.width();
        let (px, py) = ((idx as u32 % w) as f64 + 0.5, (idx as u32 / w) as f64 + 0.5);
        let mut t = 1.0;
        let mut c = [0.0; 3];
        for &(id, clamped) in &self.lists[idx] {
            let p = match replaced {
                Some(r) if r.gaussian_id == id => r,
                _ => &self.base[&id],
            };
            let alpha = if clamped {
                ALPHA_MAX
            } else {
                p.opacity * sample(p, px, py, w as f64)
            };
            for ch in 0..3 {
                c[ch] += p.color[ch] * alpha * t;
            }
            t *= 1.0 - alpha;
        }
        for ch in 0..3 {
            c[ch] += t * self.opts.background[ch];
        }
        c
    }

    /// Oracle image at the frozen parameters.
    pub fn image(&self) -> Image {
        let data = self.base_colors.iter().flatten().copied().collect();
        Image::from_vec(self.cam.width(), self.cam.height(), data).unwrap()
    }

    /// Change in the L1 loss, with residual signs held at their base values,
    /// when only Gaussian `id` takes the parameters it has in `cloud`.
    pub fn l1_delta(&self, cloud: &GaussianCloud, id: usize) -> f64 {
        let Some(pixels) = self.touched.get(&(id as u32)) else {
            return 0.0;
        };
        let proj = project_gaussian(&cloud.get(id), id as u32, &self.pose, &self.cam, &self.opts)
            .expect("perturbation must not cull a visible gaussian");
        let n = 3.0 * self.cam.width() as f64 * self.cam.height() as f64;
        let mut delta = 0.0;
        let mut last = usize::MAX;
        for &idx in pixels {
            if idx == last {
                continue;
            }
            last = idx;
            let old = self.base_colors[idx];
            let new = self.pixel(idx, Some(&proj));
            let gt = self.gt.data();
            for ch in 0..3 {
                let sign = (old[ch] - gt[3 * idx + ch]).signum();
                delta += sign * (new[ch] - old[ch]);
            }
        }
        delta / n
    }
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
}

/// Compares `analytic` (per-group flat gradients) against central
/// differences of the frozen oracle for every raw parameter.
pub fn check_all_params(
    oracle: &FrozenOracle,
    cloud: &GaussianCloud,
    analytic: &dyn Fn(ParamGroup) -> Vec<f64>,
    rel_tol: f64,
    abs_floor: f64,
) -> GradCheck {
    let mut work = cloud.clone();
    let mut res = GradCheck {
        checked: 0,
        max_rel: 0.0,
        failures: Vec::new(),
    };
    for group in ParamGroup::ALL {
        let stride = cloud.stride(group);
        let grad = analytic(group);
        for idx in 0..cloud.params(group).len() {
            let id = idx / stride.max(1);
            let p0 = cloud.params(group)[idx];
            let h = 1e-4 * (p0.abs() as f64).max(1.0);
            let plus = (p0 as f64 + h) as f32;
            let minus = (p0 as f64 - h) as f32;
            work.params_mut(group)[idx] = plus;
            let lp = oracle.l1_delta(&work, id);
            work.params_mut(group)[idx] = minus;
            let lm = oracle.l1_delta(&work, id);
            work.params_mut(group)[idx] = p0;
            let fd = (lp - lm) / (plus as f64 - minus as f64);
            let a = grad[idx];
            let err = (a - fd).abs();
            let rel = err / a.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
            res.checked += 1;
            if a.abs().max(fd.abs()) >= abs_floor {
                res.max_rel = res.max_rel.max(rel);
            }
            if err >= abs_floor && rel >= rel_tol {
                res.failures
                    .push(format!("{group:?}[{idx}]: analytic {a:e}, fd {fd:e}"));
            }
        }
    }
    res
}

pub fn render_opts(sh_degree: Option<usize>, background: [f64; 3]) -> RenderOptions {
    RenderOptions {
        sh_degree,
        background,
        ..RenderOptions::default()
    }
}

pub fn render(
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &EquirectCamera,
    opts: &RenderOptions,
) -> RenderOutput {
    rasterizer::render(cloud, pose, cam, opts)
}

pub fn yaw_pose(yaw: f64) -> Pose {
    Pose::new(camera::rotation_y(yaw), [0.0; 3]).unwrap()
}

/// Known scene plus posed renders of it.
pub struct Toy {
    pub gt: GaussianCloud,
    pub cam: EquirectCamera,
    pub train: Vec<omnisplat_core::trainer::TrainView>,
    pub test: Vec<omnisplat_core::trainer::TrainView>,
    /// Centers and mean colors of the clusters.
    pub clusters: Vec<([f64; 3], [f64; 3])>,
}

pub const TOY_CLUSTER_RADIUS: f64 = 0.35;

/// `clusters * per_cluster` Gaussians grouped in clusters around the
/// origin, seen from `n_train + n_test` cameras near the origin with random
/// headings.
pub fn toy(
    seed: u64,
    clusters: usize,
    per_cluster: usize,
    width: u32,
    n_train: usize,
    n_test: usize,
) -> Toy {
    use omnisplat_core::trainer::TrainView;
    let mut rng = rng(seed);
    let cam = EquirectCamera::new(width, width / 2).unwrap();
    let mut gt = GaussianCloud::new(0).unwrap();
    let mut centers = Vec::new();
    for _ in 0..clusters {
        let dir = random_unit(&mut rng);
        let d = rng.random_range(2.5..3.2);
        let center = dir.map(|v| v * d);
        let mut mean = [0.0; 3];
        for _ in 0..per_cluster {
            let pos: [f64; 3] = std::array::from_fn(|k| {
                center[k] + rng.random_range(-TOY_CLUSTER_RADIUS..TOY_CLUSTER_RADIUS)
            });
            let rgb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
            let scale: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.06..0.18));
            let opacity = rng.random_range(0.6..0.95);
            gt.push(&GaussianPoint::from_activated(
                pos,
                &[sh::rgb_to_dc(rgb)],
                random_quat(&mut rng),
                scale,
                opacity,
            ))
            .unwrap();
            for k in 0..3 {
                mean[k] += rgb[k] / per_cluster as f64;
            }
        }
        centers.push((center, mean));
    }
    let mut views = Vec::new();
    for _ in 0..n_train + n_test {
        let center: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
        let yaw = camera::rotation_y(rng.random_range(-3.1..3.1));
        let pitch = camera::rotation_x(rng.random_range(-0.2..0.2));
        let rot: [[f64; 3]; 3] = std::array::from_fn(|i| {
            std::array::from_fn(|j| (0..3).map(|k| pitch[i][k] * yaw[k][j]).sum())
        });
        let pose = Pose::from_center(rot, center).unwrap();
        let image = rasterizer::render(&gt, &pose, &cam, &RenderOptions::default()).image;
        views.push(TrainView { image, pose });
    }
    let test = views.split_off(n_train);
    Toy {
        gt,
        cam,
        train: views,
        test,
        clusters: centers,
    }
}

/// One isotropic Gaussian per cluster, sized to the cluster and colored
/// with its mean color.
pub fn coarse_init(toy: &Toy) -> GaussianCloud {
    let mut out = GaussianCloud::new(0).unwrap();
    for (center, rgb) in &toy.clusters {
        out.push(&GaussianPoint::from_activated(
            *center,
            &[sh::rgb_to_dc(*rgb)],
            [1.0, 0.0, 0.0, 0.0],
            [TOY_CLUSTER_RADIUS; 3],
            0.5,
        ))
        .unwrap();
    }
    out
}

/// Mean PSNR of `cloud` over `views`.
pub fn mean_psnr(
    cloud: &GaussianCloud,
    cam: &EquirectCamera,
    views: &[omnisplat_core::trainer::TrainView],
) -> f64 {
    let opts = RenderOptions::default();
    let total: f64 = views
        .iter()
        .map(|v| {
            omnisplat_core::metrics::psnr(
                &rasterizer::render(cloud, &v.pose, cam, &opts).image,
                &v.image,
            )
        })
        .sum();
    total / views.len() as f64
}

/// Copy of `gt` with perturbed centers, scales, rotations, colors and a
/// uniform starting opacity.
pub fn jittered(gt: &GaussianCloud, seed: u64) -> GaussianCloud {
    let mut rng = rng(seed);
    let mut out = GaussianCloud::new(gt.sh_degree()).unwrap();
    for g in gt.iter() {
        let mut p = g.to_point();
        for v in &mut p.position {
            *v += rng.random_range(-0.05..0.05);
        }
        for v in &mut p.log_scale {
            *v += rng.random_range(-0.3..0.3);
        }
        for v in &mut p.rotation {
            *v += rng.random_range(-0.2..0.2);
        }
        for v in &mut p.sh[0] {
            *v += rng.random_range(-0.3..0.3);
        }
        p.opacity_logit = 0.0;
        out.push(&p).unwrap();
    }
    out
}
