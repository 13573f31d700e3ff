//! Tile-based forward renderer for equirectangular panoramas.
//!
//! Pipeline: [`project_gaussian`] for every Gaussian, [`bin_to_tiles`] to
//! generate one instance per overlapped tile (wrapping across the
//! longitude seam), then [`blend_forward`] alpha-blends each pixel against
//! its tile's instances sorted by camera distance `t_r`.
//!
//! [`reference_render`] is a deliberately naive per-pixel loop over every
//! Gaussian; it exists to check the tiled path.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::camera::{self, EquirectCamera, PixelCoord, Pose};
use crate::image::Image;
use crate::math;
use crate::par;
use crate::scene::{self, GaussianCloud, GaussianRef};
use crate::sh;

pub const DEFAULT_TILE_SIZE: u32 = 16;
/// Added to both diagonal entries of the projected covariance (pixels^2).
pub const LOWPASS: f64 = 0.3;
/// Instances with smaller alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Per-instance alpha clamp.
pub const ALPHA_MAX: f64 = 0.99;
/// Blending stops once transmittance would drop below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Gaussians closer than this to the camera center are culled.
pub const NEAR_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub tile_size: u32,
    pub background: [f64; 3],
    /// Active SH degree; `None` uses the cloud's full degree.
    pub sh_degree: Option<usize>,
    pub near_epsilon: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            background: [0.0; 3],
            sh_degree: None,
            near_epsilon: NEAR_EPSILON,
        }
    }
}

impl RenderOptions {
    pub(crate) fn active_degree(&self, cloud_degree: usize) -> usize {
        self.sh_degree.map_or(cloud_degree, |d| d.min(cloud_degree))
    }
}

/// Symmetric 2x2 covariance `[[a, b], [b, c]]` with its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Inverse as `[a, b, c]`.
    pub conic: [f64; 3],
    pub det: f64,
}

impl Cov2 {
    pub fn new(a: f64, b: f64, c: f64) -> Option<Self> {
        let det = a * c - b * b;
        if !(det > 0.0) || !det.is_finite() {
            return None;
        }
        Some(Self {
            a,
            b,
            c,
            conic: [c / det, -b / det, a / det],
            det,
        })
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let mid = 0.5 * (self.a + self.c);
        let disc = math::sqrt((mid * mid - self.det).max(0.0));
        mid + disc
    }
}

/// Screen-space state of one visible Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatProjection {
    pub gaussian_id: u32,
    pub center: PixelCoord,
    pub cov2: Cov2,
    /// Integer-valued 3-sigma radius in pixels.
    pub radius: f64,
    /// Distance to the camera center, `t_r`.
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Camera-space center.
    pub camera_point: nalgebra::Vector3<f64>,
    /// World-space unit view direction used for SH evaluation.
    pub view_dir: [f64; 3],
    /// Channels whose SH color hit the zero clamp.
    pub color_clamped: [bool; 3],
}

/// Why a Gaussian produced no splat for this view. Culling is view-local.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Culled {
    NearCenter,
    Pole,
    Transparent,
    DegenerateCovariance,
}

/// Projects one Gaussian onto the panorama.
pub fn project_gaussian(
    g: &GaussianRef<'_>,
    gaussian_id: u32,
    pose: &Pose,
    cam: &EquirectCamera,
    opts: &RenderOptions,
) -> Result<SplatProjection, Culled> {
    let opacity = g.opacity();
    if opacity < ALPHA_MIN {
        return Err(Culled::Transparent);
    }
    let m = g.position();
    let t = pose.transform(&m);
    if !(t.t_r >= opts.near_epsilon) {
        return Err(Culled::NearCenter);
    }
    let proj = camera::project_equirect(&t, cam).map_err(|_| Culled::NearCenter)?;
    let jac = camera::jacobian_equirect(&t, cam)
        .map_err(|_| Culled::Pole)?
        .0;

    let sigma = scene::build_covariance3d(g.raw_rotation(), g.scale()).to_matrix();
    let tw = jac * pose.rotation();
    let cov = tw * sigma * tw.transpose();
    let cov2 = Cov2::new(cov[(0, 0)] + LOWPASS, cov[(0, 1)], cov[(1, 1)] + LOWPASS)
        .ok_or(Culled::DegenerateCovariance)?;
    let radius = math::ceil(3.0 * math::sqrt(cov2.max_eigenvalue()));

    let v = m - pose.center();
    let v = v / math::norm3(&v);
    let view_dir = [v.x, v.y, v.z];
    let degree = opts.active_degree(g.sh_degree());
    let raw = sh::eval_unclamped(&g.sh_coeffs(), &view_dir, degree);
    let color_clamped = raw.map(|c| c < 0.0);
    let color = raw.map(|c| c.max(0.0));

    Ok(SplatProjection {
        gaussian_id,
        center: proj.pixel,
        cov2,
        radius,
        depth: t.t_r,
        color,
        opacity,
        camera_point: t.t,
        view_dir,
        color_clamped,
    })
}

/// Per-tile lists of instance references (indices into the projection
/// slice), each sorted by `(depth, gaussian_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    tile_size: u32,
    tiles_x: u32,
    tiles_y: u32,
    width: u32,
    height: u32,
    offsets: Vec<usize>,
    instances: Vec<u32>,
}

impl TileGrid {
    pub fn tile_size(&self) -> u32 {
        self.tile_size
    }

    pub fn tiles_x(&self) -> u32 {
        self.tiles_x
    }

    pub fn tiles_y(&self) -> u32 {
        self.tiles_y
    }

    pub fn num_tiles(&self) -> usize {
        self.tiles_x as usize * self.tiles_y as usize
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    /// Instances of tile `index` (row-major), front to back.
    pub fn tile(&self, index: usize) -> &[u32] {
        &self.instances[self.offsets[index]..self.offsets[index + 1]]
    }

    /// Half-open pixel rectangle `(x0, y0, x1, y1)` of tile `index`.
    pub fn tile_rect(&self, index: usize) -> (u32, u32, u32, u32) {
        let tx = index as u32 % self.tiles_x;
        let ty = index as u32 / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size).min(self.width),
            (y0 + self.tile_size).min(self.height),
        )
    }

    /// Tile index containing pixel `(x, y)`.
    pub fn tile_of(&self, x: u32, y: u32) -> usize {
        (y / self.tile_size) as usize * self.tiles_x as usize + (x / self.tile_size) as usize
    }
}

/// Inclusive pixel-column ranges whose centers lie within `[cx - r, cx + r]`,
/// wrapped modulo `width`. At most two ranges.
pub(crate) fn wrapped_column_ranges(cx: f64, r: f64, width: u32) -> ([(u32, u32); 2], usize) {
    let w = width as i64;
    let lo = math::ceil(cx - r - 0.5) as i64;
    let hi = math::floor(cx + r - 0.5) as i64;
    if hi < lo {
        return ([(0, 0); 2], 0);
    }
    if hi - lo + 1 >= w {
        return ([(0, width - 1), (0, 0)], 1);
    }
    let (lo_m, hi_m) = (lo.rem_euclid(w) as u32, hi.rem_euclid(w) as u32);
    if lo_m <= hi_m {
        ([(lo_m, hi_m), (0, 0)], 1)
    } else {
        ([(lo_m, width - 1), (0, hi_m)], 2)
    }
}

pub(crate) fn row_range(cy: f64, r: f64, height: u32) -> Option<(u32, u32)> {
    let lo = (math::ceil(cy - r - 0.5) as i64).max(0);
    let hi = (math::floor(cy + r - 0.5) as i64).min(height as i64 - 1);
    (hi >= lo).then_some((lo as u32, hi as u32))
}

fn overlapped_tiles(
    p: &SplatProjection,
    cam: &EquirectCamera,
    tile_size: u32,
    tiles_x: u32,
    out: &mut Vec<usize>,
) {
    out.clear();
    let Some((y0, y1)) = row_range(p.center.y, p.radius, cam.height()) else {
        return;
    };
    let (ranges, n) = wrapped_column_ranges(p.center.x, p.radius, cam.width());
    let mut cols: Vec<u32> = Vec::new();
    for &(x0, x1) in &ranges[..n] {
        cols.extend(x0 / tile_size..=x1 / tile_size);
    }
    cols.sort_unstable();
    cols.dedup();
    for ty in y0 / tile_size..=y1 / tile_size {
        for &tx in &cols {
            out.push(ty as usize * tiles_x as usize + tx as usize);
        }
    }
}

fn depth_order(projections: &[SplatProjection]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| {
        let (pa, pb) = (&projections[a as usize], &projections[b as usize]);
        pa.depth
            .partial_cmp(&pb.depth)
            .unwrap_or(Ordering::Equal)
            .then(pa.gaussian_id.cmp(&pb.gaussian_id))
    }
}

/// Generates one instance per (projection, overlapped tile) pair and sorts
/// every tile front to back.
pub fn bin_to_tiles(
    projections: &[SplatProjection],
    cam: &EquirectCamera,
    tile_size: u32,
) -> TileGrid {
    assert!(tile_size > 0, "tile size must be positive");
    let tiles_x = cam.width().div_ceil(tile_size);
    let tiles_y = cam.height().div_ceil(tile_size);
    let num_tiles = tiles_x as usize * tiles_y as usize;

    let mut scratch = Vec::new();
    let mut counts = vec![0usize; num_tiles + 1];
    for p in projections {
        overlapped_tiles(p, cam, tile_size, tiles_x, &mut scratch);
        for &t in &scratch {
            counts[t + 1] += 1;
        }
    }
    for i in 0..num_tiles {
        counts[i + 1] += counts[i];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut instances = vec![0u32; offsets[num_tiles]];
    for (i, p) in projections.iter().enumerate() {
        overlapped_tiles(p, cam, tile_size, tiles_x, &mut scratch);
        for &t in &scratch {
            instances[cursor[t]] = i as u32;
            cursor[t] += 1;
        }
    }
    let cmp = depth_order(projections);
    for t in 0..num_tiles {
        instances[offsets[t]..offsets[t + 1]].sort_by(&cmp);
    }
    TileGrid {
        tile_size,
        tiles_x,
        tiles_y,
        width: cam.width(),
        height: cam.height(),
        offsets,
        instances,
    }
}

/// Identifies the inputs a render was produced from.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RenderSignature {
    pub n_gaussians: usize,
    pub pose: Pose,
    pub cam: EquirectCamera,
    pub sh_degree: usize,
    pub background: [f64; 3],
}

/// Rendered panorama plus the forward state the backward pass replays.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    /// Final transmittance per pixel.
    pub transmittance: Vec<f64>,
    /// Per pixel, the length of the tile-list prefix that was blended.
    pub contributors: Vec<u32>,
    pub projections: Vec<SplatProjection>,
    pub grid: TileGrid,
    pub(crate) signature: RenderSignature,
}

impl RenderOutput {
    pub fn background(&self) -> [f64; 3] {
        self.signature.background
    }

    pub fn sh_degree(&self) -> usize {
        self.signature.sh_degree
    }

    pub fn camera(&self) -> &EquirectCamera {
        &self.signature.cam
    }

    /// Largest radius each Gaussian reached in this view (0 if culled).
    pub fn radii(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.signature.n_gaussians];
        for p in &self.projections {
            r[p.gaussian_id as usize] = p.radius;
        }
        r
    }
}

/// Signed horizontal offset wrapped to the shortest representative.
#[inline]
pub(crate) fn wrap_dx(dx: f64, width: f64) -> f64 {
    dx - width * math::round(dx / width)
}

/// Compact per-instance blend state.
#[derive(Clone, Copy)]
pub(crate) struct BlendSplat {
    pub cx: f64,
    pub cy: f64,
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl BlendSplat {
    pub fn from_projection(p: &SplatProjection) -> Self {
        Self {
            cx: p.center.x,
            cy: p.center.y,
            conic: p.cov2.conic,
            opacity: p.opacity,
            color: p.color,
        }
    }

    /// Returns `(dx, dy, G, alpha)`; alpha before the skip test.
    #[inline]
    pub fn sample(&self, px: f64, py: f64, width: f64) -> (f64, f64, f64, f64) {
        let dx = wrap_dx(self.cx - px, width);
        let dy = self.cy - py;
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        let g = math::exp(power);
        (dx, dy, g, (self.opacity * g).min(ALPHA_MAX))
    }
}

struct TileResult {
    color: Vec<[f64; 3]>,
    transmittance: Vec<f64>,
    contributors: Vec<u32>,
}

/// Alpha-blends every pixel against its tile's sorted instances.
pub fn blend_forward(
    grid: &TileGrid,
    projections: &[SplatProjection],
    cam: &EquirectCamera,
    background: [f64; 3],
) -> (Image, Vec<f64>, Vec<u32>) {
    let (w, h) = (cam.width(), cam.height());
    let wf = w as f64;
    let tiles: Vec<TileResult> = par::map_collect(grid.num_tiles(), |t| {
        let splats: Vec<BlendSplat> = grid
            .tile(t)
            .iter()
            .map(|&i| BlendSplat::from_projection(&projections[i as usize]))
            .collect();
        let (x0, y0, x1, y1) = grid.tile_rect(t);
        let n = ((x1 - x0) * (y1 - y0)) as usize;
        let mut out = TileResult {
            color: Vec::with_capacity(n),
            transmittance: Vec::with_capacity(n),
            contributors: Vec::with_capacity(n),
        };
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut t_acc = 1.0;
                let mut c = [0.0; 3];
                let mut last = 0u32;
                for (k, s) in splats.iter().enumerate() {
                    let (_, _, _, alpha) = s.sample(px, py, wf);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    let next_t = t_acc * (1.0 - alpha);
                    if next_t < TRANSMITTANCE_MIN {
                        break;
                    }
                    for ch in 0..3 {
                        c[ch] += s.color[ch] * alpha * t_acc;
                    }
                    t_acc = next_t;
                    last = k as u32 + 1;
                }
                for ch in 0..3 {
                    c[ch] += t_acc * background[ch];
                }
                out.color.push(c);
                out.transmittance.push(t_acc);
                out.contributors.push(last);
            }
        }
        out
    });

    let mut image = Image::new(w, h);
    let npix = w as usize * h as usize;
    let mut transmittance = vec![1.0; npix];
    let mut contributors = vec![0u32; npix];
    for (t, res) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = grid.tile_rect(t);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let idx = y as usize * w as usize + x as usize;
                image.set_pixel(x, y, res.color[k]);
                transmittance[idx] = res.transmittance[k];
                contributors[idx] = res.contributors[k];
                k += 1;
            }
        }
    }
    (image, transmittance, contributors)
}

fn project_all(
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &EquirectCamera,
    opts: &RenderOptions,
) -> Vec<SplatProjection> {
    let projected = par::map_collect(cloud.len(), |i| {
        project_gaussian(&cloud.get(i), i as u32, pose, cam, opts).ok()
    });
    projected.into_iter().flatten().collect()
}

fn signature(
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &EquirectCamera,
    opts: &RenderOptions,
) -> RenderSignature {
    RenderSignature {
        n_gaussians: cloud.len(),
        pose: *pose,
        cam: *cam,
        sh_degree: opts.active_degree(cloud.sh_degree()),
        background: opts.background,
    }
}

/// Full tiled render of `cloud` from `pose`. Deterministic for fixed inputs.
pub fn render(
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &EquirectCamera,
    opts: &RenderOptions,
) -> RenderOutput {
    let projections = project_all(cloud, pose, cam, opts);
    let grid = bin_to_tiles(&projections, cam, opts.tile_size);
    let (image, transmittance, contributors) =
        blend_forward(&grid, &projections, cam, opts.background);
    RenderOutput {
        image,
        transmittance,
        contributors,
        projections,
        grid,
        signature: signature(cloud, pose, cam, opts),
    }
}

/// Brute-force renderer: every pixel visits every projected Gaussian in
/// global `(t_r, id)` order, with no radius cutoff. The returned grid is a
/// single tile spanning the image, so the output is also valid input to
/// the backward pass.
pub fn reference_render(
    cloud: &GaussianCloud,
    pose: &Pose,
    cam: &EquirectCamera,
    opts: &RenderOptions,
) -> RenderOutput {
    let projections = project_all(cloud, pose, cam, opts);
    let mut order: Vec<u32> = (0..projections.len() as u32).collect();
    order.sort_by(depth_order(&projections));

    let (w, h) = (cam.width(), cam.height());
    let npix = w as usize * h as usize;
    let mut image = Image::new(w, h);
    let mut transmittance = vec![1.0; npix];
    let mut contributors = vec![0u32; npix];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t_acc = 1.0;
            let mut c = [0.0; 3];
            let mut last = 0;
            for (k, &i) in order.iter().enumerate() {
                let p = &projections[i as usize];
                let mut dx = p.center.x - px;
                if dx > w as f64 / 2.0 {
                    dx -= w as f64;
                } else if dx < -(w as f64) / 2.0 {
                    dx += w as f64;
                }
                let dy = p.center.y - py;
                let d = nalgebra::Vector2::new(dx, dy);
                let conic = nalgebra::Matrix2::new(
                    p.cov2.conic[0],
                    p.cov2.conic[1],
                    p.cov2.conic[1],
                    p.cov2.conic[2],
                );
                let g = math::exp(-0.5 * d.dot(&(conic * d)));
                let alpha = (p.opacity * g).min(ALPHA_MAX);
                if alpha < ALPHA_MIN {
                    continue;
                }
                if t_acc * (1.0 - alpha) < TRANSMITTANCE_MIN {
                    break;
                }
                for ch in 0..3 {
                    c[ch] += p.color[ch] * alpha * t_acc;
                }
                t_acc *= 1.0 - alpha;
                last = k as u32 + 1;
            }
            for ch in 0..3 {
                c[ch] += t_acc * opts.background[ch];
            }
            image.set_pixel(x, y, c);
            let idx = y as usize * w as usize + x as usize;
            transmittance[idx] = t_acc;
            contributors[idx] = last;
        }
    }
    let side = w.max(h);
    let grid = TileGrid {
        tile_size: side,
        tiles_x: 1,
        tiles_y: 1,
        width: w,
        height: h,
        offsets: vec![0, order.len()],
        instances: order,
    };
    RenderOutput {
        image,
        transmittance,
        contributors,
        projections,
        grid,
        signature: signature(cloud, pose, cam, opts),
    }
}
