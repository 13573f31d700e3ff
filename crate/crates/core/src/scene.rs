//! The Gaussian cloud and its derived quantities.
//!
//! Parameters are stored raw, exactly as the optimizer sees them: positions,
//! SH coefficients, a quaternion that is normalized on use, log-scales, and
//! an opacity logit. Storage is `f32` (the checkpoint precision); every
//! derived quantity is computed in `f64`.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math::{self, Mat3, Vec3};
use crate::sh;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("point cloud is empty")]
    EmptyPointCloud,
    #[error("SH degree {0} is not supported (max 3)")]
    UnsupportedShDegree(usize),
    #[error("expected {expected} SH coefficients, got {got}")]
    ShCountMismatch { expected: usize, got: usize },
    #[error("parameter group {group:?} has {got} values, expected {expected}")]
    LengthMismatch {
        group: ParamGroup,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in parameter group {group:?} of gaussian {index}")]
    NonFinite { group: ParamGroup, index: usize },
}

/// Optimizer-facing parameter groups. Each group is a flat `f32` array with
/// a fixed per-Gaussian stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ParamGroup {
    Position,
    ShDc,
    ShRest,
    Opacity,
    Scale,
    Rotation,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Position,
        ParamGroup::ShDc,
        ParamGroup::ShRest,
        ParamGroup::Opacity,
        ParamGroup::Scale,
        ParamGroup::Rotation,
    ];
}

/// One Gaussian's raw parameters, owned.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPoint {
    pub position: [f32; 3],
    /// `(deg+1)^2` RGB coefficients, DC first.
    pub sh: Vec<[f32; 3]>,
    /// Quaternion `(w, x, y, z)`, not necessarily unit length.
    pub rotation: [f32; 4],
    pub log_scale: [f32; 3],
    pub opacity_logit: f32,
}

impl GaussianPoint {
    /// Builds raw parameters from activated values.
    pub fn from_activated(
        position: [f64; 3],
        sh: &[[f64; 3]],
        rotation: [f64; 4],
        scale: [f64; 3],
        opacity: f64,
    ) -> Self {
        Self {
            position: position.map(|v| v as f32),
            sh: sh.iter().map(|c| c.map(|v| v as f32)).collect(),
            rotation: rotation.map(|v| v as f32),
            log_scale: scale.map(|v| math::ln(v) as f32),
            opacity_logit: math::logit(opacity) as f32,
        }
    }
}

/// Borrowed view of one Gaussian inside a cloud.
#[derive(Debug, Clone, Copy)]
pub struct GaussianRef<'a> {
    position: &'a [f32],
    sh_dc: &'a [f32],
    sh_rest: &'a [f32],
    rotation: &'a [f32],
    log_scale: &'a [f32],
    opacity_logit: f32,
    sh_degree: usize,
}

impl GaussianRef<'_> {
    pub fn position(&self) -> nalgebra::Vector3<f64> {
        Vec3::new(
            self.position[0] as f64,
            self.position[1] as f64,
            self.position[2] as f64,
        )
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    /// SH coefficients padded to degree 3 with zeros.
    pub fn sh_coeffs(&self) -> [[f64; 3]; 16] {
        let mut out = [[0.0; 3]; 16];
        out[0] = [
            self.sh_dc[0] as f64,
            self.sh_dc[1] as f64,
            self.sh_dc[2] as f64,
        ];
        for (k, c) in self.sh_rest.chunks_exact(3).enumerate() {
            out[k + 1] = [c[0] as f64, c[1] as f64, c[2] as f64];
        }
        out
    }

    pub fn raw_rotation(&self) -> [f64; 4] {
        core::array::from_fn(|i| self.rotation[i] as f64)
    }

    /// Normalized rotation quaternion `(w, x, y, z)`.
    pub fn rotation(&self) -> [f64; 4] {
        normalize_quat(self.raw_rotation())
    }

    pub fn log_scale(&self) -> [f64; 3] {
        core::array::from_fn(|i| self.log_scale[i] as f64)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale().map(math::exp)
    }

    pub fn opacity_logit(&self) -> f64 {
        self.opacity_logit as f64
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit as f64)
    }

    pub fn to_point(&self) -> GaussianPoint {
        let mut sh = Vec::with_capacity(sh::coeff_count(self.sh_degree));
        sh.push([self.sh_dc[0], self.sh_dc[1], self.sh_dc[2]]);
        sh.extend(self.sh_rest.chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
        GaussianPoint {
            position: [self.position[0], self.position[1], self.position[2]],
            sh,
            rotation: [
                self.rotation[0],
                self.rotation[1],
                self.rotation[2],
                self.rotation[3],
            ],
            log_scale: [self.log_scale[0], self.log_scale[1], self.log_scale[2]],
            opacity_logit: self.opacity_logit,
        }
    }
}

/// Structure-of-arrays Gaussian scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    sh_degree: usize,
    positions: Vec<f32>,
    sh_dc: Vec<f32>,
    sh_rest: Vec<f32>,
    opacity_logits: Vec<f32>,
    log_scales: Vec<f32>,
    rotations: Vec<f32>,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize) -> Result<Self, SceneError> {
        if sh_degree > sh::MAX_DEGREE {
            return Err(SceneError::UnsupportedShDegree(sh_degree));
        }
        Ok(Self {
            sh_degree,
            positions: Vec::new(),
            sh_dc: Vec::new(),
            sh_rest: Vec::new(),
            opacity_logits: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
        })
    }

    /// Assembles a cloud from flat parameter arrays, validating lengths and
    /// finiteness.
    pub fn from_groups(
        sh_degree: usize,
        groups: impl IntoIterator<Item = (ParamGroup, Vec<f32>)>,
    ) -> Result<Self, SceneError> {
        let mut cloud = Self::new(sh_degree)?;
        for (group, values) in groups {
            *cloud.group_vec_mut(group) = values;
        }
        let n = cloud.opacity_logits.len();
        for group in ParamGroup::ALL {
            let expected = n * cloud.stride(group);
            let got = cloud.params(group).len();
            if got != expected {
                return Err(SceneError::LengthMismatch {
                    group,
                    expected,
                    got,
                });
            }
        }
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn stride(&self, group: ParamGroup) -> usize {
        match group {
            ParamGroup::Position | ParamGroup::ShDc | ParamGroup::Scale => 3,
            ParamGroup::ShRest => 3 * (sh::coeff_count(self.sh_degree) - 1),
            ParamGroup::Opacity => 1,
            ParamGroup::Rotation => 4,
        }
    }

    pub fn params(&self, group: ParamGroup) -> &[f32] {
        match group {
            ParamGroup::Position => &self.positions,
            ParamGroup::ShDc => &self.sh_dc,
            ParamGroup::ShRest => &self.sh_rest,
            ParamGroup::Opacity => &self.opacity_logits,
            ParamGroup::Scale => &self.log_scales,
            ParamGroup::Rotation => &self.rotations,
        }
    }

    pub fn params_mut(&mut self, group: ParamGroup) -> &mut [f32] {
        self.group_vec_mut(group)
    }

    fn group_vec_mut(&mut self, group: ParamGroup) -> &mut Vec<f32> {
        match group {
            ParamGroup::Position => &mut self.positions,
            ParamGroup::ShDc => &mut self.sh_dc,
            ParamGroup::ShRest => &mut self.sh_rest,
            ParamGroup::Opacity => &mut self.opacity_logits,
            ParamGroup::Scale => &mut self.log_scales,
            ParamGroup::Rotation => &mut self.rotations,
        }
    }

    pub fn get(&self, i: usize) -> GaussianRef<'_> {
        let rest = self.stride(ParamGroup::ShRest);
        GaussianRef {
            position: &self.positions[3 * i..3 * i + 3],
            sh_dc: &self.sh_dc[3 * i..3 * i + 3],
            sh_rest: &self.sh_rest[rest * i..rest * (i + 1)],
            rotation: &self.rotations[4 * i..4 * i + 4],
            log_scale: &self.log_scales[3 * i..3 * i + 3],
            opacity_logit: self.opacity_logits[i],
            sh_degree: self.sh_degree,
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = GaussianRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn push(&mut self, p: &GaussianPoint) -> Result<(), SceneError> {
        let expected = sh::coeff_count(self.sh_degree);
        if p.sh.len() != expected {
            return Err(SceneError::ShCountMismatch {
                expected,
                got: p.sh.len(),
            });
        }
        self.positions.extend_from_slice(&p.position);
        self.sh_dc.extend_from_slice(&p.sh[0]);
        for c in &p.sh[1..] {
            self.sh_rest.extend_from_slice(c);
        }
        self.rotations.extend_from_slice(&p.rotation);
        self.log_scales.extend_from_slice(&p.log_scale);
        self.opacity_logits.push(p.opacity_logit);
        Ok(())
    }

    /// New cloud holding the Gaussians at `indices`, in that order.
    /// Indices may repeat.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.sh_degree).expect("degree already validated");
        for group in ParamGroup::ALL {
            let stride = self.stride(group);
            let src = self.params(group);
            let dst = out.group_vec_mut(group);
            dst.reserve(indices.len() * stride);
            for &i in indices {
                dst.extend_from_slice(&src[i * stride..(i + 1) * stride]);
            }
        }
        out
    }

    /// Appends every Gaussian of `other`; SH degrees must match.
    pub fn append(&mut self, other: &GaussianCloud) -> Result<(), SceneError> {
        if other.sh_degree != self.sh_degree {
            return Err(SceneError::ShCountMismatch {
                expected: sh::coeff_count(self.sh_degree),
                got: sh::coeff_count(other.sh_degree),
            });
        }
        for group in ParamGroup::ALL {
            let src = other.params(group).to_vec();
            self.group_vec_mut(group).extend_from_slice(&src);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for group in ParamGroup::ALL {
            let stride = self.stride(group);
            if let Some(pos) = self.params(group).iter().position(|v| !v.is_finite()) {
                return Err(SceneError::NonFinite {
                    group,
                    index: pos / stride.max(1),
                });
            }
        }
        Ok(())
    }
}

/// Symmetric 3x3 covariance, upper triangle `[xx, xy, xz, yy, yz, zz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov3(pub [f64; 6]);

impl Cov3 {
    pub fn to_matrix(&self) -> nalgebra::Matrix3<f64> {
        let [a, b, c, d, e, f] = self.0;
        Mat3::new(a, b, c, b, d, e, c, e, f)
    }

    pub fn from_matrix(m: &nalgebra::Matrix3<f64>) -> Self {
        Self([
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 2)],
        ])
    }
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = math::sqrt(q.iter().map(|v| v * v).sum());
    q.map(|v| v / n)
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: [f64; 4]) -> nalgebra::Matrix3<f64> {
    let [w, x, y, z] = q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Sigma = R diag(S)^2 R^T`. The quaternion is normalized first.
pub fn build_covariance3d(q: [f64; 4], scale: [f64; 3]) -> Cov3 {
    let r = rotation_matrix(normalize_quat(q));
    let m = r * Mat3::from_diagonal(&Vec3::from(scale));
    Cov3::from_matrix(&(m * m.transpose()))
}

/// Seeds one Gaussian per colored point: DC color from the point color,
/// identity rotation, isotropic scale equal to the mean distance to the
/// three nearest neighbors, opacity 0.1.
pub fn init_from_points(
    points: &[([f64; 3], [f64; 3])],
    sh_degree: usize,
) -> Result<GaussianCloud, SceneError> {
    if points.is_empty() {
        return Err(SceneError::EmptyPointCloud);
    }
    let mut cloud = GaussianCloud::new(sh_degree)?;
    let positions: Vec<[f64; 3]> = points.iter().map(|p| p.0).collect();
    let dists = mean_neighbor_distance(&positions, 3);
    let n_coeffs = sh::coeff_count(sh_degree);
    let mut sh_buf = alloc::vec![[0.0f64; 3]; n_coeffs];
    for ((pos, rgb), d) in points.iter().zip(dists) {
        sh_buf[0] = sh::rgb_to_dc(*rgb);
        let point = GaussianPoint::from_activated(
            *pos,
            &sh_buf,
            [1.0, 0.0, 0.0, 0.0],
            [d; 3],
            INIT_OPACITY,
        );
        cloud.push(&point)?;
    }
    Ok(cloud)
}

pub const INIT_OPACITY: f64 = 0.1;
const MIN_INIT_SCALE: f64 = 3.162_277_660_168_379_4e-4;

/// Mean Euclidean distance from each point to its `k` nearest neighbors.
/// Points without neighbors get 1.0. Uses an x-sorted sweep with pruning.
fn mean_neighbor_distance(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return alloc::vec![1.0; n];
    }
    let k = k.min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .partial_cmp(&points[b][0])
            .unwrap_or(Ordering::Equal)
    });
    let mut rank = alloc::vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let d2 = |a: &[f64; 3], b: &[f64; 3]| {
        let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
        x * x + y * y + z * z
    };

    (0..n)
        .map(|i| {
            let p = &points[i];
            // Sorted ascending, at most k entries.
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let insert = |v: f64, best: &mut Vec<f64>| {
                if best.len() == k && v >= best[k - 1] {
                    return;
                }
                let at = best.partition_point(|&b| b <= v);
                best.insert(at, v);
                best.truncate(k);
            };
            let r = rank[i];
            let (mut lo, mut hi) = (r as isize - 1, r + 1);
            loop {
                let bound = if best.len() == k {
                    best[k - 1]
                } else {
                    f64::INFINITY
                };
                let mut advanced = false;
                if lo >= 0 {
                    let q = &points[order[lo as usize]];
                    let dx = p[0] - q[0];
                    if dx * dx <= bound {
                        insert(d2(p, q), &mut best);
                        lo -= 1;
                        advanced = true;
                    } else {
                        lo = -1;
                    }
                }
                if hi < n {
                    let q = &points[order[hi]];
                    let dx = q[0] - p[0];
                    if dx * dx <= bound {
                        insert(d2(p, q), &mut best);
                        hi += 1;
                        advanced = true;
                    } else {
                        hi = n;
                    }
                }
                if !advanced {
                    break;
                }
            }
            let mean = best.iter().map(|v| math::sqrt(*v)).sum::<f64>() / best.len() as f64;
            mean.max(MIN_INIT_SCALE)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn covariance_examples() {
        let id = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(
            build_covariance3d(id, [1.0; 3]).to_matrix(),
            Mat3::identity()
        );
        let s = build_covariance3d(id, [2.0, 1.0, 1.0]).to_matrix();
        assert_eq!(s, Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));

        let h = core::f64::consts::FRAC_1_SQRT_2;
        let s = build_covariance3d([h, 0.0, 0.0, h], [2.0, 1.0, 1.0]).to_matrix();
        assert_relative_eq!(
            s,
            Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn quaternion_normalized_internally() {
        let a = build_covariance3d([2.0, 0.0, 0.0, 2.0], [2.0, 1.0, 0.5]);
        let b = build_covariance3d([1.0, 0.0, 0.0, 1.0], [2.0, 1.0, 0.5]);
        assert_relative_eq!(a.to_matrix(), b.to_matrix(), epsilon = 1e-12);
    }

    #[test]
    fn init_single_gray_point() {
        let cloud = init_from_points(&[([1.0, 2.0, 3.0], [0.5, 0.5, 0.5])], 3).unwrap();
        assert_eq!(cloud.len(), 1);
        let g = cloud.get(0);
        assert_eq!(g.sh_coeffs()[0], [0.0; 3]);
        assert_eq!(g.rotation(), [1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(g.opacity(), 0.1, epsilon = 1e-7);
        assert_eq!(g.scale(), [1.0; 3]);
    }

    #[test]
    fn init_empty_fails() {
        assert_eq!(init_from_points(&[], 0), Err(SceneError::EmptyPointCloud));
    }

    #[test]
    fn init_tetrahedron_scales_equal() {
        let pts = [
            ([1.0, 1.0, 1.0], [0.1, 0.2, 0.3]),
            ([1.0, -1.0, -1.0], [0.1, 0.2, 0.3]),
            ([-1.0, 1.0, -1.0], [0.1, 0.2, 0.3]),
            ([-1.0, -1.0, 1.0], [0.1, 0.2, 0.3]),
        ];
        let cloud = init_from_points(&pts, 1).unwrap();
        let s0 = cloud.get(0).scale();
        assert_relative_eq!(s0[0], 8f64.sqrt(), epsilon = 1e-6);
        for g in cloud.iter() {
            assert_eq!(g.scale(), s0);
        }
    }

    #[test]
    fn coincident_points_get_floor_scale() {
        let pts = [([0.0; 3], [0.5; 3]), ([0.0; 3], [0.5; 3])];
        let cloud = init_from_points(&pts, 0).unwrap();
        for g in cloud.iter() {
            assert!(g.scale()[0] > 0.0 && g.scale()[0].is_finite());
        }
    }

    #[test]
    fn gather_and_append() {
        let pts: Vec<_> = (0..5).map(|i| ([i as f64, 0.0, 0.0], [0.5; 3])).collect();
        let cloud = init_from_points(&pts, 2).unwrap();
        let g = cloud.gather(&[4, 0, 0]);
        assert_eq!(g.len(), 3);
        assert_eq!(g.get(0).position().x, 4.0);
        assert_eq!(g.get(2).to_point(), cloud.get(0).to_point());
        let mut c2 = cloud.clone();
        c2.append(&g).unwrap();
        assert_eq!(c2.len(), 8);
        assert_eq!(c2.get(5).to_point(), cloud.get(4).to_point());
    }

    fn brute_mean_nn(points: &[[f64; 3]], i: usize, k: usize) -> f64 {
        let mut d: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| {
                let p = points[i];
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            })
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = k.min(d.len());
        d[..k].iter().sum::<f64>() / k as f64
    }

    proptest! {
        #[test]
        fn init_invariants(raw in prop::collection::vec(
            (prop::array::uniform3(-10.0f64..10.0), prop::array::uniform3(0.0f64..1.0)), 1..60)
        ) {
            let cloud = init_from_points(&raw, 3).unwrap();
            prop_assert_eq!(cloud.len(), raw.len());
            cloud.validate().unwrap();
            let positions: Vec<[f64; 3]> = raw.iter().map(|p| p.0).collect();
            for (i, g) in cloud.iter().enumerate() {
                let s = g.scale();
                prop_assert!(s.iter().all(|v| v.is_finite() && *v > 0.0));
                prop_assert!(g.opacity() > 0.0 && g.opacity() < 1.0);
                if raw.len() > 1 {
                    let expected = brute_mean_nn(&positions, i, 3).max(MIN_INIT_SCALE);
                    prop_assert!((s[0] - expected).abs() <= 1e-6 * expected.max(1.0));
                }
            }
        }

        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            q in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(0.05f64..3.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let cov = build_covariance3d(q, s).to_matrix();
            let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expected: Vec<f64> = s.iter().map(|v| v * v).collect();
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in eig.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-9 * b.max(1.0));
            }
        }
    }
}
