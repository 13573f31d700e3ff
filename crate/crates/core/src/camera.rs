//! Camera extrinsics and the equirectangular / pinhole projection models.
//!
//! Camera space follows the SLAM convention: +X right, +Y down, +Z forward.
//! The X-Z plane is the equator of the panorama. A camera-space point maps
//! to longitude/latitude, then to uniform screen space in `[-1, 1)`, then to
//! continuous pixel coordinates. Integer pixel `i` samples the continuous
//! coordinate `i + 0.5`.

use crate::math::{self, Mat2x3, Mat3, Vec3, PI};

/// Ratio `sqrt(tx^2 + tz^2) / t_r` under which the projection Jacobian is
/// considered degenerate (camera-space poles).
pub const POLE_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("point coincides with the camera center")]
    ZeroRadius,
    #[error("point lies on the camera-space pole axis")]
    PoleDegenerate,
    #[error("pixel ({x}, {y}) lies outside the image")]
    OutOfBounds { x: f64, y: f64 },
    #[error("point is behind the pinhole camera")]
    BehindCamera,
    #[error("rotation is not orthonormal with determinant +1")]
    NotOrthonormal,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// World-to-camera rigid transform `t = W m + t_cw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, CameraError> {
        let r = Mat3::from_fn(|i, j| rotation[i][j]);
        let gram = r.transpose() * r;
        let ortho_err = (gram - Mat3::identity()).abs().max();
        if !(ortho_err <= Self::ORTHONORMAL_TOLERANCE)
            || !((r.determinant() - 1.0).abs() <= Self::ORTHONORMAL_TOLERANCE)
        {
            return Err(CameraError::NotOrthonormal);
        }
        Ok(Self {
            rotation: r,
            translation: Vec3::from(translation),
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from a row-major 4x4 `T_cw`. The bottom row must be
    /// `0 0 0 1`.
    pub fn from_matrix4(m: &[f64; 16]) -> Result<Self, CameraError> {
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(CameraError::NotOrthonormal);
        }
        Self::new(
            [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            [m[3], m[7], m[11]],
        )
    }

    pub fn to_matrix4(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    /// Pose for a camera located at world position `center` with
    /// world-to-camera `rotation`.
    pub fn from_center(rotation: [[f64; 3]; 3], center: [f64; 3]) -> Result<Self, CameraError> {
        let r = Mat3::from_fn(|i, j| rotation[i][j]);
        let t = -(r * Vec3::from(center));
        Self::new(rotation, [t.x, t.y, t.z])
    }

    pub fn rotation(&self) -> &nalgebra::Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &nalgebra::Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates, `-W^T t_cw`.
    pub fn center(&self) -> nalgebra::Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn transform(&self, m: &nalgebra::Vector3<f64>) -> CameraSpacePoint {
        CameraSpacePoint::new(self.rotation * m + self.translation)
    }
}

/// Rotation of `angle` radians about the camera +Y (down) axis, as a
/// world-to-camera matrix. Positive angles rotate +Z toward +X.
pub fn rotation_y(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = (math::sin(angle), math::cos(angle));
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Rotation of `angle` radians about the +X axis.
pub fn rotation_x(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = (math::sin(angle), math::cos(angle));
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpacePoint {
    pub t: nalgebra::Vector3<f64>,
    /// Euclidean distance to the camera center; the depth sort key.
    pub t_r: f64,
}

impl CameraSpacePoint {
    pub fn new(t: nalgebra::Vector3<f64>) -> Self {
        let t_r = math::norm3(&t);
        Self { t, t_r }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LonLat {
    /// Radians in `[-pi, pi)`.
    pub lon: f64,
    /// Radians in `[-pi/2, pi/2]`.
    pub lat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenCoord {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EquirectCamera {
    width: u32,
    height: u32,
}

impl EquirectCamera {
    pub fn new(width: u32, height: u32) -> Result<Self, CameraError> {
        if width < 2 || height < 2 {
            return Err(CameraError::InvalidIntrinsics(
                "equirect width and height must be >= 2",
            ));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Diagonal of `dp/ds`: `(W/2, H/2)`.
    pub fn screen_to_pixel_scale(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerspectiveCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PerspectiveCamera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(
                "focal lengths must be positive",
            ));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(CameraError::InvalidIntrinsics(
                "principal point outside the image",
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square pinhole with the given horizontal field of view (radians).
    pub fn from_fov(fov: f64, size: u32) -> Result<Self, CameraError> {
        let f = size as f64 / 2.0 / libm::tan(fov / 2.0);
        let c = size as f64 / 2.0;
        Self::new(f, f, c, c, size, size)
    }
}

/// `dp/dt` of the equirectangular projection, a 2x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjJacobian(pub nalgebra::Matrix2x3<f64>);

/// All intermediate stages of the equirectangular projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquirectProjection {
    pub pixel: PixelCoord,
    pub lonlat: LonLat,
    pub screen: ScreenCoord,
}

pub fn world_to_camera(m: &nalgebra::Vector3<f64>, pose: &Pose) -> CameraSpacePoint {
    pose.transform(m)
}

pub fn project_equirect(
    t: &CameraSpacePoint,
    cam: &EquirectCamera,
) -> Result<EquirectProjection, CameraError> {
    if !(t.t_r > 0.0) {
        return Err(CameraError::ZeroRadius);
    }
    let mut lon = math::atan2(t.t.x, t.t.z);
    if lon >= PI {
        lon -= 2.0 * PI;
    }
    let lat = math::asin((t.t.y / t.t_r).clamp(-1.0, 1.0));
    let screen = ScreenCoord {
        x: lon / PI,
        y: 2.0 * lat / PI,
    };
    let [sx, sy] = cam.screen_to_pixel_scale();
    let pixel = PixelCoord {
        x: (screen.x + 1.0) * sx,
        y: (screen.y + 1.0) * sy,
    };
    Ok(EquirectProjection {
        pixel,
        lonlat: LonLat { lon, lat },
        screen,
    })
}

fn check_pole(t: &CameraSpacePoint) -> Result<f64, CameraError> {
    let rho2 = t.t.x * t.t.x + t.t.z * t.t.z;
    let rho = math::sqrt(rho2);
    if !(t.t_r > 0.0) {
        return Err(CameraError::ZeroRadius);
    }
    if !(rho > POLE_EPSILON * t.t_r) {
        return Err(CameraError::PoleDegenerate);
    }
    Ok(rho)
}

/// `ds/dt` of the uniform screen coordinates.
pub fn screen_jacobian(t: &CameraSpacePoint) -> Result<nalgebra::Matrix2x3<f64>, CameraError> {
    let rho = check_pole(t)?;
    let (tx, ty, tz) = (t.t.x, t.t.y, t.t.z);
    let rho2 = rho * rho;
    let r2 = t.t_r * t.t_r;
    let dlon = [tz / rho2, 0.0, -tx / rho2];
    let dlat = [-tx * ty / (r2 * rho), rho / r2, -tz * ty / (r2 * rho)];
    Ok(Mat2x3::new(
        dlon[0] / PI,
        dlon[1] / PI,
        dlon[2] / PI,
        2.0 * dlat[0] / PI,
        2.0 * dlat[1] / PI,
        2.0 * dlat[2] / PI,
    ))
}

/// Closed-form `dp/dt` of the equirectangular projection.
pub fn jacobian_equirect(
    t: &CameraSpacePoint,
    cam: &EquirectCamera,
) -> Result<ProjJacobian, CameraError> {
    let rho = check_pole(t)?;
    let (tx, ty, tz) = (t.t.x, t.t.y, t.t.z);
    let a = cam.width as f64 / (2.0 * PI);
    let b = cam.height as f64 / PI;
    let rho2 = rho * rho;
    let r2 = t.t_r * t.t_r;
    Ok(ProjJacobian(Mat2x3::new(
        a * tz / rho2,
        0.0,
        -a * tx / rho2,
        -b * tx * ty / (r2 * rho),
        b * rho / r2,
        -b * tz * ty / (r2 * rho),
    )))
}

/// `dJ/dt`: entry `k` holds the derivative of every Jacobian entry with
/// respect to `t[k]`.
pub fn jacobian_equirect_derivative(
    t: &CameraSpacePoint,
    cam: &EquirectCamera,
) -> Result<[nalgebra::Matrix2x3<f64>; 3], CameraError> {
    let rho = check_pole(t)?;
    let (tx, ty, tz) = (t.t.x, t.t.y, t.t.z);
    let a = cam.width as f64 / (2.0 * PI);
    let b = cam.height as f64 / PI;
    let rho2 = rho * rho;
    let rho4 = rho2 * rho2;
    let r2 = t.t_r * t.t_r;
    let r4 = r2 * r2;

    // Row 0: a * (tz, 0, -tx) / rho^2.
    let d00 = [
        -2.0 * a * tx * tz / rho4,
        0.0,
        a * (tx * tx - tz * tz) / rho4,
    ];
    let d02 = [
        a * (tx * tx - tz * tz) / rho4,
        0.0,
        2.0 * a * tx * tz / rho4,
    ];

    // Row 1 uses f = ty / (r^2 rho): J10 = -b tx f, J12 = -b tz f, J11 = b rho / r^2.
    let f = ty / (r2 * rho);
    let k = (2.0 * rho2 + r2) / (r4 * rho2 * rho);
    let df = [-ty * tx * k, (rho2 - ty * ty) / (r4 * rho), -ty * tz * k];
    let d10 = [-b * (f + tx * df[0]), -b * tx * df[1], -b * tx * df[2]];
    let d12 = [-b * tz * df[0], -b * tz * df[1], -b * (f + tz * df[2])];
    let g = (ty * ty - rho2) / (rho * r4);
    let d11 = [b * tx * g, -2.0 * b * rho * ty / r4, b * tz * g];

    Ok(core::array::from_fn(|i| {
        Mat2x3::new(d00[i], 0.0, d02[i], d10[i], d11[i], d12[i])
    }))
}

/// Unit ray direction through continuous pixel `p`.
pub fn unproject_equirect(
    p: &PixelCoord,
    cam: &EquirectCamera,
) -> Result<nalgebra::Vector3<f64>, CameraError> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    if !(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y <= h) {
        return Err(CameraError::OutOfBounds { x: p.x, y: p.y });
    }
    Ok(direction_from_pixel_unchecked(p.x, p.y, w, h))
}

#[inline]
pub(crate) fn direction_from_pixel_unchecked(px: f64, py: f64, w: f64, h: f64) -> Vec3 {
    let lon = (2.0 * px / w - 1.0) * PI;
    let lat = (2.0 * py / h - 1.0) * PI / 2.0;
    let cl = math::cos(lat);
    Vec3::new(cl * math::sin(lon), math::sin(lat), cl * math::cos(lon))
}

pub fn project_perspective(
    t: &CameraSpacePoint,
    cam: &PerspectiveCamera,
) -> Result<PixelCoord, CameraError> {
    if !(t.t.z > 0.0) {
        return Err(CameraError::BehindCamera);
    }
    Ok(PixelCoord {
        x: cam.fx * t.t.x / t.t.z + cam.cx,
        y: cam.fy * t.t.y / t.t.z + cam.cy,
    })
}

/// Unit ray through continuous pixel `p` of a pinhole camera.
pub fn unproject_perspective(p: &PixelCoord, cam: &PerspectiveCamera) -> nalgebra::Vector3<f64> {
    let d = Vec3::new((p.x - cam.cx) / cam.fx, (p.y - cam.cy) / cam.fy, 1.0);
    d / math::norm3(&d)
}
