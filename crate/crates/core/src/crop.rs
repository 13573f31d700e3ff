//! Resampling a panorama into pinhole views.
//!
//! Each crop pixel casts a ray through the pinhole model, rotates it into
//! the panorama's camera frame, and bilinearly samples the panorama at the
//! ray's longitude/latitude. Columns wrap across the seam; rows clamp at the
//! poles.

use alloc::vec::Vec;

use crate::camera::{self, PerspectiveCamera, PixelCoord};
use crate::image::Image;
use crate::math::{self, Mat3, PI};

/// Viewing direction of a crop relative to the panorama camera. Positive
/// yaw turns right (toward +X), positive pitch looks up (toward -Y).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CropOrientation {
    pub yaw: f64,
    pub pitch: f64,
}

impl CropOrientation {
    pub fn new(yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch }
    }

    /// Crop-to-panorama rotation.
    pub fn rotation(&self) -> Mat3 {
        let y = camera::rotation_y(self.yaw);
        let x = camera::rotation_x(self.pitch);
        Mat3::from_fn(|i, j| y[i][j]) * Mat3::from_fn(|i, j| x[i][j])
    }
}

/// Front, right, back, left, up, down.
pub fn cube_orientations() -> [CropOrientation; 6] {
    [
        CropOrientation::new(0.0, 0.0),
        CropOrientation::new(PI / 2.0, 0.0),
        CropOrientation::new(PI, 0.0),
        CropOrientation::new(-PI / 2.0, 0.0),
        CropOrientation::new(0.0, PI / 2.0),
        CropOrientation::new(0.0, -PI / 2.0),
    ]
}

/// 90-degree square pinhole whose side is half the panorama height.
pub fn cube_face_camera(pano_height: u32) -> PerspectiveCamera {
    PerspectiveCamera::from_fov(PI / 2.0, (pano_height / 2).max(1)).expect("valid field of view")
}

/// Bilinear panorama lookup at continuous pixel coordinates.
pub fn sample_bilinear(pano: &Image, px: f64, py: f64) -> [f64; 3] {
    let (w, h) = (pano.width() as i64, pano.height() as i64);
    let u = px - 0.5;
    let v = py - 0.5;
    let x0 = math::floor(u);
    let y0 = math::floor(v);
    let (fx, fy) = (u - x0, v - y0);
    let col = |x: i64| x.rem_euclid(w) as u32;
    let row = |y: i64| y.clamp(0, h - 1) as u32;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let p00 = pano.pixel(col(x0), row(y0));
    let p10 = pano.pixel(col(x0 + 1), row(y0));
    let p01 = pano.pixel(col(x0), row(y0 + 1));
    let p11 = pano.pixel(col(x0 + 1), row(y0 + 1));
    core::array::from_fn(|c| {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Pinhole view of `pano` looking along `orientation`.
pub fn perspective_crop(
    pano: &Image,
    cam: &PerspectiveCamera,
    orientation: CropOrientation,
) -> Image {
    let rot = orientation.rotation();
    let (w, h) = (pano.width() as f64, pano.height() as f64);
    Image::from_fn(cam.width, cam.height, |x, y| {
        let ray = rot
            * camera::unproject_perspective(&PixelCoord::new(x as f64 + 0.5, y as f64 + 0.5), cam);
        let lon = math::atan2(ray.x, ray.z);
        let lat = math::asin((ray.y / math::norm3(&ray)).clamp(-1.0, 1.0));
        let px = (lon / PI + 1.0) * w / 2.0;
        let py = (2.0 * lat / PI + 1.0) * h / 2.0;
        sample_bilinear(pano, px, py)
    })
}

/// The six cube-map faces of `pano`, in [`cube_orientations`] order.
pub fn cube_crops(pano: &Image) -> Vec<Image> {
    let cam = cube_face_camera(pano.height());
    cube_orientations()
        .iter()
        .map(|o| perspective_crop(pano, &cam, *o))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn smooth_pano(w: u32, h: u32) -> Image {
        Image::from_fn(w, h, |x, y| {
            let d = camera::direction_from_pixel_unchecked(
                x as f64 + 0.5,
                y as f64 + 0.5,
                w as f64,
                h as f64,
            );
            smooth(&d)
        })
    }

    fn smooth(d: &Vec3) -> [f64; 3] {
        [0.5 + 0.3 * d.x, 0.5 + 0.2 * d.y * d.z, 0.4 + 0.3 * d.z]
    }

    #[test]
    fn constant_panorama_gives_constant_crop() {
        let pano = Image::filled(64, 32, [0.25, 0.5, 0.75]);
        for face in cube_crops(&pano) {
            assert_eq!(face.width(), 16);
            for v in face.data().chunks(3) {
                for (a, b) in v.iter().zip([0.25, 0.5, 0.75]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn crop_matches_scene_along_rays() {
        let pano = smooth_pano(1024, 512);
        let cam = PerspectiveCamera::from_fov(0.6, 48).unwrap();
        for o in [
            CropOrientation::new(0.0, 0.0),
            CropOrientation::new(1.0, 0.4),
            CropOrientation::new(3.0, -0.7),
        ] {
            let crop = perspective_crop(&pano, &cam, o);
            let rot = o.rotation();
            for y in 0..48 {
                for x in 0..48 {
                    let ray = rot
                        * camera::unproject_perspective(
                            &PixelCoord::new(x as f64 + 0.5, y as f64 + 0.5),
                            &cam,
                        );
                    let want = smooth(&ray);
                    let got = crop.pixel(x, y);
                    for c in 0..3 {
                        assert!((got[c] - want[c]).abs() < 2.0 / 255.0);
                    }
                }
            }
        }
    }

    #[test]
    fn orientation_conventions() {
        let fwd = Vec3::new(0.0, 0.0, 1.0);
        let right = CropOrientation::new(PI / 2.0, 0.0).rotation() * fwd;
        assert!((right - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let up = CropOrientation::new(0.0, PI / 2.0).rotation() * fwd;
        assert!((up - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn seam_wraps_in_bilinear_lookup() {
        let pano = Image::from_fn(8, 4, |x, _| {
            if x == 0 {
                [1.0; 3]
            } else if x == 7 {
                [0.0; 3]
            } else {
                [0.5; 3]
            }
        });
        let v = sample_bilinear(&pano, 8.0, 2.0);
        assert!((v[0] - 0.5).abs() < 1e-12);
    }
}
