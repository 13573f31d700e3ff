//! Real spherical-harmonics color, degrees 0 through 3.
//!
//! Basis constants and sign conventions match the usual Gaussian-splatting
//! layout, so coefficient files interoperate with common viewers. The
//! evaluated color is offset by 0.5 and clamped at zero.

pub const MAX_DEGREE: usize = 3;

pub const C0: f64 = 0.282_094_791_773_878_14;
pub const C1: f64 = 0.488_602_511_902_919_9;
pub const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per color channel for a degree.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values at `dir`; entries past `coeff_count(degree)` are zero.
pub fn basis(dir: &[f64; 3], degree: usize) -> [f64; 16] {
    let [x, y, z] = *dir;
    let mut b = [0.0; 16];
    b[0] = C0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = C3[0] * y * (3.0 * xx - yy);
            b[10] = C3[1] * x * y * z;
            b[11] = C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = C3[5] * z * (xx - yy);
            b[15] = C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Gradient of each basis function with respect to the (unnormalized)
/// direction components, treating `dir` as a free 3-vector.
pub fn basis_gradient(dir: &[f64; 3], degree: usize) -> [[f64; 3]; 16] {
    let [x, y, z] = *dir;
    let mut g = [[0.0; 3]; 16];
    if degree >= 1 {
        g[1] = [0.0, -C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [-C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[4] = [C2[0] * y, C2[0] * x, 0.0];
        g[5] = [0.0, C2[1] * z, C2[1] * y];
        g[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
        g[7] = [C2[3] * z, 0.0, C2[3] * x];
        g[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
        if degree >= 3 {
            g[9] = [C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
            g[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
            g[11] = [
                -2.0 * C3[2] * x * y,
                C3[2] * (4.0 * zz - xx - 3.0 * yy),
                8.0 * C3[2] * y * z,
            ];
            g[12] = [
                -6.0 * C3[3] * x * z,
                -6.0 * C3[3] * y * z,
                C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            g[13] = [
                C3[4] * (4.0 * zz - 3.0 * xx - yy),
                -2.0 * C3[4] * x * y,
                8.0 * C3[4] * x * z,
            ];
            g[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
            g[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
        }
    }
    g
}

/// An RGB coefficient triple in either storage precision.
pub trait Coefficient: Copy {
    fn rgb(self) -> [f64; 3];
}

impl Coefficient for [f32; 3] {
    fn rgb(self) -> [f64; 3] {
        self.map(f64::from)
    }
}

impl Coefficient for [f64; 3] {
    fn rgb(self) -> [f64; 3] {
        self
    }
}

/// Color before the zero clamp: `sum_k coeffs[k] * Y_k(dir) + 0.5`.
pub fn eval_unclamped<C>(coeffs: &[C], dir: &[f64; 3], degree: usize) -> [f64; 3]
where
    C: Coefficient,
{
    let b = basis(dir, degree);
    let mut rgb = [0.5; 3];
    for (k, c) in coeffs.iter().take(coeff_count(degree)).enumerate() {
        let c = c.rgb();
        for ch in 0..3 {
            rgb[ch] += b[k] * c[ch];
        }
    }
    rgb
}

/// View-dependent RGB for a unit `view_dir`, clamped to `>= 0`.
pub fn eval_sh<C>(coeffs: &[C], view_dir: &[f64; 3], degree: usize) -> [f64; 3]
where
    C: Coefficient,
{
    eval_unclamped(coeffs, view_dir, degree).map(|v| v.max(0.0))
}

/// DC coefficient reproducing `rgb` for every view direction.
pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|v| (v - 0.5) / C0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degree_zero_constant() {
        let c = [[1.0, -0.5, 0.25]];
        let rgb = eval_sh(&c, &[0.0, 0.0, 1.0], 0);
        assert_relative_eq!(rgb[0], 0.28209479177 + 0.5, epsilon = 1e-11);
        assert_relative_eq!(rgb[1], 0.5 - 0.5 * 0.28209479177, epsilon = 1e-11);
        assert_relative_eq!(rgb[2], 0.5 + 0.25 * 0.28209479177, epsilon = 1e-11);
    }

    #[test]
    fn zero_coefficients_give_gray() {
        let c = [[0.0f64; 3]; 16];
        assert_eq!(eval_sh(&c, &[0.6, 0.0, 0.8], 3), [0.5; 3]);
    }

    #[test]
    fn odd_band_is_antisymmetric() {
        let mut c = [[0.0; 3]; 4];
        c[1] = [0.7, -0.2, 0.4];
        let up = eval_sh(&c, &[0.0, 1.0, 0.0], 1);
        let down = eval_sh(&c, &[0.0, -1.0, 0.0], 1);
        for ch in 0..3 {
            assert_relative_eq!(up[ch] - 0.5, -(down[ch] - 0.5), epsilon = 1e-15);
            assert!(up[ch] != 0.5);
        }
    }

    #[test]
    fn clamped_at_zero() {
        let c = [[-10.0, 0.0, 0.0]];
        assert_eq!(eval_sh(&c, &[0.0, 0.0, 1.0], 0)[0], 0.0);
    }

    #[test]
    fn dc_inverse() {
        let dc = rgb_to_dc([0.5, 0.5, 0.5]);
        assert_eq!(dc, [0.0; 3]);
        let dc = rgb_to_dc([0.2, 0.9, 0.4]);
        let rgb = eval_sh(&[dc], &[1.0, 0.0, 0.0], 0);
        assert_relative_eq!(rgb[1], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = [0.3, -0.5, 0.7];
        let g = basis_gradient(&d, 3);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = d;
            let mut m = d;
            p[axis] += h;
            m[axis] -= h;
            let bp = basis(&p, 3);
            let bm = basis(&m, 3);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert_relative_eq!(g[k][axis], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn linear_in_coefficients() {
        let d = [0.48, 0.6, 0.64];
        let a: [[f64; 3]; 9] = core::array::from_fn(|k| [k as f64 * 0.1, -0.05 * k as f64, 0.02]);
        let b: [[f64; 3]; 9] = core::array::from_fn(|k| [0.3 - k as f64 * 0.01, 0.07, -0.1]);
        let sum: [[f64; 3]; 9] =
            core::array::from_fn(|k| core::array::from_fn(|c| a[k][c] + b[k][c]));
        let ea = eval_unclamped(&a, &d, 2);
        let eb = eval_unclamped(&b, &d, 2);
        let es = eval_unclamped(&sum, &d, 2);
        for ch in 0..3 {
            assert_relative_eq!(
                es[ch] - 0.5,
                (ea[ch] - 0.5) + (eb[ch] - 0.5),
                epsilon = 1e-14
            );
        }
    }
}
