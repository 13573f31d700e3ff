//! Image-quality metrics: PSNR, and SSIM with its gradient.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) applied as a separable,
//! zero-padded "same" convolution, and averages the SSIM map over every
//! pixel and channel.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::Image;
use crate::math;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable window filter over a single-channel plane. The window is
/// symmetric and zero-padded, so the operator is its own transpose.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    // Valid destination range for a tap offset: `x + shift` must stay in `[0, n)`.
    let span = |shift: isize, n: usize| {
        let lo = (-shift).max(0) as usize;
        let hi = (n as isize - shift).clamp(0, n as isize) as usize;
        (lo, hi)
    };
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for (i, &kv) in k.iter().enumerate() {
            let shift = i as isize - half;
            let (lo, hi) = span(shift, w);
            // Taps wider than the image reach nothing.
            if lo >= hi {
                continue;
            }
            let src = &row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
            for (o, s) in out[lo..hi].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (i, &kv) in k.iter().enumerate() {
            let sy = y as isize + i as isize - half;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let src = &tmp[sy as usize * w..(sy as usize + 1) * w];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

fn channel(img: &Image, ch: usize) -> Vec<f64> {
    img.data().iter().skip(ch).step_by(3).copied().collect()
}

struct ChannelSsim {
    mean: f64,
    grad: Option<Vec<f64>>,
}

fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, with_grad: bool) -> ChannelSsim {
    let k = window();
    let n = w * h;
    let mu_x = blur(x, w, h, &k);
    let mu_y = blur(y, w, h, &k);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let e_xx = blur(&sq(x, x), w, h, &k);
    let e_yy = blur(&sq(y, y), w, h, &k);
    let e_xy = blur(&sq(x, y), w, h, &k);

    let mut total = 0.0;
    let (mut da, mut db, mut dc) = if with_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let n1 = 2.0 * mx * my + SSIM_C1;
        let n2 = 2.0 * sxy + SSIM_C2;
        let d1 = mx * mx + my * my + SSIM_C1;
        let d2 = sxx + syy + SSIM_C2;
        let s = n1 * n2 / (d1 * d2);
        total += s;
        if with_grad {
            da[i] = 2.0 * my * n2 / (d1 * d2) - s * 2.0 * mx / d1;
            db[i] = -s / d2;
            dc[i] = 2.0 * n1 / (d1 * d2);
        }
    }
    if !with_grad {
        return ChannelSsim {
            mean: total / n as f64,
            grad: None,
        };
    }

    let ka = blur(&da, w, h, &k);
    let kb = blur(&db, w, h, &k);
    let kbm = blur(&sq(&db, &mu_x), w, h, &k);
    let kc = blur(&dc, w, h, &k);
    let kcm = blur(&sq(&dc, &mu_y), w, h, &k);
    let grad = (0..n)
        .map(|j| ka[j] + 2.0 * x[j] * kb[j] - 2.0 * kbm[j] + y[j] * kc[j] - kcm[j])
        .collect();
    ChannelSsim {
        mean: total / n as f64,
        grad: Some(grad),
    }
}

fn ssim_impl(x: &Image, y: &Image, with_grad: bool) -> (f64, Option<Image>) {
    assert!(x.same_size(y), "image sizes differ");
    let (w, h) = (x.width() as usize, x.height() as usize);
    if w == 0 || h == 0 {
        return (1.0, with_grad.then(|| Image::new(x.width(), x.height())));
    }
    let mut sum = 0.0;
    let mut grad = with_grad.then(|| Image::new(x.width(), x.height()));
    for ch in 0..3 {
        let r = ssim_channel(&channel(x, ch), &channel(y, ch), w, h, with_grad);
        sum += r.mean;
        if let (Some(g), Some(cg)) = (grad.as_mut(), r.grad) {
            // Mean over 3 channels and w*h pixels.
            let scale = 1.0 / (3 * w * h) as f64;
            for (j, v) in cg.into_iter().enumerate() {
                g.data_mut()[3 * j + ch] = v * scale;
            }
        }
    }
    (sum / 3.0, grad)
}

/// Mean SSIM of `x` against `y`.
pub fn ssim(x: &Image, y: &Image) -> f64 {
    ssim_impl(x, y, false).0
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &Image, y: &Image) -> (f64, Image) {
    let (s, g) = ssim_impl(x, y, true);
    (s, g.expect("gradient requested"))
}

pub fn mse(a: &Image, b: &Image) -> f64 {
    assert!(a.same_size(b), "image sizes differ");
    let n = a.data().len().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / n
}

/// PSNR in dB for a peak value of 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let m = mse(a, b);
    if m <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * math::log10(m)).min(PSNR_CAP)
}
