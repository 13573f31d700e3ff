use crate::image::Image;
use crate::math;
use crate::metrics;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("rendered image is {rendered:?} but ground truth is {gt:?}")]
pub struct DimensionMismatch {
    pub rendered: (u32, u32),
    pub gt: (u32, u32),
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub l1: f64,
    pub ssim: f64,
    /// `dL/d(rendered)`, full size; rows outside the loss region are zero.
    pub d_image: Image,
}

/// Number of top rows that take part in the loss.
pub fn unmasked_rows(height: u32, mask_bottom_fraction: f64) -> u32 {
    let masked = math::floor(mask_bottom_fraction * height as f64) as u32;
    height - masked.min(height)
}

/// `(1 - lambda) * mean|r - gt| + lambda * (1 - SSIM(r, gt))` over the
/// rows kept after dropping the bottom `mask_bottom_fraction` of the image.
pub fn loss(
    rendered: &Image,
    gt: &Image,
    lambda: f64,
    mask_bottom_fraction: f64,
) -> Result<LossOutput, DimensionMismatch> {
    if !rendered.same_size(gt) {
        return Err(DimensionMismatch {
            rendered: (rendered.width(), rendered.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    let rows = unmasked_rows(rendered.height(), mask_bottom_fraction);
    let mut d_image = Image::new(rendered.width(), rendered.height());
    if rows == 0 || rendered.width() == 0 {
        return Ok(LossOutput {
            value: 0.0,
            l1: 0.0,
            ssim: 1.0,
            d_image,
        });
    }
    let r = rendered.crop_rows(rows);
    let g = gt.crop_rows(rows);
    let n = r.data().len() as f64;

    let mut l1 = 0.0;
    for (i, (a, b)) in r.data().iter().zip(g.data()).enumerate() {
        let d = a - b;
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        d_image.data_mut()[i] = (1.0 - lambda) * sign / n;
    }
    l1 /= n;

    let (ssim, value) = if lambda > 0.0 {
        let (s, ds) = metrics::ssim_with_grad(&r, &g);
        for (o, v) in d_image.data_mut().iter_mut().zip(ds.data()) {
            *o -= lambda * v;
        }
        (s, (1.0 - lambda) * l1 + lambda * (1.0 - s))
    } else {
        (metrics::ssim(&r, &g), l1)
    };
    Ok(LossOutput {
        value,
        l1,
        ssim,
        d_image,
    })
}
