//! PNG/JPEG loading into `[0, 1]` RGB and 8-bit PNG saving. Values are
//! mapped linearly; no gamma transform is applied in either direction.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb};
use omnisplat_core::image::Image;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("cannot decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("cannot write {}: {source}", path.display())]
    Encode {
        path: PathBuf,
        source: image::ImageError,
    },
}

fn decode_err(path: &Path, message: impl ToString) -> ImageError {
    ImageError::Decode {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Loads an 8- or 16-bit PNG, or an 8-bit JPEG. Gray images are expanded to
/// RGB; an alpha channel is accepted only if it is fully opaque.
pub fn load_image(path: &Path) -> Result<Image, ImageError> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| decode_err(path, e))?
        .with_guessed_format()
        .map_err(|e| decode_err(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Jpeg) => {}
        Some(other) => return Err(decode_err(path, format!("unsupported format {other:?}"))),
        None => return Err(decode_err(path, "unrecognized image format")),
    }
    let img = reader.decode().map_err(|e| decode_err(path, e))?;
    from_dynamic(img).map_err(|m| decode_err(path, m))
}

fn from_dynamic(img: DynamicImage) -> Result<Image, String> {
    let (w, h) = (img.width(), img.height());
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b
            .pixels()
            .flat_map(|p| [p.0[0] as f64 / 255.0; 3])
            .collect(),
        DynamicImage::ImageRgb8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b
            .pixels()
            .flat_map(|p| [p.0[0] as f64 / 65535.0; 3])
            .collect(),
        DynamicImage::ImageRgb16(b) => b
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        DynamicImage::ImageLumaA8(b) => {
            if b.pixels().any(|p| p.0[1] != u8::MAX) {
                return Err("image has transparent pixels".into());
            }
            b.pixels()
                .flat_map(|p| [p.0[0] as f64 / 255.0; 3])
                .collect()
        }
        DynamicImage::ImageRgba8(b) => {
            if b.pixels().any(|p| p.0[3] != u8::MAX) {
                return Err("image has transparent pixels".into());
            }
            b.pixels()
                .flat_map(|p| [0, 1, 2].map(|c| p.0[c] as f64 / 255.0))
                .collect()
        }
        DynamicImage::ImageLumaA16(b) => {
            if b.pixels().any(|p| p.0[1] != u16::MAX) {
                return Err("image has transparent pixels".into());
            }
            b.pixels()
                .flat_map(|p| [p.0[0] as f64 / 65535.0; 3])
                .collect()
        }
        DynamicImage::ImageRgba16(b) => {
            if b.pixels().any(|p| p.0[3] != u16::MAX) {
                return Err("image has transparent pixels".into());
            }
            b.pixels()
                .flat_map(|p| [0, 1, 2].map(|c| p.0[c] as f64 / 65535.0))
                .collect()
        }
        other => return Err(format!("unsupported pixel type {:?}", other.color())),
    };
    Image::from_vec(w, h, data).map_err(|e| e.to_string())
}

/// `round(v * 255)` with halves rounded up, clamped to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn to_rgb8(img: &Image) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let raw = img.data().iter().map(|&v| quantize(v)).collect();
    ImageBuffer::from_raw(img.width(), img.height(), raw).expect("buffer size matches")
}

/// Saves as an 8-bit RGB PNG.
pub fn save_image(img: &Image, path: &Path) -> Result<(), ImageError> {
    to_rgb8(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| ImageError::Encode {
            path: path.to_path_buf(),
            source,
        })
}
