//! Mask file formats and the evaluation overlay.
//!
//! Masks on disk are one of:
//! - `.json`: RLE JSON (`{"w":..,"h":..,"runs":[..]}`)
//! - `.rle`: RLE text (`<w>x<h>:<runs>`)
//! - `.png`: single-channel raster, any nonzero value is foreground; written
//!   as 0/255.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::io::write_atomic;
use crate::mask::{MaskError, MaskRaster, RleMask};

pub const TP_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const FN_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
pub const FP_COLOR: Rgb<u8> = Rgb([0, 0, 255]);

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: {source}", path.display())]
    Mask {
        path: PathBuf,
        #[source]
        source: MaskError,
    },
    #[error("{}: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("{}: unsupported mask format (expected .json, .rle or .png)", .0.display())]
    UnsupportedFormat(PathBuf),
    #[error(transparent)]
    Dimensions(#[from] MaskError),
    #[error("encoding png: {0}")]
    Encode(#[source] image::ImageError),
}

/// Extensions recognised by [`load_mask`], in lookup preference order.
pub const MASK_EXTENSIONS: [&str; 3] = ["json", "rle", "png"];

pub fn load_mask(path: &Path) -> Result<MaskRaster, ImagingError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let read_text = || {
        std::fs::read_to_string(path).map_err(|source| ImagingError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    match ext.as_deref() {
        Some("json") => {
            let rle: RleMask =
                serde_json::from_str(&read_text()?).map_err(|e| ImagingError::Json {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
            Ok(rle.decode())
        }
        Some("rle") => {
            let rle: RleMask =
                read_text()?
                    .trim()
                    .parse()
                    .map_err(|source| ImagingError::Mask {
                        path: path.to_path_buf(),
                        source,
                    })?;
            Ok(rle.decode())
        }
        Some("png") => {
            let img = image::open(path).map_err(|source| ImagingError::Decode {
                path: path.to_path_buf(),
                source,
            })?;
            let gray = img.to_luma16();
            let (w, h) = gray.dimensions();
            MaskRaster::new(w, h, gray.pixels().map(|p| p.0[0] != 0).collect()).map_err(|source| {
                ImagingError::Mask {
                    path: path.to_path_buf(),
                    source,
                }
            })
        }
        _ => Err(ImagingError::UnsupportedFormat(path.to_path_buf())),
    }
}

pub fn mask_to_gray(mask: &MaskRaster) -> GrayImage {
    GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        Luma([if mask.get(x, y) { 255 } else { 0 }])
    })
}

fn encode_png(img: impl Into<image::DynamicImage>) -> Result<Vec<u8>, ImagingError> {
    let mut buf = Vec::new();
    img.into()
        .write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)
        .map_err(ImagingError::Encode)?;
    Ok(buf)
}

pub fn save_mask_png(path: &Path, mask: &MaskRaster) -> Result<(), ImagingError> {
    let bytes = encode_png(mask_to_gray(mask))?;
    write_atomic(path, &bytes).map_err(|source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<(), ImagingError> {
    let bytes = encode_png(img.clone())?;
    write_atomic(path, &bytes).map_err(|source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Colors true positives green, false negatives red and false positives
/// blue. Remaining pixels come from `base`, or stay black.
pub fn render_overlay(
    pred: &MaskRaster,
    gt: &MaskRaster,
    base: Option<&RgbImage>,
) -> Result<RgbImage, ImagingError> {
    pred.ensure_same_dims(gt)?;
    if let Some(b) = base {
        if b.dimensions() != pred.dims() {
            let (w, h) = b.dimensions();
            return Err(MaskError::DimensionMismatch {
                left_w: pred.width(),
                left_h: pred.height(),
                right_w: w,
                right_h: h,
            }
            .into());
        }
    }
    Ok(RgbImage::from_fn(
        pred.width(),
        pred.height(),
        |x, y| match (pred.get(x, y), gt.get(x, y)) {
            (true, true) => TP_COLOR,
            (false, true) => FN_COLOR,
            (true, false) => FP_COLOR,
            (false, false) => base.map_or(Rgb([0, 0, 0]), |b| *b.get_pixel(x, y)),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_and_nonzero_foreground() {
        let dir = tempfile::tempdir().unwrap();
        let m = MaskRaster::from_fn(5, 3, |x, y| x > y).unwrap();
        let path = dir.path().join("m.png");
        save_mask_png(&path, &m).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);

        let gray = GrayImage::from_fn(3, 1, |x, _| Luma([[0, 1, 200][x as usize]]));
        let path = dir.path().join("g.png");
        gray.save(&path).unwrap();
        assert_eq!(load_mask(&path).unwrap().bits(), &[false, true, true]);
    }

    #[test]
    fn text_and_json_masks() {
        let dir = tempfile::tempdir().unwrap();
        let rle_path = dir.path().join("m.rle");
        std::fs::write(&rle_path, "3x1:1,2\n").unwrap();
        let json_path = dir.path().join("m.json");
        std::fs::write(&json_path, r#"{"w":3,"h":1,"runs":[1,2]}"#).unwrap();
        assert_eq!(
            load_mask(&rle_path).unwrap(),
            load_mask(&json_path).unwrap()
        );
        assert!(matches!(
            load_mask(&dir.path().join("m.bmp")),
            Err(ImagingError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn overlay_colors() {
        let gt = MaskRaster::full(2, 2).unwrap();
        let out = render_overlay(&gt, &gt, None).unwrap();
        assert!(out.pixels().all(|p| *p == TP_COLOR));

        let empty = MaskRaster::empty(2, 2).unwrap();
        let out = render_overlay(&empty, &gt, None).unwrap();
        assert!(out.pixels().all(|p| *p == FN_COLOR));

        let base = RgbImage::from_pixel(2, 2, Rgb([9, 9, 9]));
        let out = render_overlay(&empty, &empty, Some(&base)).unwrap();
        assert!(out.pixels().all(|p| *p == Rgb([9, 9, 9])));

        let small = RgbImage::new(1, 1);
        assert!(render_overlay(&empty, &empty, Some(&small)).is_err());
    }
}
