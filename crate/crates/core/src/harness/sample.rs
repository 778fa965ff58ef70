use std::path::Path;

use candle_core::{DType, Tensor};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Maps `[-1, 1]` to `0..=255`, clamping outside values.
pub fn to_u8(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

/// Writes `images` `[n, h, w, c]` as a PNG grid with `cols` columns and a
/// one-pixel gap. Single-channel images are drawn in gray; extra channels
/// beyond the third are ignored.
pub fn save_grid(images: &Tensor, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (n, h, w, c) = images.dims4()?;
    if n == 0 || cols == 0 {
        return Err(Error::argument("empty sample grid"));
    }
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let data = images.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let (gw, gh) = ((cols * (w + 1) - 1) as u32, (rows * (h + 1) - 1) as u32);
    let mut img = RgbImage::from_pixel(gw, gh, Rgb([255, 255, 255]));
    for i in 0..n {
        let (oy, ox) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
        for y in 0..h {
            for x in 0..w {
                let base = ((i * h + y) * w + x) * c;
                let px = |ch: usize| to_u8(data[base + ch.min(c - 1)]);
                img.put_pixel((ox + x) as u32, (oy + y) as u32, Rgb([px(0), px(1), px(2)]));
            }
        }
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    })
}
