//! PNG reading and writing.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::Tensor;

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn wrong_depth(path: &Path, img: &DynamicImage) -> Error {
    Error::io(
        path,
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("expected an 8-bit PNG, found {:?}", img.color()),
        ),
    )
}

/// Reads an 8-bit RGB (or grayscale, replicated) PNG as `[1, 3, H, W]` in
/// `[0, 1]`. Alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = decode(path)?;
    let rgb = match &img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        _ => return Err(wrong_depth(path, &img)),
    };
    Ok(rgb_to_tensor(&rgb))
}

/// Reads an 8-bit PNG mask as `[1, 1, H, W]`. Color masks are collapsed by
/// averaging channels; values are binarized at 0.5.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f32> = match &img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLumaA8(_) => img.to_luma8().as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .pixels()
            .map(|p| (p[0] as f32 + p[1] as f32 + p[2] as f32) / (3.0 * 255.0))
            .collect(),
        _ => return Err(wrong_depth(path, &img)),
    };
    let bin = values.into_iter().map(|v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec(&[1, 1, h, w], bin)
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    })
}

/// Quantizes `[0, 1]` to 8 bits with round-half-up.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Writes channel `channel` of item `index` of an NCHW tensor as grayscale.
pub fn gray_image(t: &Tensor, index: usize, channel: usize) -> Result<GrayImage> {
    let [n, c, h, w] = t.dims4()?;
    if index >= n || channel >= c {
        return Err(Error::invalid(format!(
            "item {index} channel {channel} out of range for shape {:?}",
            t.shape()
        )));
    }
    let base = (index * c + channel) * h * w;
    let pixels = t.data()[base..base + h * w].iter().map(|&v| quantize(v)).collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer size"))
}

/// RGB image from item `index` of a 3-channel NCHW tensor.
pub fn rgb_image(t: &Tensor, index: usize) -> Result<RgbImage> {
    let [n, c, h, w] = t.dims4()?;
    if c != 3 || index >= n {
        return Err(Error::invalid(format!(
            "expected an item of a 3-channel batch, got shape {:?}",
            t.shape()
        )));
    }
    let base = index * 3 * h * w;
    let d = t.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            raw.push(quantize(d[base + ch * h * w + p]));
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size"))
}

pub fn save_png(img: &DynamicImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_gray(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    save_png(&DynamicImage::ImageLuma8(gray_image(t, 0, 0)?), path)
}

pub fn save_rgb(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    save_png(&DynamicImage::ImageRgb8(rgb_image(t, 0)?), path)
}

/// Nearest-neighbor resize with half-pixel centers.
pub fn resize_nearest(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target must be at least 1x1"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let src = |o: usize, out: usize, len: usize| (((o as f64 + 0.5) * len as f64 / out as f64) as usize).min(len - 1);
    let ys: Vec<usize> = (0..out_h).map(|o| src(o, out_h, h)).collect();
    let xs: Vec<usize> = (0..out_w).map(|o| src(o, out_w, w)).collect();
    let d = input.data();
    Ok(Tensor::from_fn(&[n, c, out_h, out_w], |i| {
        let nc = i / (out_h * out_w);
        let (y, x) = ((i / out_w) % out_h, i % out_w);
        d[nc * h * w + ys[y] * w + xs[x]]
    }))
}

/// Bilinear resize of the image; nearest resize and re-binarization of the
/// mask.
pub fn resize_to_target(image: &Tensor, mask: &Tensor, out_h: usize, out_w: usize) -> Result<(Tensor, Tensor)> {
    let img = ops::resize_bilinear(image, out_h, out_w)?;
    let m = resize_nearest(mask, out_h, out_w)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Ok((img, m))
}
