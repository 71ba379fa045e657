//! Deterministic flip and rotation augmentation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flip {
    Horizontal,
    Vertical,
}

/// One deterministic transform. Rotations are counter-clockwise as
/// displayed, about the image center, in whole degrees `1..=360`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augment {
    Identity,
    Flip(Flip),
    Rotate(u16),
    /// Rotation followed by a flip.
    RotateFlip(u16, Flip),
}

impl Augment {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Augment::Rotate(d) | Augment::RotateFlip(d, _) if !(1..=360).contains(&d) => Err(Error::invalid(
                format!("rotation must be within 1..=360 degrees, got {d}"),
            )),
            _ => Ok(()),
        }
    }

    /// Applies the transform to an image (bilinear) and its mask (nearest).
    pub fn apply(&self, image: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        self.validate()?;
        let (ih, mh) = (image.dims4()?, mask.dims4()?);
        if ih[2..] != mh[2..] {
            return Err(Error::shape(format!(
                "image {:?} and mask {:?} differ in size",
                image.shape(),
                mask.shape()
            )));
        }
        Ok((self.apply_one(image, Sampling::Bilinear)?, self.apply_one(mask, Sampling::Nearest)?))
    }

    pub fn apply_one(&self, t: &Tensor, sampling: Sampling) -> Result<Tensor> {
        self.validate()?;
        Ok(match *self {
            Augment::Identity => t.clone(),
            Augment::Flip(f) => flip(t, f)?,
            Augment::Rotate(d) => rotate(t, d, sampling)?,
            Augment::RotateFlip(d, f) => flip(&rotate(t, d, sampling)?, f)?,
        })
    }
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flip = |fl: &Flip| match fl {
            Flip::Horizontal => "hflip",
            Flip::Vertical => "vflip",
        };
        match self {
            Augment::Identity => f.write_str("identity"),
            Augment::Flip(fl) => f.write_str(flip(fl)),
            Augment::Rotate(d) => write!(f, "rot{d}"),
            Augment::RotateFlip(d, fl) => write!(f, "rot{d}+{}", flip(fl)),
        }
    }
}

impl FromStr for Augment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown augmentation descriptor `{s}`"));
        let flip = |t: &str| match t {
            "hflip" => Ok(Flip::Horizontal),
            "vflip" => Ok(Flip::Vertical),
            _ => Err(bad()),
        };
        let rot = |t: &str| -> Result<u16> { t.strip_prefix("rot").and_then(|d| d.parse().ok()).ok_or_else(bad) };
        let aug = match s {
            "identity" => Augment::Identity,
            "hflip" | "vflip" => Augment::Flip(flip(s)?),
            _ => match s.split_once('+') {
                Some((r, fl)) => Augment::RotateFlip(rot(r)?, flip(fl)?),
                None => Augment::Rotate(rot(s)?),
            },
        };
        aug.validate()?;
        Ok(aug)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Bilinear,
    Nearest,
}

pub fn flip(t: &Tensor, f: Flip) -> Result<Tensor> {
    let [_, _, h, w] = t.dims4()?;
    let d = t.data();
    Ok(Tensor::from_fn(t.shape(), |i| {
        let plane = i / (h * w);
        let (y, x) = ((i / w) % h, i % w);
        let (sy, sx) = match f {
            Flip::Horizontal => (y, w - 1 - x),
            Flip::Vertical => (h - 1 - y, x),
        };
        d[plane * h * w + sy * w + sx]
    }))
}

/// Exact index permutation for quarter turns of square images.
fn quarter_turn(t: &Tensor, turns: u16) -> Tensor {
    let [_, _, h, w] = t.dims4().expect("checked by caller");
    let d = t.data();
    Tensor::from_fn(t.shape(), |i| {
        let plane = i / (h * w);
        let (y, x) = ((i / w) % h, i % w);
        let (sy, sx) = match turns {
            1 => (x, w - 1 - y),
            2 => (h - 1 - y, w - 1 - x),
            _ => (h - 1 - x, y),
        };
        d[plane * h * w + sy * w + sx]
    })
}

/// Rotates every plane by `degrees` counter-clockwise about the center;
/// uncovered pixels are 0. Multiples of 90 on square planes are exact.
pub fn rotate(t: &Tensor, degrees: u16, sampling: Sampling) -> Result<Tensor> {
    let [_, _, h, w] = t.dims4()?;
    let deg = degrees % 360;
    if deg == 0 {
        return Ok(t.clone());
    }
    if deg.is_multiple_of(90) && h == w {
        return Ok(quarter_turn(t, deg / 90));
    }
    let theta = (deg as f64).to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let d = t.data();
    Ok(Tensor::from_fn(t.shape(), |i| {
        let plane = &d[(i / (h * w)) * h * w..][..h * w];
        let (dy, dx) = (((i / w) % h) as f64 - cy, (i % w) as f64 - cx);
        let sx = dx * cos - dy * sin + cx;
        let sy = dx * sin + dy * cos + cy;
        match sampling {
            Sampling::Nearest => {
                let (ry, rx) = (sy.round(), sx.round());
                if ry < 0.0 || rx < 0.0 || ry > (h - 1) as f64 || rx > (w - 1) as f64 {
                    0.0
                } else {
                    plane[ry as usize * w + rx as usize]
                }
            }
            Sampling::Bilinear => {
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let at = |yy: f64, xx: f64| -> f64 {
                    if yy < 0.0 || xx < 0.0 || yy > (h - 1) as f64 || xx > (w - 1) as f64 {
                        0.0
                    } else {
                        plane[yy as usize * w + xx as usize] as f64
                    }
                };
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
                let bot = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
                (top * (1.0 - fy) + bot * fy) as f32
            }
        }
    }))
}
