//! Synthetic fundus-like images with branching vessel masks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{save_gray, save_rgb};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `[1, 3, S, S]` image and its `[1, 1, S, S]` binary vessel mask, fully
/// determined by `seed`.
pub fn vessel_image(size: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut mask = vec![0.0f32; size * size];
    let mut stamp = |cy: f64, cx: f64, r: f64| {
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(size - 1));
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(size - 1));
        if cy + r < 0.0 || cx + r < 0.0 || y0 > y1 || x0 > x1 {
            return;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                    mask[y * size + x] = 1.0;
                }
            }
        }
    };

    let disc = (s * rng.random_range(0.35..0.65), s * rng.random_range(0.3..0.7));
    let trunks = 3 + size / 48;
    let mut stack: Vec<(f64, f64, f64, f64, usize)> = (0..trunks)
        .map(|k| {
            let angle = k as f64 * std::f64::consts::TAU / trunks as f64 + rng.random_range(-0.4..0.4);
            (disc.0, disc.1, angle, (s / 70.0).max(1.0), 0)
        })
        .collect();
    while let Some((mut y, mut x, mut angle, radius, depth)) = stack.pop() {
        let steps = (s * rng.random_range(0.25..0.5)) as usize;
        let mut curl = 0.0;
        for step in 0..steps {
            curl = 0.8 * curl + rng.random_range(-0.05..0.05);
            angle += curl;
            y += angle.sin();
            x += angle.cos();
            if !(0.0..s).contains(&y) || !(0.0..s).contains(&x) {
                break;
            }
            stamp(y, x, radius * (1.0 - 0.4 * step as f64 / steps as f64));
            if depth < 2 && step > 4 && rng.random::<f64>() < 3.0 / s {
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                stack.push((y, x, angle + side * rng.random_range(0.4..1.0), (radius * 0.75).max(0.8), depth + 1));
            }
        }
    }

    let (cy, cx, fov) = ((s - 1.0) / 2.0, (s - 1.0) / 2.0, 0.49 * s);
    let mut image = vec![0.0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if d > fov {
                mask[y * size + x] = 0.0;
                continue;
            }
            let shade = 1.0 - 0.35 * (d / fov).powi(2);
            let disc_glow = (-((y as f64 - disc.0).powi(2) + (x as f64 - disc.1).powi(2)) / (2.0 * (s / 14.0).powi(2))).exp();
            let v = mask[y * size + x] as f64;
            let base = [0.75 * shade, 0.38 * shade, 0.15 * shade];
            for (c, b) in base.iter().enumerate() {
                let noise = rng.random_range(-0.02..0.02);
                let px = (b + 0.2 * disc_glow) * (1.0 - 0.55 * v) + noise;
                image[c * size * size + y * size + x] = px.clamp(0.0, 1.0) as f32;
            }
        }
    }
    (
        Tensor::from_vec(&[1, 3, size, size], image).expect("sized"),
        Tensor::from_vec(&[1, 1, size, size], mask).expect("sized"),
    )
}

/// Writes a dataset tree `<root>/{train,test}/{images,masks}/NN.png`.
pub fn write_dataset(root: impl AsRef<Path>, train: usize, test: usize, size: usize, seed: u64) -> Result<()> {
    let root = root.as_ref();
    for (split, count, offset) in [("train", train, 0u64), ("test", test, 1000)] {
        let (img_dir, mask_dir) = (root.join(split).join("images"), root.join(split).join("masks"));
        for dir in [&img_dir, &mask_dir] {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        for i in 0..count {
            let (img, mask) = vessel_image(size, seed.wrapping_add(offset + i as u64));
            let name = format!("{:02}.png", i + 1);
            save_rgb(&img, img_dir.join(&name))?;
            save_gray(&mask, mask_dir.join(&name))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_binary_with_reasonable_coverage() {
        let (a, ma) = vessel_image(64, 3);
        let (b, mb) = vessel_image(64, 3);
        assert_eq!((a.clone(), ma.clone()), (b, mb));
        assert!(ma.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let fg = ma.sum() / ma.numel() as f64;
        assert!((0.03..0.4).contains(&fg), "foreground fraction {fg}");
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
