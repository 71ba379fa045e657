//! Direct-loop reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rga::metrics::ConfusionCounts;
use rga::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    let density = rng.random_range(0.0..1.0);
    Tensor::from_fn(&[1, 1, h, w], |_| if rng.random::<f64>() < density { 1.0 } else { 0.0 })
}

fn at(t: &Tensor, n: usize, c: usize, y: isize, x: isize) -> f64 {
    let s = t.shape();
    if y < 0 || x < 0 || y >= s[2] as isize || x >= s[3] as isize {
        return 0.0;
    }
    t.data()[((n * s[1] + c) * s[2] + y as usize) * s[3] + x as usize] as f64
}

/// Same-padded 3x3 cross-correlation, weight `[cout, cin, 3, 3]`.
pub fn conv3x3(input: &Tensor, weight: &Tensor) -> Vec<f64> {
    let [n, cin, h, w] = input.dims4().unwrap();
    let cout = weight.shape()[0];
    let mut out = Vec::with_capacity(n * cout * h * w);
    for b in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let k = weight.data()[((co * cin + ci) * 3 + ky) * 3 + kx] as f64;
                                acc += k * at(input, b, ci, y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Per-channel same-padded 3x3 cross-correlation, kernel `[c, 1, 3, 3]`.
pub fn dwconv3x3(input: &Tensor, kernel: &Tensor) -> Vec<f64> {
    let [n, c, h, w] = input.dims4().unwrap();
    let mut out = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k = kernel.data()[ch * 9 + ky * 3 + kx] as f64;
                            acc += k * at(input, b, ch, y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// 1x1 convolution, weight `[cout, cin, 1, 1]`.
pub fn pwconv(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Vec<f64> {
    let [n, cin, h, w] = input.dims4().unwrap();
    let cout = weight.shape()[0];
    let mut out = Vec::with_capacity(n * cout * h * w);
    for b in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.map_or(0.0, |b| b.data()[co] as f64);
                    for ci in 0..cin {
                        acc += weight.data()[co * cin + ci] as f64 * at(input, b, ci, y as isize, x as isize);
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// 2x2 stride-2 max pooling; returns values and the flat index of the
/// first maximal element in row-major window order.
pub fn maxpool2x2(input: &Tensor) -> (Vec<f64>, Vec<u32>) {
    let [n, c, h, w] = input.dims4().unwrap();
    let (mut vals, mut idx) = (Vec::new(), Vec::new());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / 2 {
                for x in 0..w / 2 {
                    let mut best: Option<(f64, usize)> = None;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let (yy, xx) = (2 * y + dy, 2 * x + dx);
                        let v = at(input, b, ch, yy as isize, xx as isize);
                        if best.is_none_or(|(bv, _)| v > bv) {
                            best = Some((v, ((b * c + ch) * h + yy) * w + xx));
                        }
                    }
                    let (v, i) = best.unwrap();
                    vals.push(v);
                    idx.push(i as u32);
                }
            }
        }
    }
    (vals, idx)
}

/// Kernel-2 stride-2 transposed convolution, weight `[cin, cout, 2, 2]`.
pub fn conv_transpose2x2(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Vec<f64> {
    let [n, cin, h, w] = input.dims4().unwrap();
    let cout = weight.shape()[1];
    let mut out = Vec::with_capacity(n * cout * 4 * h * w);
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..2 * h {
                for ox in 0..2 * w {
                    let mut acc = bias.map_or(0.0, |b| b.data()[co] as f64);
                    for ci in 0..cin {
                        let k = weight.data()[((ci * cout + co) * 2 + oy % 2) * 2 + ox % 2] as f64;
                        acc += k * at(input, b, ci, (oy / 2) as isize, (ox / 2) as isize);
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(got: &Tensor, want: &[f64]) -> f64 {
    assert_eq!(got.numel(), want.len(), "element count");
    got.data()
        .iter()
        .zip(want)
        .map(|(&g, &w)| (g as f64 - w).abs())
        .fold(0.0, f64::max)
}

/// Pixel-by-pixel tally with foreground meaning a value above one half.
pub fn brute_confusion(pred: &Tensor, gt: &Tensor) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for i in 0..pred.numel() {
        let p = pred.data()[i] > 0.5;
        let g = gt.data()[i] > 0.5;
        if p && g {
            c.tp += 1;
        } else if p {
            c.fp += 1;
        } else if g {
            c.fn_ += 1;
        } else {
            c.tn += 1;
        }
    }
    c
}

/// Se, Sp, Acc, Precision, F1, Jaccard from counts; 0 where undefined.
pub fn brute_metrics(c: &ConfusionCounts) -> [f64; 6] {
    let r = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    [
        r(c.tp, c.tp + c.fn_),
        r(c.tn, c.tn + c.fp),
        r(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn_),
        r(c.tp, c.tp + c.fp),
        r(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        r(c.tp, c.tp + c.fp + c.fn_),
    ]
}

pub fn metric_values(m: &rga::metrics::Metrics) -> [f64; 6] {
    [m.sensitivity, m.specificity, m.accuracy, m.precision, m.f1, m.jaccard]
}

pub const ORACLE_TOLERANCE: f64 = 1e-5;

fn dims(rng: &mut ChaCha8Rng, even: bool) -> (usize, usize, usize, usize) {
    let side = |rng: &mut ChaCha8Rng| if even { 2 * rng.random_range(1..=5) } else { rng.random_range(1..=9) };
    (rng.random_range(1..=2), rng.random_range(1..=6), side(rng), side(rng))
}

/// Worst absolute deviation of the depthwise 3x3 kernel over `cases` shapes.
pub fn sweep_dwconv(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..cases)
        .map(|_| {
            let (n, c, h, w) = dims(&mut r, false);
            let x = random_tensor(&mut r, &[n, c, h, w]);
            let k = random_tensor(&mut r, &[c, 1, 3, 3]);
            max_abs_diff(&rga::tensor::ops::dwconv3x3(&x, &k).unwrap(), &dwconv3x3(&x, &k))
        })
        .fold(0.0, f64::max)
}

pub fn sweep_conv3x3(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..cases)
        .map(|_| {
            let (n, cin, h, w) = dims(&mut r, false);
            let cout = r.random_range(1..=6);
            let x = random_tensor(&mut r, &[n, cin, h, w]);
            let k = random_tensor(&mut r, &[cout, cin, 3, 3]);
            max_abs_diff(&rga::tensor::ops::conv3x3(&x, &k).unwrap(), &conv3x3(&x, &k))
        })
        .fold(0.0, f64::max)
}

pub fn sweep_pwconv(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..cases)
        .map(|_| {
            let (n, cin, h, w) = dims(&mut r, false);
            let cout = r.random_range(1..=6);
            let x = random_tensor(&mut r, &[n, cin, h, w]);
            let k = random_tensor(&mut r, &[cout, cin, 1, 1]);
            let b = r.random::<bool>().then(|| random_tensor(&mut r, &[cout]));
            max_abs_diff(&rga::tensor::ops::pwconv(&x, &k, b.as_ref()).unwrap(), &pwconv(&x, &k, b.as_ref()))
        })
        .fold(0.0, f64::max)
}

/// Also requires identical argmax indices; a mismatch counts as infinite
/// deviation.
pub fn sweep_maxpool(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..cases)
        .map(|_| {
            let (n, c, h, w) = dims(&mut r, true);
            let mut x = random_tensor(&mut r, &[n, c, h, w]);
            if r.random::<bool>() {
                // coarse values force ties
                x = x.map(|v| (v * 2.0).round());
            }
            let (got, arg) = rga::tensor::ops::maxpool2x2(&x).unwrap();
            let (want, want_arg) = maxpool2x2(&x);
            if arg != want_arg {
                return f64::INFINITY;
            }
            max_abs_diff(&got, &want)
        })
        .fold(0.0, f64::max)
}

pub fn sweep_conv_transpose(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..cases)
        .map(|_| {
            let (n, cin, h, w) = dims(&mut r, false);
            let cout = r.random_range(1..=6);
            let x = random_tensor(&mut r, &[n, cin, h, w]);
            let k = random_tensor(&mut r, &[cin, cout, 2, 2]);
            let b = r.random::<bool>().then(|| random_tensor(&mut r, &[cout]));
            max_abs_diff(
                &rga::tensor::ops::conv_transpose2x2(&x, &k, b.as_ref()).unwrap(),
                &conv_transpose2x2(&x, &k, b.as_ref()),
            )
        })
        .fold(0.0, f64::max)
}

/// Number of random 32x32 pairs whose counts or metrics differ from the
/// brute-force tally in any bit.
pub fn sweep_metrics(cases: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..cases)
        .filter(|_| {
            let (p, g) = (random_mask(&mut r, 32, 32), random_mask(&mut r, 32, 32));
            let c = rga::metrics::confusion(&p, &g).unwrap();
            let m = rga::metrics::metrics(&c).unwrap();
            let want = brute_confusion(&p, &g);
            c != want
                || metric_values(&m)
                    .iter()
                    .zip(brute_metrics(&want))
                    .any(|(a, b)| a.to_bits() != b.to_bits())
        })
        .count()
}
