//! Forward and backward kernels over NCHW tensors.
//!
//! All 3×3 convolutions use one pixel of zero padding and stride 1, so they
//! preserve spatial extents. Reductions accumulate in `f64`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `out[y, x] += a * src[y + dy, x + dx]` wherever the source pixel exists.
#[inline]
fn shifted_axpy<T: Scalar>(out: &mut [T], src: &[T], h: usize, w: usize, dy: isize, dx: isize, a: T) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let o = &mut out[y * w + x0..y * w + x1];
        let s0 = (sy * w) as isize + x0 as isize + dx;
        let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
        for (o, &s) in o.iter_mut().zip(s) {
            *o += a * s;
        }
    }
}

/// `Σ a[y, x] * b[y + dy, x + dx]` over valid pixels.
#[inline]
fn shifted_dot<T: Scalar>(a: &[T], b: &[T], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    if x0 >= x1 {
        return 0.0;
    }
    let mut total = 0.0;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let ar = &a[y * w + x0..y * w + x1];
        let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
        let br = &b[s0..s0 + (x1 - x0)];
        let mut row = T::zero();
        for (&p, &q) in ar.iter().zip(br) {
            row += p * q;
        }
        total += row.as_f64();
    }
    total
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    // chunked so long planes do not lose f32 precision
    a.chunks(256)
        .zip(b.chunks(256))
        .map(|(x, y)| {
            let mut s = T::zero();
            for (&p, &q) in x.iter().zip(y) {
                s += p * q;
            }
            s.as_f64()
        })
        .sum()
}

#[inline]
fn axpy<T: Scalar>(out: &mut [T], src: &[T], a: T) {
    for (o, &s) in out.iter_mut().zip(src) {
        *o += a * s;
    }
}

fn plane_sum<T: Scalar>(xs: &[T]) -> f64 {
    xs.chunks(256)
        .map(|c| c.iter().copied().sum::<T>().as_f64())
        .sum()
}

fn kernel_dims(kernel: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 4]> {
    kernel
        .dims4()
        .map_err(|_| Error::shape(format!("{what} must be 4-D, got {:?}", kernel.shape())))
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != channels {
            return Err(Error::shape(format!(
                "bias has {} entries, expected {channels}",
                b.numel()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// depthwise 3x3

pub fn dwconv3x3<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4()?;
    let kd = kernel_dims(kernel, "depthwise kernel")?;
    if kd != [c, 1, 3, 3] {
        return Err(Error::shape(format!(
            "depthwise kernel {kd:?} does not match input with {c} channels (expected [{c}, 1, 3, 3])"
        )));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let (x, k) = (input.data(), kernel.data());
    let o = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let src = &x[base..base + plane];
            let dst = &mut o[base..base + plane];
            for t in 0..9 {
                shifted_axpy(dst, src, h, w, t as isize / 3 - 1, t as isize % 3 - 1, k[ch * 9 + t]);
            }
        }
    }
    Ok(out)
}

/// Returns `(d_input, d_kernel)`.
pub fn dwconv3x3_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = input.dims4().expect("validated in forward");
    let plane = h * w;
    let mut dx = Tensor::zeros(input.shape());
    let mut dk = vec![0.0f64; c * 9];
    let (x, k, g) = (input.data(), kernel.data(), grad_out.data());
    let dxd = dx.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let gp = &g[base..base + plane];
            let xp = &x[base..base + plane];
            for t in 0..9 {
                let (dy, dxo) = (t as isize / 3 - 1, t as isize % 3 - 1);
                shifted_axpy(&mut dxd[base..base + plane], gp, h, w, -dy, -dxo, k[ch * 9 + t]);
                dk[ch * 9 + t] += shifted_dot(gp, xp, h, w, dy, dxo);
            }
        }
    }
    let dk = Tensor::from_vec(kernel.shape(), dk.into_iter().map(T::of).collect())
        .expect("kernel shape");
    (dx, dk)
}

// ---------------------------------------------------------------------------
// dense 3x3

pub fn conv3x3<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, cin, h, w] = input.dims4()?;
    let [cout, wcin, kh, kw] = kernel_dims(weight, "conv weight")?;
    if wcin != cin || kh != 3 || kw != 3 {
        return Err(Error::shape(format!(
            "conv weight {:?} does not match input with {cin} channels",
            weight.shape()
        )));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, cout, h, w]);
    let (x, wt) = (input.data(), weight.data());
    let o = out.data_mut();
    for b in 0..n {
        for co in 0..cout {
            let dst = &mut o[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            for ci in 0..cin {
                let src = &x[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                let kbase = (co * cin + ci) * 9;
                for t in 0..9 {
                    shifted_axpy(dst, src, h, w, t as isize / 3 - 1, t as isize % 3 - 1, wt[kbase + t]);
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(d_input, d_weight)`.
pub fn conv3x3_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, cin, h, w] = input.dims4().expect("validated in forward");
    let cout = weight.shape()[0];
    let plane = h * w;
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = vec![0.0f64; cout * cin * 9];
    let (x, wt, g) = (input.data(), weight.data(), grad_out.data());
    let dxd = dx.data_mut();
    for b in 0..n {
        for co in 0..cout {
            let gp = &g[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            for ci in 0..cin {
                let xs = (b * cin + ci) * plane;
                let kbase = (co * cin + ci) * 9;
                for t in 0..9 {
                    let (dy, dxo) = (t as isize / 3 - 1, t as isize % 3 - 1);
                    shifted_axpy(&mut dxd[xs..xs + plane], gp, h, w, -dy, -dxo, wt[kbase + t]);
                    dw[kbase + t] += shifted_dot(gp, &x[xs..xs + plane], h, w, dy, dxo);
                }
            }
        }
    }
    let dw = Tensor::from_vec(weight.shape(), dw.into_iter().map(T::of).collect())
        .expect("weight shape");
    (dx, dw)
}

// ---------------------------------------------------------------------------
// pointwise 1x1

pub fn pwconv<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [n, cin, h, w] = input.dims4()?;
    let [cout, wcin, kh, kw] = kernel_dims(weight, "pointwise weight")?;
    if wcin != cin || kh != 1 || kw != 1 {
        return Err(Error::shape(format!(
            "pointwise weight {:?} does not match input with {cin} channels",
            weight.shape()
        )));
    }
    check_bias(bias, cout)?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, cout, h, w]);
    let (x, wt) = (input.data(), weight.data());
    let o = out.data_mut();
    for b in 0..n {
        for co in 0..cout {
            let dst = &mut o[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            if let Some(bias) = bias {
                dst.fill(bias.data()[co]);
            }
            for ci in 0..cin {
                axpy(dst, &x[(b * cin + ci) * plane..(b * cin + ci + 1) * plane], wt[co * cin + ci]);
            }
        }
    }
    Ok(out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn pwconv_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, cin, h, w] = input.dims4().expect("validated in forward");
    let cout = weight.shape()[0];
    let plane = h * w;
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = vec![0.0f64; cout * cin];
    let mut db = vec![0.0f64; cout];
    let (x, wt, g) = (input.data(), weight.data(), grad_out.data());
    let dxd = dx.data_mut();
    for b in 0..n {
        for co in 0..cout {
            let gp = &g[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            db[co] += plane_sum(gp);
            for ci in 0..cin {
                let xs = (b * cin + ci) * plane;
                axpy(&mut dxd[xs..xs + plane], gp, wt[co * cin + ci]);
                dw[co * cin + ci] += dot(gp, &x[xs..xs + plane]);
            }
        }
    }
    let dw = Tensor::from_vec(weight.shape(), dw.into_iter().map(T::of).collect()).expect("shape");
    let db = Tensor::from_vec(&[cout], db.into_iter().map(T::of).collect()).expect("shape");
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// batch norm

/// Values saved by a batch-norm forward pass for its backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Scalar> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Normalized with batch statistics (train) or running statistics (eval).
    pub batch_stats: bool,
}

/// Per-channel batch statistics produced in train mode (biased variance).
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(format!(
            "batch norm affine params have {}/{} entries, expected {c}",
            gamma.numel(),
            beta.numel()
        )));
    }
    Ok(())
}

pub fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchStats)> {
    let [n, c, h, w] = input.dims4()?;
    check_affine(c, gamma, beta)?;
    let plane = h * w;
    let count = n * plane;
    if count == 1 {
        return Err(Error::DegenerateBatch(format!(
            "input {:?} has N*H*W = 1",
            input.shape()
        )));
    }
    let x = input.data();
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        let m = s / count as f64;
        let mut ss = 0.0;
        for b in 0..n {
            ss += x[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                .iter()
                .map(|v| (v.as_f64() - m).powi(2))
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = ss / count as f64;
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + eps).sqrt())).collect();
    let (xhat, out) = normalize(input, gamma, beta, &mean, &inv_std);
    Ok((
        out,
        BatchNormCache {
            xhat,
            inv_std,
            batch_stats: true,
        },
        BatchStats { mean, var },
    ))
}

pub fn batchnorm_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let [_, c, _, _] = input.dims4()?;
    check_affine(c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape(format!(
            "running statistics have {} entries, expected {c}",
            running_mean.len()
        )));
    }
    let mean: Vec<f64> = running_mean.iter().map(|m| m.as_f64()).collect();
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|v| T::of(1.0 / (v.as_f64() + eps).sqrt()))
        .collect();
    let (xhat, out) = normalize(input, gamma, beta, &mean, &inv_std);
    Ok((
        out,
        BatchNormCache {
            xhat,
            inv_std,
            batch_stats: false,
        },
    ))
}

fn normalize<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[f64],
    inv_std: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = input.dims4().expect("checked");
    let plane = h * w;
    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let x = input.data();
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            let m = T::of(mean[ch]);
            let (g, bt, is) = (gamma.data()[ch], beta.data()[ch], inv_std[ch]);
            for ((xh, o), &v) in xhat.data_mut()[r.clone()]
                .iter_mut()
                .zip(&mut out.data_mut()[r.clone()])
                .zip(&x[r.clone()])
            {
                *xh = (v - m) * is;
                *o = g * *xh + bt;
            }
        }
    }
    (xhat, out)
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = grad_out.dims4().expect("checked");
    let plane = h * w;
    let count = (n * plane) as f64;
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            dbeta[ch] += plane_sum(&g[r.clone()]);
            dgamma[ch] += dot(&g[r.clone()], &xh[r]);
        }
    }
    let mut dx = Tensor::zeros(grad_out.shape());
    let dxd = dx.data_mut();
    for ch in 0..c {
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        if cache.batch_stats {
            let mean_g = T::of(dbeta[ch] / count);
            let mean_gx = T::of(dgamma[ch] / count);
            for b in 0..n {
                let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                for ((d, &gv), &xv) in dxd[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xh[r]) {
                    *d = scale * (gv - mean_g - xv * mean_gx);
                }
            }
        } else {
            for b in 0..n {
                let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                for (d, &gv) in dxd[r.clone()].iter_mut().zip(&g[r]) {
                    *d = scale * gv;
                }
            }
        }
    }
    let dgamma = Tensor::from_vec(gamma.shape(), dgamma.into_iter().map(T::of).collect()).expect("shape");
    let dbeta = Tensor::from_vec(gamma.shape(), dbeta.into_iter().map(T::of).collect()).expect("shape");
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// element-wise

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    input
        .zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
        .expect("same shape")
}

/// Logistic function, clamped to the representable values strictly inside
/// `(0, 1)`.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    s.max(T::min_positive_value())
        .min(T::one() - T::epsilon() / (T::one() + T::one()))
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    output
        .zip_map(grad_out, |s, g| g * s * (T::one() - s))
        .expect("same shape")
}

/// `1 - x`, the complement of a probability map.
pub fn one_minus<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| T::one() - x)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

// ---------------------------------------------------------------------------
// pooling

/// Returns the pooled tensor and, per output element, the flat index of the
/// input element that won the max.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "2x2 max pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let x = input.data();
    let o = out.data_mut();
    for nc in 0..n * c {
        let ib = nc * h * w;
        let ob = nc * oh * ow;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = ib + 2 * y * w + 2 * xx;
                for cand in [
                    ib + 2 * y * w + 2 * xx + 1,
                    ib + (2 * y + 1) * w + 2 * xx,
                    ib + (2 * y + 1) * w + 2 * xx + 1,
                ] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                o[ob + y * ow + xx] = x[best];
                arg[ob + y * ow + xx] = best as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2x2_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i as usize] += g;
    }
    dx
}

// ---------------------------------------------------------------------------
// transposed convolution, kernel 2, stride 2

pub fn conv_transpose2x2<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [n, cin, h, w] = input.dims4()?;
    let [wcin, cout, kh, kw] = kernel_dims(weight, "transposed conv weight")?;
    if wcin != cin || kh != 2 || kw != 2 {
        return Err(Error::shape(format!(
            "transposed conv weight {:?} does not match input with {cin} channels",
            weight.shape()
        )));
    }
    check_bias(bias, cout)?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let (x, wt) = (input.data(), weight.data());
    let o = out.data_mut();
    for b in 0..n {
        for co in 0..cout {
            let dst = &mut o[(b * cout + co) * oh * ow..(b * cout + co + 1) * oh * ow];
            if let Some(bias) = bias {
                dst.fill(bias.data()[co]);
            }
            for ci in 0..cin {
                let src = &x[(b * cin + ci) * h * w..(b * cin + ci + 1) * h * w];
                let k = &wt[(ci * cout + co) * 4..(ci * cout + co) * 4 + 4];
                for y in 0..h {
                    let srow = &src[y * w..(y + 1) * w];
                    for a in 0..2 {
                        let drow = &mut dst[(2 * y + a) * ow..(2 * y + a + 1) * ow];
                        let (k0, k1) = (k[2 * a], k[2 * a + 1]);
                        for (pair, &v) in drow.chunks_exact_mut(2).zip(srow) {
                            pair[0] += k0 * v;
                            pair[1] += k1 * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv_transpose2x2_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, cin, h, w] = input.dims4().expect("checked");
    let cout = weight.shape()[1];
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = vec![0.0f64; cin * cout * 4];
    let mut db = vec![0.0f64; cout];
    let (x, wt, g) = (input.data(), weight.data(), grad_out.data());
    let dxd = dx.data_mut();
    for b in 0..n {
        for co in 0..cout {
            let gp = &g[(b * cout + co) * oh * ow..(b * cout + co + 1) * oh * ow];
            db[co] += plane_sum(gp);
            for ci in 0..cin {
                let xs = (b * cin + ci) * h * w;
                let kb = (ci * cout + co) * 4;
                let mut acc = [T::zero(); 4];
                for y in 0..h {
                    for a in 0..2 {
                        let grow = &gp[(2 * y + a) * ow..(2 * y + a + 1) * ow];
                        let (k0, k1) = (wt[kb + 2 * a], wt[kb + 2 * a + 1]);
                        let xrow = &x[xs + y * w..xs + (y + 1) * w];
                        let drow = &mut dxd[xs + y * w..xs + (y + 1) * w];
                        let (mut s0, mut s1) = (T::zero(), T::zero());
                        for ((pair, &xv), d) in grow.chunks_exact(2).zip(xrow).zip(drow.iter_mut()) {
                            *d += k0 * pair[0] + k1 * pair[1];
                            s0 += pair[0] * xv;
                            s1 += pair[1] * xv;
                        }
                        acc[2 * a] += s0;
                        acc[2 * a + 1] += s1;
                    }
                }
                for (t, v) in acc.iter().enumerate() {
                    dw[kb + t] += v.as_f64();
                }
            }
        }
    }
    let dw = Tensor::from_vec(weight.shape(), dw.into_iter().map(T::of).collect()).expect("shape");
    let db = Tensor::from_vec(&[cout], db.into_iter().map(T::of).collect()).expect("shape");
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// channel concat

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.dims4()?;
    let [nb, cb, hb, wb] = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "concat needs matching batch and spatial dims, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * (ca + cb) * plane);
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], data)
}

/// Splits a gradient of `concat_channels(a, b)` back into `(d_a, d_b)`.
pub fn concat_channels_backward<T: Scalar>(grad_out: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let c = grad_out.shape()[1];
    (
        grad_out.channel_slice(0, ca).expect("checked"),
        grad_out.channel_slice(ca, c - ca).expect("checked"),
    )
}

// ---------------------------------------------------------------------------
// bilinear resize (half-pixel centers, edge clamp)

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(inp: usize, out: usize) -> Vec<Tap> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(inp - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target must be at least 1x1"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(input.clone());
    }
    let (ty, tx) = (taps(h, out_h), taps(w, out_w));
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let x = input.data();
    let o = out.data_mut();
    for nc in 0..n * c {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        let dst = &mut o[nc * out_h * out_w..(nc + 1) * out_h * out_w];
        for (oy, ty) in ty.iter().enumerate() {
            for (ox, tx) in tx.iter().enumerate() {
                let p = |yy: usize, xx: usize| src[yy * w + xx].as_f64();
                let top = p(ty.lo, tx.lo) * (1.0 - tx.frac) + p(ty.lo, tx.hi) * tx.frac;
                let bot = p(ty.hi, tx.lo) * (1.0 - tx.frac) + p(ty.hi, tx.hi) * tx.frac;
                dst[oy * out_w + ox] = T::of(top * (1.0 - ty.frac) + bot * ty.frac);
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    let [_, _, out_h, out_w] = grad_out.dims4().expect("checked");
    if (out_h, out_w) == (h, w) {
        return grad_out.clone();
    }
    let (ty, tx) = (taps(h, out_h), taps(w, out_w));
    let mut acc = vec![0.0f64; n * c * h * w];
    let g = grad_out.data();
    for nc in 0..n * c {
        let dst = &mut acc[nc * h * w..(nc + 1) * h * w];
        let src = &g[nc * out_h * out_w..(nc + 1) * out_h * out_w];
        for (oy, ty) in ty.iter().enumerate() {
            for (ox, tx) in tx.iter().enumerate() {
                let v = src[oy * out_w + ox].as_f64();
                let (wy0, wy1) = (1.0 - ty.frac, ty.frac);
                let (wx0, wx1) = (1.0 - tx.frac, tx.frac);
                dst[ty.lo * w + tx.lo] += v * wy0 * wx0;
                dst[ty.lo * w + tx.hi] += v * wy0 * wx1;
                dst[ty.hi * w + tx.lo] += v * wy1 * wx0;
                dst[ty.hi * w + tx.hi] += v * wy1 * wx1;
            }
        }
    }
    Tensor::from_vec(input_shape, acc.into_iter().map(T::of).collect()).expect("shape")
}

// ---------------------------------------------------------------------------
// broadcast multiply by a single-channel map

pub fn hadamard_broadcast<T: Scalar>(features: &Tensor<T>, map: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = features.dims4()?;
    let [mn, mc, mh, mw] = map.dims4()?;
    if mc != 1 {
        return Err(Error::shape(format!("attention map must have 1 channel, got {mc}")));
    }
    if (mn, mh, mw) != (n, h, w) {
        return Err(Error::shape(format!(
            "attention map {:?} does not match features {:?}",
            map.shape(),
            features.shape()
        )));
    }
    let plane = h * w;
    let mut out = features.clone();
    let o = out.data_mut();
    for b in 0..n {
        let m = &map.data()[b * plane..(b + 1) * plane];
        for ch in 0..c {
            for (v, &mv) in o[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter_mut().zip(m) {
                *v *= mv;
            }
        }
    }
    Ok(out)
}

/// Returns `(d_features, d_map)`.
pub fn hadamard_broadcast_backward<T: Scalar>(
    features: &Tensor<T>,
    map: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = features.dims4().expect("checked");
    let plane = h * w;
    let dfeat = hadamard_broadcast(grad_out, map).expect("checked");
    let mut dmap = vec![T::zero(); n * plane];
    let (f, g) = (features.data(), grad_out.data());
    for b in 0..n {
        let dm = &mut dmap[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            for ((d, &fv), &gv) in dm.iter_mut().zip(&f[r.clone()]).zip(&g[r]) {
                *d += fv * gv;
            }
        }
    }
    (dfeat, Tensor::from_vec(map.shape(), dmap).expect("shape"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn dwconv_delta_kernel_is_identity() {
        let x = Tensor::from_fn(&[2, 3, 5, 4], |i| (i as f32 * 0.37).sin());
        let k = Tensor::from_fn(&[3, 1, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 });
        assert_eq!(dwconv3x3(&x, &k).unwrap(), x);
    }

    #[test]
    fn dwconv_zero_input_and_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let k = Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32);
        assert!(dwconv3x3(&x, &k).unwrap().data().iter().all(|&v| v == 0.0));
        let bad = Tensor::<f32>::zeros(&[3, 1, 3, 3]);
        assert!(matches!(dwconv3x3(&x, &bad), Err(Error::Shape(_))));
        let not4d = Tensor::<f32>::zeros(&[2, 16]);
        assert!(matches!(dwconv3x3(&not4d, &k), Err(Error::Shape(_))));
    }

    #[test]
    fn pwconv_hand_cases() {
        let x = t(&[1, 2, 1, 1], &[3.0, 5.0]);
        let w = t(&[2, 2, 1, 1], &[1.0, 1.0, 2.0, -1.0]);
        assert_eq!(pwconv(&x, &w, None).unwrap().data(), &[8.0, 1.0]);

        let eye = t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::from_fn(&[2, 2, 3, 3], |i| i as f32 - 7.0);
        assert_eq!(pwconv(&x, &eye, None).unwrap(), x);

        let zero = Tensor::<f32>::zeros(&[3, 2, 1, 1]);
        let bias = t(&[3], &[0.5, -1.0, 2.0]);
        let y = pwconv(&x, &zero, Some(&bias)).unwrap();
        for b in 0..2 {
            for k in 0..3 {
                for p in 0..9 {
                    assert_eq!(y.data()[(b * 3 + k) * 9 + p], bias.data()[k]);
                }
            }
        }
        assert!(pwconv(&x, &Tensor::zeros(&[1, 3, 1, 1]), None).is_err());
    }

    #[test]
    fn batchnorm_train_cases() {
        let x = t(&[1, 1, 1, 2], &[1.0, 3.0]);
        let (y, _, stats) =
            batchnorm_train(&x, &t(&[1], &[1.0]), &t(&[1], &[0.0]), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);

        let x = Tensor::from_fn(&[2, 2, 2, 2], |i| if i % 8 < 4 { 3.0 } else { -1.5 });
        let beta = t(&[2], &[0.25, -0.75]);
        let (y, _, _) = batchnorm_train(&x, &t(&[2], &[4.0, 9.0]), &beta, 1e-5).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, beta.data()[(i / 4) % 2]);
        }

        let single = t(&[1, 1, 1, 1], &[2.0]);
        assert!(matches!(
            batchnorm_train(&single, &t(&[1], &[1.0]), &t(&[1], &[0.0]), 1e-5),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn batchnorm_eval_unit_stats_is_near_identity() {
        let x = Tensor::from_fn(&[1, 2, 3, 3], |i| i as f32 * 0.1 - 0.5);
        let (y, _) =
            batchnorm_eval(&x, &t(&[2], &[1.0, 1.0]), &t(&[2], &[0.0, 0.0]), &[0.0, 0.0], &[1.0, 1.0], 1e-5)
                .unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn relu_and_sigmoid_values() {
        assert_eq!(relu(&t(&[3], &[-2.0, 0.0, 3.0])).data(), &[0.0, 0.0, 3.0]);
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((sigmoid_scalar(1.0f32) as f64 - expected).abs() < 1e-7);
        assert_eq!(sigmoid_scalar(-100.0f32), f32::MIN_POSITIVE);
        assert_eq!(sigmoid_scalar(100.0f32), 1.0 - f32::EPSILON / 2.0);
        assert!(sigmoid_scalar(40.0f64) < 1.0);
    }

    #[test]
    fn maxpool_cases() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(maxpool2x2(&x).unwrap().0.data(), &[4.0]);
        let c = Tensor::<f32>::full(&[2, 3, 4, 6], 1.5);
        let (y, _) = maxpool2x2(&c).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 1.5));
        assert!(maxpool2x2(&Tensor::<f32>::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn conv_transpose_single_tap() {
        let x = t(&[1, 1, 1, 1], &[2.0]);
        let k = t(&[1, 1, 2, 2], &[1.0, -2.0, 3.0, 0.5]);
        assert_eq!(conv_transpose2x2(&x, &k, None).unwrap().data(), &[2.0, -4.0, 6.0, 1.0]);
        let x = Tensor::from_fn(&[2, 3, 3, 2], |i| i as f32);
        let y = conv_transpose2x2(&x, &Tensor::zeros(&[3, 4, 2, 2]), None).unwrap();
        assert_eq!(y.shape(), &[2, 4, 6, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(conv_transpose2x2(&x, &Tensor::zeros(&[2, 4, 2, 2]), None).is_err());
    }

    #[test]
    fn concat_cases() {
        let a = t(&[1, 2, 1, 1], &[1.0, 2.0]);
        let b = t(&[1, 1, 1, 1], &[9.0]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 9.0]);
        let (ra, rb) = concat_channels_backward(&c, 2);
        assert_eq!((ra, rb), (a, b));
        let a = Tensor::<f32>::zeros(&[2, 8, 4, 4]);
        let b = Tensor::<f32>::zeros(&[2, 24, 4, 4]);
        assert_eq!(concat_channels(&a, &b).unwrap().shape(), &[2, 32, 4, 4]);
        assert!(concat_channels(&a, &Tensor::zeros(&[2, 1, 4, 2])).is_err());
    }

    #[test]
    fn resize_cases() {
        let x = Tensor::from_fn(&[1, 2, 3, 5], |i| i as f32 * 0.3);
        assert_eq!(resize_bilinear(&x, 3, 5).unwrap(), x);
        let c = Tensor::<f32>::full(&[1, 1, 3, 3], 0.7);
        let y = resize_bilinear(&c, 7, 2).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn hadamard_cases() {
        let f = Tensor::from_fn(&[1, 3, 2, 2], |i| i as f32 - 4.0);
        let ones = Tensor::<f32>::ones(&[1, 1, 2, 2]);
        assert_eq!(hadamard_broadcast(&f, &ones).unwrap(), f);
        let zeros = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(hadamard_broadcast(&f, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(hadamard_broadcast(&f, &Tensor::zeros(&[1, 2, 2, 2])).is_err());
    }
}
