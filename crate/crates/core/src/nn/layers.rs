//! Forward and backward kernels. Activations are flat buffers in
//! `(n, c, h, w)` order. The convolutional kernels are generic over the
//! activation precision; statistics and parameter gradients are always
//! accumulated in `f64`.

use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};

use rayon::prelude::*;

use super::params::LstmParams;

/// Images per parallel work item. Fixed so partial sums, and therefore
/// results, do not depend on the thread count.
const CHUNK: usize = 8;

/// Floating-point type usable for CNN activations.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Sum
    + 'static
{
    const ZERO: Self;
    const NEG_INF: Self;
    fn of(v: f64) -> Self;
    fn get(self) -> f64;

    /// # Safety
    /// Every index addressed through the strides must be in bounds.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! scalar_impl {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const NEG_INF: Self = <$t>::NEG_INFINITY;

            fn of(v: f64) -> Self {
                v as $t
            }

            fn get(self) -> f64 {
                self as f64
            }

            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

scalar_impl!(f64, matrixmultiply::dgemm);
scalar_impl!(f32, matrixmultiply::sgemm);

/// `c = a * b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfolds one `(c, h, w)` image into `(c * 9, h * w)` columns for a 3x3,
/// stride 1, zero-padded convolution. Rows of `cols` are `ld` apart.
fn im2col<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T], ld: usize) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * ld..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::ZERO;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image gradient.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, img: &mut [T], ld: usize) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * ld..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

/// 3x3 "same" convolution plus bias.
pub fn conv_forward<T: Scalar>(x: &[T], s: ConvShape, weight: &[f64], bias: &[f64]) -> Vec<T> {
    let hw = s.h * s.w;
    let k = s.c_in * 9;
    let weight: Vec<T> = weight.iter().map(|&v| T::of(v)).collect();
    let mut z = vec![T::ZERO; s.n * s.c_out * hw];
    z.par_chunks_mut(CHUNK * s.c_out * hw)
        .zip(x.par_chunks(CHUNK * s.c_in * hw))
        .for_each(|(z_chunk, x_chunk)| {
            // images side by side: columns are (image, pixel)
            let m = x_chunk.len() / (s.c_in * hw);
            let ld = m * hw;
            let mut cols = vec![T::ZERO; k * ld];
            for (i, xi) in x_chunk.chunks(s.c_in * hw).enumerate() {
                im2col(xi, s.c_in, s.h, s.w, &mut cols[i * hw..], ld);
            }
            let mut out = vec![T::ZERO; s.c_out * ld];
            for (co, row) in out.chunks_mut(ld).enumerate() {
                row.fill(T::of(bias[co]));
            }
            gemm(s.c_out, k, ld, &weight, (k, 1), &cols, (ld, 1), T::of(1.0), &mut out, (ld, 1));
            for (i, zi) in z_chunk.chunks_mut(s.c_out * hw).enumerate() {
                for (co, plane) in zi.chunks_mut(hw).enumerate() {
                    plane.copy_from_slice(&out[co * ld + i * hw..][..hw]);
                }
            }
        });
    z
}

/// Gradients of [`conv_forward`]. `dx` is only computed when requested.
pub fn conv_backward<T: Scalar>(
    x: &[T],
    dz: &[T],
    s: ConvShape,
    weight: &[f64],
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<T>>) {
    let hw = s.h * s.w;
    let k = s.c_in * 9;
    let weight: Vec<T> = weight.iter().map(|&v| T::of(v)).collect();
    let mut dx = want_dx.then(|| vec![T::ZERO; s.n * s.c_in * hw]);
    let in_stride = CHUNK * s.c_in * hw;
    let out_stride = CHUNK * s.c_out * hw;

    let work = |x_chunk: &[T], dz_chunk: &[T], dx_chunk: Option<&mut [T]>| {
        let m = x_chunk.len() / (s.c_in * hw);
        let ld = m * hw;
        let mut cols = vec![T::ZERO; k * ld];
        let mut dzc = vec![T::ZERO; s.c_out * ld];
        let mut db = vec![0.0f64; s.c_out];
        for (i, (xi, dzi)) in x_chunk.chunks(s.c_in * hw).zip(dz_chunk.chunks(s.c_out * hw)).enumerate() {
            im2col(xi, s.c_in, s.h, s.w, &mut cols[i * hw..], ld);
            for (co, plane) in dzi.chunks(hw).enumerate() {
                dzc[co * ld + i * hw..][..hw].copy_from_slice(plane);
                db[co] += plane.iter().map(|v| v.get()).sum::<f64>();
            }
        }
        let mut dw = vec![T::ZERO; s.c_out * k];
        gemm(s.c_out, ld, k, &dzc, (ld, 1), &cols, (1, ld), T::ZERO, &mut dw, (k, 1));
        if let Some(dxc) = dx_chunk {
            // reuse the column buffer for the column gradient
            gemm(k, s.c_out, ld, &weight, (1, k), &dzc, (ld, 1), T::ZERO, &mut cols, (ld, 1));
            for (i, dxi) in dxc.chunks_mut(s.c_in * hw).enumerate() {
                col2im(&cols[i * hw..], s.c_in, s.h, s.w, dxi, ld);
            }
        }
        (dw, db)
    };

    let partials: Vec<(Vec<T>, Vec<f64>)> = match dx.as_mut() {
        Some(dx) => x
            .par_chunks(in_stride)
            .zip(dz.par_chunks(out_stride))
            .zip(dx.par_chunks_mut(in_stride))
            .map(|((xc, dzc), dxc)| work(xc, dzc, Some(dxc)))
            .collect(),
        None => x
            .par_chunks(in_stride)
            .zip(dz.par_chunks(out_stride))
            .map(|(xc, dzc)| work(xc, dzc, None))
            .collect(),
    };
    let mut dw = vec![0.0; s.c_out * k];
    let mut db = vec![0.0; s.c_out];
    for (pw, pb) in partials {
        dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b.get());
        db.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
    }
    (dw, db, dx)
}

/// Batch-norm statistics for `(n, c, s)` data: per-channel mean and biased
/// variance over `n * s` values. Planes are reduced in cache and merged in a
/// fixed order.
pub fn channel_stats<T: Scalar>(z: &[T], n: usize, c: usize, s: usize) -> (Vec<f64>, Vec<f64>) {
    let mut count = vec![0.0f64; c];
    let mut mean = vec![0.0f64; c];
    let mut m2 = vec![0.0f64; c];
    let sf = s as f64;
    for img in z.chunks(c * s).take(n) {
        for (ci, plane) in img.chunks(s).enumerate() {
            let pm = plane.iter().map(|v| v.get()).sum::<f64>() / sf;
            let pm2: f64 = plane.iter().map(|v| (v.get() - pm) * (v.get() - pm)).sum();
            let total = count[ci] + sf;
            let delta = pm - mean[ci];
            mean[ci] += delta * sf / total;
            m2[ci] += pm2 + delta * delta * count[ci] * sf / total;
            count[ci] = total;
        }
    }
    let var = m2.iter().zip(&count).map(|(v, k)| v / k).collect();
    (mean, var)
}

/// Per-channel affine batch-norm parameters, folded for the fused kernels.
#[derive(Debug, Clone, Copy)]
pub struct BnPlane {
    pub mean: f64,
    pub inv_std: f64,
    pub gamma: f64,
    pub beta: f64,
}

/// Fused batch norm, ReLU and 2x2 max pooling (per flagged axis) over
/// `(n, c, h, w)` pre-normalization activations. Returns the pooled map and
/// the argmax offset `dy * 2 + dx` of every output.
pub fn bn_relu_pool_forward<T: Scalar>(
    z: &[T],
    c: usize,
    h: usize,
    w: usize,
    bn: &[BnPlane],
    pool_h: bool,
    pool_w: bool,
) -> (Vec<T>, Vec<u8>) {
    let (fh, fw) = (if pool_h { 2 } else { 1 }, if pool_w { 2 } else { 1 });
    let (oh, ow) = (h / fh, w / fw);
    let planes = z.len() / (h * w);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for (p, plane) in z.chunks(h * w).enumerate() {
        let b = bn[p % c];
        let scale = b.gamma * b.inv_std;
        let (scale, shift) = (T::of(scale), T::of(b.beta - b.mean * scale));
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = T::NEG_INF;
                let mut arg = 0u8;
                for dy in 0..fh {
                    for dx in 0..fw {
                        let mut v = plane[(y * fh + dy) * w + xo * fw + dx] * scale + shift;
                        if !(v > T::ZERO) {
                            v = T::ZERO;
                        }
                        if v > best {
                            best = v;
                            arg = (dy * 2 + dx) as u8;
                        }
                    }
                }
                out.push(best);
                idx.push(arg);
            }
        }
    }
    (out, idx)
}

/// Backward of [`bn_relu_pool_forward`] in training mode, where `mean` and
/// `inv_std` are the batch statistics of `z`. Returns `(dz, d_gamma, d_beta)`.
#[allow(clippy::too_many_arguments)]
pub fn bn_relu_pool_backward<T: Scalar>(
    dout: &[T],
    idx: &[u8],
    z: &[T],
    c: usize,
    h: usize,
    w: usize,
    bn: &[BnPlane],
    pool_h: bool,
    pool_w: bool,
) -> (Vec<T>, Vec<f64>, Vec<f64>) {
    let (fh, fw) = (if pool_h { 2 } else { 1 }, if pool_w { 2 } else { 1 });
    let (oh, ow) = (h / fh, w / fw);
    let s = h * w;
    let planes = z.len() / s;
    let m = (planes / c * s) as f64;
    let pos = |y: usize, xo: usize, a: u8| -> usize { (y * fh + a as usize / 2) * w + xo * fw + a as usize % 2 };
    // gradient w.r.t. the batch-norm output survives only at ReLU-active
    // argmaxes; collect them once per plane
    let mut active: Vec<(usize, f64)> = Vec::with_capacity(oh * ow);
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dz = vec![T::ZERO; z.len()];
    let mut per_plane: Vec<Vec<(usize, f64)>> = Vec::with_capacity(planes);
    for p in 0..planes {
        let ci = p % c;
        let b = bn[ci];
        active.clear();
        let zp = &z[p * s..(p + 1) * s];
        let dp = &dout[p * oh * ow..(p + 1) * oh * ow];
        let ip = &idx[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xo in 0..ow {
                let o = y * ow + xo;
                let q = pos(y, xo, ip[o]);
                let xhat = (zp[q].get() - b.mean) * b.inv_std;
                if b.gamma * xhat + b.beta > 0.0 {
                    let g = dp[o].get();
                    dbeta[ci] += g;
                    dgamma[ci] += g * xhat;
                    active.push((q, g));
                }
            }
        }
        per_plane.push(active.clone());
    }
    // dz = gamma * inv_std / m * (m * dy - sum(dy) - x_hat * sum(dy * x_hat))
    for (p, act) in per_plane.iter().enumerate() {
        let ci = p % c;
        let b = bn[ci];
        let k = b.gamma * b.inv_std / m;
        let a = -k * b.inv_std * dgamma[ci];
        let c0 = T::of(-k * dbeta[ci] - a * b.mean);
        let a = T::of(a);
        let dzp = &mut dz[p * s..(p + 1) * s];
        for (d, &v) in dzp.iter_mut().zip(&z[p * s..(p + 1) * s]) {
            *d = a * v + c0;
        }
        let km = k * m;
        for &(q, g) in act {
            dzp[q] += T::of(km * g);
        }
    }
    (dz, dgamma, dbeta)
}

/// Normalizes in place with the given statistics, returning `x_hat` and
/// writing `gamma * x_hat + beta` into `z`.
pub fn bn_apply(z: &mut [f64], c: usize, s: usize, mean: &[f64], inv_std: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut xhat = vec![0.0; z.len()];
    for (img, xh) in z.chunks_mut(c * s).zip(xhat.chunks_mut(c * s)) {
        for ci in 0..c {
            let (mu, is, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
            for (v, x) in img[ci * s..(ci + 1) * s].iter_mut().zip(&mut xh[ci * s..(ci + 1) * s]) {
                *x = (*v - mu) * is;
                *v = g * *x + b;
            }
        }
    }
    xhat
}

/// Training-mode batch-norm backward. `dy` is overwritten with `dz`.
/// Returns `(d_gamma, d_beta)`.
pub fn bn_backward(dy: &mut [f64], xhat: &[f64], n: usize, c: usize, s: usize, gamma: &[f64], inv_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = (n * s) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (img, xh) in dy.chunks(c * s).zip(xhat.chunks(c * s)) {
        for ci in 0..c {
            let d = &img[ci * s..(ci + 1) * s];
            let x = &xh[ci * s..(ci + 1) * s];
            dbeta[ci] += d.iter().sum::<f64>();
            dgamma[ci] += d.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    // dz = gamma * inv_std / m * (m * dy - sum(dy) - x_hat * sum(dy * x_hat))
    for (img, xh) in dy.chunks_mut(c * s).zip(xhat.chunks(c * s)) {
        for ci in 0..c {
            let k = gamma[ci] * inv_std[ci] / m;
            let (sb, sg) = (dbeta[ci], dgamma[ci]);
            for (d, x) in img[ci * s..(ci + 1) * s].iter_mut().zip(&xh[ci * s..(ci + 1) * s]) {
                *d = k * (m * *d - sb - x * sg);
            }
        }
    }
    (dgamma, dbeta)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-step values of one LSTM direction, indexed by time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Activated gates `[i, f, g, o]`, `T x 4H`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn step_order(t_len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    }
}

/// Runs one LSTM direction over `x` (`T x D`). The reverse direction
/// consumes the sequence from the last frame to the first.
pub fn lstm_forward(p: &LstmParams, x: &[f64], t_len: usize, reverse: bool) -> LstmCache {
    let hd = p.w_hh.shape[1];
    let d = p.w_ih.shape[1];
    let g4 = 4 * hd;
    let mut cache = LstmCache {
        gates: vec![0.0; t_len * g4],
        c: vec![0.0; t_len * hd],
        tanh_c: vec![0.0; t_len * hd],
        h: vec![0.0; t_len * hd],
    };
    let mut h_prev = vec![0.0; hd];
    let mut c_prev = vec![0.0; hd];
    let mut pre = vec![0.0; g4];
    for t in step_order(t_len, reverse) {
        let xt = &x[t * d..(t + 1) * d];
        for (r, v) in pre.iter_mut().enumerate() {
            let wi = &p.w_ih.data[r * d..(r + 1) * d];
            let wh = &p.w_hh.data[r * hd..(r + 1) * hd];
            *v = p.bias.data[r]
                + wi.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>()
                + wh.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
        let gates = &mut cache.gates[t * g4..(t + 1) * g4];
        for j in 0..hd {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[hd + j]);
            let g = pre[2 * hd + j].tanh();
            let o = sigmoid(pre[3 * hd + j]);
            gates[j] = i;
            gates[hd + j] = f;
            gates[2 * hd + j] = g;
            gates[3 * hd + j] = o;
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            cache.c[t * hd + j] = c;
            cache.tanh_c[t * hd + j] = tc;
            cache.h[t * hd + j] = o * tc;
        }
        h_prev.copy_from_slice(&cache.h[t * hd..(t + 1) * hd]);
        c_prev.copy_from_slice(&cache.c[t * hd..(t + 1) * hd]);
    }
    cache
}

/// Backpropagation through time. `dh` is the loss gradient w.r.t. each
/// output `h_t`; parameter gradients accumulate into `grad`, input
/// gradients into `dx`.
pub fn lstm_backward(
    p: &LstmParams,
    x: &[f64],
    cache: &LstmCache,
    dh: &[f64],
    t_len: usize,
    reverse: bool,
    grad: &mut LstmParams,
    dx: &mut [f64],
) {
    let hd = p.w_hh.shape[1];
    let d = p.w_ih.shape[1];
    let g4 = 4 * hd;
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut da = vec![0.0; g4];
    let order: Vec<usize> = step_order(t_len, reverse).collect();
    for (step, &t) in order.iter().enumerate().rev() {
        let prev = step.checked_sub(1).map(|s| order[s]);
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            let tc = cache.tanh_c[t * hd + j];
            let c_prev = prev.map_or(0.0, |pt| cache.c[pt * hd + j]);
            let dht = dh[t * hd + j] + dh_next[j];
            let dc = dht * o * (1.0 - tc * tc) + dc_next[j];
            da[j] = dc * g * i * (1.0 - i);
            da[hd + j] = dc * c_prev * f * (1.0 - f);
            da[2 * hd + j] = dc * i * (1.0 - g * g);
            da[3 * hd + j] = dht * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let xt = &x[t * d..(t + 1) * d];
        let dxt = &mut dx[t * d..(t + 1) * d];
        dh_next.fill(0.0);
        for (r, &dr) in da.iter().enumerate() {
            grad.bias.data[r] += dr;
            let gw = &mut grad.w_ih.data[r * d..(r + 1) * d];
            gw.iter_mut().zip(xt).for_each(|(a, b)| *a += dr * b);
            let wi = &p.w_ih.data[r * d..(r + 1) * d];
            dxt.iter_mut().zip(wi).for_each(|(a, b)| *a += dr * b);
            let wh = &p.w_hh.data[r * hd..(r + 1) * hd];
            dh_next.iter_mut().zip(wh).for_each(|(a, b)| *a += dr * b);
            if let Some(pt) = prev {
                let hp = &cache.h[pt * hd..(pt + 1) * hd];
                let gh = &mut grad.w_hh.data[r * hd..(r + 1) * hd];
                gh.iter_mut().zip(hp).for_each(|(a, b)| *a += dr * b);
            }
        }
    }
}

/// Attention scores `e_t = h_t . w_a` and softmax weights over `T` rows of
/// `h` (`T x dim`). The softmax subtracts the maximum score.
pub fn attention(h: &[f64], t_len: usize, w_a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = w_a.len();
    assert_eq!(h.len(), t_len * dim, "attention input shape");
    let e: Vec<f64> = h
        .chunks(dim)
        .map(|row| row.iter().zip(w_a).map(|(a, b)| a * b).sum())
        .collect();
    let a = softmax(&e);
    (e, a)
}

pub fn softmax(e: &[f64]) -> Vec<f64> {
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Direct 3x3 convolution used as the reference for the GEMM path.
    fn conv_naive(x: &[f64], s: ConvShape, weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; s.n * s.c_out * s.h * s.w];
        for n in 0..s.n {
            for co in 0..s.c_out {
                for y in 0..s.h {
                    for xx in 0..s.w {
                        let mut acc = bias[co];
                        for ci in 0..s.c_in {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                                        continue;
                                    }
                                    acc += weight[((co * s.c_in + ci) * 3 + ky) * 3 + kx]
                                        * x[((n * s.c_in + ci) * s.h + sy as usize) * s.w + sx as usize];
                                }
                            }
                        }
                        out[((n * s.c_out + co) * s.h + y) * s.w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let v = crate::rng::splitmix64(seed ^ i as u64);
                (v >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive() {
        let s = ConvShape {
            n: 11,
            c_in: 3,
            c_out: 4,
            h: 6,
            w: 5,
        };
        let x = pseudo(s.n * s.c_in * s.h * s.w, 1);
        let wt = pseudo(s.c_out * s.c_in * 9, 2);
        let b = pseudo(s.c_out, 3);
        let got = conv_forward(&x, s, &wt, &b);
        let want = conv_naive(&x, s, &wt, &b);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dz, conv(x)> is linear in both x and weight, so its gradients are
        // exactly checkable against finite differences.
        let s = ConvShape {
            n: 9,
            c_in: 2,
            c_out: 3,
            h: 4,
            w: 5,
        };
        let x = pseudo(s.n * s.c_in * s.h * s.w, 4);
        let wt = pseudo(s.c_out * s.c_in * 9, 5);
        let b = pseudo(s.c_out, 6);
        let dz = pseudo(s.n * s.c_out * s.h * s.w, 7);
        let f = |x: &[f64], wt: &[f64], b: &[f64]| -> f64 {
            conv_forward(x, s, wt, b).iter().zip(&dz).map(|(a, b)| a * b).sum()
        };
        let (dw, db, dx) = conv_backward(&x, &dz, s, &wt, true);
        let dx = dx.unwrap();
        let eps = 1e-6;
        for i in [0, 7, 17, wt.len() - 1] {
            let mut wp = wt.clone();
            wp[i] += eps;
            let mut wm = wt.clone();
            wm[i] -= eps;
            let fd = (f(&x, &wp, &b) - f(&x, &wm, &b)) / (2.0 * eps);
            assert!((fd - dw[i]).abs() < 1e-7, "dw[{i}] {fd} vs {}", dw[i]);
        }
        for i in [0, 13, 40, x.len() - 1] {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (f(&xp, &wt, &b) - f(&xm, &wt, &b)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-7, "dx[{i}] {fd} vs {}", dx[i]);
        }
        let mut bp = b.clone();
        bp[1] += eps;
        let mut bm = b.clone();
        bm[1] -= eps;
        let fd = (f(&x, &wt, &bp) - f(&x, &wt, &bm)) / (2.0 * eps);
        assert!((fd - db[1]).abs() < 1e-7);
    }

    #[test]
    fn pool_plan_axes() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let id = [BnPlane {
            mean: 0.0,
            inv_std: 1.0,
            gamma: 1.0,
            beta: 0.0,
        }];
        let (o, _) = bn_relu_pool_forward(&x, 1, 4, 4, &id, true, false);
        assert_eq!(o.len(), 8);
        assert_eq!(&o[..4], &[4.0, 5.0, 6.0, 7.0]);
        let (o, idx) = bn_relu_pool_forward(&x, 1, 4, 4, &id, true, true);
        assert_eq!(o, vec![5.0, 7.0, 13.0, 15.0]);
        assert_eq!(idx, vec![3, 3, 3, 3]);
    }

    fn bn_pool_loss(z: &[f64], gamma: &[f64], beta: &[f64], r: &[f64]) -> f64 {
        let (mean, var) = channel_stats(z, 2, 2, 16);
        let bn: Vec<BnPlane> = (0..2)
            .map(|c| BnPlane {
                mean: mean[c],
                inv_std: 1.0 / (var[c] + 1e-5).sqrt(),
                gamma: gamma[c],
                beta: beta[c],
            })
            .collect();
        let (o, _) = bn_relu_pool_forward(z, 2, 4, 4, &bn, true, true);
        o.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn fused_bn_pool_backward_matches_finite_differences() {
        let mut rng = rng::stream(8);
        let z: Vec<f64> = (0..64).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let r: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
        let (gamma, beta) = (vec![1.3, -0.7], vec![0.2, 0.4]);
        let (mean, var) = channel_stats(&z, 2, 2, 16);
        let bn: Vec<BnPlane> = (0..2)
            .map(|c| BnPlane {
                mean: mean[c],
                inv_std: 1.0 / (var[c] + 1e-5).sqrt(),
                gamma: gamma[c],
                beta: beta[c],
            })
            .collect();
        let (_, idx) = bn_relu_pool_forward(&z, 2, 4, 4, &bn, true, true);
        let (dz, dg, db) = bn_relu_pool_backward(&r, &idx, &z, 2, 4, 4, &bn, true, true);
        let h = 1e-6;
        for k in 0..z.len() {
            let (mut up, mut down) = (z.clone(), z.clone());
            up[k] += h;
            down[k] -= h;
            let num = (bn_pool_loss(&up, &gamma, &beta, &r) - bn_pool_loss(&down, &gamma, &beta, &r)) / (2.0 * h);
            assert!((num - dz[k]).abs() < 1e-6, "dz[{k}]: {num} vs {}", dz[k]);
        }
        for c in 0..2 {
            let mut g2 = gamma.clone();
            g2[c] += h;
            let mut g3 = gamma.clone();
            g3[c] -= h;
            let num = (bn_pool_loss(&z, &g2, &beta, &r) - bn_pool_loss(&z, &g3, &beta, &r)) / (2.0 * h);
            assert!((num - dg[c]).abs() < 1e-6);
            let mut b2 = beta.clone();
            b2[c] += h;
            let mut b3 = beta.clone();
            b3[c] -= h;
            let num = (bn_pool_loss(&z, &gamma, &b2, &r) - bn_pool_loss(&z, &gamma, &b3, &r)) / (2.0 * h);
            assert!((num - db[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn channel_stats_matches_two_pass() {
        let mut rng = rng::stream(2);
        let z: Vec<f64> = (0..3 * 4 * 10).map(|_| rng.random::<f64>() * 5.0).collect();
        let (mean, var) = channel_stats(&z, 3, 4, 10);
        for c in 0..4 {
            let vals: Vec<f64> = (0..3).flat_map(|i| z[(i * 4 + c) * 10..(i * 4 + c + 1) * 10].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / 30.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 30.0;
            assert!((m - mean[c]).abs() < 1e-12 && (v - var[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        let a = softmax(&[0.0, 3f64.ln()]);
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 0.75).abs() < 1e-15);
        let a = softmax(&[0.0, 0.0, 2f64.ln()]);
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[2] - 0.5).abs() < 1e-15);
    }
}
