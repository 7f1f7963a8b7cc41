//! Convolution, transposed convolution, and dense-layer kernels.
//!
//! Three executions exist for each linear op:
//!
//! - a *naive* reference that fixes the canonical accumulation order
//!   (used in tests and as the bit-exactness oracle),
//! - a *fast dense* path (im2col + blocked matmul) for real-valued
//!   inputs,
//! - a *sparse* path for binary spike inputs that skips zero elements
//!   while visiting nonzeros in exactly the naive order. Because adding
//!   an exact `±0.0` term to a finite running sum never changes it, the
//!   sparse results are bit-identical to the naive reference; the tests
//!   assert `==`, not approximate equality.
//!
//! Convolution is valid cross-correlation, stride 1, no padding.
//! Conv kernels are laid out `[c_out, c_in, k, k]`; deconv kernels
//! `[c_in, c_out, k, k]`. Transposed convolution is the exact adjoint
//! of convolution, pinned down by inner-product identities in the tests.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Shape bookkeeping for one conv/deconv application. Fields always
/// describe the *convolution view*: `(c_in, h, w)` is the large side,
/// `(c_out, h_out(), w_out())` the small side. A deconv maps the small
/// side to the large one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
}

impl ConvGeom {
    /// Geometry for `conv2d(x, kernel)`; errors if the input is smaller
    /// than the kernel.
    pub fn for_conv(x_shape: &[usize], k_shape: &[usize]) -> Result<Self> {
        let (n, c_in, h, w) = unpack4(x_shape, "conv input")?;
        let (c_out, kc_in, kh, kw) = unpack4(k_shape, "conv kernel")?;
        if kh != kw {
            return Err(Error::Dim(format!("kernel must be square, got {kh}x{kw}")));
        }
        if kc_in != c_in {
            return Err(Error::Dim(format!(
                "conv kernel expects {kc_in} input channels, input has {c_in}"
            )));
        }
        if h < kh || w < kw {
            return Err(Error::Dim(format!(
                "input {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        Ok(ConvGeom { n, c_in, h, w, c_out, k: kh })
    }

    /// Geometry for `deconv2d(x, kernel)` with `x` on the small side:
    /// a deconv input `[n, c, hin, win]` becomes the conv view's output
    /// side, so `h`/`w` here are the deconv *output* dims.
    pub fn for_deconv(x_shape: &[usize], k_shape: &[usize]) -> Result<Self> {
        let (n, c_in, hin, win) = unpack4(x_shape, "deconv input")?;
        let (kc_in, c_out, kh, kw) = unpack4(k_shape, "deconv kernel")?;
        if kh != kw {
            return Err(Error::Dim(format!("kernel must be square, got {kh}x{kw}")));
        }
        if kc_in != c_in {
            return Err(Error::Dim(format!(
                "deconv kernel expects {kc_in} input channels, input has {c_in}"
            )));
        }
        Ok(ConvGeom {
            n,
            c_in: c_out,
            h: hin + kh - 1,
            w: win + kw - 1,
            c_out: c_in,
            k: kh,
        })
    }

    pub fn h_out(&self) -> usize {
        self.h - self.k + 1
    }

    pub fn w_out(&self) -> usize {
        self.w - self.k + 1
    }
}

fn unpack4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(Error::Dim(format!("{what} must be 4-D, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

// ---------------------------------------------------------------------------
// Blocked matmul
// ---------------------------------------------------------------------------

const BLOCK_J: usize = 1024;
const BLOCK_K: usize = 256;

/// `c += a @ b` with `a: [m x k]`, `b: [k x p]`, `c: [m x p]`, all
/// row-major. Blocked over k and p so the streamed operand stays in L2.
pub fn matmul_acc<S: Scalar>(a: &[S], m: usize, k: usize, b: &[S], p: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    for jb in (0..p).step_by(BLOCK_J) {
        let je = (jb + BLOCK_J).min(p);
        for kb in (0..k).step_by(BLOCK_K) {
            let ke = (kb + BLOCK_K).min(k);
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let c_row = &mut c[i * p + jb..i * p + je];
                for kk in kb..ke {
                    let aik = a_row[kk];
                    if aik == S::zero() {
                        continue;
                    }
                    let b_row = &b[kk * p + jb..kk * p + je];
                    for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                        *cv += aik * bv;
                    }
                }
            }
        }
    }
}

pub fn matmul<S: Scalar>(a: &[S], m: usize, k: usize, b: &[S], p: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * p];
    matmul_acc(a, m, k, b, p, &mut c);
    c
}

/// Row-major transpose of an `m x p` matrix.
pub fn transpose<S: Scalar>(a: &[S], m: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * p];
    for i in 0..m {
        for j in 0..p {
            out[j * m + i] = a[i * p + j];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sparse index form for binary (spike) tensors
// ---------------------------------------------------------------------------

/// CSR-like list of the nonzero flat positions of a binary `[n, ...]`
/// tensor, one ascending run per leading-axis item. This is what linear
/// ops save for their backward pass instead of a dense spike tensor.
#[derive(Debug, Clone)]
pub struct SpikeIndex {
    pub offsets: Vec<u32>,
    pub idx: Vec<u32>,
    pub row_len: usize,
}

impl SpikeIndex {
    pub fn from_binary<S: Scalar>(t: &Tensor<S>) -> Self {
        let n = t.shape()[0];
        let row_len = t.numel() / n.max(1);
        let data = t.data();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        offsets.push(0u32);
        for i in 0..n {
            let row = &data[i * row_len..(i + 1) * row_len];
            for (j, &v) in row.iter().enumerate() {
                if v != S::zero() {
                    idx.push(j as u32);
                }
            }
            offsets.push(idx.len() as u32);
        }
        SpikeIndex { offsets, idx, row_len }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.idx[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Reference convolution. Canonical accumulation order per output
/// element: ascending `(c_in, kh, kw)`, one running sum from zero.
pub fn conv_fwd_naive<S: Scalar>(x: &[S], k: &[S], g: ConvGeom) -> Vec<S> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let mut y = vec![S::zero(); g.n * g.c_out * ho * wo];
    for n in 0..g.n {
        for co in 0..g.c_out {
            for oh in 0..ho {
                for ow in 0..wo {
                    let out = &mut y[((n * g.c_out + co) * ho + oh) * wo + ow];
                    for ci in 0..g.c_in {
                        for kh in 0..g.k {
                            for kw in 0..g.k {
                                let xv = x[((n * g.c_in + ci) * g.h + oh + kh) * g.w + ow + kw];
                                let kv = k[((co * g.c_in + ci) * g.k + kh) * g.k + kw];
                                *out += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Fills `buf` (`[c_in*k*k, ho*wo]`) with image `x_img`'s patches.
fn im2col<S: Scalar>(x_img: &[S], g: ConvGeom, buf: &mut [S]) {
    let (ho, wo) = (g.h_out(), g.w_out());
    let p = ho * wo;
    for ci in 0..g.c_in {
        for kh in 0..g.k {
            for kw in 0..g.k {
                let q = (ci * g.k + kh) * g.k + kw;
                let dst = &mut buf[q * p..(q + 1) * p];
                for oh in 0..ho {
                    let src = &x_img[(ci * g.h + oh + kh) * g.w + kw..];
                    dst[oh * wo..(oh + 1) * wo].copy_from_slice(&src[..wo]);
                }
            }
        }
    }
}

/// Fast dense convolution: per-image im2col + matmul.
pub fn conv_fwd_dense<S: Scalar>(x: &[S], k: &[S], g: ConvGeom) -> Vec<S> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let p = ho * wo;
    let q = g.c_in * g.k * g.k;
    let mut y = vec![S::zero(); g.n * g.c_out * p];
    let mut buf = vec![S::zero(); q * p];
    let img = g.c_in * g.h * g.w;
    for n in 0..g.n {
        im2col(&x[n * img..(n + 1) * img], g, &mut buf);
        matmul_acc(k, g.c_out, q, &buf, p, &mut y[n * g.c_out * p..(n + 1) * g.c_out * p]);
    }
    y
}

/// Convolution over a binary input given as nonzero indices. Visits
/// nonzeros in the naive order, so the result is bit-identical to
/// [`conv_fwd_naive`] on the corresponding dense input.
pub fn conv_fwd_sparse<S: Scalar>(xs: &SpikeIndex, k: &[S], g: ConvGeom) -> Vec<S> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let mut y = vec![S::zero(); g.n * g.c_out * ho * wo];
    // Kernel rearranged to [c_in, kh, kw, c_out] so the inner run over
    // c_out reads contiguously.
    let kt = permute_k_cin_major(k, g);
    for n in 0..g.n {
        let y_img = &mut y[n * g.c_out * ho * wo..(n + 1) * g.c_out * ho * wo];
        for &flat in xs.row(n) {
            let flat = flat as usize;
            let ci = flat / (g.h * g.w);
            let ih = flat / g.w % g.h;
            let iw = flat % g.w;
            let kh_lo = (ih + 1).saturating_sub(ho);
            let kh_hi = g.k.min(ih + 1);
            let kw_lo = (iw + 1).saturating_sub(wo);
            let kw_hi = g.k.min(iw + 1);
            for kh in kh_lo..kh_hi {
                let oh = ih - kh;
                for kw in kw_lo..kw_hi {
                    let ow = iw - kw;
                    let krow = &kt[((ci * g.k + kh) * g.k + kw) * g.c_out..][..g.c_out];
                    for (co, &kv) in krow.iter().enumerate() {
                        y_img[(co * ho + oh) * wo + ow] += kv;
                    }
                }
            }
        }
    }
    y
}

/// `[c_out, c_in, k, k]` -> `[c_in, kh, kw, c_out]`.
fn permute_k_cin_major<S: Scalar>(k: &[S], g: ConvGeom) -> Vec<S> {
    let mut kt = vec![S::zero(); k.len()];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            for kh in 0..g.k {
                for kw in 0..g.k {
                    kt[(((ci * g.k + kh) * g.k + kw) * g.c_out) + co] =
                        k[((co * g.c_in + ci) * g.k + kh) * g.k + kw];
                }
            }
        }
    }
    kt
}

/// Rotates a `[a, b, k, k]` kernel by 180 degrees and swaps its channel
/// axes, yielding `[b, a, k, k]`. Applying it to a conv kernel turns
/// backward-data into a forward convolution over the zero-padded output
/// gradient; applying it to a deconv kernel turns the deconv forward
/// into the same padded convolution.
pub fn flip_swap_kernel<S: Scalar>(k: &[S], a: usize, b: usize, kk: usize) -> Vec<S> {
    let mut kf = vec![S::zero(); k.len()];
    for ia in 0..a {
        for ib in 0..b {
            for kh in 0..kk {
                for kw in 0..kk {
                    kf[((ib * a + ia) * kk + (kk - 1 - kh)) * kk + (kk - 1 - kw)] =
                        k[((ia * b + ib) * kk + kh) * kk + kw];
                }
            }
        }
    }
    kf
}

/// Gradient of conv2d w.r.t. its input: full correlation of `dy` with
/// the flipped kernel. `kf` must come from
/// `flip_swap_kernel(k, c_out, c_in, k)`.
pub fn conv_bwd_data<S: Scalar>(dy: &[S], kf: &[S], g: ConvGeom) -> Vec<S> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let pad = g.k - 1;
    let (hp, wp) = (ho + 2 * pad, wo + 2 * pad);
    let mut padded = vec![S::zero(); g.n * g.c_out * hp * wp];
    for n in 0..g.n {
        for co in 0..g.c_out {
            for oh in 0..ho {
                let src = &dy[((n * g.c_out + co) * ho + oh) * wo..][..wo];
                padded[((n * g.c_out + co) * hp + oh + pad) * wp + pad..][..wo]
                    .copy_from_slice(src);
            }
        }
    }
    let gp = ConvGeom {
        n: g.n,
        c_in: g.c_out,
        h: hp,
        w: wp,
        c_out: g.c_in,
        k: g.k,
    };
    debug_assert_eq!(gp.h_out(), g.h);
    conv_fwd_dense(&padded, kf, gp)
}

/// Reference gradient of conv2d w.r.t. the kernel. Canonical order per
/// kernel element: ascending `(n, oh, ow)`, one running sum from zero.
pub fn conv_bwd_kernel_naive<S: Scalar>(x: &[S], dy: &[S], g: ConvGeom) -> Vec<S> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let mut dk = vec![S::zero(); g.c_out * g.c_in * g.k * g.k];
    for n in 0..g.n {
        for co in 0..g.c_out {
            for ci in 0..g.c_in {
                for kh in 0..g.k {
                    for kw in 0..g.k {
                        let out = &mut dk[((co * g.c_in + ci) * g.k + kh) * g.k + kw];
                        for oh in 0..ho {
                            for ow in 0..wo {
                                let xv =
                                    x[((n * g.c_in + ci) * g.h + oh + kh) * g.w + ow + kw];
                                let dv = dy[((n * g.c_out + co) * ho + oh) * wo + ow];
                                *out += xv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
    dk
}

/// Fast dense kernel gradient: per-image im2col + row dot products.
pub fn conv_bwd_kernel_dense<S: Scalar>(x: &[S], dy: &[S], g: ConvGeom) -> Vec<S> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let p = ho * wo;
    let q = g.c_in * g.k * g.k;
    let img = g.c_in * g.h * g.w;
    let mut buf = vec![S::zero(); q * p];
    let mut dk = vec![S::zero(); g.c_out * q]; // [c_out, c_in, k, k]
    for n in 0..g.n {
        im2col(&x[n * img..(n + 1) * img], g, &mut buf);
        let dy_img = &dy[n * g.c_out * p..(n + 1) * g.c_out * p];
        for co in 0..g.c_out {
            let dyr = &dy_img[co * p..(co + 1) * p];
            let dst = &mut dk[co * q..(co + 1) * q];
            for (qi, d) in dst.iter_mut().enumerate() {
                let row = &buf[qi * p..(qi + 1) * p];
                let mut acc = S::zero();
                for (a, b) in dyr.iter().zip(row) {
                    acc += *a * *b;
                }
                *d += acc;
            }
        }
    }
    dk
}

/// Kernel gradient when the conv input is binary, visiting nonzeros in
/// the naive order (bit-identical to [`conv_bwd_kernel_naive`]).
pub fn conv_bwd_kernel_sparse<S: Scalar>(xs: &SpikeIndex, dy: &[S], g: ConvGeom) -> Vec<S> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let mut dk_t = vec![S::zero(); g.c_in * g.k * g.k * g.c_out];
    for n in 0..g.n {
        let dy_img = &dy[n * g.c_out * ho * wo..(n + 1) * g.c_out * ho * wo];
        for &flat in xs.row(n) {
            let flat = flat as usize;
            let ci = flat / (g.h * g.w);
            let ih = flat / g.w % g.h;
            let iw = flat % g.w;
            let kh_lo = (ih + 1).saturating_sub(ho);
            let kh_hi = g.k.min(ih + 1);
            let kw_lo = (iw + 1).saturating_sub(wo);
            let kw_hi = g.k.min(iw + 1);
            for kh in kh_lo..kh_hi {
                let oh = ih - kh;
                for kw in kw_lo..kw_hi {
                    let ow = iw - kw;
                    let dst = &mut dk_t[((ci * g.k + kh) * g.k + kw) * g.c_out..][..g.c_out];
                    for (co, d) in dst.iter_mut().enumerate() {
                        *d += dy_img[(co * ho + oh) * wo + ow];
                    }
                }
            }
        }
    }
    // [c_in, kh, kw, c_out] -> [c_out, c_in, k, k]
    let mut dk = vec![S::zero(); dk_t.len()];
    for ci in 0..g.c_in {
        for kh in 0..g.k {
            for kw in 0..g.k {
                for co in 0..g.c_out {
                    dk[((co * g.c_in + ci) * g.k + kh) * g.k + kw] =
                        dk_t[((ci * g.k + kh) * g.k + kw) * g.c_out + co];
                }
            }
        }
    }
    dk
}

// ---------------------------------------------------------------------------
// deconv2d (transposed convolution)
// ---------------------------------------------------------------------------
//
// With kernel layout [c_in, c_out, k, k], deconv is scatter:
//   y[n, co, ih+kh, iw+kw] += x[n, ci, ih, iw] * k[ci, co, kh, kw]
// which makes it the exact adjoint of conv2d. In the ConvGeom for a
// deconv, g.c_out counts deconv *input* channels and g.c_in deconv
// *output* channels (the conv view).

/// Reference deconvolution. Canonical order per output element:
/// ascending scatter `(ci, ih, iw)`, one running sum from zero.
pub fn deconv_fwd_naive<S: Scalar>(x: &[S], k: &[S], g: ConvGeom) -> Vec<S> {
    let (hi, wi) = (g.h_out(), g.w_out());
    let (co_n, ci_n) = (g.c_in, g.c_out); // deconv output/input channel counts
    let mut y = vec![S::zero(); g.n * co_n * g.h * g.w];
    for n in 0..g.n {
        for ci in 0..ci_n {
            for ih in 0..hi {
                for iw in 0..wi {
                    let xv = x[((n * ci_n + ci) * hi + ih) * wi + iw];
                    for co in 0..co_n {
                        for kh in 0..g.k {
                            for kw in 0..g.k {
                                let kv = k[((ci * co_n + co) * g.k + kh) * g.k + kw];
                                y[((n * co_n + co) * g.h + ih + kh) * g.w + iw + kw] += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Fast dense deconvolution: pad + flipped-kernel convolution.
pub fn deconv_fwd_dense<S: Scalar>(x: &[S], k: &[S], g: ConvGeom) -> Vec<S> {
    let kf = flip_swap_kernel(k, g.c_out, g.c_in, g.k);
    conv_bwd_data(x, &kf, g)
}

/// Sparse deconvolution over binary input; nonzeros visited in the
/// naive scatter order (bit-identical to [`deconv_fwd_naive`]).
pub fn deconv_fwd_sparse<S: Scalar>(xs: &SpikeIndex, k: &[S], g: ConvGeom) -> Vec<S> {
    let (hi, wi) = (g.h_out(), g.w_out());
    let co_n = g.c_in;
    let mut y = vec![S::zero(); g.n * co_n * g.h * g.w];
    for n in 0..g.n {
        let y_img = &mut y[n * co_n * g.h * g.w..(n + 1) * co_n * g.h * g.w];
        for &flat in xs.row(n) {
            let flat = flat as usize;
            let ci = flat / (hi * wi);
            let ih = flat / wi % hi;
            let iw = flat % wi;
            for co in 0..co_n {
                for kh in 0..g.k {
                    let krow = &k[((ci * co_n + co) * g.k + kh) * g.k..][..g.k];
                    let yrow = &mut y_img[(co * g.h + ih + kh) * g.w + iw..][..g.k];
                    for (yv, &kv) in yrow.iter_mut().zip(krow) {
                        *yv += kv;
                    }
                }
            }
        }
    }
    y
}

/// Gradient of deconv2d w.r.t. its input: a plain convolution of the
/// output gradient with the kernel (the deconv layout `[c_in, c_out,
/// k, k]` is already the conv layout for this direction).
pub fn deconv_bwd_data<S: Scalar>(dy: &[S], k: &[S], g: ConvGeom) -> Vec<S> {
    conv_fwd_dense(dy, k, g)
}

/// Reference gradient of deconv2d w.r.t. the kernel. Canonical order
/// per kernel element: ascending `(n, ih, iw)`, one running sum.
pub fn deconv_bwd_kernel_naive<S: Scalar>(x: &[S], dy: &[S], g: ConvGeom) -> Vec<S> {
    let (hi, wi) = (g.h_out(), g.w_out());
    let (co_n, ci_n) = (g.c_in, g.c_out);
    let mut dk = vec![S::zero(); ci_n * co_n * g.k * g.k];
    for n in 0..g.n {
        for ci in 0..ci_n {
            for co in 0..co_n {
                for kh in 0..g.k {
                    for kw in 0..g.k {
                        let out = &mut dk[((ci * co_n + co) * g.k + kh) * g.k + kw];
                        for ih in 0..hi {
                            for iw in 0..wi {
                                let xv = x[((n * ci_n + ci) * hi + ih) * wi + iw];
                                let dv = dy[((n * co_n + co) * g.h + ih + kh) * g.w + iw + kw];
                                *out += xv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
    dk
}

/// Dense deconv kernel gradient: im2col over the output gradient, then
/// per-channel dot products. Returns the deconv layout
/// `[c_in, c_out, k, k]`.
pub fn deconv_bwd_kernel_dense<S: Scalar>(x: &[S], dy: &[S], g: ConvGeom) -> Vec<S> {
    let (hi, wi) = (g.h_out(), g.w_out());
    let p = hi * wi;
    let q = g.c_in * g.k * g.k; // (deconv output channels) * k * k
    let img = g.c_in * g.h * g.w;
    let mut buf = vec![S::zero(); q * p];
    let mut dk = vec![S::zero(); g.c_out * q];
    for n in 0..g.n {
        im2col(&dy[n * img..(n + 1) * img], g, &mut buf);
        let x_img = &x[n * g.c_out * p..(n + 1) * g.c_out * p];
        for ci in 0..g.c_out {
            let xr = &x_img[ci * p..(ci + 1) * p];
            let dst = &mut dk[ci * q..(ci + 1) * q];
            for (qi, d) in dst.iter_mut().enumerate() {
                let row = &buf[qi * p..(qi + 1) * p];
                let mut acc = S::zero();
                for (u, v) in xr.iter().zip(row) {
                    acc += *u * *v;
                }
                *d += acc;
            }
        }
    }
    dk
}

/// Sparse deconv kernel gradient (binary deconv input), bit-identical
/// to [`deconv_bwd_kernel_naive`].
pub fn deconv_bwd_kernel_sparse<S: Scalar>(xs: &SpikeIndex, dy: &[S], g: ConvGeom) -> Vec<S> {
    let (hi, wi) = (g.h_out(), g.w_out());
    let (co_n, ci_n) = (g.c_in, g.c_out);
    let mut dk = vec![S::zero(); ci_n * co_n * g.k * g.k];
    for n in 0..g.n {
        let dy_img = &dy[n * co_n * g.h * g.w..(n + 1) * co_n * g.h * g.w];
        for &flat in xs.row(n) {
            let flat = flat as usize;
            let ci = flat / (hi * wi);
            let ih = flat / wi % hi;
            let iw = flat % wi;
            for co in 0..co_n {
                for kh in 0..g.k {
                    let dyrow = &dy_img[(co * g.h + ih + kh) * g.w + iw..][..g.k];
                    let dst = &mut dk[((ci * co_n + co) * g.k + kh) * g.k..][..g.k];
                    for (d, &dv) in dst.iter_mut().zip(dyrow) {
                        *d += dv;
                    }
                }
            }
        }
    }
    dk
}

// ---------------------------------------------------------------------------
// Dense (fully connected) layers
// ---------------------------------------------------------------------------

/// `out[n, j] = sum_i x[n, i] w[i, j] (+ bias[j])`.
pub fn affine_fwd_dense<S: Scalar>(
    x: &[S],
    n: usize,
    i: usize,
    w: &[S],
    j: usize,
    bias: Option<&[S]>,
) -> Vec<S> {
    let mut y = vec![S::zero(); n * j];
    matmul_acc(x, n, i, w, j, &mut y);
    if let Some(b) = bias {
        for row in 0..n {
            for (d, &v) in y[row * j..(row + 1) * j].iter_mut().zip(b) {
                *d += v;
            }
        }
    }
    y
}

/// Naive affine fixing the canonical order: ascending `i`, bias last.
pub fn affine_fwd_naive<S: Scalar>(
    x: &[S],
    n: usize,
    i_dim: usize,
    w: &[S],
    j: usize,
    bias: Option<&[S]>,
) -> Vec<S> {
    let mut y = vec![S::zero(); n * j];
    for row in 0..n {
        let dst = &mut y[row * j..(row + 1) * j];
        for i in 0..i_dim {
            let xv = x[row * i_dim + i];
            for (d, &v) in dst.iter_mut().zip(&w[i * j..(i + 1) * j]) {
                *d += xv * v;
            }
        }
        if let Some(b) = bias {
            for (d, &v) in dst.iter_mut().zip(b) {
                *d += v;
            }
        }
    }
    y
}

/// Affine forward over binary input rows: gathers and sums weight rows.
/// Bit-identical to [`affine_fwd_naive`].
pub fn affine_fwd_sparse<S: Scalar>(
    xs: &SpikeIndex,
    w: &[S],
    j: usize,
    bias: Option<&[S]>,
) -> Vec<S> {
    let n = xs.rows();
    let mut y = vec![S::zero(); n * j];
    for row in 0..n {
        let dst = &mut y[row * j..(row + 1) * j];
        for &i in xs.row(row) {
            let wr = &w[i as usize * j..(i as usize + 1) * j];
            for (d, &v) in dst.iter_mut().zip(wr) {
                *d += v;
            }
        }
        if let Some(b) = bias {
            for (d, &v) in dst.iter_mut().zip(b) {
                *d += v;
            }
        }
    }
    y
}

/// `dw[i, j] += sum_n x[n, i] dy[n, j]` for binary `x`; ascending `n`
/// per weight element, matching a direct naive accumulation.
pub fn affine_bwd_weight_sparse<S: Scalar>(xs: &SpikeIndex, dy: &[S], j: usize, dw: &mut [S]) {
    for n in 0..xs.rows() {
        let dyr = &dy[n * j..(n + 1) * j];
        for &i in xs.row(n) {
            let dst = &mut dw[i as usize * j..(i as usize + 1) * j];
            for (d, &v) in dst.iter_mut().zip(dyr) {
                *d += v;
            }
        }
    }
}

/// `dw = x^T dy`, dense.
pub fn affine_bwd_weight_dense<S: Scalar>(
    x: &[S],
    n: usize,
    i: usize,
    dy: &[S],
    j: usize,
) -> Vec<S> {
    let xt = transpose(x, n, i);
    matmul(&xt, i, n, dy, j)
}
