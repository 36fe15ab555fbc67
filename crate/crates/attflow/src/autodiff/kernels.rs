//! Raw array math behind the graph ops. Everything here is deterministic:
//! accumulation order is fixed by the loop structure and does not depend on
//! timing or thread scheduling (the kernels are single-threaded).
//!
//! Matrix products use a k-blocked AXPY schedule, so float accumulation *is*
//! reassociated relative to a naive triple loop, but identically on every
//! call of the same build.

use crate::autodiff::Scalar;

/// c[m,n] += a[m,k] · b[k,n], all row-major.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk + 4 <= k {
            let a0 = a_row[kk];
            let a1 = a_row[kk + 1];
            let a2 = a_row[kk + 2];
            let a3 = a_row[kk + 3];
            let b0 = &b[kk * n..kk * n + n];
            let b1 = &b[(kk + 1) * n..(kk + 1) * n + n];
            let b2 = &b[(kk + 2) * n..(kk + 2) * n + n];
            let b3 = &b[(kk + 3) * n..(kk + 3) * n + n];
            for j in 0..n {
                c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            kk += 4;
        }
        while kk < k {
            let av = a_row[kk];
            let b_row = &b[kk * n..kk * n + n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
            kk += 1;
        }
    }
}

/// c[m,n] += a[m,k] · b[n,k]ᵀ (dot products of rows).
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = [T::ZERO; 4];
            let whole = k / 4 * 4;
            let mut t = 0;
            while t < whole {
                acc[0] += a_row[t] * b_row[t];
                acc[1] += a_row[t + 1] * b_row[t + 1];
                acc[2] += a_row[t + 2] * b_row[t + 2];
                acc[3] += a_row[t + 3] * b_row[t + 3];
                t += 4;
            }
            let mut s = acc[0] + acc[1] + acc[2] + acc[3];
            while t < k {
                s += a_row[t] * b_row[t];
                t += 1;
            }
            c[i * n + j] += s;
        }
    }
}

/// c[m,n] += a[k,m]ᵀ · b[k,n].
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[kk * m + i];
            let b_row = &b[kk * n..kk * n + n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

/// Spatial output size of a convolution: floor((len + 2p - k)/s) + 1.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Spatial output size of a transposed convolution: (len-1)*s - 2p + k.
pub fn deconv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len - 1) * stride + k - 2 * pad
}

/// Unfolds one image [C,H,W] into a [C*kh*kw, out_h*out_w] matrix.
pub fn im2col<T: Scalar>(
    img: &[T],
    col: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) {
    let out_h = conv_out_len(h, kh, stride, pad);
    let out_w = conv_out_len(w, kw, stride, pad);
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * out_h * out_w);
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ch * kh + ki) * kw + kj) * out_h * out_w;
                // valid x range keeps ix = x*stride + kj - pad inside [0, w)
                let x0 = if pad > kj { (pad - kj).div_ceil(stride) } else { 0 };
                let x0 = x0.min(out_w);
                let x1 = if w + pad > kj {
                    ((w + pad - kj - 1) / stride + 1).min(out_w)
                } else {
                    0
                };
                for y in 0..out_h {
                    let iy = (y * stride + ki) as isize - pad as isize;
                    let dst = &mut col[row + y * out_w..row + (y + 1) * out_w];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..x0.min(out_w)].iter_mut().for_each(|v| *v = T::ZERO);
                    for x in x0..x1 {
                        let ix = x * stride + kj - pad; // x >= x0 keeps this in range
                        dst[x] = src_row[ix];
                    }
                    dst[x1.max(x0)..].iter_mut().for_each(|v| *v = T::ZERO);
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds a column matrix back into an image.
pub fn col2im_add<T: Scalar>(
    col: &[T],
    img: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) {
    let out_h = conv_out_len(h, kh, stride, pad);
    let out_w = conv_out_len(w, kw, stride, pad);
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * out_h * out_w);
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ch * kh + ki) * kw + kj) * out_h * out_w;
                let x0 = if pad > kj { (pad - kj).div_ceil(stride) } else { 0 };
                let x0 = x0.min(out_w);
                let x1 = if w + pad > kj {
                    ((w + pad - kj - 1) / stride + 1).min(out_w)
                } else {
                    0
                };
                for y in 0..out_h {
                    let iy = (y * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[row + y * out_w..row + (y + 1) * out_w];
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for x in x0..x1 {
                        let ix = x * stride + kj - pad;
                        dst_row[ix] += src[x];
                    }
                }
            }
        }
    }
}

pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            conv_out_len(self.h, self.kh, self.stride, self.pad),
            conv_out_len(self.w, self.kw, self.stride, self.pad),
        )
    }
}

/// Direct convolution forward. weight is [Co, Ci/groups, kh, kw].
pub fn conv2d_fwd<T: Scalar>(input: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (out_h, out_w) = g.out_hw();
    let spatial = out_h * out_w;
    let cg_in = g.c_in / g.groups;
    let cg_out = g.c_out / g.groups;
    let kk = cg_in * g.kh * g.kw;
    let mut out = vec![T::ZERO; g.batch * g.c_out * spatial];
    let direct_1x1 = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
    let mut col = if direct_1x1 { Vec::new() } else { vec![T::ZERO; kk * spatial] };
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let in_slice =
                &input[(b * g.c_in + grp * cg_in) * g.h * g.w..(b * g.c_in + (grp + 1) * cg_in) * g.h * g.w];
            let w_slice = &weight[grp * cg_out * kk..(grp + 1) * cg_out * kk];
            let out_slice =
                &mut out[(b * g.c_out + grp * cg_out) * spatial..(b * g.c_out + (grp + 1) * cg_out) * spatial];
            if direct_1x1 {
                matmul(w_slice, in_slice, out_slice, cg_out, kk, spatial);
            } else {
                im2col(in_slice, &mut col, cg_in, g.h, g.w, g.kh, g.kw, g.stride, g.pad);
                matmul(w_slice, &col, out_slice, cg_out, kk, spatial);
            }
        }
        if let Some(bias) = bias {
            for co in 0..g.c_out {
                let bv = bias[co];
                out[(b * g.c_out + co) * spatial..(b * g.c_out + co + 1) * spatial]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of `conv2d_fwd` w.r.t. input, weight and bias.
pub fn conv2d_bwd<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (out_h, out_w) = g.out_hw();
    let spatial = out_h * out_w;
    let cg_in = g.c_in / g.groups;
    let cg_out = g.c_out / g.groups;
    let kk = cg_in * g.kh * g.kw;

    let mut d_input = want_input.then(|| vec![T::ZERO; g.batch * g.c_in * g.h * g.w]);
    let mut d_weight = want_weight.then(|| vec![T::ZERO; g.c_out * kk]);
    let mut d_bias = want_bias.then(|| vec![T::ZERO; g.c_out]);

    let direct_1x1 = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
    let mut col = if direct_1x1 { Vec::new() } else { vec![T::ZERO; kk * spatial] };
    let mut dcol = if direct_1x1 || !want_input { Vec::new() } else { vec![T::ZERO; kk * spatial] };

    for b in 0..g.batch {
        for grp in 0..g.groups {
            let in_off = (b * g.c_in + grp * cg_in) * g.h * g.w;
            let in_slice = &input[in_off..in_off + cg_in * g.h * g.w];
            let w_slice = &weight[grp * cg_out * kk..(grp + 1) * cg_out * kk];
            let go_off = (b * g.c_out + grp * cg_out) * spatial;
            let go_slice = &grad_out[go_off..go_off + cg_out * spatial];

            if want_weight && !direct_1x1 {
                im2col(in_slice, &mut col, cg_in, g.h, g.w, g.kh, g.kw, g.stride, g.pad);
            }
            if let Some(dw) = d_weight.as_deref_mut() {
                let dw_slice = &mut dw[grp * cg_out * kk..(grp + 1) * cg_out * kk];
                let cols = if direct_1x1 { in_slice } else { col.as_slice() };
                matmul_nt(go_slice, cols, dw_slice, cg_out, spatial, kk);
            }
            if let Some(dx) = d_input.as_deref_mut() {
                let dx_slice = &mut dx[in_off..in_off + cg_in * g.h * g.w];
                if direct_1x1 {
                    matmul_tn(w_slice, go_slice, dx_slice, kk, cg_out, spatial);
                } else {
                    dcol.iter_mut().for_each(|v| *v = T::ZERO);
                    matmul_tn(w_slice, go_slice, &mut dcol, kk, cg_out, spatial);
                    col2im_add(&dcol, dx_slice, cg_in, g.h, g.w, g.kh, g.kw, g.stride, g.pad);
                }
            }
        }
        if let Some(db) = d_bias.as_deref_mut() {
            for co in 0..g.c_out {
                let go = &grad_out[(b * g.c_out + co) * spatial..(b * g.c_out + co + 1) * spatial];
                let mut s = T::ZERO;
                for &v in go {
                    s += v;
                }
                db[co] += s;
            }
        }
    }
    (d_input, d_weight, d_bias)
}

pub struct DeconvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            deconv_out_len(self.h, self.kh, self.stride, self.pad),
            deconv_out_len(self.w, self.kw, self.stride, self.pad),
        )
    }

    /// The equivalent convolution that maps output back to input; deconv
    /// forward is exactly that convolution's input-gradient.
    fn adjoint_conv(&self) -> ConvGeom {
        let (out_h, out_w) = self.out_hw();
        ConvGeom {
            batch: self.batch,
            c_in: self.c_out,
            c_out: self.c_in,
            h: out_h,
            w: out_w,
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
            groups: 1,
        }
    }
}

/// Transposed convolution forward. weight is [Ci, Co, kh, kw].
pub fn deconv2d_fwd<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &DeconvGeom,
) -> Vec<T> {
    let (out_h, out_w) = g.out_hw();
    let conv = g.adjoint_conv();
    let in_spatial = g.h * g.w;
    let kk = g.c_out * g.kh * g.kw;
    let mut out = vec![T::ZERO; g.batch * g.c_out * out_h * out_w];
    let mut dcol = vec![T::ZERO; kk * in_spatial];
    for b in 0..g.batch {
        let x = &input[b * g.c_in * in_spatial..(b + 1) * g.c_in * in_spatial];
        dcol.iter_mut().for_each(|v| *v = T::ZERO);
        // weight as [Ci, Co*kh*kw]; dcol = weightᵀ · x
        matmul_tn(weight, x, &mut dcol, kk, g.c_in, in_spatial);
        let out_slice = &mut out[b * g.c_out * out_h * out_w..(b + 1) * g.c_out * out_h * out_w];
        col2im_add(&dcol, out_slice, g.c_out, out_h, out_w, g.kh, g.kw, conv.stride, conv.pad);
        if let Some(bias) = bias {
            for co in 0..g.c_out {
                let bv = bias[co];
                out_slice[co * out_h * out_w..(co + 1) * out_h * out_w]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of `deconv2d_fwd` w.r.t. input, weight and bias.
pub fn deconv2d_bwd<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &DeconvGeom,
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (out_h, out_w) = g.out_hw();
    let in_spatial = g.h * g.w;
    let out_spatial = out_h * out_w;
    let kk = g.c_out * g.kh * g.kw;

    let mut d_input = want_input.then(|| vec![T::ZERO; g.batch * g.c_in * in_spatial]);
    let mut d_weight = want_weight.then(|| vec![T::ZERO; g.c_in * kk]);
    let mut d_bias = want_bias.then(|| vec![T::ZERO; g.c_out]);

    let mut col = vec![T::ZERO; kk * in_spatial];
    for b in 0..g.batch {
        let go = &grad_out[b * g.c_out * out_spatial..(b + 1) * g.c_out * out_spatial];
        // grad_out unfolded at the deconv geometry gives the shared col matrix
        im2col(go, &mut col, g.c_out, out_h, out_w, g.kh, g.kw, g.stride, g.pad);
        if let Some(dx) = d_input.as_deref_mut() {
            let dx_slice = &mut dx[b * g.c_in * in_spatial..(b + 1) * g.c_in * in_spatial];
            matmul(weight, &col, dx_slice, g.c_in, kk, in_spatial);
        }
        if let Some(dw) = d_weight.as_deref_mut() {
            let x = &input[b * g.c_in * in_spatial..(b + 1) * g.c_in * in_spatial];
            matmul_nt(x, &col, dw, g.c_in, in_spatial, kk);
        }
        if let Some(db) = d_bias.as_deref_mut() {
            for co in 0..g.c_out {
                let s: T = go[co * out_spatial..(co + 1) * out_spatial]
                    .iter()
                    .copied()
                    .sum();
                db[co] += s;
            }
        }
    }
    (d_input, d_weight, d_bias)
}

/// Average pooling with zero padding counted in the k*k divisor.
pub fn avg_pool2d_fwd<T: Scalar>(
    input: &[T],
    bc: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let out_h = conv_out_len(h, k, stride, pad);
    let out_w = conv_out_len(w, k, stride, pad);
    let inv = T::ONE / T::from_usize(k * k);
    let mut out = vec![T::ZERO; bc * out_h * out_w];
    for p in 0..bc {
        let plane = &input[p * h * w..(p + 1) * h * w];
        let out_plane = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for y in 0..out_h {
            for x in 0..out_w {
                let mut s = T::ZERO;
                for i in 0..k {
                    let iy = (y * stride + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for j in 0..k {
                        let ix = (x * stride + j) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        s += plane[iy as usize * w + ix as usize];
                    }
                }
                out_plane[y * out_w + x] = s * inv;
            }
        }
    }
    out
}

pub fn avg_pool2d_bwd<T: Scalar>(
    grad_out: &[T],
    bc: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let out_h = conv_out_len(h, k, stride, pad);
    let out_w = conv_out_len(w, k, stride, pad);
    let inv = T::ONE / T::from_usize(k * k);
    let mut din = vec![T::ZERO; bc * h * w];
    for p in 0..bc {
        let go = &grad_out[p * out_h * out_w..(p + 1) * out_h * out_w];
        let dplane = &mut din[p * h * w..(p + 1) * h * w];
        for y in 0..out_h {
            for x in 0..out_w {
                let gv = go[y * out_w + x] * inv;
                for i in 0..k {
                    let iy = (y * stride + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for j in 0..k {
                        let ix = (x * stride + j) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dplane[iy as usize * w + ix as usize] += gv;
                    }
                }
            }
        }
    }
    din
}

/// Sample positions and weights for one axis of a bilinear resize
/// (half-pixel centers, edges clamped). With equal sizes this is identity.
fn bilinear_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = s - i0 as f64;
            (i0, i1, frac)
        })
        .collect()
}

pub fn bilinear_resize_fwd<T: Scalar>(
    input: &[T],
    bc: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let ys = bilinear_axis(h, out_h);
    let xs = bilinear_axis(w, out_w);
    let mut out = vec![T::ZERO; bc * out_h * out_w];
    for p in 0..bc {
        let plane = &input[p * h * w..(p + 1) * h * w];
        let out_plane = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v00 = plane[y0 * w + x0].to_f64();
                let v01 = plane[y0 * w + x1].to_f64();
                let v10 = plane[y1 * w + x0].to_f64();
                let v11 = plane[y1 * w + x1].to_f64();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out_plane[oy * out_w + ox] = T::from_f64(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

pub fn bilinear_resize_bwd<T: Scalar>(
    grad_out: &[T],
    bc: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let ys = bilinear_axis(h, out_h);
    let xs = bilinear_axis(w, out_w);
    let mut din = vec![T::ZERO; bc * h * w];
    for p in 0..bc {
        let go = &grad_out[p * out_h * out_w..(p + 1) * out_h * out_w];
        let dplane = &mut din[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let g = go[oy * out_w + ox];
                dplane[y0 * w + x0] += g * T::from_f64((1.0 - fx) * (1.0 - fy));
                dplane[y0 * w + x1] += g * T::from_f64(fx * (1.0 - fy));
                dplane[y1 * w + x0] += g * T::from_f64((1.0 - fx) * fy);
                dplane[y1 * w + x1] += g * T::from_f64(fx * fy);
            }
        }
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![5.0, 6.0, 7.0, 8.0];
        let mut c = vec![0.0; 4];
        matmul(&a, &b, &mut c, 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let m = 3;
        let k = 7;
        let n = 5;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 - 0.7).collect();
        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n);

        // nt with b stored transposed
        let mut bt = vec![0.0; k * n];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_nt(&a, &bt, &mut c2, m, k, n);

        // tn with a stored transposed
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut c3 = vec![0.0; m * n];
        matmul_tn(&at, &b, &mut c3, m, k, n);

        for i in 0..m * n {
            assert!((c[i] - c2[i]).abs() < 1e-12);
            assert!((c[i] - c3[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish x, y
        let (c, h, w, kh, kw, s, p) = (2usize, 5usize, 4usize, 3usize, 3usize, 2usize, 1usize);
        let oh = conv_out_len(h, kh, s, p);
        let ow = conv_out_len(w, kw, s, p);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * kh * kw * oh * ow)
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cx = vec![0.0; c * kh * kw * oh * ow];
        im2col(&x, &mut cx, c, h, w, kh, kw, s, p);
        let mut xy = vec![0.0; c * h * w];
        col2im_add(&y, &mut xy, c, h, w, kh, kw, s, p);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&xy).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_ones_3x3_sums_to_nine() {
        let g = ConvGeom {
            batch: 1,
            c_in: 1,
            c_out: 1,
            h: 3,
            w: 3,
            kh: 3,
            kw: 3,
            stride: 1,
            pad: 0,
            groups: 1,
        };
        let out = conv2d_fwd(&[1.0f32; 9], &[1.0; 9], None, &g);
        assert_eq!(out, vec![9.0]);
    }

    #[test]
    fn bilinear_identity_when_same_size() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let y = bilinear_resize_fwd(&x, 1, 3, 4, 3, 4);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
