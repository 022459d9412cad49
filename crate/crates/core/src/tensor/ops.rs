//! Forward kernels and their analytic backward rules.
//!
//! All kernels are single-threaded with a fixed reduction order, so results are
//! bitwise reproducible for identical inputs.

use super::{lit, Real, Tensor};
use crate::error::{Error, Result};

/// Upper bound on im2col scratch elements per tile.
const IM2COL_TILE_ELEMS: usize = 1 << 22;

/// Row-major strided GEMM: `c = a * b + beta * c` where `a` is `m x k`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1));
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * rsc..i * rsc + n] {
                *v = *v * beta;
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Output index range along an axis of length `len` for a tap offset `d`.
#[inline]
fn tap_range(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { d.unsigned_abs() } else { 0 };
    let hi = if d > 0 {
        len.saturating_sub(d as usize)
    } else {
        len
    };
    (lo, hi.max(lo))
}

const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// `dst[y, x] += weight * src[y + dy, x + dx]` wherever the source is in bounds.
fn shifted_axpy<T: Real>(dst: &mut [T], src: &[T], h: usize, w: usize, dy: isize, dx: isize, weight: T) {
    let (y0, y1) = tap_range(h, dy);
    let (x0, x1) = tap_range(w, dx);
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s0 = (sy * w) as isize + x0 as isize + dx;
        let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
        for (o, &i) in d.iter_mut().zip(s) {
            *o = *o + weight * i;
        }
    }
}

/// `sum over valid (y, x) of a[y, x] * src[y + dy, x + dx]`.
fn shifted_dot<T: Real>(a: &[T], src: &[T], h: usize, w: usize, dy: isize, dx: isize) -> T {
    let (y0, y1) = tap_range(h, dy);
    let (x0, x1) = tap_range(w, dx);
    let mut acc = T::zero();
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
        let row = &a[y * w + x0..y * w + x1];
        let s = &src[s0..s0 + (x1 - x0)];
        acc = acc + row.iter().zip(s).map(|(&p, &q)| p * q).sum::<T>();
    }
    acc
}

/// Fills `col` (`[c * 9, rows * w]`) with the zero-padded 3x3 patches of rows `y0..y1`.
fn im2col_tile<T: Real>(src: &[T], c: usize, h: usize, w: usize, y0: usize, y1: usize, col: &mut [T]) {
    let tile = (y1 - y0) * w;
    let hw = h * w;
    for ch in 0..c {
        let plane = &src[ch * hw..(ch + 1) * hw];
        for (t, &(dy, dx)) in TAPS.iter().enumerate() {
            let row = &mut col[(ch * 9 + t) * tile..(ch * 9 + t + 1) * tile];
            row.fill(T::zero());
            let (vy0, vy1) = tap_range(h, dy);
            let (x0, x1) = tap_range(w, dx);
            for y in y0.max(vy0)..y1.min(vy1) {
                let sy = (y as isize + dy) as usize;
                let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
                let o = (y - y0) * w;
                row[o + x0..o + x1].copy_from_slice(&plane[s0..s0 + (x1 - x0)]);
            }
        }
    }
}

/// Scatter-adds a tile's patch gradients back onto the image planes.
fn col2im_tile<T: Real>(col: &[T], c: usize, h: usize, w: usize, y0: usize, y1: usize, dst: &mut [T]) {
    let tile = (y1 - y0) * w;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dst[ch * hw..(ch + 1) * hw];
        for (t, &(dy, dx)) in TAPS.iter().enumerate() {
            let row = &col[(ch * 9 + t) * tile..(ch * 9 + t + 1) * tile];
            let (vy0, vy1) = tap_range(h, dy);
            let (x0, x1) = tap_range(w, dx);
            for y in y0.max(vy0)..y1.min(vy1) {
                let sy = (y as isize + dy) as usize;
                let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
                let o = (y - y0) * w;
                for (d, &g) in plane[s0..s0 + (x1 - x0)]
                    .iter_mut()
                    .zip(&row[o + x0..o + x1])
                {
                    *d = *d + g;
                }
            }
        }
    }
}

fn tile_rows(c: usize, h: usize, w: usize) -> usize {
    (IM2COL_TILE_ELEMS / (c * 9 * w).max(1)).clamp(1, h.max(1))
}

fn check_bias<T: Real>(op: &'static str, bias: &Tensor<T>, k: usize) -> Result<()> {
    if bias.shape() != [k] {
        return Err(Error::shape(
            op,
            format!("bias shape {:?}, expected [{k}]", bias.shape()),
        ));
    }
    Ok(())
}

fn conv_dims<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (k, wc, kh, kw) = weight.dims4()?;
    if (kh, kw) != (3, 3) {
        return Err(Error::shape("conv2d", format!("kernel must be 3x3, got {kh}x{kw}")));
    }
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, weight expects {wc}"),
        ));
    }
    check_bias("conv2d", bias, k)?;
    Ok((n, c, h, w, k))
}

/// 3x3 stride-1 cross-correlation with zero padding of one pixel, plus bias.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w, k) = conv_dims(input, weight, bias)?;
    let hw = h * w;
    let mut out = Tensor::zeros(vec![n, k, h, w]);
    let rows = tile_rows(c, h, w);
    let mut col = vec![T::zero(); c * 9 * rows * w];
    let src = input.data();
    let wt = weight.data();
    for s in 0..n {
        let x = &src[s * c * hw..(s + 1) * c * hw];
        let o = &mut out.data_mut()[s * k * hw..(s + 1) * k * hw];
        for (kk, plane) in o.chunks_mut(hw.max(1)).enumerate() {
            plane.fill(bias.data()[kk]);
        }
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + rows).min(h);
            let tile = (y1 - y0) * w;
            let col = &mut col[..c * 9 * tile];
            im2col_tile(x, c, h, w, y0, y1, col);
            gemm(
                k,
                c * 9,
                tile,
                wt,
                (c * 9, 1),
                col,
                (tile, 1),
                T::one(),
                &mut o[y0 * w..],
                hw,
            );
            y0 = y1;
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`]; `grad_input` is skipped when `need_input` is false.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w, k) = conv_dims(input, weight, bias)?;
    if grad_out.shape() != [n, k, h, w] {
        return Err(Error::shape("conv2d_backward", "gradient shape"));
    }
    let hw = h * w;
    let c9 = c * 9;
    let rows = tile_rows(c, h, w);
    let mut col = vec![T::zero(); c9 * rows * w];
    let mut gcol = if need_input {
        vec![T::zero(); c9 * rows * w]
    } else {
        Vec::new()
    };
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros(vec![k]);
    let mut gx = need_input.then(|| Tensor::zeros(input.shape().to_vec()));
    for s in 0..n {
        let x = &input.data()[s * c * hw..(s + 1) * c * hw];
        let go = &grad_out.data()[s * k * hw..(s + 1) * k * hw];
        for (kk, plane) in go.chunks(hw.max(1)).enumerate() {
            gb.data_mut()[kk] = gb.data()[kk] + plane.iter().copied().sum::<T>();
        }
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + rows).min(h);
            let tile = (y1 - y0) * w;
            let col = &mut col[..c9 * tile];
            im2col_tile(x, c, h, w, y0, y1, col);
            let go_tile = &go[y0 * w..];
            gemm(
                k,
                tile,
                c9,
                go_tile,
                (hw, 1),
                col,
                (1, tile),
                T::one(),
                gw.data_mut(),
                c9,
            );
            if let Some(gx) = gx.as_mut() {
                let gcol = &mut gcol[..c9 * tile];
                gemm(
                    c9,
                    k,
                    tile,
                    weight.data(),
                    (1, c9),
                    go_tile,
                    (hw, 1),
                    T::zero(),
                    gcol,
                    tile,
                );
                col2im_tile(
                    gcol,
                    c,
                    h,
                    w,
                    y0,
                    y1,
                    &mut gx.data_mut()[s * c * hw..(s + 1) * c * hw],
                );
            }
            y0 = y1;
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

fn depthwise_dims<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if weight.shape() != [c, 1, 3, 3] {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!(
                "weight shape {:?}, expected [{c}, 1, 3, 3]",
                weight.shape()
            ),
        ));
    }
    check_bias("depthwise_conv2d", bias, c)?;
    Ok((n, c, h, w))
}

/// One 3x3 zero-padded kernel per channel; channel `c` of the output sees only channel `c`.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = depthwise_dims(input, weight, bias)?;
    let hw = h * w;
    let mut out = Tensor::zeros(input.shape().to_vec());
    for s in 0..n {
        for ch in 0..c {
            let idx = (s * c + ch) * hw;
            let src = &input.data()[idx..idx + hw];
            let dst = &mut out.data_mut()[idx..idx + hw];
            dst.fill(bias.data()[ch]);
            for (t, &(dy, dx)) in TAPS.iter().enumerate() {
                shifted_axpy(dst, src, h, w, dy, dx, weight.data()[ch * 9 + t]);
            }
        }
    }
    Ok(out)
}

pub fn depthwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w) = depthwise_dims(input, weight, bias)?;
    grad_out.expect_same_shape(input, "depthwise_conv2d_backward")?;
    let hw = h * w;
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros(vec![c]);
    let mut gx = need_input.then(|| Tensor::zeros(input.shape().to_vec()));
    for s in 0..n {
        for ch in 0..c {
            let idx = (s * c + ch) * hw;
            let src = &input.data()[idx..idx + hw];
            let go = &grad_out.data()[idx..idx + hw];
            gb.data_mut()[ch] = gb.data()[ch] + go.iter().copied().sum::<T>();
            for (t, &(dy, dx)) in TAPS.iter().enumerate() {
                let g = shifted_dot(go, src, h, w, dy, dx);
                gw.data_mut()[ch * 9 + t] = gw.data()[ch * 9 + t] + g;
                if let Some(gx) = gx.as_mut() {
                    shifted_axpy(
                        &mut gx.data_mut()[idx..idx + hw],
                        go,
                        h,
                        w,
                        -dy,
                        -dx,
                        weight.data()[ch * 9 + t],
                    );
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

fn pointwise_dims<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (k, wc, kh, kw) = weight.dims4()?;
    if (wc, kh, kw) != (c, 1, 1) {
        return Err(Error::shape(
            "pointwise_conv2d",
            format!("weight shape {:?} incompatible with {c} input channels", weight.shape()),
        ));
    }
    check_bias("pointwise_conv2d", bias, k)?;
    Ok((n, c, h, w, k))
}

/// 1x1 convolution: a per-pixel linear map across channels, plus bias.
pub fn pointwise_conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w, k) = pointwise_dims(input, weight, bias)?;
    let hw = h * w;
    let mut out = Tensor::zeros(vec![n, k, h, w]);
    for s in 0..n {
        let o = &mut out.data_mut()[s * k * hw..(s + 1) * k * hw];
        for (kk, plane) in o.chunks_mut(hw.max(1)).enumerate() {
            plane.fill(bias.data()[kk]);
        }
        let x = &input.data()[s * c * hw..(s + 1) * c * hw];
        gemm(k, c, hw, weight.data(), (c, 1), x, (hw, 1), T::one(), o, hw);
    }
    Ok(out)
}

pub fn pointwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w, k) = pointwise_dims(input, weight, bias)?;
    if grad_out.shape() != [n, k, h, w] {
        return Err(Error::shape("pointwise_conv2d_backward", "gradient shape"));
    }
    let hw = h * w;
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros(vec![k]);
    let mut gx = need_input.then(|| Tensor::zeros(input.shape().to_vec()));
    for s in 0..n {
        let x = &input.data()[s * c * hw..(s + 1) * c * hw];
        let go = &grad_out.data()[s * k * hw..(s + 1) * k * hw];
        for (kk, plane) in go.chunks(hw.max(1)).enumerate() {
            gb.data_mut()[kk] = gb.data()[kk] + plane.iter().copied().sum::<T>();
        }
        gemm(k, hw, c, go, (hw, 1), x, (1, hw), T::one(), gw.data_mut(), c);
        if let Some(gx) = gx.as_mut() {
            gemm(
                c,
                k,
                hw,
                weight.data(),
                (1, c),
                go,
                (hw, 1),
                T::zero(),
                &mut gx.data_mut()[s * c * hw..(s + 1) * c * hw],
                hw,
            );
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Passes the gradient where `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad, |v, g| if v > T::zero() { g } else { T::zero() })
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Uses the forward output `y = tanh(x)`: `dx = g * (1 - y^2)`.
pub fn tanh_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad, |v, g| g * (T::one() - v * v))
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * (ca + cb) * hw);
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * ca * hw..(s + 1) * ca * hw]);
        data.extend_from_slice(&b.data()[s * cb * hw..(s + 1) * cb * hw]);
    }
    Tensor::new(vec![n, ca + cb, h, w], data)
}

/// Channels `start..start + len` of a 4-D tensor.
pub fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if start + len > c {
        return Err(Error::shape(
            "slice_channels",
            format!("channels {start}..{} out of {c}", start + len),
        ));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * len * hw);
    for s in 0..n {
        let base = (s * c + start) * hw;
        data.extend_from_slice(&x.data()[base..base + len * hw]);
    }
    Tensor::new(vec![n, len, h, w], data)
}

/// Adjoint of [`slice_channels`]: embeds `grad` into a zero tensor of `shape`.
pub fn slice_channels_backward<T: Real>(
    shape: &[usize],
    start: usize,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros(shape.to_vec());
    let (n, c, h, w) = out.dims4()?;
    let (gn, len, gh, gw) = grad.dims4()?;
    if (gn, gh, gw) != (n, h, w) || start + len > c {
        return Err(Error::shape("slice_channels_backward", "gradient shape"));
    }
    let hw = h * w;
    for s in 0..n {
        let base = (s * c + start) * hw;
        out.data_mut()[base..base + len * hw]
            .copy_from_slice(&grad.data()[s * len * hw..(s + 1) * len * hw]);
    }
    Ok(out)
}

/// Non-overlapping `k x k` mean pooling; trailing partial windows are dropped.
pub fn avg_pool<T: Real>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if k == 0 {
        return Err(Error::invalid("avg_pool", "window size must be positive"));
    }
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::from_usize(k * k).unwrap();
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for gy in 0..oh {
            for gx in 0..ow {
                let mut acc = T::zero();
                for y in gy * k..(gy + 1) * k {
                    acc = acc + src[y * w + gx * k..y * w + (gx + 1) * k].iter().copied().sum::<T>();
                }
                dst[gy * ow + gx] = acc * inv;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool_backward<T: Real>(input_shape: &[usize], k: usize, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if k == 0 {
        return Err(Error::invalid("avg_pool", "window size must be positive"));
    }
    let mut out = Tensor::zeros(input_shape.to_vec());
    let (n, c, h, w) = out.dims4()?;
    let (oh, ow) = (h / k, w / k);
    if grad.shape() != [n, c, oh, ow] {
        return Err(Error::shape("avg_pool_backward", "gradient shape"));
    }
    let inv = T::one() / T::from_usize(k * k).unwrap();
    for p in 0..n * c {
        let g = &grad.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for gy in 0..oh {
            for gx in 0..ow {
                let v = g[gy * ow + gx] * inv;
                for y in gy * k..(gy + 1) * k {
                    dst[y * w + gx * k..y * w + (gx + 1) * k].fill(v);
                }
            }
        }
    }
    Ok(out)
}

/// Per output index: the two source taps and the weight of the second.
fn align_corners_axis<T: Real>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    (0..dst)
        .map(|o| {
            if dst == 1 || src == 1 {
                return (0, 0, T::zero());
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, lit(pos - i0 as f64))
        })
        .collect()
}

#[inline]
fn lerp<T: Real>(a: T, b: T, f: T) -> T {
    (a + f * (b - a)).max(a.min(b)).min(a.max(b))
}

/// Bilinear resampling with aligned corners.
///
/// Output sample `o` reads source position `o * (in - 1) / (out - 1)`; a single-sample
/// output axis reads source index 0. Interpolated values never leave the hull of their
/// four source pixels, so constants are reproduced exactly.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "resize_bilinear",
            format!("target size {out_h}x{out_w} must be positive"),
        ));
    }
    let (n, c, h, w) = x.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("resize_bilinear", "empty source"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ys = align_corners_axis::<T>(h, out_h);
    let xs = align_corners_axis::<T>(w, out_w);
    let mut out = Tensor::zeros(vec![n, c, out_h, out_w]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = lerp(r0[x0], r0[x1], fx);
                let bottom = lerp(r1[x0], r1[x1], fx);
                dst[oy * out_w + ox] = lerp(top, bottom, fy);
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward<T: Real>(input_shape: &[usize], grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, out_h, out_w) = grad.dims4()?;
    let mut out = Tensor::zeros(input_shape.to_vec());
    let (gn, gc, h, w) = out.dims4()?;
    if (gn, gc) != (n, c) {
        return Err(Error::shape("resize_bilinear_backward", "gradient shape"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(grad.clone());
    }
    let ys = align_corners_axis::<T>(h, out_h);
    let xs = align_corners_axis::<T>(w, out_w);
    let one = T::one();
    for p in 0..n * c {
        let g = &grad.data()[p * out_h * out_w..(p + 1) * out_h * out_w];
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v = g[oy * out_w + ox];
                let top = v * (one - fy);
                let bottom = v * fy;
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (one - fx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bottom * (one - fx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bottom * fx;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    /// Direct 7-loop convolution used as the reference for the im2col path.
    fn conv_reference(x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4().unwrap();
        let k = wt.shape()[0];
        let mut out = Tensor::zeros(vec![n, k, h, w]);
        for s in 0..n {
            for o in 0..k {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = b.data()[o];
                        for i in 0..c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += wt.data()[((o * c + i) * 3 + ky) * 3 + kx]
                                        * x.data()[((s * c + i) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out.data_mut()[((s * k + o) * h + y) * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = random(&[1, 1, 3, 3], 1);
        let mut k = Tensor::zeros(vec![1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let out = conv2d(&x, &k, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_single_pixel_sees_only_center() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let out = conv2d(&x, &k, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(out.data(), &[2.0]);
    }

    #[test]
    fn conv_output_shape_and_reference() {
        let x = random(&[2, 3, 8, 8], 2);
        let wt = random(&[32, 3, 3, 3], 3);
        let b = random(&[32], 4);
        let out = conv2d(&x, &wt, &b).unwrap();
        assert_eq!(out.shape(), &[2, 32, 8, 8]);
        let want = conv_reference(&x, &wt, &b);
        assert!(out.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn conv_channel_mismatch_is_an_error() {
        let x = random(&[1, 3, 4, 4], 5);
        let wt = random(&[8, 4, 3, 3], 6);
        assert!(conv2d(&x, &wt, &Tensor::zeros(vec![8])).is_err());
    }

    #[test]
    fn conv_tiling_matches_untiled_reference() {
        // wide enough that the im2col scratch is split into several row tiles
        let x = random(&[1, 64, 70, 1100], 7);
        let wt = random(&[2, 64, 3, 3], 8);
        let b = random(&[2], 9);
        assert!(tile_rows(64, 70, 1100) < 70);
        let out = conv2d(&x, &wt, &b).unwrap();
        // spot-check a few pixels against direct evaluation
        for &(y, xx) in &[(0usize, 0usize), (35, 550), (69, 1099), (10, 0)] {
            let mut acc = b.data()[1];
            for i in 0..64 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let sy = y as isize + ky - 1;
                        let sx = xx as isize + kx - 1;
                        if sy < 0 || sx < 0 || sy >= 70 || sx >= 1100 {
                            continue;
                        }
                        acc += wt.data()[((64 + i) * 3 + ky as usize) * 3 + kx as usize]
                            * x.data()[(i * 70 + sy as usize) * 1100 + sx as usize];
                    }
                }
            }
            let got = out.data()[(70 + y) * 1100 + xx];
            assert!((got - acc).abs() < 1e-10, "{got} vs {acc}");
        }
    }

    #[test]
    fn depthwise_constant_channels_count_taps() {
        let (a, b) = (0.5, -2.0);
        let x = Tensor::new(vec![1, 2, 2, 2], vec![a, a, a, a, b, b, b, b]).unwrap();
        let k = Tensor::full(vec![2, 1, 3, 3], 1.0);
        let out = depthwise_conv2d(&x, &k, &Tensor::zeros(vec![2])).unwrap();
        // every pixel of a 2x2 image has 4 in-bounds taps
        assert_eq!(out.data(), &[4.0 * a, 4.0 * a, 4.0 * a, 4.0 * a, 4.0 * b, 4.0 * b, 4.0 * b, 4.0 * b]);
    }

    #[test]
    fn depthwise_identity_kernel() {
        let x = random(&[2, 3, 5, 4], 10);
        let mut k = Tensor::zeros(vec![3, 1, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 9 + 4] = 1.0;
        }
        assert_eq!(depthwise_conv2d(&x, &k, &Tensor::zeros(vec![3])).unwrap(), x);
    }

    #[test]
    fn depthwise_equals_block_diagonal_conv() {
        let x = random(&[1, 3, 5, 5], 11);
        let dw = random(&[3, 1, 3, 3], 12);
        let b = random(&[3], 13);
        let mut full = Tensor::zeros(vec![3, 3, 3, 3]);
        for c in 0..3 {
            for t in 0..9 {
                full.data_mut()[(c * 3 + c) * 9 + t] = dw.data()[c * 9 + t];
            }
        }
        let a = depthwise_conv2d(&x, &dw, &b).unwrap();
        let r = conv2d(&x, &full, &b).unwrap();
        assert!(a.max_abs_diff(&r).unwrap() < 1e-6);
    }

    #[test]
    fn depthwise_channel_mismatch_is_an_error() {
        let x = random(&[1, 3, 4, 4], 14);
        assert!(depthwise_conv2d(&x, &random(&[2, 1, 3, 3], 1), &Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn pointwise_hand_matrix() {
        let x = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let wt = Tensor::new(vec![2, 2, 1, 1], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let out = pointwise_conv2d(&x, &wt, &Tensor::zeros(vec![2])).unwrap();
        assert_eq!(out.data(), &[3.0, -1.0]);
    }

    #[test]
    fn pointwise_identity_and_shape() {
        let x = random(&[1, 4, 3, 3], 15);
        let eye = Tensor::from_fn(vec![4, 4, 1, 1], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(pointwise_conv2d(&x, &eye, &Tensor::zeros(vec![4])).unwrap(), x);
        let big = random(&[1, 64, 10, 10], 16);
        let out = pointwise_conv2d(&big, &random(&[3, 64, 1, 1], 17), &Tensor::zeros(vec![3])).unwrap();
        assert_eq!(out.shape(), &[1, 3, 10, 10]);
        assert!(pointwise_conv2d(&big, &random(&[3, 63, 1, 1], 17), &Tensor::zeros(vec![3])).is_err());
    }

    #[test]
    fn relu_and_tanh_values() {
        let x = Tensor::new(vec![3], vec![-1.5, 2.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);
        assert_eq!(tanh(&Tensor::scalar(0.0f64)).data(), &[0.0]);
        let r = tanh(&random(&[1000], 18).map(|v| v * 5.0));
        assert!(r.data().iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = random(&[1, 32, 4, 5], 19);
        let b = random(&[1, 32, 4, 5], 20);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[1, 64, 4, 5]);
        assert_eq!(slice_channels(&cat, 0, 32).unwrap(), a);
        assert_eq!(slice_channels(&cat, 32, 32).unwrap(), b);
        assert!(concat_channels(&a, &random(&[1, 32, 4, 4], 1)).is_err());
    }

    #[test]
    fn avg_pool_values_and_shapes() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[2.5]);
        let c = Tensor::full(vec![1, 3, 512, 512], 0.3f32);
        let p = avg_pool(&c, 16).unwrap();
        assert_eq!(p.shape(), &[1, 3, 32, 32]);
        assert!(p.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        // partial windows are dropped
        assert_eq!(avg_pool(&random(&[1, 1, 9, 7], 21), 4).unwrap().shape(), &[1, 1, 2, 1]);
        assert!(avg_pool(&x, 0).is_err());
    }

    #[test]
    fn resize_hand_values() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = resize_bilinear(&x, 2, 4).unwrap();
        let third = 1.0 / 3.0;
        let want: [f64; 4] = [0.0, third, 2.0 * third, 1.0];
        for row in up.data().chunks(4) {
            for (a, b) in row.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_constant_round_trip_and_identity() {
        let c = Tensor::full(vec![1, 3, 120, 96], 0.3f32);
        let down = resize_bilinear(&c, 10, 8).unwrap();
        let up = resize_bilinear(&down, 120, 96).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.3));
        let x = random(&[1, 2, 7, 5], 22);
        assert_eq!(resize_bilinear(&x, 7, 5).unwrap(), x);
        assert!(resize_bilinear(&x, 0, 5).is_err());
    }

    /// Adjoint identity `<R x, g> == <x, R^T g>` for every linear kernel's backward rule.
    #[test]
    fn linear_kernels_satisfy_adjoint_identity() {
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        let x = random(&[2, 3, 9, 7], 23);
        let g = random(&[2, 3, 4, 11], 24);
        let fwd = resize_bilinear(&x, 4, 11).unwrap();
        let back = resize_bilinear_backward(x.shape(), &g).unwrap();
        assert!((dot(&fwd, &g) - dot(&x, &back)).abs() < 1e-10);

        let gp = random(&[2, 3, 3, 2], 25);
        let fwd = avg_pool(&x, 3).unwrap();
        let back = avg_pool_backward(x.shape(), 3, &gp).unwrap();
        assert!((dot(&fwd, &gp) - dot(&x, &back)).abs() < 1e-10);

        let wt = random(&[4, 3, 3, 3], 26);
        let zero = Tensor::zeros(vec![4]);
        let gc = random(&[2, 4, 9, 7], 27);
        let fwd = conv2d(&x, &wt, &zero).unwrap();
        let back = conv2d_backward(&x, &wt, &zero, &gc, true).unwrap();
        assert!((dot(&fwd, &gc) - dot(&x, back.input.as_ref().unwrap())).abs() < 1e-10);
        assert!((dot(&fwd, &gc) - dot(&wt, &back.weight)).abs() < 1e-10);
    }
}
