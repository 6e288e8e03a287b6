//! Forward and backward kernels shared by the eager and taped backends.
//!
//! Every kernel is a pure function of its inputs. Convolutions lower to GEMM
//! through an im2col buffer that is processed in bands of output rows, so peak
//! memory stays bounded at high resolutions.

use super::scalar::{compensated_sum, Element};
use super::tensor::{Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Upper bound on im2col buffer elements per band.
const COL_BUDGET: usize = 1 << 21;

/// 1×1 convolutions with at most this many weights run as a per-pixel loop
/// with f64 accumulation; their outputs are then independent of image extent.
const DIRECT_1X1_MAX_WEIGHTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_out_extent(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(arg_err!("convolution stride must be at least 1"));
    }
    if len + 2 * pad < k {
        return Err(shape_err!("kernel {k} larger than padded extent {}", len + 2 * pad));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

pub fn conv2d_shape(x: Shape, w: Shape, stride: usize, pad: usize) -> Result<Shape> {
    if w.h != w.w {
        return Err(shape_err!("only square kernels are supported, got {w:?}"));
    }
    if x.c != w.c {
        return Err(shape_err!(
            "input has {} channels but kernel expects {} ({x:?} vs {w:?})",
            x.c,
            w.c
        ));
    }
    let ho = conv_out_extent(x.h, w.h, stride, pad)?;
    let wo = conv_out_extent(x.w, w.w, stride, pad)?;
    Ok(Shape::new(x.n, w.n, ho, wo))
}

fn check_bias(b: Shape, cout: usize) -> Result<()> {
    if b.numel() != cout {
        return Err(shape_err!("bias {b:?} does not match {cout} output channels"));
    }
    Ok(())
}

fn is_direct_1x1(geom: ConvGeom, cin: usize, cout: usize) -> bool {
    geom.k == 1 && geom.stride == 1 && geom.pad == 0 && cin * cout <= DIRECT_1X1_MAX_WEIGHTS
}

fn is_plain_1x1(geom: ConvGeom) -> bool {
    geom.k == 1 && geom.stride == 1 && geom.pad == 0
}

/// Rows of output handled per im2col band.
fn band_rows(kdim: usize, wo: usize, ho: usize) -> usize {
    (COL_BUDGET / (kdim * wo).max(1)).clamp(1, ho.max(1))
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    img: &[T],
    cin: usize,
    h: usize,
    w: usize,
    geom: ConvGeom,
    wo: usize,
    y0: usize,
    rows: usize,
    col: &mut [T],
) {
    let ConvGeom { k, stride, pad } = geom;
    let p = rows * wo;
    for ci in 0..cin {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let dst = &mut col[r * p..(r + 1) * p];
                let (xs, xe) = valid_range(w, wo, kx, stride, pad);
                for yy in 0..rows {
                    let iy = (y0 + yy) * stride + ky;
                    let row = &mut dst[yy * wo..(yy + 1) * wo];
                    if iy < pad || iy - pad >= h || xs >= xe {
                        row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[(iy - pad) * w..(iy - pad + 1) * w];
                    row[..xs].iter_mut().for_each(|v| *v = T::zero());
                    row[xe..].iter_mut().for_each(|v| *v = T::zero());
                    if stride == 1 {
                        let ix0 = xs + kx - pad;
                        row[xs..xe].copy_from_slice(&src[ix0..ix0 + (xe - xs)]);
                    } else {
                        for (xx, v) in row.iter_mut().enumerate().take(xe).skip(xs) {
                            *v = src[xx * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    col: &[T],
    cin: usize,
    h: usize,
    w: usize,
    geom: ConvGeom,
    wo: usize,
    y0: usize,
    rows: usize,
    img: &mut [T],
) {
    let ConvGeom { k, stride, pad } = geom;
    let p = rows * wo;
    for ci in 0..cin {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let src = &col[r * p..(r + 1) * p];
                let (xs, xe) = valid_range(w, wo, kx, stride, pad);
                if xs >= xe {
                    continue;
                }
                for yy in 0..rows {
                    let iy = (y0 + yy) * stride + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let dst = &mut plane[(iy - pad) * w..(iy - pad + 1) * w];
                    let row = &src[yy * wo..(yy + 1) * wo];
                    for xx in xs..xe {
                        dst[xx * stride + kx - pad] += row[xx];
                    }
                }
            }
        }
    }
}

/// Output columns `xx` whose tap `kx` lands inside the unpadded row.
fn valid_range(w: usize, wo: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    // xx*stride + kx - pad in [0, w)
    let xs = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let xe = if w + pad <= kx {
        0
    } else {
        ((w + pad - kx - 1) / stride + 1).min(wo)
    };
    (xs.min(wo), xe)
}

pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    let os = conv2d_shape(xs, ws, stride, pad)?;
    if let Some(b) = b {
        check_bias(b.shape(), ws.n)?;
    }
    let geom = ConvGeom { k: ws.h, stride, pad };
    let (cin, cout) = (xs.c, ws.n);
    let kdim = cin * geom.k * geom.k;
    let (in_plane, out_plane) = (xs.plane(), os.plane());
    let mut out = Tensor::zeros(os);

    if is_direct_1x1(geom, cin, cout) {
        let wd: Vec<f64> = w.data().iter().map(|v| v.f64()).collect();
        let bd: Vec<f64> = match b {
            Some(b) => b.data().iter().map(|v| v.f64()).collect(),
            None => vec![0.0; cout],
        };
        let xd = x.data();
        let od = out.data_mut();
        for n in 0..xs.n {
            let xi = &xd[n * cin * in_plane..(n + 1) * cin * in_plane];
            let oi = &mut od[n * cout * out_plane..(n + 1) * cout * out_plane];
            for co in 0..cout {
                let wr = &wd[co * cin..(co + 1) * cin];
                for p in 0..out_plane {
                    let mut acc = 0.0f64;
                    for (ci, wv) in wr.iter().enumerate() {
                        acc += wv * xi[ci * in_plane + p].f64();
                    }
                    oi[co * out_plane + p] = T::of(acc + bd[co]);
                }
            }
        }
        return Ok(out);
    }

    let wd = w.data();
    let xd = x.data();
    let od = out.data_mut();
    if is_plain_1x1(geom) {
        for n in 0..xs.n {
            let xi = &xd[n * cin * in_plane..];
            let oi = &mut od[n * cout * out_plane..];
            // SAFETY: w is cout×cin, the input plane block cin×P, output cout×P.
            unsafe {
                T::gemm(
                    cout,
                    cin,
                    out_plane,
                    T::one(),
                    wd.as_ptr(),
                    cin as isize,
                    1,
                    xi.as_ptr(),
                    in_plane as isize,
                    1,
                    T::zero(),
                    oi.as_mut_ptr(),
                    out_plane as isize,
                    1,
                );
            }
        }
    } else {
        let rows_per = band_rows(kdim, os.w, os.h);
        let mut col = vec![T::zero(); kdim * rows_per * os.w];
        for n in 0..xs.n {
            let xi = &xd[n * cin * in_plane..(n + 1) * cin * in_plane];
            let mut y0 = 0;
            while y0 < os.h {
                let rows = rows_per.min(os.h - y0);
                let p = rows * os.w;
                im2col(xi, cin, xs.h, xs.w, geom, os.w, y0, rows, &mut col);
                let oi = &mut od[n * cout * out_plane + y0 * os.w..];
                // SAFETY: col holds kdim×p values; output band rows stride by the plane.
                unsafe {
                    T::gemm(
                        cout,
                        kdim,
                        p,
                        T::one(),
                        wd.as_ptr(),
                        kdim as isize,
                        1,
                        col.as_ptr(),
                        p as isize,
                        1,
                        T::zero(),
                        oi.as_mut_ptr(),
                        out_plane as isize,
                        1,
                    );
                }
                y0 += rows;
            }
        }
    }
    if let Some(b) = b {
        let bd = b.data();
        for n in 0..xs.n {
            for (co, bias) in bd.iter().enumerate().take(cout) {
                let start = (n * cout + co) * out_plane;
                for v in &mut od[start..start + out_plane] {
                    *v += *bias;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution; each output is computed only when requested.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias_shape: Option<Shape>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (xs, ws, os) = (x.shape(), w.shape(), dy.shape());
    let geom = ConvGeom { k: ws.h, stride, pad };
    let (cin, cout) = (xs.c, ws.n);
    let kdim = cin * geom.k * geom.k;
    let (in_plane, out_plane) = (xs.plane(), os.plane());
    let (need_dx, need_dw, need_db) = need;
    let dyd = dy.data();

    let db = match (need_db, bias_shape) {
        (true, Some(bs)) => {
            let mut acc = vec![0.0f64; cout];
            for n in 0..os.n {
                for (co, a) in acc.iter_mut().enumerate() {
                    let start = (n * cout + co) * out_plane;
                    *a += dyd[start..start + out_plane].iter().map(|v| v.f64()).sum::<f64>();
                }
            }
            Some(Tensor::new(bs, acc.into_iter().map(T::of).collect()).expect("bias shape"))
        }
        _ => None,
    };
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut dw = need_dw.then(|| Tensor::zeros(ws));
    if !need_dx && !need_dw {
        return ConvGrads { dx, dw, db };
    }
    let xd = x.data();
    let wd = w.data();

    if is_plain_1x1(geom) {
        for n in 0..xs.n {
            let xi = &xd[n * cin * in_plane..];
            let gi = &dyd[n * cout * out_plane..];
            if let Some(dw) = dw.as_mut() {
                // dW (cout×cin) += dY (cout×P) · Xᵀ (P×cin)
                unsafe {
                    T::gemm(
                        cout,
                        out_plane,
                        cin,
                        T::one(),
                        gi.as_ptr(),
                        out_plane as isize,
                        1,
                        xi.as_ptr(),
                        1,
                        in_plane as isize,
                        T::one(),
                        dw.data_mut().as_mut_ptr(),
                        cin as isize,
                        1,
                    );
                }
            }
            if let Some(dx) = dx.as_mut() {
                let di = &mut dx.data_mut()[n * cin * in_plane..];
                // dX (cin×P) = Wᵀ (cin×cout) · dY (cout×P)
                unsafe {
                    T::gemm(
                        cin,
                        cout,
                        out_plane,
                        T::one(),
                        wd.as_ptr(),
                        1,
                        cin as isize,
                        gi.as_ptr(),
                        out_plane as isize,
                        1,
                        T::zero(),
                        di.as_mut_ptr(),
                        in_plane as isize,
                        1,
                    );
                }
            }
        }
        return ConvGrads { dx, dw, db };
    }

    let rows_per = band_rows(kdim, os.w, os.h);
    let mut col = vec![T::zero(); kdim * rows_per * os.w];
    for n in 0..xs.n {
        let xi = &xd[n * cin * in_plane..(n + 1) * cin * in_plane];
        let mut y0 = 0;
        while y0 < os.h {
            let rows = rows_per.min(os.h - y0);
            let p = rows * os.w;
            let gi = &dyd[n * cout * out_plane + y0 * os.w..];
            if let Some(dw) = dw.as_mut() {
                im2col(xi, cin, xs.h, xs.w, geom, os.w, y0, rows, &mut col);
                // dW (cout×kdim) += dY band (cout×p) · colᵀ (p×kdim)
                unsafe {
                    T::gemm(
                        cout,
                        p,
                        kdim,
                        T::one(),
                        gi.as_ptr(),
                        out_plane as isize,
                        1,
                        col.as_ptr(),
                        1,
                        p as isize,
                        T::one(),
                        dw.data_mut().as_mut_ptr(),
                        kdim as isize,
                        1,
                    );
                }
            }
            if let Some(dx) = dx.as_mut() {
                // dcol (kdim×p) = Wᵀ (kdim×cout) · dY band (cout×p)
                unsafe {
                    T::gemm(
                        kdim,
                        cout,
                        p,
                        T::one(),
                        wd.as_ptr(),
                        1,
                        kdim as isize,
                        gi.as_ptr(),
                        out_plane as isize,
                        1,
                        T::zero(),
                        col.as_mut_ptr(),
                        p as isize,
                        1,
                    );
                }
                let di = &mut dx.data_mut()[n * cin * in_plane..(n + 1) * cin * in_plane];
                col2im(&col, cin, xs.h, xs.w, geom, os.w, y0, rows, di);
            }
            y0 += rows;
        }
    }
    ConvGrads { dx, dw, db }
}

/// Fully connected layer: `x` is (N, in, 1, 1), `w` is (out, in, 1, 1).
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    let fan_in = xs.c * xs.h * xs.w;
    if ws.c * ws.h * ws.w != fan_in {
        return Err(shape_err!("linear input {xs:?} does not match weight {ws:?}"));
    }
    if let Some(b) = b {
        check_bias(b.shape(), ws.n)?;
    }
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, 1, 1));
    unsafe {
        T::gemm(
            xs.n,
            fan_in,
            ws.n,
            T::one(),
            x.data().as_ptr(),
            fan_in as isize,
            1,
            w.data().as_ptr(),
            1,
            fan_in as isize,
            T::zero(),
            out.data_mut().as_mut_ptr(),
            ws.n as isize,
            1,
        );
    }
    if let Some(b) = b {
        let bd = b.data();
        for row in out.data_mut().chunks_mut(ws.n) {
            for (v, bv) in row.iter_mut().zip(bd) {
                *v += *bv;
            }
        }
    }
    Ok(out)
}

pub fn linear_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias_shape: Option<Shape>,
    dy: &Tensor<T>,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (xs, ws) = (x.shape(), w.shape());
    let fan_in = xs.c * xs.h * xs.w;
    let (n, out) = (xs.n, ws.n);
    let dx = need.0.then(|| {
        let mut dx = Tensor::zeros(xs);
        unsafe {
            T::gemm(
                n,
                out,
                fan_in,
                T::one(),
                dy.data().as_ptr(),
                out as isize,
                1,
                w.data().as_ptr(),
                fan_in as isize,
                1,
                T::zero(),
                dx.data_mut().as_mut_ptr(),
                fan_in as isize,
                1,
            );
        }
        dx
    });
    let dw = need.1.then(|| {
        let mut dw = Tensor::zeros(ws);
        unsafe {
            T::gemm(
                out,
                n,
                fan_in,
                T::one(),
                dy.data().as_ptr(),
                1,
                out as isize,
                x.data().as_ptr(),
                fan_in as isize,
                1,
                T::zero(),
                dw.data_mut().as_mut_ptr(),
                fan_in as isize,
                1,
            );
        }
        dw
    });
    let db = match (need.2, bias_shape) {
        (true, Some(bs)) => {
            let mut acc = vec![T::zero(); out];
            for row in dy.data().chunks(out) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += *v;
                }
            }
            Some(Tensor::new(bs, acc).expect("bias shape"))
        }
        _ => None,
    };
    ConvGrads { dx, dw, db }
}

fn strides_for(s: Shape, out: Shape) -> [usize; 4] {
    let full = [s.c * s.h * s.w, s.h * s.w, s.w, 1];
    let d = s.dims();
    let o = out.dims();
    let mut st = [0; 4];
    for i in 0..4 {
        st[i] = if d[i] == 1 && o[i] != 1 { 0 } else { full[i] };
    }
    st
}

/// Elementwise binary op with broadcasting of unit extents.
pub fn broadcast_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let out_shape = a.shape().broadcast(&b.shape())?;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        return Tensor::new(out_shape, data);
    }
    let (sa, sb) = (strides_for(a.shape(), out_shape), strides_for(b.shape(), out_shape));
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..out_shape.n {
        for c in 0..out_shape.c {
            for y in 0..out_shape.h {
                let ba = n * sa[0] + c * sa[1] + y * sa[2];
                let bb = n * sb[0] + c * sb[1] + y * sb[2];
                for x in 0..out_shape.w {
                    data.push(f(ad[ba + x * sa[3]], bd[bb + x * sb[3]]));
                }
            }
        }
    }
    Tensor::new(out_shape, data)
}

/// Sums `g` over the extents where `target` is 1, undoing a broadcast.
pub fn reduce_to<T: Element>(g: &Tensor<T>, target: Shape) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let gs = g.shape();
    let st = strides_for(target, gs);
    let mut acc = vec![0.0f64; target.numel()];
    let gd = g.data();
    let mut i = 0;
    for n in 0..gs.n {
        for c in 0..gs.c {
            for y in 0..gs.h {
                let base = n * st[0] + c * st[1] + y * st[2];
                for x in 0..gs.w {
                    acc[base + x * st[3]] += gd[i].f64();
                    i += 1;
                }
            }
        }
    }
    Tensor::new(target, acc.into_iter().map(T::of).collect()).expect("reduce target")
}

pub fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape(), x.data().iter().map(|v| f(*v)).collect()).expect("same shape")
}

pub fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
    )
    .expect("same shape")
}

pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| arg_err!("concat of zero tensors"))?.shape();
    let mut c_total = 0;
    for p in parts {
        let s = p.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(shape_err!(
                "channel concat needs matching batch and spatial extents, got {first:?} and {s:?}"
            ));
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(first.n, c_total, first.h, first.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for p in parts {
            let block = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * block..(n + 1) * block]);
        }
    }
    Tensor::new(out_shape, data)
}

/// Splits a gradient of a channel concatenation back into its parts.
pub fn split_channels<T: Element>(g: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let gs = g.shape();
    let plane = gs.plane();
    let mut outs: Vec<Vec<T>> = channels.iter().map(|c| Vec::with_capacity(gs.n * c * plane)).collect();
    let gd = g.data();
    let mut off = 0;
    for _ in 0..gs.n {
        for (o, c) in outs.iter_mut().zip(channels) {
            o.extend_from_slice(&gd[off..off + c * plane]);
            off += c * plane;
        }
    }
    outs.into_iter()
        .zip(channels)
        .map(|(d, c)| Tensor::new(Shape::new(gs.n, *c, gs.h, gs.w), d).expect("split"))
        .collect()
}

pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let data = x
        .data()
        .chunks(plane)
        .map(|p| T::of(compensated_sum(p.iter().map(|v| v.f64())) / plane as f64))
        .collect();
    Tensor::new(Shape::new(s.n, s.c, 1, 1), data).expect("pool shape")
}

pub fn global_avg_pool_backward<T: Element>(g: &Tensor<T>, input: Shape) -> Tensor<T> {
    let plane = input.plane();
    let inv = T::of(1.0 / plane as f64);
    let mut data = Vec::with_capacity(input.numel());
    for gv in g.data() {
        let v = *gv * inv;
        data.extend(std::iter::repeat_n(v, plane));
    }
    Tensor::new(input, data).expect("pool grad")
}

pub fn mean_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.data().len() as f64;
    Tensor::scalar(T::of(compensated_sum(x.data().iter().map(|v| v.f64())) / n))
}

pub fn sum_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(T::of(compensated_sum(x.data().iter().map(|v| v.f64()))))
}

pub fn pixel_unshuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 {
        return Err(arg_err!("shuffle factor must be at least 1"));
    }
    if !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(shape_err!(
            "pixel_unshuffle by {r} needs extents divisible by {r}, got {s:?}"
        ));
    }
    let (ho, wo) = (s.h / r, s.w / r);
    let out_shape = Shape::new(s.n, s.c * r * r, ho, wo);
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = c * r * r + dy * r + dx;
                    let ob = (n * out_shape.c + oc) * ho * wo;
                    let ib = (n * s.c + c) * s.h * s.w;
                    for i in 0..ho {
                        for j in 0..wo {
                            od[ob + i * wo + j] = xd[ib + (i * r + dy) * s.w + j * r + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 {
        return Err(arg_err!("shuffle factor must be at least 1"));
    }
    if !s.c.is_multiple_of(r * r) {
        return Err(shape_err!(
            "pixel_shuffle by {r} needs channels divisible by {}, got {s:?}",
            r * r
        ));
    }
    let c_out = s.c / (r * r);
    let (ho, wo) = (s.h * r, s.w * r);
    let out_shape = Shape::new(s.n, c_out, ho, wo);
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n {
        for c in 0..c_out {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = c * r * r + dy * r + dx;
                    let ib = (n * s.c + ic) * s.h * s.w;
                    let ob = (n * c_out + c) * ho * wo;
                    for i in 0..s.h {
                        for j in 0..s.w {
                            od[ob + (i * r + dy) * wo + j * r + dx] = xd[ib + i * s.w + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Source taps for one output coordinate under the half-pixel convention.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap { i0, i1, frac }
        })
        .collect()
}

/// Bilinear resampling with half-pixel centres and no corner alignment.
///
/// Interpolation is written as `a + f·(b − a)` so spatially constant inputs
/// stay bit-exact at any output size.
pub fn resize_bilinear<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if h == 0 || w == 0 {
        return Err(arg_err!("resize target must be at least 1×1, got {h}×{w}"));
    }
    if s.h == 0 || s.w == 0 {
        return Err(shape_err!("cannot resize an empty tensor {s:?}"));
    }
    let ty = bilinear_taps(s.h, h);
    let tx = bilinear_taps(s.w, w);
    let out_shape = Shape::new(s.n, s.c, h, w);
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let od = out.data_mut();
    let fx: Vec<T> = tx.iter().map(|t| T::of(t.frac)).collect();
    for p in 0..s.n * s.c {
        let src = &xd[p * s.h * s.w..(p + 1) * s.h * s.w];
        let dst = &mut od[p * h * w..(p + 1) * h * w];
        for (oy, t) in ty.iter().enumerate() {
            let r0 = &src[t.i0 * s.w..(t.i0 + 1) * s.w];
            let r1 = &src[t.i1 * s.w..(t.i1 + 1) * s.w];
            let fy = T::of(t.frac);
            let row = &mut dst[oy * w..(oy + 1) * w];
            for (ox, tx) in tx.iter().enumerate() {
                let a = r0[tx.i0];
                let top = a + fx[ox] * (r0[tx.i1] - a);
                let c = r1[tx.i0];
                let bot = c + fx[ox] * (r1[tx.i1] - c);
                row[ox] = top + fy * (bot - top);
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward<T: Element>(g: &Tensor<T>, input: Shape) -> Tensor<T> {
    let gs = g.shape();
    let ty = bilinear_taps(input.h, gs.h);
    let tx = bilinear_taps(input.w, gs.w);
    let mut dx = Tensor::zeros(input);
    let gd = g.data();
    let dd = dx.data_mut();
    let (ih, iw) = (input.h, input.w);
    for p in 0..gs.n * gs.c {
        let src = &gd[p * gs.h * gs.w..(p + 1) * gs.h * gs.w];
        let dst = &mut dd[p * ih * iw..(p + 1) * ih * iw];
        for (oy, t) in ty.iter().enumerate() {
            let fy = T::of(t.frac);
            let gy0 = T::one() - fy;
            for (ox, u) in tx.iter().enumerate() {
                let fx = T::of(u.frac);
                let gx0 = T::one() - fx;
                let gv = src[oy * gs.w + ox];
                dst[t.i0 * iw + u.i0] += gv * gy0 * gx0;
                dst[t.i0 * iw + u.i1] += gv * gy0 * fx;
                dst[t.i1 * iw + u.i0] += gv * fy * gx0;
                dst[t.i1 * iw + u.i1] += gv * fy * fx;
            }
        }
    }
    dx
}

/// 2×2 max pooling with stride 2. Also returns the flat argmax per output.
pub fn max_pool2<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let s = x.shape();
    if s.h < 2 || s.w < 2 {
        return Err(shape_err!("max_pool2 needs extents of at least 2, got {s:?}"));
    }
    let (ho, wo) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, ho, wo);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut arg = Vec::with_capacity(out_shape.numel());
    let xd = x.data();
    for p in 0..s.n * s.c {
        let base = p * s.h * s.w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * s.w + 2 * j;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + dy) * s.w + 2 * j + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(out_shape, out)?, arg))
}

pub fn max_pool2_backward<T: Element>(g: &Tensor<T>, input: Shape, arg: &[u32]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input);
    let dd = dx.data_mut();
    for (gv, &a) in g.data().iter().zip(arg) {
        dd[a as usize] += *gv;
    }
    dx
}

/// Separable depthwise filtering over valid windows only.
pub fn blur_valid<T: Element>(x: &Tensor<T>, kernel: &[f64]) -> Result<Tensor<T>> {
    let s = x.shape();
    let k = kernel.len();
    if k == 0 || s.h < k || s.w < k {
        return Err(arg_err!("window of {k} does not fit extent {}×{}", s.h, s.w));
    }
    let (ho, wo) = (s.h - k + 1, s.w - k + 1);
    let kt: Vec<T> = kernel.iter().map(|v| T::of(*v)).collect();
    let out_shape = Shape::new(s.n, s.c, ho, wo);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut tmp = vec![T::zero(); s.h * wo];
    for p in 0..s.n * s.c {
        let src = &x.data()[p * s.h * s.w..(p + 1) * s.h * s.w];
        for y in 0..s.h {
            let row = &src[y * s.w..(y + 1) * s.w];
            for xo in 0..wo {
                let mut acc = T::zero();
                for (i, kv) in kt.iter().enumerate() {
                    acc += *kv * row[xo + i];
                }
                tmp[y * wo + xo] = acc;
            }
        }
        for yo in 0..ho {
            for xo in 0..wo {
                let mut acc = T::zero();
                for (j, kv) in kt.iter().enumerate() {
                    acc += *kv * tmp[(yo + j) * wo + xo];
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn blur_valid_backward<T: Element>(g: &Tensor<T>, input: Shape, kernel: &[f64]) -> Tensor<T> {
    let gs = g.shape();
    let k = kernel.len();
    let kt: Vec<T> = kernel.iter().map(|v| T::of(*v)).collect();
    let (ho, wo) = (gs.h, gs.w);
    let mut dx = Tensor::zeros(input);
    let mut dtmp = vec![T::zero(); input.h * wo];
    for p in 0..gs.n * gs.c {
        dtmp.iter_mut().for_each(|v| *v = T::zero());
        let gsrc = &g.data()[p * ho * wo..(p + 1) * ho * wo];
        for yo in 0..ho {
            for xo in 0..wo {
                let gv = gsrc[yo * wo + xo];
                for (j, kv) in kt.iter().enumerate() {
                    dtmp[(yo + j) * wo + xo] += *kv * gv;
                }
            }
        }
        let dst = &mut dx.data_mut()[p * input.h * input.w..(p + 1) * input.h * input.w];
        for y in 0..input.h {
            for xo in 0..wo {
                let gv = dtmp[y * wo + xo];
                for i in 0..k {
                    dst[y * input.w + xo + i] += kt[i] * gv;
                }
            }
        }
    }
    dx
}

/// Axis along which a forward difference is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

pub fn forward_diff<T: Element>(x: &Tensor<T>, axis: Axis) -> Result<Tensor<T>> {
    let s = x.shape();
    let out_shape = match axis {
        Axis::Height if s.h >= 2 => Shape::new(s.n, s.c, s.h - 1, s.w),
        Axis::Width if s.w >= 2 => Shape::new(s.n, s.c, s.h, s.w - 1),
        _ => {
            return Err(shape_err!(
                "forward difference needs extent ≥ 2 along {axis:?}, got {s:?}"
            ))
        }
    };
    let mut out = Vec::with_capacity(out_shape.numel());
    for p in 0..s.n * s.c {
        let src = &x.data()[p * s.h * s.w..(p + 1) * s.h * s.w];
        for y in 0..out_shape.h {
            for xx in 0..out_shape.w {
                let (a, b) = match axis {
                    Axis::Height => (src[y * s.w + xx], src[(y + 1) * s.w + xx]),
                    Axis::Width => (src[y * s.w + xx], src[y * s.w + xx + 1]),
                };
                out.push(b - a);
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn forward_diff_backward<T: Element>(g: &Tensor<T>, input: Shape, axis: Axis) -> Tensor<T> {
    let gs = g.shape();
    let mut dx = Tensor::zeros(input);
    for p in 0..gs.n * gs.c {
        let gsrc = &g.data()[p * gs.h * gs.w..(p + 1) * gs.h * gs.w];
        let dst = &mut dx.data_mut()[p * input.h * input.w..(p + 1) * input.h * input.w];
        for y in 0..gs.h {
            for xx in 0..gs.w {
                let gv = gsrc[y * gs.w + xx];
                let (a, b) = match axis {
                    Axis::Height => (y * input.w + xx, (y + 1) * input.w + xx),
                    Axis::Width => (y * input.w + xx, y * input.w + xx + 1),
                };
                dst[b] += gv;
                dst[a] -= gv;
            }
        }
    }
    dx
}
