//! Forward and backward passes of the U-net building blocks. Every
//! backward function returns exact analytic gradients.

use super::tensor::{gemm, Scalar, Tensor4};
use crate::{Error, Result};

fn check_eq(what: &str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(format!("{what} = {a}"), b))
    }
}

/// Unfolds a `c×h×w` image into `(c·k·k) × (h·w)` patches, zero padded.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let out = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dxo = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let x0 = (-dxo).max(0) as usize;
                let x1 = (w as isize - dxo).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + dxo) as usize;
                    let target = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (t, &g) in target.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *t += g;
                    }
                }
            }
        }
    }
}

/// Square `k×k` convolution (cross-correlation), stride 1, "same" zero
/// padding. Weights are `out × in × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub dx: Option<Tensor4<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_c: usize, out_c: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        Self {
            in_c,
            out_c,
            k,
            weight: vec![T::zero(); out_c * in_c * k * k],
            bias: vec![T::zero(); out_c],
        }
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        conv2d_fwd(x, self)
    }

    pub fn backward(&self, x: &Tensor4<T>, dy: &Tensor4<T>, need_dx: bool) -> Result<ConvGrads<T>> {
        conv2d_bwd(x, self, dy, need_dx)
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            in_c: self.in_c,
            out_c: self.out_c,
            k: self.k,
            weight: self.weight.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

pub fn conv2d_fwd<T: Scalar>(x: &Tensor4<T>, conv: &Conv2d<T>) -> Result<Tensor4<T>> {
    check_eq("input channels", conv.in_c, x.c)?;
    let (n, _, h, w) = x.dims();
    let hw = h * w;
    let kk = conv.in_c * conv.k * conv.k;
    let mut y = Tensor4::zeros(n, conv.out_c, h, w);
    let mut col = if conv.k > 1 { vec![T::zero(); kk * hw] } else { Vec::new() };
    for i in 0..n {
        let patches: &[T] = if conv.k > 1 {
            im2col(x.image(i), conv.in_c, h, w, conv.k, &mut col);
            &col
        } else {
            x.image(i)
        };
        let out = y.image_mut(i);
        gemm(false, false, conv.out_c, hw, kk, &conv.weight, patches, T::zero(), out);
        for (o, &b) in conv.bias.iter().enumerate() {
            out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += b);
        }
    }
    y.debug_check_finite();
    Ok(y)
}

pub fn conv2d_bwd<T: Scalar>(
    x: &Tensor4<T>,
    conv: &Conv2d<T>,
    dy: &Tensor4<T>,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    check_eq("input channels", conv.in_c, x.c)?;
    check_eq("output channels", conv.out_c, dy.c)?;
    if (x.n, x.h, x.w) != (dy.n, dy.h, dy.w) {
        return Err(Error::shape(format!("{:?}", x.dims()), format!("{:?}", dy.dims())));
    }
    let (n, _, h, w) = x.dims();
    let hw = h * w;
    let kk = conv.in_c * conv.k * conv.k;
    let mut dw = vec![T::zero(); conv.weight.len()];
    let mut db = vec![T::zero(); conv.out_c];
    let mut dx = need_dx.then(|| Tensor4::zeros(n, conv.in_c, h, w));
    let mut col = if conv.k > 1 { vec![T::zero(); kk * hw] } else { Vec::new() };
    let mut dcol = if need_dx && conv.k > 1 { vec![T::zero(); kk * hw] } else { Vec::new() };
    for i in 0..n {
        let g = dy.image(i);
        for (o, d) in db.iter_mut().enumerate() {
            *d += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
        }
        let patches: &[T] = if conv.k > 1 {
            im2col(x.image(i), conv.in_c, h, w, conv.k, &mut col);
            &col
        } else {
            x.image(i)
        };
        // dW += dY · patchesᵀ
        gemm(false, true, conv.out_c, kk, hw, g, patches, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            if conv.k > 1 {
                gemm(true, false, kk, hw, conv.out_c, &conv.weight, g, T::zero(), &mut dcol);
                col2im(&dcol, conv.in_c, h, w, conv.k, dx.image_mut(i));
            } else {
                gemm(true, false, kk, hw, conv.out_c, &conv.weight, g, T::zero(), dx.image_mut(i));
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

pub fn relu_fwd<T: Scalar>(x: &mut Tensor4<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Gradient through a ReLU given its output `y` (`y > 0` ⇔ input `> 0`).
pub fn relu_bwd<T: Scalar>(y: &Tensor4<T>, dy: &mut Tensor4<T>) {
    debug_assert_eq!(y.data.len(), dy.data.len());
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 max pool, stride 2. Returns the flat input index of each maximum
/// (first in scan order on ties).
pub fn maxpool2_fwd<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(Error::shape("even spatial dims", format!("{}x{}", x.h, x.w)));
    }
    let (n, c, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros(n, c, oh, ow);
    let mut arg = vec![0u32; n * c * oh * ow];
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                y.data[o] = x.data[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_bwd<T: Scalar>(
    dy: &Tensor4<T>,
    argmax: &[u32],
    input_dims: (usize, usize, usize, usize),
) -> Tensor4<T> {
    let (n, c, h, w) = input_dims;
    let mut dx = Tensor4::zeros(n, c, h, w);
    for (g, &i) in dy.data.iter().zip(argmax) {
        dx.data[i as usize] += *g;
    }
    dx
}

pub fn upsample_nearest2_fwd<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = x.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Tensor4::zeros(n, c, oh, ow);
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let row = &src[(oy / 2) * w..(oy / 2 + 1) * w];
            for (ox, v) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *v = row[ox / 2];
            }
        }
    }
    y
}

/// Sums each 2×2 block of the upstream gradient.
pub fn upsample_nearest2_bwd<T: Scalar>(dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    if dy.h % 2 != 0 || dy.w % 2 != 0 {
        return Err(Error::shape("even spatial dims", format!("{}x{}", dy.h, dy.w)));
    }
    let (n, c, oh, ow) = dy.dims();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor4::zeros(n, c, h, w);
    for p in 0..n * c {
        let src = &dy.data[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / 2) * w + ox / 2] += src[oy * ow + ox];
            }
        }
    }
    Ok(dx)
}

pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
        return Err(Error::shape(format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    let c = a.c + b.c;
    let mut data = Vec::with_capacity(a.n * c * a.h * a.w);
    for i in 0..a.n {
        data.extend_from_slice(a.image(i));
        data.extend_from_slice(b.image(i));
    }
    Ok(Tensor4 {
        n: a.n,
        c,
        h: a.h,
        w: a.w,
        data,
    })
}

/// Splits a concatenated gradient back into its first `ca` channels and
/// the rest.
pub fn split_channels<T: Scalar>(dy: &Tensor4<T>, ca: usize) -> (Tensor4<T>, Tensor4<T>) {
    let hw = dy.h * dy.w;
    let cb = dy.c - ca;
    let mut da = Tensor4::zeros(dy.n, ca, dy.h, dy.w);
    let mut db = Tensor4::zeros(dy.n, cb, dy.h, dy.w);
    for i in 0..dy.n {
        let img = dy.image(i);
        da.image_mut(i).copy_from_slice(&img[..ca * hw]);
        db.image_mut(i).copy_from_slice(&img[ca * hw..]);
    }
    (da, db)
}

/// Softmax over channels at every pixel.
pub fn softmax_channels<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = x.dims();
    let hw = h * w;
    let mut y = x.clone();
    for i in 0..n {
        let img = y.image_mut(i);
        for p in 0..hw {
            let mut max = img[p];
            for ch in 1..c {
                max = max.max(img[ch * hw + p]);
            }
            let mut sum = T::zero();
            for ch in 0..c {
                let e = (img[ch * hw + p] - max).exp();
                img[ch * hw + p] = e;
                sum += e;
            }
            let inv = T::one() / sum;
            for ch in 0..c {
                img[ch * hw + p] = img[ch * hw + p] * inv;
            }
        }
    }
    y
}

/// `dx = y ⊙ (dy − Σ_c y·dy)` per pixel.
pub fn softmax_bwd<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = y.dims();
    let hw = h * w;
    let mut dx = Tensor4::zeros(n, c, h, w);
    for i in 0..n {
        let (yi, gi) = (y.image(i), dy.image(i));
        let out = dx.image_mut(i);
        for p in 0..hw {
            let mut dot = T::zero();
            for ch in 0..c {
                dot += yi[ch * hw + p] * gi[ch * hw + p];
            }
            for ch in 0..c {
                out[ch * hw + p] = yi[ch * hw + p] * (gi[ch * hw + p] - dot);
            }
        }
    }
    dx
}
