//! Convolution, transposed convolution and fully-connected layers over CHW
//! tensors, with their adjoints. Convolutions lower to GEMM via im2col.

use super::params::{ParamId, Parameters};
use crate::real::{matmul, Real};
use crate::tensor::Tensor;

/// Square kernel geometry of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    pub const SAME3: Geometry = Geometry { k: 3, stride: 1, pad: 1 };
    pub const DOWN3: Geometry = Geometry { k: 3, stride: 2, pad: 1 };
    pub const UP4: Geometry = Geometry { k: 4, stride: 2, pad: 1 };

    /// Output size of a convolution over an `h x w` input.
    pub fn conv_out(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Output size of the transposed convolution over an `h x w` input.
    pub fn transposed_out(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k - 2 * self.pad,
            (w - 1) * self.stride + self.k - 2 * self.pad,
        )
    }

    #[inline]
    fn source(&self, o: usize, tap: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + tap) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

/// Patch matrix `[c * k * k, ho * wo]` of a `[c, h, w]` input.
pub fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: Geometry) -> Vec<T> {
    let (ho, wo) = g.conv_out(h, w);
    let k = g.k;
    let mut cols = vec![T::zero(); c * k * k * ho * wo];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let Some(iy) = g.source(oy, ky, h) else { continue };
                    for ox in 0..wo {
                        if let Some(ix) = g.source(ox, kx, w) {
                            row[oy * wo + ox] = plane[iy * w + ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patches back into `out` (`[c, h, w]`).
pub fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: Geometry, out: &mut [T]) {
    let (ho, wo) = g.conv_out(h, w);
    let k = g.k;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let Some(iy) = g.source(oy, ky, h) else { continue };
                    for ox in 0..wo {
                        if let Some(ix) = g.source(ox, kx, w) {
                            plane[iy * w + ix] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], spatial: usize) {
    for (o, b) in bias.iter().enumerate() {
        for v in &mut out[o * spatial..(o + 1) * spatial] {
            *v += *b;
        }
    }
}

fn bias_grad<T: Real>(dy: &[T], db: &mut [T], spatial: usize) {
    for (o, d) in db.iter_mut().enumerate() {
        *d += dy[o * spatial..(o + 1) * spatial].iter().copied().sum::<T>();
    }
}

/// 2-D convolution. Weight `[out_c, in_c * k * k]`, bias `[out_c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub geo: Geometry,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn fan_in(&self) -> usize {
        self.in_c * self.geo.k * self.geo.k
    }

    /// Convolution over the first `x.c` input channels only; the remaining
    /// weight columns are left for the caller (see [`PlaneConv`]).
    pub fn forward_partial<T: Real>(&self, p: &Parameters<T>, x: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = x.chw();
        assert!(c <= self.in_c, "conv input has {c} channels, layer takes {}", self.in_c);
        let (ho, wo) = self.geo.conv_out(h, w);
        let kk = self.geo.k * self.geo.k;
        let cols = im2col(x.data(), c, h, w, self.geo);
        let mut out = vec![T::zero(); self.out_c * ho * wo];
        let wt = p.get(self.weight).data();
        T::gemm_strided(
            self.out_c,
            c * kk,
            ho * wo,
            T::one(),
            wt,
            (self.in_c * kk) as isize,
            1,
            &cols,
            (ho * wo) as isize,
            1,
            T::zero(),
            &mut out,
            (ho * wo) as isize,
            1,
        );
        add_bias(&mut out, p.get(self.bias).data(), ho * wo);
        Tensor::from_vec(&[self.out_c, ho, wo], out).expect("conv output")
    }

    pub fn forward<T: Real>(&self, p: &Parameters<T>, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.chw().0, self.in_c);
        self.forward_partial(p, x)
    }

    /// Accumulates weight/bias gradients into `g` and returns the input gradient if asked.
    pub fn backward_partial<T: Real>(
        &self,
        p: &Parameters<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Parameters<T>,
        want_dx: bool,
    ) -> Option<Tensor<T>> {
        let (c, h, w) = x.chw();
        let (ho, wo) = self.geo.conv_out(h, w);
        let kk = self.geo.k * self.geo.k;
        let ld = self.in_c * kk;
        let cols = im2col(x.data(), c, h, w, self.geo);
        // dW[:, :c*kk] += dy * cols^T
        T::gemm_strided(
            self.out_c,
            ho * wo,
            c * kk,
            T::one(),
            dy.data(),
            (ho * wo) as isize,
            1,
            &cols,
            1,
            (ho * wo) as isize,
            T::one(),
            g.get_mut(self.weight).data_mut(),
            ld as isize,
            1,
        );
        bias_grad(dy.data(), g.get_mut(self.bias).data_mut(), ho * wo);
        if !want_dx {
            return None;
        }
        // dcols = W[:, :c*kk]^T * dy
        let mut dcols = vec![T::zero(); c * kk * ho * wo];
        T::gemm_strided(
            c * kk,
            self.out_c,
            ho * wo,
            T::one(),
            p.get(self.weight).data(),
            1,
            ld as isize,
            dy.data(),
            (ho * wo) as isize,
            1,
            T::zero(),
            &mut dcols,
            (ho * wo) as isize,
            1,
        );
        let mut dx = vec![T::zero(); c * h * w];
        col2im(&dcols, c, h, w, self.geo, &mut dx);
        Some(Tensor::from_vec(&[c, h, w], dx).expect("conv input grad"))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Parameters<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Parameters<T>,
        want_dx: bool,
    ) -> Option<Tensor<T>> {
        assert_eq!(x.chw().0, self.in_c);
        self.backward_partial(p, x, dy, g, want_dx)
    }
}

/// The part of a stride-1 convolution that reads a spatially constant
/// plane stacked after the first `offset` input channels.
///
/// Each tap contributes `W_tap * s` wherever it lands inside the image, so
/// the tiled plane never has to be materialized.
#[derive(Clone, Copy, Debug)]
pub struct PlaneConv<'a> {
    pub conv: &'a Conv2d,
    pub offset: usize,
}

impl PlaneConv<'_> {
    fn in_bounds(&self, h: usize, w: usize) -> Vec<Vec<bool>> {
        let g = self.conv.geo;
        assert_eq!(g.stride, 1, "constant-plane conv needs stride 1");
        (0..g.k * g.k)
            .map(|tap| {
                let (ky, kx) = (tap / g.k, tap % g.k);
                let (ho, wo) = g.conv_out(h, w);
                (0..ho * wo)
                    .map(|q| g.source(q / wo, ky, h).is_some() && g.source(q % wo, kx, w).is_some())
                    .collect()
            })
            .collect()
    }

    /// Adds the plane's contribution to `out` (`[out_c, ho, wo]` over an `h x w` input).
    pub fn forward<T: Real>(&self, p: &Parameters<T>, s: &[T], h: usize, w: usize, out: &mut Tensor<T>) {
        let conv = self.conv;
        let kk = conv.geo.k * conv.geo.k;
        let ld = conv.in_c * kk;
        assert_eq!(self.offset + s.len(), conv.in_c);
        let wt = p.get(conv.weight).data();
        let mask = self.in_bounds(h, w);
        let spatial = out.len() / conv.out_c;
        for o in 0..conv.out_c {
            let row = &wt[o * ld..(o + 1) * ld];
            let v: Vec<T> = (0..kk)
                .map(|tap| s.iter().enumerate().map(|(c, &sc)| row[(self.offset + c) * kk + tap] * sc).sum())
                .collect();
            let dst = &mut out.data_mut()[o * spatial..(o + 1) * spatial];
            for (tap, m) in mask.iter().enumerate() {
                for (d, &inside) in dst.iter_mut().zip(m) {
                    if inside {
                        *d += v[tap];
                    }
                }
            }
        }
    }

    /// Accumulates the weight gradient of the plane columns and returns `d s`.
    pub fn backward<T: Real>(
        &self,
        p: &Parameters<T>,
        s: &[T],
        h: usize,
        w: usize,
        dy: &Tensor<T>,
        g: &mut Parameters<T>,
    ) -> Vec<T> {
        let conv = self.conv;
        let kk = conv.geo.k * conv.geo.k;
        let ld = conv.in_c * kk;
        let mask = self.in_bounds(h, w);
        let spatial = dy.len() / conv.out_c;
        let wt = p.get(conv.weight).data();
        let mut ds = vec![T::zero(); s.len()];
        let gw = g.get_mut(conv.weight).data_mut();
        for o in 0..conv.out_c {
            let src = &dy.data()[o * spatial..(o + 1) * spatial];
            for (tap, m) in mask.iter().enumerate() {
                let gt: T = src.iter().zip(m).filter(|(_, &inside)| inside).map(|(&d, _)| d).sum();
                for (c, &sc) in s.iter().enumerate() {
                    let idx = o * ld + (self.offset + c) * kk + tap;
                    gw[idx] += gt * sc;
                    ds[c] += wt[idx] * gt;
                }
            }
        }
        ds
    }
}

/// Transposed convolution, the adjoint of a [`Conv2d`] with the same geometry.
/// Weight `[in_c, out_c * k * k]`, bias `[out_c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub geo: Geometry,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose2d {
    /// Each output pixel receives `in_c * (k / stride)^2` taps.
    pub fn fan_in(&self) -> usize {
        let per_axis = self.geo.k / self.geo.stride;
        self.in_c * per_axis * per_axis
    }

    pub fn forward<T: Real>(&self, p: &Parameters<T>, x: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = x.chw();
        assert_eq!(c, self.in_c);
        let (ho, wo) = self.geo.transposed_out(h, w);
        let kk = self.geo.k * self.geo.k;
        let mut cols = vec![T::zero(); self.out_c * kk * h * w];
        matmul(self.out_c * kk, c, h * w, p.get(self.weight).data(), true, x.data(), false, T::zero(), &mut cols);
        let mut out = vec![T::zero(); self.out_c * ho * wo];
        col2im(&cols, self.out_c, ho, wo, self.geo, &mut out);
        add_bias(&mut out, p.get(self.bias).data(), ho * wo);
        Tensor::from_vec(&[self.out_c, ho, wo], out).expect("transposed conv output")
    }

    pub fn backward<T: Real>(
        &self,
        p: &Parameters<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Parameters<T>,
        want_dx: bool,
    ) -> Option<Tensor<T>> {
        let (c, h, w) = x.chw();
        let (_, ho, wo) = dy.chw();
        let kk = self.geo.k * self.geo.k;
        let dcols = im2col(dy.data(), self.out_c, ho, wo, self.geo);
        matmul(c, h * w, self.out_c * kk, x.data(), false, &dcols, true, T::one(), g.get_mut(self.weight).data_mut());
        bias_grad(dy.data(), g.get_mut(self.bias).data_mut(), ho * wo);
        if !want_dx {
            return None;
        }
        let mut dx = vec![T::zero(); c * h * w];
        matmul(c, self.out_c * kk, h * w, p.get(self.weight).data(), false, &dcols, false, T::zero(), &mut dx);
        Some(Tensor::from_vec(&[c, h, w], dx).expect("transposed conv input grad"))
    }
}

/// Fully-connected layer. Weight `[out_f, in_f]`, bias `[out_f]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward<T: Real>(&self, p: &Parameters<T>, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.in_f);
        let wt = p.get(self.weight).data();
        let b = p.get(self.bias).data();
        (0..self.out_f)
            .map(|o| b[o] + wt[o * self.in_f..(o + 1) * self.in_f].iter().zip(x).map(|(&a, &v)| a * v).sum::<T>())
            .collect()
    }

    pub fn backward<T: Real>(&self, p: &Parameters<T>, x: &[T], dy: &[T], g: &mut Parameters<T>) -> Vec<T> {
        let wt = p.get(self.weight).data();
        let mut dx = vec![T::zero(); self.in_f];
        {
            let gw = g.get_mut(self.weight).data_mut();
            for (o, &d) in dy.iter().enumerate() {
                for i in 0..self.in_f {
                    gw[o * self.in_f + i] += d * x[i];
                    dx[i] += d * wt[o * self.in_f + i];
                }
            }
        }
        for (gb, &d) in g.get_mut(self.bias).data_mut().iter_mut().zip(dy) {
            *gb += d;
        }
        dx
    }
}

pub fn relu<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// `max(x, slope * x)`; `slope = 0` is a plain ReLU.
pub fn leaky_relu<T: Real>(x: &mut [T], slope: T) {
    for v in x {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// Scales `dy` by `slope` where the output `y` was not positive. Needs `slope > 0`
/// to tell the branches apart from `y` alone, or `slope = 0`.
pub fn leaky_relu_backward<T: Real>(y: &[T], dy: &mut [T], slope: T) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d *= slope;
        }
    }
}

/// Zeroes `dy` where the ReLU output `y` was not positive.
pub fn relu_backward<T: Real>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Channel concatenation of two `[c, h, w]` tensors with equal spatial size.
pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (ca, h, w) = a.chw();
    let (cb, hb, wb) = b.chw();
    assert_eq!((h, w), (hb, wb), "concat spatial mismatch");
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[ca + cb, h, w], data).expect("concat")
}

/// Splits a concatenated gradient back into parts of `ca` and the rest.
pub fn split<T: Real>(x: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = x.chw();
    let (a, b) = x.data().split_at(ca * h * w);
    (
        Tensor::from_vec(&[ca, h, w], a.to_vec()).expect("split"),
        Tensor::from_vec(&[c - ca, h, w], b.to_vec()).expect("split"),
    )
}

/// Repeats a length-`c` vector over an `h x w` grid.
pub fn tile<T: Real>(v: &[T], h: usize, w: usize) -> Tensor<T> {
    let data = v.iter().flat_map(|&x| std::iter::repeat_n(x, h * w)).collect();
    Tensor::from_vec(&[v.len(), h, w], data).expect("tile")
}
