//! Per-pixel fields on an image grid: frames, flow fields and masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// `H x W x C` row-major field with interleaved channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field<T, const C: usize> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// RGB image with values in `[0, 1]`.
pub type Frame<T = f32> = Field<T, 3>;
/// Per-pixel displacement `(u, v)` in pixels.
pub type FlowField<T = f32> = Field<T, 2>;

impl<T: Real, const C: usize> Field<T, C> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Field {
            height,
            width,
            data: vec![T::zero(); height * width * C],
        }
    }

    pub fn filled(height: usize, width: usize, value: [T; C]) -> Self {
        let mut f = Self::zeros(height, width);
        for px in f.data.chunks_exact_mut(C) {
            px.copy_from_slice(&value);
        }
        f
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * C {
            return Err(Error::shape("Field::from_vec", height * width * C, data.len()));
        }
        Ok(Field {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [T; C]) -> Self {
        let mut data = Vec::with_capacity(height * width * C);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Field {
            height,
            width,
            data,
        }
    }

    pub const CHANNELS: usize = C;

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * C;
        &self.data[i..i + C]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * C;
        &mut self.data[i..i + C]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; C] {
        let mut out = [T::zero(); C];
        out.copy_from_slice(self.at(x, y));
        out
    }

    pub fn same_dims<const D: usize>(&self, other: &Field<T, D>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_dims<const D: usize>(&self, other: &Field<T, D>, op: &'static str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::shape(op, self.dims(), other.dims()))
        }
    }

    pub fn cast<U: Real>(&self) -> Field<U, C> {
        Field {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Field {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mirrors left to right.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        Field::from_fn(self.height, w, |x, y| self.pixel(w - 1 - x, y))
    }

    /// Channel-planar `C x H x W` copy.
    pub fn to_chw(&self) -> Tensor<T> {
        let hw = self.height * self.width;
        let mut out = vec![T::zero(); hw * C];
        for (p, px) in self.data.chunks_exact(C).enumerate() {
            for c in 0..C {
                out[c * hw + p] = px[c];
            }
        }
        Tensor::from_vec(&[C, self.height, self.width], out).expect("shape by construction")
    }

    pub fn from_chw(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.chw();
        if c != C {
            return Err(Error::shape("Field::from_chw", C, c));
        }
        let hw = h * w;
        let src = t.data();
        let mut data = vec![T::zero(); hw * C];
        for p in 0..hw {
            for ch in 0..C {
                data[p * C + ch] = src[ch * hw + p];
            }
        }
        Ok(Field {
            height: h,
            width: w,
            data,
        })
    }

    /// 2x2 box downsampling (odd trailing row/column dropped).
    pub fn downsample2(&self) -> Self {
        let (h, w) = (self.height / 2, self.width / 2);
        let q = T::lit(0.25);
        Field::from_fn(h, w, |x, y| {
            let mut out = [T::zero(); C];
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let p = self.at(2 * x + dx, 2 * y + dy);
                for c in 0..C {
                    out[c] += p[c];
                }
            }
            out.map(|v| v * q)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Real> Frame<T> {
    /// Mean absolute difference over every pixel and channel.
    pub fn mean_abs_diff(&self, other: &Frame<T>) -> Result<f64> {
        self.check_dims(other, "mean_abs_diff")?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .sum();
        Ok(s / self.data.len().max(1) as f64)
    }

    /// Rounds every value to the nearest 8-bit level (`round(v * 255) / 255`).
    pub fn quantize8(&self) -> Self {
        let s = T::lit(255.0);
        self.map(|v| (v.max(T::zero()).min(T::one()) * s).round() / s)
    }
}

impl<T: Real> FlowField<T> {
    /// Mirrors left to right and negates the horizontal component.
    pub fn flip_horizontal_flow(&self) -> Self {
        let w = self.width;
        Field::from_fn(self.height, w, |x, y| {
            let [u, v] = self.pixel(w - 1 - x, y);
            [-u, v]
        })
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data
            .chunks_exact(2)
            .map(|p| p[0].as_f64().hypot(p[1].as_f64()))
            .fold(0.0, f64::max)
    }
}

/// Binary per-pixel validity map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ValidMask {
    pub fn ones(height: usize, width: usize) -> Self {
        ValidMask {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ValidMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        ValidMask {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("ValidMask::from_vec", height * width, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("mask values must be 0 or 1".into()));
        }
        Ok(ValidMask {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn value<T: Real>(&self, i: usize) -> T {
        if self.data[i] != 0 {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        ValidMask::from_fn(self.height, w, |x, y| self.get(w - 1 - x, y))
    }

    pub fn and(&self, other: &ValidMask) -> ValidMask {
        assert_eq!(self.dims(), other.dims());
        ValidMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a & b).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_roundtrip_and_flip_involution() {
        let f: Frame<f32> = Field::from_fn(3, 4, |x, y| [x as f32, y as f32, (x * y) as f32]);
        assert_eq!(Frame::from_chw(&f.to_chw()).unwrap(), f);
        assert_eq!(f.flip_horizontal().flip_horizontal(), f);
    }

    #[test]
    fn chw_layout_is_planar() {
        let f: Frame<f32> = Field::from_fn(2, 3, |x, y| [x as f32, 10.0 + y as f32, 100.0]);
        let t = f.to_chw();
        assert_eq!(t.shape(), &[3, 2, 3]);
        assert_eq!(&t.data()[0..6], &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0]);
        assert_eq!(&t.data()[6..12], &[10.0, 10.0, 10.0, 11.0, 11.0, 11.0]);
    }

    #[test]
    fn flow_flip_negates_u() {
        let f: FlowField<f32> = Field::from_fn(1, 3, |x, _| [x as f32 + 1.0, 5.0]);
        let g = f.flip_horizontal_flow();
        assert_eq!(g.pixel(0, 0), [-3.0, 5.0]);
        assert_eq!(g.flip_horizontal_flow(), f);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Frame::<f32>::from_vec(2, 2, vec![0.0; 11]).is_err());
        assert!(ValidMask::from_vec(1, 2, vec![0, 2]).is_err());
    }
}
