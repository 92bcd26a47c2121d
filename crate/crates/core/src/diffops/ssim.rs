use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::real::Real;
use crate::tensor::Tensor;

/// Stabilizers of the SSIM ratio. The window is a fixed 3×3 uniform mean,
/// truncated to in-bounds pixels at the border.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c1 > 0.0 && self.c2 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("ssim constants must be positive, got c1={} c2={}", self.c1, self.c2)))
        }
    }
}

/// Sum of `plane` over the truncated 3×3 window around each pixel.
fn box_sum<T: Real>(plane: &[T], h: usize, w: usize) -> Vec<T> {
    let mut rows = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(w - 1);
            rows[y * w + x] = (lo..=hi).map(|xx| plane[y * w + xx]).sum();
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        let lo = y.saturating_sub(1);
        let hi = (y + 1).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).sum();
        }
    }
    out
}

fn window_counts<T: Real>(h: usize, w: usize) -> Vec<T> {
    let ones = vec![T::one(); h * w];
    box_sum(&ones, h, w)
}

/// Window statistics of one channel.
struct Stats<T> {
    mu_a: Vec<T>,
    mu_b: Vec<T>,
    e_aa: Vec<T>,
    e_bb: Vec<T>,
    e_ab: Vec<T>,
}

fn channel<T: Real, const C: usize>(f: &Field<T, C>, c: usize) -> Vec<T> {
    f.data().chunks_exact(C).map(|p| p[c]).collect()
}

fn stats<T: Real>(a: &[T], b: &[T], h: usize, w: usize, counts: &[T]) -> Stats<T> {
    let mean = |v: Vec<T>| -> Vec<T> {
        box_sum(&v, h, w).into_iter().zip(counts).map(|(s, &n)| s / n).collect()
    };
    Stats {
        mu_a: mean(a.to_vec()),
        mu_b: mean(b.to_vec()),
        e_aa: mean(a.iter().map(|&v| v * v).collect()),
        e_bb: mean(b.iter().map(|&v| v * v).collect()),
        e_ab: mean(a.iter().zip(b).map(|(&x, &y)| x * y).collect()),
    }
}

/// Per-pixel SSIM terms `(A1, A2, B1, B2)` with `S = A1 A2 / (B1 B2)`.
#[inline]
fn terms<T: Real>(s: &Stats<T>, i: usize, c1: T, c2: T) -> (T, T, T, T) {
    let two = T::lit(2.0);
    let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
    let var_a = s.e_aa[i] - ma * ma;
    let var_b = s.e_bb[i] - mb * mb;
    let cov = s.e_ab[i] - ma * mb;
    (
        two * ma * mb + c1,
        two * cov + c2,
        ma * ma + mb * mb + c1,
        var_a + var_b + c2,
    )
}

/// Per-pixel structural similarity averaged over channels, shape `[H, W]`.
pub fn ssim_map<T: Real, const C: usize>(a: &Field<T, C>, b: &Field<T, C>, cfg: &SsimConfig) -> Result<Tensor<T>> {
    a.check_dims(b, "ssim_map")?;
    cfg.validate()?;
    let (h, w) = a.dims();
    let counts = window_counts::<T>(h, w);
    let (c1, c2) = (T::lit(cfg.c1), T::lit(cfg.c2));
    let mut out = vec![T::zero(); h * w];
    for c in 0..C {
        let s = stats(&channel(a, c), &channel(b, c), h, w, &counts);
        for (i, o) in out.iter_mut().enumerate() {
            let (a1, a2, b1, b2) = terms(&s, i, c1, c2);
            *o += (a1 * a2) / (b1 * b2);
        }
    }
    // one division keeps SSIM(I, I) exactly 1; summing C copies of 1/C does not in f32
    let n_c = T::lit(C as f64);
    Tensor::from_vec(&[h, w], out.into_iter().map(|v| v / n_c).collect())
}

/// Adjoint of [`ssim_map`]: gradients w.r.t. `a` and `b` for an upstream `[H, W]` gradient.
pub fn ssim_map_backward<T: Real, const C: usize>(
    a: &Field<T, C>,
    b: &Field<T, C>,
    cfg: &SsimConfig,
    grad_map: &Tensor<T>,
) -> Result<(Field<T, C>, Field<T, C>)> {
    a.check_dims(b, "ssim_map_backward")?;
    let (h, w) = a.dims();
    if grad_map.shape() != [h, w] {
        return Err(Error::shape("ssim_map_backward", format!("[{h}, {w}]"), format!("{:?}", grad_map.shape())));
    }
    let counts = window_counts::<T>(h, w);
    let (c1, c2) = (T::lit(cfg.c1), T::lit(cfg.c2));
    let two = T::lit(2.0);
    let inv_c = T::lit(1.0 / C as f64);
    let mut da = Field::<T, C>::zeros(h, w);
    let mut db = Field::<T, C>::zeros(h, w);
    let n = h * w;
    for c in 0..C {
        let (pa, pb) = (channel(a, c), channel(b, c));
        let s = stats(&pa, &pb, h, w, &counts);
        // Gradients on the window statistics, pre-divided by the window size
        // so that a box sum scatters them back to pixels.
        let mut g_mu_a = vec![T::zero(); n];
        let mut g_mu_b = vec![T::zero(); n];
        let mut g_e_aa = vec![T::zero(); n];
        let mut g_e_bb = vec![T::zero(); n];
        let mut g_e_ab = vec![T::zero(); n];
        for i in 0..n {
            let (a1, a2, b1, b2) = terms(&s, i, c1, c2);
            let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
            let den = b1 * b2;
            let ssim = a1 * a2 / den;
            let g = grad_map.data()[i] * inv_c / counts[i];
            g_mu_a[i] = g * ((two * mb * a2 - two * mb * a1) / den - ssim * (two * ma / b1 - two * ma / b2));
            g_mu_b[i] = g * ((two * ma * a2 - two * ma * a1) / den - ssim * (two * mb / b1 - two * mb / b2));
            g_e_aa[i] = -g * ssim / b2;
            g_e_bb[i] = -g * ssim / b2;
            g_e_ab[i] = g * two * a1 / den;
        }
        let [s_mu_a, s_mu_b, s_e_aa, s_e_bb, s_e_ab] =
            [g_mu_a, g_mu_b, g_e_aa, g_e_bb, g_e_ab].map(|v| box_sum(&v, h, w));
        for i in 0..n {
            let two_a = two * pa[i];
            let two_b = two * pb[i];
            da.data_mut()[i * C + c] = s_mu_a[i] + two_a * s_e_aa[i] + pb[i] * s_e_ab[i];
            db.data_mut()[i * C + c] = s_mu_b[i] + two_b * s_e_bb[i] + pa[i] * s_e_ab[i];
        }
    }
    Ok((da, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(h: usize, w: usize, seed: u64) -> Frame<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn self_similarity_is_one() {
        let a = random_frame(6, 9, 1);
        let s = ssim_map(&a, &a, &SsimConfig::default()).unwrap();
        assert!(s.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn self_similarity_is_exactly_one_in_f32() {
        let a: Frame<f32> = random_frame(7, 11, 4).cast();
        let s = ssim_map(&a, &a, &SsimConfig::default()).unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_pair_matches_hand_value() {
        let a: Frame<f64> = Frame::filled(5, 5, [0.25; 3]);
        let b: Frame<f64> = Frame::filled(5, 5, [0.75; 3]);
        let s = ssim_map(&a, &b, &SsimConfig::default()).unwrap();
        let expected = (0.375 + 1e-4) / (0.625 + 1e-4);
        assert!(s.data().iter().all(|v| (v - expected).abs() < 1e-12));
        assert!((expected - 0.60006).abs() < 1e-5);
    }

    #[test]
    fn symmetric_and_bounded() {
        let a = random_frame(7, 5, 2);
        let b = random_frame(7, 5, 3);
        let cfg = SsimConfig::default();
        let ab = ssim_map(&a, &b, &cfg).unwrap();
        let ba = ssim_map(&b, &a, &cfg).unwrap();
        assert_eq!(ab.data(), ba.data());
        assert!(ab.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn single_pixel_closed_form() {
        let a: Frame<f64> = Frame::filled(1, 1, [0.2; 3]);
        let b: Frame<f64> = Frame::filled(1, 1, [0.6; 3]);
        let cfg = SsimConfig::default();
        let s = ssim_map(&a, &b, &cfg).unwrap().data()[0];
        let want = (2.0 * 0.2 * 0.6 + cfg.c1) / (0.2f64.powi(2) + 0.6f64.powi(2) + cfg.c1);
        assert!((s - want).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatch_and_bad_constants() {
        let a: Frame<f32> = Frame::zeros(3, 3);
        let b: Frame<f32> = Frame::zeros(3, 4);
        assert!(ssim_map(&a, &b, &SsimConfig::default()).is_err());
        assert!(ssim_map(&a, &a, &SsimConfig { c1: 0.0, c2: 1.0 }).is_err());
    }
}
