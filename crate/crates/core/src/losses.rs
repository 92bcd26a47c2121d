//! Self-supervised objective: photometric warping loss, forward-backward
//! valid masks, flow consistency, smoothness, and their weighted total.
//!
//! All terms are sums over pixels (not means). Masks are constants: no
//! gradient flows through them.

use serde::{Deserialize, Serialize};

use crate::diffops::{
    sample_bilinear, spatial_gradients, spatial_gradients_backward, ssim_map, ssim_map_backward, warp_bilinear,
    warp_bilinear_backward, Charbonnier, SsimConfig,
};
use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, ValidMask};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda_w: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub alpha: f64,
    pub eps: f64,
    pub ssim: SsimConfig,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.3,
            lambda2: 0.7,
            gamma1: 0.01,
            gamma2: 0.5,
            lambda_w: 1.0,
            lambda_c: 1.0,
            lambda_s: 0.1,
            alpha: 0.4,
            eps: 1e-3,
            ssim: SsimConfig::default(),
        }
    }
}

impl LossWeights {
    pub fn charbonnier(&self) -> Charbonnier {
        Charbonnier {
            eps: self.eps,
            alpha: self.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("lambda_w", self.lambda_w),
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
        ];
        if let Some((n, v)) = named.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weight {n} must be a nonnegative number, got {v}")));
        }
        if !(self.eps > 0.0) || !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "charbonnier needs eps > 0 and 0 < alpha <= 1, got eps={} alpha={}",
                self.eps, self.alpha
            )));
        }
        self.ssim.validate()
    }
}

/// Loss components after weighting, so that `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(rename = "L_w_f")]
    pub l_w_f: f64,
    #[serde(rename = "L_w_b")]
    pub l_w_b: f64,
    #[serde(rename = "L_s_f")]
    pub l_s_f: f64,
    #[serde(rename = "L_s_b")]
    pub l_s_b: f64,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    pub total: f64,
    pub mask_valid_fraction_f: f64,
    pub mask_valid_fraction_b: f64,
}

impl Diagnostics {
    /// Componentwise `self + k * other`, used to fold multiscale terms.
    pub fn add_scaled(&mut self, other: &Diagnostics, k: f64) {
        self.l_w_f += k * other.l_w_f;
        self.l_w_b += k * other.l_w_b;
        self.l_s_f += k * other.l_s_f;
        self.l_s_b += k * other.l_s_b;
        self.l_c += k * other.l_c;
        self.total += k * other.total;
    }
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check_mask<T>(mask: &ValidMask, h: usize, w: usize, op: &'static str) -> Result<()> {
    if mask.dims() != (h, w) {
        return Err(Error::shape(op, format!("{h}x{w} mask"), format!("{:?}", mask.dims())));
    }
    Ok(())
}

/// Value of the warping loss and, optionally, its gradient w.r.t. `warped`.
fn warping_term<T: Real>(
    target: &Frame<T>,
    warped: &Frame<T>,
    mask: &ValidMask,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(T, Option<Frame<T>>)> {
    target.check_dims(warped, "warping_loss")?;
    let (h, wd) = target.dims();
    check_mask::<T>(mask, h, wd, "warping_loss")?;
    let rho = w.charbonnier();
    let (l1, l2) = (T::lit(w.lambda1), T::lit(w.lambda2));
    let ssim = ssim_map(target, warped, &w.ssim)?;
    let mut value = T::zero();
    let mut grad = want_grad.then(|| Frame::<T>::zeros(h, wd));
    for i in 0..h * wd {
        let m = mask.value::<T>(i);
        let (t, p) = (&target.data()[3 * i..3 * i + 3], &warped.data()[3 * i..3 * i + 3]);
        let l1_norm: T = (0..3).map(|c| (t[c] - p[c]).abs()).sum();
        let y = m * l1_norm;
        value += l1 * rho.value(y) + l2 * (T::one() - ssim.data()[i]);
        if let Some(g) = grad.as_mut() {
            let dy = l1 * rho.derivative(y) * m;
            for c in 0..3 {
                // d|t - p| / dp = -sign(t - p)
                g.data_mut()[3 * i + c] = -dy * sign(t[c] - p[c]);
            }
        }
    }
    if let Some(g) = grad.as_mut() {
        let upstream = Tensor::filled(&[h, wd], -l2);
        let (_, d_warped) = ssim_map_backward(target, warped, &w.ssim, &upstream)?;
        for (a, b) in g.data_mut().iter_mut().zip(d_warped.data()) {
            *a += *b;
        }
    }
    Ok((value, grad))
}

/// `sum_x lambda1 * rho(M(x) |I(x) - Î(x)|_1) + lambda2 * (1 - SSIM(I, Î)(x))`.
pub fn warping_loss<T: Real>(target: &Frame<T>, warped: &Frame<T>, mask: &ValidMask, w: &LossWeights) -> Result<T> {
    warping_term(target, warped, mask, w, false).map(|(v, _)| v)
}

/// Gradient of [`warping_loss`] w.r.t. `warped`.
pub fn warping_loss_backward<T: Real>(
    target: &Frame<T>,
    warped: &Frame<T>,
    mask: &ValidMask,
    w: &LossWeights,
) -> Result<Frame<T>> {
    warping_term(target, warped, mask, w, true).map(|(_, g)| g.expect("gradient requested"))
}

/// True when `x + flow(x)` stays inside the sampling domain.
#[inline]
fn lookup_inside<T: Real>(x: usize, y: usize, f: [T; 2], h: usize, w: usize) -> bool {
    let sx = T::lit(x as f64) + f[0];
    let sy = T::lit(y as f64) + f[1];
    sx >= T::zero() && sy >= T::zero() && sx <= T::lit((w - 1) as f64) && sy <= T::lit((h - 1) as f64)
}

fn one_sided_mask<T: Real>(a: &FlowField<T>, b: &FlowField<T>, w: &LossWeights) -> ValidMask {
    let (h, wd) = a.dims();
    let (g1, g2) = (T::lit(w.gamma1), T::lit(w.gamma2));
    ValidMask::from_fn(h, wd, |x, y| {
        let f = a.pixel(x, y);
        if !lookup_inside(x, y, f, h, wd) {
            return false;
        }
        let bt = sample_bilinear(b, T::lit(x as f64) + f[0], T::lit(y as f64) + f[1]);
        let (su, sv) = (f[0] + bt[0], f[1] + bt[1]);
        let lhs = su * su + sv * sv;
        let rhs = g1 * (f[0] * f[0] + f[1] * f[1] + bt[0] * bt[0] + bt[1] * bt[1]) + g2;
        lhs <= rhs
    })
}

/// Forward-backward consistency masks `(M^f, M^b)`; 1 marks a consistent pixel.
pub fn valid_masks<T: Real>(flow_f: &FlowField<T>, flow_b: &FlowField<T>, w: &LossWeights) -> Result<(ValidMask, ValidMask)> {
    flow_f.check_dims(flow_b, "valid_masks")?;
    Ok((one_sided_mask(flow_f, flow_b, w), one_sided_mask(flow_b, flow_f, w)))
}

/// Mask that only removes pixels whose lookup leaves the image.
pub fn exit_mask<T: Real>(flow: &FlowField<T>) -> ValidMask {
    let (h, w) = flow.dims();
    ValidMask::from_fn(h, w, |x, y| lookup_inside(x, y, flow.pixel(x, y), h, w))
}

fn consistency_term<T: Real>(
    flow_f: &FlowField<T>,
    flow_b: &FlowField<T>,
    mf: &ValidMask,
    mb: &ValidMask,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(T, Option<(FlowField<T>, FlowField<T>)>)> {
    flow_f.check_dims(flow_b, "consistency_loss")?;
    let (h, wd) = flow_f.dims();
    check_mask::<T>(mf, h, wd, "consistency_loss")?;
    check_mask::<T>(mb, h, wd, "consistency_loss")?;
    let rho = w.charbonnier();
    let mut value = T::zero();
    let mut grad = want_grad.then(|| FlowField::<T>::zeros(h, wd));
    for i in 0..h * wd {
        if mf.data()[i] == 0 || mb.data()[i] == 0 {
            continue;
        }
        let (f, b) = (&flow_f.data()[2 * i..2 * i + 2], &flow_b.data()[2 * i..2 * i + 2]);
        let s = [f[0] + b[0], f[1] + b[1]];
        let y = s[0].abs() + s[1].abs();
        value += rho.value(y);
        if let Some(g) = grad.as_mut() {
            let d = rho.derivative(y);
            g.data_mut()[2 * i] = d * sign(s[0]);
            g.data_mut()[2 * i + 1] = d * sign(s[1]);
        }
    }
    // The sum is symmetric in the two flows, so both gradients coincide.
    Ok((value, grad.map(|g| (g.clone(), g))))
}

/// `sum_x M^f(x) M^b(x) rho(|F^f(x) + F^b(x)|_1)`.
pub fn consistency_loss<T: Real>(
    flow_f: &FlowField<T>,
    flow_b: &FlowField<T>,
    mf: &ValidMask,
    mb: &ValidMask,
    w: &LossWeights,
) -> Result<T> {
    consistency_term(flow_f, flow_b, mf, mb, w, false).map(|(v, _)| v)
}

fn smoothness_term<T: Real>(flow: &FlowField<T>, w: &LossWeights, want_grad: bool) -> Result<(T, Option<FlowField<T>>)> {
    let rho = w.charbonnier();
    let (dx, dy) = spatial_gradients(flow)?;
    let value = dx.data().iter().chain(dy.data()).map(|&d| rho.value(d)).sum();
    let grad = if want_grad {
        let back = |t: &Tensor<T>| Tensor::from_vec(t.shape(), t.data().iter().map(|&d| rho.derivative(d)).collect());
        Some(spatial_gradients_backward(&back(&dx)?, &back(&dy)?)?)
    } else {
        None
    };
    Ok((value, grad))
}

/// Charbonnier total variation over both flow channels and both axes.
///
/// The zero-padded last column and row each contribute `rho(0)`.
pub fn smoothness_loss<T: Real>(flow: &FlowField<T>, w: &LossWeights) -> Result<T> {
    smoothness_term(flow, w, false).map(|(v, _)| v)
}

/// Scalar loss, its components, the masks used, and optional flow gradients.
#[derive(Clone, Debug)]
pub struct LossEval<T: Real> {
    pub total: T,
    pub diagnostics: Diagnostics,
    pub masks: (ValidMask, ValidMask),
    pub grad_f: Option<FlowField<T>>,
    pub grad_b: Option<FlowField<T>>,
}

/// Which terms enter the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Use the backward stream (warping and smoothness on `flow_b`).
    pub bidirectional: bool,
    /// Add the consistency loss (requires `bidirectional`).
    pub consistency: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            bidirectional: true,
            consistency: true,
        }
    }
}

/// Frames of one triplet `(I_{t-1}, I_t, I_{t+1})`.
#[derive(Clone, Copy, Debug)]
pub struct TripletFrames<'a, T: Real> {
    pub prev: &'a Frame<T>,
    pub mid: &'a Frame<T>,
    pub next: &'a Frame<T>,
}

impl<'a, T: Real> TripletFrames<'a, T> {
    pub fn new(prev: &'a Frame<T>, mid: &'a Frame<T>, next: &'a Frame<T>) -> Self {
        TripletFrames { prev, mid, next }
    }

    /// Time-reversed triplet.
    pub fn reversed(&self) -> Self {
        TripletFrames {
            prev: self.next,
            mid: self.mid,
            next: self.prev,
        }
    }
}

/// Full objective with explicit control over terms, masks and gradients.
///
/// With `masks = None` they are recomputed from the flows; passing them holds
/// the masks fixed, which is what the gradients assume in either case. When
/// `terms.bidirectional` is off, `flow_b` is ignored and the forward stream is
/// masked only where its lookup leaves the image.
pub fn evaluate_loss<T: Real>(
    frames: TripletFrames<'_, T>,
    flow_f: &FlowField<T>,
    flow_b: &FlowField<T>,
    w: &LossWeights,
    terms: LossTerms,
    masks: Option<(&ValidMask, &ValidMask)>,
    want_grad: bool,
) -> Result<LossEval<T>> {
    frames.prev.check_dims(frames.mid, "total_loss")?;
    frames.prev.check_dims(frames.next, "total_loss")?;
    frames.prev.check_dims(flow_f, "total_loss")?;
    frames.prev.check_dims(flow_b, "total_loss")?;
    let (mf, mb) = match masks {
        Some((a, b)) => (a.clone(), b.clone()),
        None if terms.bidirectional => valid_masks(flow_f, flow_b, w)?,
        None => (exit_mask(flow_f), ValidMask::zeros(flow_b.height(), flow_b.width())),
    };
    let (lw, ls, lc) = (T::lit(w.lambda_w), T::lit(w.lambda_s), T::lit(w.lambda_c));
    let mut d = Diagnostics {
        mask_valid_fraction_f: mf.fraction(),
        mask_valid_fraction_b: if terms.bidirectional { mb.fraction() } else { 0.0 },
        ..Diagnostics::default()
    };
    let mut total = T::zero();

    let stream = |src: &Frame<T>, flow: &FlowField<T>, mask: &ValidMask| -> Result<(T, T, Option<FlowField<T>>)> {
        let warped = warp_bilinear(src, flow)?;
        let (vw, gw) = warping_term(frames.mid, &warped, mask, w, want_grad)?;
        let (vs, gs) = smoothness_term(flow, w, want_grad)?;
        let grad = match (gw, gs) {
            (Some(gw), Some(gs)) => {
                let (_, mut g) = warp_bilinear_backward(src, flow, &gw)?;
                for (a, &s) in g.data_mut().iter_mut().zip(gs.data()) {
                    *a = lw * *a + ls * s;
                }
                Some(g)
            }
            _ => None,
        };
        Ok((lw * vw, ls * vs, grad))
    };

    let (wf, sf, grad_f) = stream(frames.prev, flow_f, &mf)?;
    d.l_w_f = wf.as_f64();
    d.l_s_f = sf.as_f64();
    total += wf + sf;
    let mut grad_f = grad_f;
    let mut grad_b = None;
    if terms.bidirectional {
        let (wb, sb, gb) = stream(frames.next, flow_b, &mb)?;
        d.l_w_b = wb.as_f64();
        d.l_s_b = sb.as_f64();
        total += wb + sb;
        grad_b = gb;
        if terms.consistency {
            let (vc, gc) = consistency_term(flow_f, flow_b, &mf, &mb, w, want_grad)?;
            d.l_c = (lc * vc).as_f64();
            total += lc * vc;
            if let (Some((cf, cb)), Some(gf), Some(gb)) = (gc, grad_f.as_mut(), grad_b.as_mut()) {
                for (a, &c) in gf.data_mut().iter_mut().zip(cf.data()) {
                    *a += lc * c;
                }
                for (a, &c) in gb.data_mut().iter_mut().zip(cb.data()) {
                    *a += lc * c;
                }
            }
        }
    } else if want_grad {
        grad_b = Some(FlowField::zeros(flow_b.height(), flow_b.width()));
    }
    d.total = total.as_f64();
    Ok(LossEval {
        total,
        diagnostics: d,
        masks: (mf, mb),
        grad_f,
        grad_b,
    })
}

/// Weighted total `lambda_w (L_w^f + L_w^b) + lambda_s (L_s^f + L_s^b) + lambda_c L_c`
/// with masks recomputed from the flows.
pub fn total_loss<T: Real>(
    frames: TripletFrames<'_, T>,
    flow_f: &FlowField<T>,
    flow_b: &FlowField<T>,
    w: &LossWeights,
) -> Result<(T, Diagnostics)> {
    let e = evaluate_loss(frames, flow_f, flow_b, w, LossTerms::default(), None, false)?;
    Ok((e.total, e.diagnostics))
}

/// [`total_loss`] with the given masks held fixed, plus gradients w.r.t. both flows.
pub fn total_loss_with_masks<T: Real>(
    frames: TripletFrames<'_, T>,
    flow_f: &FlowField<T>,
    flow_b: &FlowField<T>,
    masks: (&ValidMask, &ValidMask),
    w: &LossWeights,
) -> Result<LossEval<T>> {
    evaluate_loss(frames, flow_f, flow_b, w, LossTerms::default(), Some(masks), true)
}

/// Sum of the Charbonnier floors of every term for an `h x w` triplet with all-ones masks.
pub fn loss_floor(h: usize, w: usize, wts: &LossWeights) -> f64 {
    let r0 = wts.charbonnier().floor();
    let n = (h * w) as f64;
    let warp = n * wts.lambda1 * r0;
    let smooth = 4.0 * n * r0;
    2.0 * wts.lambda_w * warp + 2.0 * wts.lambda_s * smooth + wts.lambda_c * n * r0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_frame(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Frame<f64> {
        Frame::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn rand_flow(h: usize, w: usize, s: f64, rng: &mut ChaCha8Rng) -> FlowField<f64> {
        FlowField::from_fn(h, w, |_, _| [rng.random_range(-s..s), rng.random_range(-s..s)])
    }

    #[test]
    fn defaults_match_published_constants() {
        let w = LossWeights::default();
        assert_eq!((w.lambda1, w.lambda2), (0.3, 0.7));
        assert_eq!((w.gamma1, w.gamma2), (0.01, 0.5));
        assert_eq!((w.lambda_w, w.lambda_c, w.lambda_s), (1.0, 1.0, 0.1));
        assert_eq!((w.alpha, w.eps), (0.4, 1e-3));
        assert!(w.validate().is_ok());
        assert!(LossWeights { lambda_s: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn warping_loss_identical_frames_hits_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = rand_frame(6, 8, &mut rng);
        let w = LossWeights::default();
        let v = warping_loss(&img, &img, &ValidMask::ones(6, 8), &w).unwrap();
        let per_pixel = 0.3 * 1e-3f64.powf(0.8);
        assert!((v / 48.0 - per_pixel).abs() < 1e-12);
        assert!((per_pixel - 1.194e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_mask_leaves_only_ssim_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (rand_frame(5, 7, &mut rng), rand_frame(5, 7, &mut rng));
        let w = LossWeights::default();
        let v = warping_loss(&a, &b, &ValidMask::zeros(5, 7), &w).unwrap();
        let ssim: f64 = ssim_map(&a, &b, &w.ssim).unwrap().data().iter().map(|s| 1.0 - s).sum();
        assert!((v - (35.0 * 0.3 * w.charbonnier().floor() + 0.7 * ssim)).abs() < 1e-10);
    }

    #[test]
    fn single_pixel_hand_value() {
        let w = LossWeights::default();
        let a: Frame<f64> = Frame::filled(1, 1, [0.0; 3]);
        let b: Frame<f64> = Frame::filled(1, 1, [1.0; 3]);
        let v = warping_loss(&a, &b, &ValidMask::ones(1, 1), &w).unwrap();
        // L1 over three channels is 3; window of one pixel has zero variance.
        let ssim = w.ssim.c1 / (1.0 + w.ssim.c1);
        let want = 0.3 * (9.0f64 + 1e-6).powf(0.4) + 0.7 * (1.0 - ssim);
        assert!((v - want).abs() < 1e-12, "{v} vs {want}");
    }

    #[test]
    fn perfectly_consistent_flows_are_valid() {
        let f = FlowField::<f64>::filled(6, 9, [0.4, -0.3]);
        let b = f.scaled(-1.0);
        let (mf, mb) = valid_masks(&f, &b, &LossWeights::default()).unwrap();
        // Interior pixels only: the lookup leaves the image along two borders.
        for y in 1..5 {
            for x in 1..8 {
                assert!(mf.get(x, y) && mb.get(x, y));
            }
        }
    }

    #[test]
    fn mask_threshold_is_analytic() {
        let w = LossWeights::default();
        let m0 = (0.5f64 / 0.99).sqrt();
        assert!((m0 - 0.7107).abs() < 1e-4);
        let zero = FlowField::<f64>::zeros(4, 5);
        for (m, expect) in [(m0 - 1e-3, true), (m0 + 1e-3, false)] {
            let b = FlowField::filled(4, 5, [m, 0.0]);
            let (mf, _) = valid_masks(&zero, &b, &w).unwrap();
            assert_eq!(mf.count(), if expect { 20 } else { 0 });
        }
    }

    #[test]
    fn exiting_strip_is_masked() {
        let f = FlowField::<f64>::from_fn(4, 10, |x, _| if x >= 8 { [3.0, 0.0] } else { [0.0, 0.0] });
        let (mf, _) = valid_masks(&f, &f.scaled(-1.0), &LossWeights::default()).unwrap();
        for y in 0..4 {
            for x in 0..10 {
                assert_eq!(mf.get(x, y), x < 8);
            }
        }
    }

    #[test]
    fn consistency_reference_values() {
        let w = LossWeights::default();
        let ones = ValidMask::ones(3, 4);
        let f = FlowField::<f64>::filled(3, 4, [1.0, 0.0]);
        let z = FlowField::<f64>::zeros(3, 4);
        let v = consistency_loss(&f, &z, &ones, &ones, &w).unwrap();
        assert!((v / 12.0 - (1.0f64 + 1e-6).powf(0.4)).abs() < 1e-12);
        let v = consistency_loss(&f, &f.scaled(-1.0), &ones, &ones, &w).unwrap();
        assert!((v / 12.0 - w.charbonnier().floor()).abs() < 1e-15);
        let zeros = ValidMask::zeros(3, 4);
        assert_eq!(consistency_loss(&f, &z, &zeros, &ones, &w).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_reference_values() {
        let w = LossWeights::default();
        let r0 = w.charbonnier().floor();
        let c = smoothness_loss(&FlowField::<f64>::filled(4, 5, [1.0, 2.0]), &w).unwrap();
        assert!((c - 4.0 * 20.0 * r0).abs() < 1e-12);
        let ramp = FlowField::<f64>::from_fn(4, 5, |x, _| [x as f64, 0.0]);
        let v = smoothness_loss(&ramp, &w).unwrap();
        let r1 = w.charbonnier().value(1.0f64);
        // 16 unit x-differences on u, everything else rho(0)
        assert!((v - (16.0 * r1 + (80.0 - 16.0) * r0)).abs() < 1e-12);
    }

    #[test]
    fn smoothness_matches_two_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = rand_flow(7, 6, 2.0, &mut rng);
        let w = LossWeights::default();
        let rho = |d: f64| (d * d + 1e-6).powf(0.4);
        let mut want = 0.0;
        for c in 0..2 {
            for y in 0..7 {
                for x in 0..6 {
                    let dx = if x + 1 < 6 { f.pixel(x + 1, y)[c] - f.pixel(x, y)[c] } else { 0.0 };
                    let dy = if y + 1 < 7 { f.pixel(x, y + 1)[c] - f.pixel(x, y)[c] } else { 0.0 };
                    want += rho(dx) + rho(dy);
                }
            }
        }
        let got = smoothness_loss(&f, &w).unwrap();
        assert!(((got - want) / want).abs() < 1e-6);
    }

    #[test]
    fn static_triplet_hits_closed_form_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = rand_frame(8, 12, &mut rng);
        let z = FlowField::zeros(8, 12);
        let w = LossWeights::default();
        let (v, d) = total_loss(TripletFrames::new(&img, &img, &img), &z, &z, &w).unwrap();
        assert!((v - loss_floor(8, 12, &w)).abs() < 1e-10);
        assert!((d.total - v).abs() < 1e-12);
        assert_eq!(d.mask_valid_fraction_f, 1.0);
    }

    #[test]
    fn weights_enter_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, c) = (rand_frame(6, 8, &mut rng), rand_frame(6, 8, &mut rng), rand_frame(6, 8, &mut rng));
        let (f, g) = (rand_flow(6, 8, 0.3, &mut rng), rand_flow(6, 8, 0.3, &mut rng));
        let w = LossWeights::default();
        let (_, d1) = total_loss(TripletFrames::new(&a, &b, &c), &f, &g, &w).unwrap();
        let (_, d2) = total_loss(TripletFrames::new(&a, &b, &c), &f, &g, &LossWeights { lambda_w: 2.0, ..w }).unwrap();
        assert!((d2.l_w_f - 2.0 * d1.l_w_f).abs() < 1e-12);
        assert!((d2.l_w_b - 2.0 * d1.l_w_b).abs() < 1e-12);
        assert_eq!((d2.l_s_f, d2.l_s_b, d2.l_c), (d1.l_s_f, d1.l_s_b, d1.l_c));
    }

    #[test]
    fn time_reversal_swaps_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b, c) = (rand_frame(8, 12, &mut rng), rand_frame(8, 12, &mut rng), rand_frame(8, 12, &mut rng));
        let (f, g) = (rand_flow(8, 12, 0.6, &mut rng), rand_flow(8, 12, 0.6, &mut rng));
        let w = LossWeights::default();
        let fr = TripletFrames::new(&a, &b, &c);
        let (v1, d1) = total_loss(fr, &f, &g, &w).unwrap();
        let (v2, d2) = total_loss(fr.reversed(), &g, &f, &w).unwrap();
        assert!(((v1 - v2) / v1).abs() < 1e-6);
        assert_eq!(d1.l_w_f, d2.l_w_b);
        assert_eq!(d1.mask_valid_fraction_f, d2.mask_valid_fraction_b);
    }

    #[test]
    fn forward_only_ignores_backward_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b, c) = (rand_frame(6, 8, &mut rng), rand_frame(6, 8, &mut rng), rand_frame(6, 8, &mut rng));
        let (f, g) = (rand_flow(6, 8, 0.3, &mut rng), rand_flow(6, 8, 0.3, &mut rng));
        let terms = LossTerms {
            bidirectional: false,
            consistency: false,
        };
        let w = LossWeights::default();
        let e1 = evaluate_loss(TripletFrames::new(&a, &b, &c), &f, &g, &w, terms, None, true).unwrap();
        let e2 = evaluate_loss(TripletFrames::new(&a, &b, &c), &f, &f, &w, terms, None, true).unwrap();
        assert_eq!(e1.total, e2.total);
        assert!(e1.grad_b.unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(e1.diagnostics.l_w_b + e1.diagnostics.l_c, 0.0);
    }

    #[test]
    fn masks_are_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (f, g) = (rand_flow(8, 12, 2.0, &mut rng), rand_flow(8, 12, 2.0, &mut rng));
        let w = LossWeights::default();
        assert_eq!(valid_masks(&f, &g, &w).unwrap(), valid_masks(&f, &g, &w).unwrap());
    }
}
