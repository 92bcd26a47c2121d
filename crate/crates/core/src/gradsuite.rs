//! Central-difference checks of every hand-written adjoint.
//!
//! Inputs are drawn so that no probe crosses a kink: sampling positions stay
//! off the integer lattice and inside the image, and every argument of an
//! absolute value or a Charbonnier term keeps a margin from zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffops::{
    charbonnier, charbonnier_backward, grad_check, ssim_map, ssim_map_backward, warp_bilinear, warp_bilinear_backward,
    GradCheckReport, GradOp, SsimConfig,
};
use crate::field::{Field, FlowField, Frame, ValidMask};
use crate::losses::{evaluate_loss, valid_masks, LossTerms, LossWeights, TripletFrames};
use crate::model::layers::{concat, relu};
use crate::model::{ModelConfig, Modulator, ParamId, ParamSet, Parameters, SensorFlowNet, SensorVector};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

fn projection(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn frame_from(h: usize, w: usize, v: &[f64]) -> Frame<f64> {
    Field::from_vec(h, w, v.to_vec()).expect("sized input")
}

fn flow_from(h: usize, w: usize, v: &[f64]) -> FlowField<f64> {
    Field::from_vec(h, w, v.to_vec()).expect("sized input")
}

fn random_frame(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Draws a value from `range` until `ok` accepts it.
fn draw(rng: &mut ChaCha8Rng, range: std::ops::Range<f64>, ok: impl Fn(f64) -> bool) -> f64 {
    loop {
        let v = rng.random_range(range.clone());
        if ok(v) {
            return v;
        }
    }
}

fn off_lattice(pos: f64, n: usize, margin: f64) -> bool {
    let frac = pos - pos.floor();
    pos > margin && pos < (n - 1) as f64 - margin && frac > margin && frac < 1.0 - margin
}

/// Flow whose lookups avoid the lattice and the border and whose forward
/// differences avoid zero. With `partner`, also keeps `f + partner` off zero.
fn smooth_safe_flow(h: usize, w: usize, partner: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const M: f64 = 0.1;
    let mut f = vec![0.0; h * w * 2];
    for y in 0..h {
        for x in 0..w {
            for c in 0..2 {
                let i = (y * w + x) * 2 + c;
                let (pos, n) = if c == 0 { (x as f64, w) } else { (y as f64, h) };
                let left = (x > 0).then(|| f[i - 2]);
                let up = (y > 0).then(|| f[i - 2 * w]);
                let other = partner.map(|p| p[i]);
                f[i] = draw(rng, -1.5..1.5, |v| {
                    off_lattice(pos + v, n, M)
                        && left.is_none_or(|l| (v - l).abs() > M)
                        && up.is_none_or(|u| (v - u).abs() > M)
                        && other.is_none_or(|o| (v + o).abs() > M)
                });
            }
        }
    }
    f
}

pub struct CharbonnierCheck {
    x: Vec<f64>,
    r: Vec<f64>,
}

impl CharbonnierCheck {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..16)
            .map(|_| draw(&mut rng, -3.0..3.0, |v| v.abs() > 0.1))
            .collect();
        CharbonnierCheck {
            x,
            r: projection(16, &mut rng),
        }
    }
}

impl GradOp for CharbonnierCheck {
    fn name(&self) -> String {
        "charbonnier".into()
    }
    fn inputs(&self) -> Vec<(String, Vec<f64>)> {
        vec![("x".into(), self.x.clone())]
    }
    fn value(&self, inputs: &[Vec<f64>]) -> f64 {
        let t = Tensor::from_vec(&[16], inputs[0].clone()).expect("sized");
        dot(charbonnier(&t, 1e-3, 0.4).data(), &self.r)
    }
    fn gradient(&self, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let t = Tensor::from_vec(&[16], inputs[0].clone()).expect("sized");
        let g = Tensor::from_vec(&[16], self.r.clone()).expect("sized");
        vec![charbonnier_backward(&t, &g, 1e-3, 0.4).into_data()]
    }
}

pub struct WarpCheck {
    h: usize,
    w: usize,
    source: Vec<f64>,
    flow: Vec<f64>,
    r: Vec<f64>,
}

impl WarpCheck {
    pub fn new(h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = random_frame(h, w, &mut rng);
        let flow = smooth_safe_flow(h, w, None, &mut rng);
        WarpCheck {
            h,
            w,
            source,
            flow,
            r: projection(h * w * 3, &mut rng),
        }
    }
}

impl GradOp for WarpCheck {
    fn name(&self) -> String {
        format!("warp_bilinear {}x{}", self.h, self.w)
    }
    fn inputs(&self) -> Vec<(String, Vec<f64>)> {
        vec![("source".into(), self.source.clone()), ("flow".into(), self.flow.clone())]
    }
    fn value(&self, x: &[Vec<f64>]) -> f64 {
        let out = warp_bilinear(&frame_from(self.h, self.w, &x[0]), &flow_from(self.h, self.w, &x[1])).expect("shapes");
        dot(out.data(), &self.r)
    }
    fn gradient(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let g = frame_from(self.h, self.w, &self.r);
        let (ds, df) =
            warp_bilinear_backward(&frame_from(self.h, self.w, &x[0]), &flow_from(self.h, self.w, &x[1]), &g).expect("shapes");
        vec![ds.data().to_vec(), df.data().to_vec()]
    }
}

pub struct SsimCheck {
    h: usize,
    w: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    r: Vec<f64>,
}

impl SsimCheck {
    pub fn new(h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SsimCheck {
            h,
            w,
            a: random_frame(h, w, &mut rng),
            b: random_frame(h, w, &mut rng),
            r: projection(h * w, &mut rng),
        }
    }
}

impl GradOp for SsimCheck {
    fn name(&self) -> String {
        format!("ssim_map {}x{}", self.h, self.w)
    }
    fn inputs(&self) -> Vec<(String, Vec<f64>)> {
        vec![("a".into(), self.a.clone()), ("b".into(), self.b.clone())]
    }
    fn value(&self, x: &[Vec<f64>]) -> f64 {
        let s = ssim_map(&frame_from(self.h, self.w, &x[0]), &frame_from(self.h, self.w, &x[1]), &SsimConfig::default())
            .expect("shapes");
        dot(s.data(), &self.r)
    }
    fn gradient(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let g = Tensor::from_vec(&[self.h, self.w], self.r.clone()).expect("sized");
        let (da, db) = ssim_map_backward(
            &frame_from(self.h, self.w, &x[0]),
            &frame_from(self.h, self.w, &x[1]),
            &SsimConfig::default(),
            &g,
        )
        .expect("shapes");
        vec![da.data().to_vec(), db.data().to_vec()]
    }
}

/// `modulate` over the activation, the sensor plane and every modulator weight.
pub struct ModulateCheck {
    h: usize,
    w: usize,
    set: ParamSet,
    m: Modulator,
    act: Vec<f64>,
    plane: Vec<f64>,
    params: Vec<f64>,
    r: Vec<f64>,
}

const CHANNELS: usize = 3;
const SENSOR_CHANNELS: usize = 2;

fn flatten(p: &Parameters<f64>) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(like: &Parameters<f64>, v: &[f64]) -> Parameters<f64> {
    let mut out = like.clone();
    let mut rest = v;
    for t in out.tensors_mut() {
        let n = t.data().len();
        t.data_mut().copy_from_slice(&rest[..n]);
        rest = &rest[n..];
    }
    out
}

impl ModulateCheck {
    /// Redraws until every ReLU pre-activation keeps a margin from zero.
    pub fn new(h: usize, w: usize, seed: u64) -> Self {
        let mut set = ParamSet::default();
        let m = Modulator::new(&mut set, "mod", CHANNELS, SENSOR_CHANNELS);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let p = set.init::<f64>(rng.random());
            let mut p = p;
            for t in p.tensors_mut() {
                // nonzero biases so pre-activations spread around zero
                if t.shape().len() == 1 {
                    t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
                }
            }
            let act: Vec<f64> = (0..CHANNELS * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let plane: Vec<f64> = (0..SENSOR_CHANNELS * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let check = ModulateCheck { h, w, set: set.clone(), m: m.clone(), act, plane, params: flatten(&p), r: projection(CHANNELS * h * w, &mut rng) };
            if check.min_preactivation() > 5e-3 {
                return check;
            }
        }
    }

    fn tensors(&self, x: &[Vec<f64>]) -> (Tensor<f64>, Tensor<f64>, Parameters<f64>) {
        let act = Tensor::from_vec(&[CHANNELS, self.h, self.w], x[0].clone()).expect("sized");
        let plane = Tensor::from_vec(&[SENSOR_CHANNELS, self.h, self.w], x[1].clone()).expect("sized");
        (act, plane, unflatten(&self.set.zeros(), &x[2]))
    }

    fn min_preactivation(&self) -> f64 {
        let (act, plane, p) = self.tensors(&[self.act.clone(), self.plane.clone(), self.params.clone()]);
        let z1 = self.m.fuse.forward(&p, &concat(&act, &plane));
        let mut a1 = z1.clone();
        relu(a1.data_mut());
        let z2 = self.m.res_a.forward(&p, &a1);
        let mut a2 = z2.clone();
        relu(a2.data_mut());
        let z3 = self.m.res_b.forward(&p, &a2);
        [z1, z2, z3].iter().flat_map(|z| z.data().iter().map(|v| v.abs())).fold(f64::INFINITY, f64::min)
    }
}

impl GradOp for ModulateCheck {
    fn name(&self) -> String {
        format!("modulate {}x{}", self.h, self.w)
    }
    fn inputs(&self) -> Vec<(String, Vec<f64>)> {
        vec![("activation".into(), self.act.clone()), ("plane".into(), self.plane.clone()), ("params".into(), self.params.clone())]
    }
    fn value(&self, x: &[Vec<f64>]) -> f64 {
        let (act, plane, p) = self.tensors(x);
        dot(crate::model::modulate(&act, &plane, &p, &self.m).expect("shapes").data(), &self.r)
    }
    fn gradient(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (act, plane, p) = self.tensors(x);
        let (_, tr) = self.m.forward_plane(&p, &act, &plane).expect("shapes");
        let dy = Tensor::from_vec(&[CHANNELS, self.h, self.w], self.r.clone()).expect("sized");
        let mut g = p.zeros_like();
        let (da, dp) = self.m.backward_plane(&p, &act, &plane, &tr, &dy, &mut g).expect("shapes");
        vec![da.into_data(), dp.into_data(), flatten(&g)]
    }
}

/// Total loss as a function of both flows, masks held at their initial value.
pub struct TotalLossCheck {
    h: usize,
    w: usize,
    frames: [Frame<f64>; 3],
    flow_f: Vec<f64>,
    flow_b: Vec<f64>,
    masks: (ValidMask, ValidMask),
    weights: LossWeights,
}

impl TotalLossCheck {
    pub fn new(h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prev = frame_from(h, w, &random_frame(h, w, &mut rng));
        let next = frame_from(h, w, &random_frame(h, w, &mut rng));
        let flow_f = smooth_safe_flow(h, w, None, &mut rng);
        let flow_b = smooth_safe_flow(h, w, Some(&flow_f), &mut rng);
        let wf = warp_bilinear(&prev, &flow_from(h, w, &flow_f)).expect("shapes");
        let wb = warp_bilinear(&next, &flow_from(h, w, &flow_b)).expect("shapes");
        // Keep every photometric residual away from the kink of |.|.
        let mid: Vec<f64> = (0..h * w * 3)
            .map(|i| {
                let (p, q) = (wf.data()[i], wb.data()[i]);
                draw(&mut rng, 0.0..1.0, |v| (v - p).abs() > 0.05 && (v - q).abs() > 0.05)
            })
            .collect();
        let weights = LossWeights::default();
        let masks = valid_masks(&flow_from(h, w, &flow_f), &flow_from(h, w, &flow_b), &weights).expect("shapes");
        TotalLossCheck {
            h,
            w,
            frames: [prev, frame_from(h, w, &mid), next],
            flow_f,
            flow_b,
            masks,
            weights,
        }
    }

    fn eval(&self, x: &[Vec<f64>], grad: bool) -> crate::losses::LossEval<f64> {
        let [p, m, n] = &self.frames;
        evaluate_loss(
            TripletFrames::new(p, m, n),
            &flow_from(self.h, self.w, &x[0]),
            &flow_from(self.h, self.w, &x[1]),
            &self.weights,
            LossTerms::default(),
            Some((&self.masks.0, &self.masks.1)),
            grad,
        )
        .expect("shapes")
    }
}

impl GradOp for TotalLossCheck {
    fn name(&self) -> String {
        format!("total_loss {}x{}", self.h, self.w)
    }
    fn inputs(&self) -> Vec<(String, Vec<f64>)> {
        vec![("flow_f".into(), self.flow_f.clone()), ("flow_b".into(), self.flow_b.clone())]
    }
    fn value(&self, x: &[Vec<f64>]) -> f64 {
        self.eval(x, false).total
    }
    fn gradient(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let e = self.eval(x, true);
        vec![
            e.grad_f.expect("requested").data().to_vec(),
            e.grad_b.expect("requested").data().to_vec(),
        ]
    }
}

/// Total loss through both network streams as a function of two weights,
/// one in the image encoder and one in the sensor encoder. Masks are frozen.
pub struct NetworkCheck {
    net: SensorFlowNet,
    params: Parameters<f64>,
    picks: [(ParamId, usize); 2],
    frames: [Frame<f64>; 3],
    sensor: SensorVector<f64>,
    masks: (ValidMask, ValidMask),
    weights: LossWeights,
}

/// Every weight feeds hundreds of ReLUs, so the step must stay below the nearest kink.
pub const NETWORK_STEP: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

impl NetworkCheck {
    pub fn new(seed: u64) -> Self {
        let (h, w) = (16, 24);
        let cfg = ModelConfig {
            height: h,
            width: w,
            encoder_channels: vec![4, 6, 8],
            skip_connections: true,
            sensor_hidden: 5,
            head_init_scale: 1.0,
            ..ModelConfig::default()
        };
        let net = SensorFlowNet::new(&cfg).expect("valid probe config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = net.init::<f64>(rng.random());
        let pick = |rng: &mut ChaCha8Rng, name: &str| {
            let id = params.names().iter().position(|n| n == name).map(ParamId).expect("probe tensor exists");
            (id, rng.random_range(0..params.get(id).data().len()))
        };
        let picks = [pick(&mut rng, "enc1.weight"), pick(&mut rng, "sensor.fc1.weight")];
        let frames = [0, 1, 2].map(|_| frame_from(h, w, &random_frame(h, w, &mut rng)));
        let sensor = SensorVector((0..6).map(|_| rng.random_range(-1.5..1.5)).collect());
        let weights = LossWeights::default();
        let (f, b) = net.predict_bidirectional(&params, &frames[0], &frames[2], &sensor).expect("shapes");
        let masks = valid_masks(&f.flow, &b.flow, &weights).expect("shapes");
        NetworkCheck { net, params, picks, frames, sensor, masks, weights }
    }

    fn with(&self, x: &[f64]) -> Parameters<f64> {
        let mut p = self.params.clone();
        for (&(id, k), &v) in self.picks.iter().zip(x) {
            p.get_mut(id).data_mut()[k] = v;
        }
        p
    }

    fn eval(&self, flow_f: &FlowField<f64>, flow_b: &FlowField<f64>, grad: bool) -> crate::losses::LossEval<f64> {
        let [prev, mid, next] = &self.frames;
        evaluate_loss(
            TripletFrames::new(prev, mid, next),
            flow_f,
            flow_b,
            &self.weights,
            LossTerms::default(),
            Some((&self.masks.0, &self.masks.1)),
            grad,
        )
        .expect("shapes")
    }
}

impl GradOp for NetworkCheck {
    fn name(&self) -> String {
        format!("network {} and {}", self.params.names()[self.picks[0].0 .0], self.params.names()[self.picks[1].0 .0])
    }
    fn inputs(&self) -> Vec<(String, Vec<f64>)> {
        let v = self.picks.iter().map(|&(id, k)| self.params.get(id).data()[k]).collect();
        vec![("weights".into(), v)]
    }
    fn value(&self, x: &[Vec<f64>]) -> f64 {
        let p = self.with(&x[0]);
        let (f, b) = self.net.predict_bidirectional(&p, &self.frames[0], &self.frames[2], &self.sensor).expect("shapes");
        self.eval(&f.flow, &b.flow, false).total
    }
    fn gradient(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let p = self.with(&x[0]);
        let (pf, tf) = self.net.forward(&p, &self.frames[0], &self.sensor).expect("shapes");
        let (pb, tb) = self.net.forward(&p, &self.frames[2], &-&self.sensor).expect("shapes");
        let e = self.eval(&pf.flow, &pb.flow, true);
        let mut g = p.zeros_like();
        self.net.backward(&p, &tf, e.grad_f.as_ref().expect("requested"), &[], &mut g).expect("shapes");
        self.net.backward(&p, &tb, e.grad_b.as_ref().expect("requested"), &[], &mut g).expect("shapes");
        vec![self.picks.iter().map(|&(id, k)| g.get(id).data()[k]).collect()]
    }
}

/// End-to-end check of the loss gradient with respect to network weights.
pub fn network_probe(seed: u64) -> GradCheckReport {
    grad_check(&NetworkCheck::new(seed), NETWORK_STEP, NETWORK_TOLERANCE)
}

/// Kernel and loss checks at the spec sizes.
pub fn kernel_checks(seed: u64) -> Vec<Box<dyn GradOp>> {
    vec![
        Box::new(CharbonnierCheck::new(seed)),
        Box::new(WarpCheck::new(8, 12, seed + 1)),
        Box::new(SsimCheck::new(8, 8, seed + 2)),
        Box::new(ModulateCheck::new(4, 6, seed + 4)),
        Box::new(TotalLossCheck::new(8, 12, seed + 3)),
    ]
}

pub fn run(ops: &[Box<dyn GradOp>], h: f64, tol: f64) -> Vec<GradCheckReport> {
    ops.iter().map(|op| grad_check(op.as_ref(), h, tol)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_pass_at_spec_tolerance() {
        for r in run(&kernel_checks(42), STEP, TOLERANCE) {
            println!("{r}");
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn network_probe_passes() {
        for seed in [42, 7, 1, 2] {
            let r = network_probe(seed);
            println!("{r}");
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn ssim_error_shrinks_quadratically() {
        let op = SsimCheck::new(8, 8, 44);
        let coarse = grad_check(&op, 1e-3, 1.0).max_rel_error();
        let fine = grad_check(&op, 1e-4, 1.0).max_rel_error();
        assert!(fine < coarse / 50.0, "{coarse} -> {fine}");
    }

    #[test]
    fn masks_in_total_check_are_mixed() {
        let c = TotalLossCheck::new(8, 12, 3);
        assert!(c.masks.0.count() > 0);
    }

    #[test]
    fn integer_aligned_sampling_is_a_kink() {
        // At lattice points the one-sided slopes differ, so central
        // differences disagree with either analytic branch.
        let src: Frame<f64> = Field::from_fn(1, 3, |x, _| [(x * x) as f64; 3]);
        let flow = FlowField::<f64>::zeros(1, 3);
        let g = Frame::filled(1, 3, [1.0, 0.0, 0.0]);
        let (_, d) = warp_bilinear_backward(&src, &flow, &g).unwrap();
        let shift = |u: f64| warp_bilinear(&src, &FlowField::filled(1, 3, [u, 0.0])).unwrap().pixel(1, 0)[0];
        let numeric = (shift(1e-3) - shift(-1e-3)) / 2e-3;
        assert!((numeric - d.pixel(1, 0)[0]).abs() > 0.5);
    }
}
