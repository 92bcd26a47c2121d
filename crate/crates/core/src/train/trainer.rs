//! Batch assembly, per-sample gradients and the optimization loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::augment::{augment_flip, augment_timescale};
use super::data::{Dataset, Triplet};
use super::normalize::NormalizationStats;
use crate::error::{Error, Result};
use crate::field::{FlowField, Frame};
use crate::losses::{evaluate_loss, Diagnostics, LossTerms, LossWeights, TripletFrames};
use crate::model::{Parameters, SensorFlowNet, SensorVector};
use crate::parallel::{self, ExecMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub base_lr: f64,
    pub lr_halving_period: usize,
    pub seed: u64,
    /// Mirror each sample with probability 1/2.
    pub flip: bool,
    /// Draw the frame spacing `k` uniformly from `{1, 2}` per sample.
    pub time_variation: bool,
    /// Train both streams; off means the forward stream only.
    pub bidirectional: bool,
    pub consistency: bool,
    /// Loss weights of the half- and quarter-resolution outputs.
    pub coarse_weights: [f64; 2],
    /// Checkpoint period in steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// `[start, end]`: smoothness and consistency weights are zero before `start`
    /// and rise linearly to their configured values at `end`. `[0, 0]` disables the ramp.
    pub regularizer_ramp: [usize; 2],
    pub adam: AdamConfig,
    /// Filled from the `[loss]` section of the run config.
    #[serde(skip)]
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            total_steps: 5000,
            base_lr: 2e-4,
            lr_halving_period: 2000,
            seed: 0,
            flip: true,
            time_variation: true,
            bidirectional: true,
            consistency: true,
            coarse_weights: [0.5, 0.25],
            checkpoint_every: 0,
            regularizer_ramp: [0, 0],
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 || self.lr_halving_period == 0 {
            return Err(Error::Config("batch_size, total_steps and lr_halving_period must be positive".into()));
        }
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config(format!("base_lr must be finite and non-negative, got {}", self.base_lr)));
        }
        let [start, end] = self.regularizer_ramp;
        if start > end {
            return Err(Error::Config(format!("regularizer_ramp start {start} exceeds end {end}")));
        }
        self.loss.validate()
    }

    /// Loss weights in effect at `step` under `regularizer_ramp`.
    pub fn loss_at(&self, step: usize) -> LossWeights {
        let [start, end] = self.regularizer_ramp;
        let f = if step >= end {
            1.0
        } else if step < start {
            0.0
        } else {
            (step - start) as f64 / (end - start) as f64
        };
        LossWeights { lambda_s: self.loss.lambda_s * f, lambda_c: self.loss.lambda_c * f, ..self.loss }
    }

    /// `base_lr * 2^-floor(step / period)`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        self.base_lr * 0.5f64.powi((step / self.lr_halving_period) as i32)
    }

    pub fn loss_terms(&self) -> LossTerms {
        LossTerms { bidirectional: self.bidirectional, consistency: self.consistency }
    }
}

/// One network input pair after augmentation.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub index: usize,
    pub k: usize,
    pub flipped: bool,
    pub triplet: Triplet,
    pub sensor: SensorVector<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    #[serde(rename = "L_w")]
    pub l_w: f64,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    pub mask_frac: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: Parameters,
    pub adam: Adam,
    pub step: usize,
}

impl TrainState {
    pub fn new(params: Parameters, cfg: &TrainConfig) -> Self {
        let adam = Adam::new(cfg.adam, &params);
        TrainState { params, adam, step: 0 }
    }
}

/// Deterministic sample order: a fresh seeded permutation each epoch, last partial batch dropped.
pub fn batch_indices(n: usize, cfg: &TrainConfig, step: usize) -> Vec<usize> {
    let per_epoch = n / cfg.batch_size;
    assert!(per_epoch > 0, "dataset smaller than one batch");
    let (epoch, b) = (step / per_epoch, step % per_epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order[b * cfg.batch_size..(b + 1) * cfg.batch_size].to_vec()
}

/// Builds the augmented batch of `step`. Time-scale draws that fall off a
/// sequence edge fall back to `k = 1` and are counted in `skipped`.
pub fn prepare_batch(
    data: &Dataset,
    stats: &NormalizationStats,
    net: &SensorFlowNet,
    cfg: &TrainConfig,
    step: usize,
    skipped: &mut usize,
) -> Vec<PreparedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((1u64 << 40) | step as u64);
    let units = net.config().units;
    batch_indices(data.len(), cfg, step)
        .into_iter()
        .map(|index| {
            let k_draw = if cfg.time_variation { rng.random_range(1..=2) } else { 1 };
            let flipped = cfg.flip && rng.random_bool(0.5);
            let s = &data.samples[index];
            let seq = &data.sequences[s.sequence];
            let (k, mut triplet) = match augment_timescale(seq, s.center, k_draw, skipped) {
                Some(t) => (k_draw, t),
                None => (1, data.triplet(index)),
            };
            if flipped {
                triplet = augment_flip(&triplet);
            }
            let sensor = stats.sensor_vector(&triplet.sensor, units);
            PreparedSample { index, k, flipped, triplet, sensor }
        })
        .collect()
}

pub struct SampleOutcome {
    pub grad: Parameters,
    pub total: f64,
    pub diagnostics: Diagnostics,
}

fn frame_pyramid(f: &Frame<f32>, factor: usize) -> Frame<f32> {
    let mut out = f.clone();
    let mut k = 1;
    while k < factor {
        out = out.downsample2();
        k *= 2;
    }
    out
}

/// Loss and parameter gradient of one triplet through both weight-tied streams.
pub fn sample_gradient(
    net: &SensorFlowNet,
    p: &Parameters,
    sample: &PreparedSample,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<SampleOutcome> {
    let t = &sample.triplet;
    let terms = cfg.loss_terms();
    let (pf, trf) = net.forward(p, &t.prev, &sample.sensor)?;
    let backward = if terms.bidirectional { Some(net.forward(p, &t.next, &-&sample.sensor)?) } else { None };
    let zeros = |f: &FlowField<f32>| FlowField::zeros(f.height(), f.width());
    let flow_b = backward.as_ref().map_or_else(|| zeros(&pf.flow), |(pb, _)| pb.flow.clone());

    let frames = TripletFrames::new(&t.prev, &t.mid, &t.next);
    let full = evaluate_loss(frames, &pf.flow, &flow_b, weights, terms, None, true)?;
    let mut total = full.total as f64;
    let mut coarse_f = Vec::new();
    let mut coarse_b = Vec::new();
    for (i, cf) in pf.coarse.iter().enumerate() {
        let weight = cfg.coarse_weights.get(i).copied().unwrap_or(0.0) as f32;
        let (prev, mid, next) = (frame_pyramid(&t.prev, cf.factor), frame_pyramid(&t.mid, cf.factor), frame_pyramid(&t.next, cf.factor));
        let cb = backward.as_ref().map_or_else(|| zeros(&cf.flow), |(pb, _)| pb.coarse[i].flow.clone());
        let e = evaluate_loss(TripletFrames::new(&prev, &mid, &next), &cf.flow, &cb, weights, terms, None, true)?;
        total += (weight * e.total) as f64;
        coarse_f.push(e.grad_f.expect("gradient requested").scaled(weight));
        coarse_b.push(e.grad_b.expect("gradient requested").scaled(weight));
    }
    let mut grad = p.zeros_like();
    net.backward(p, &trf, full.grad_f.as_ref().expect("gradient requested"), &coarse_f, &mut grad)?;
    if let Some((_, trb)) = &backward {
        net.backward(p, trb, full.grad_b.as_ref().expect("gradient requested"), &coarse_b, &mut grad)?;
    }
    Ok(SampleOutcome { grad, total, diagnostics: full.diagnostics })
}

fn dump_batch(batch: &[PreparedSample], outcomes: &[SampleOutcome]) -> String {
    let rows: Vec<_> = batch
        .iter()
        .zip(outcomes)
        .map(|(s, o)| {
            serde_json::json!({
                "sample": s.index,
                "k": s.k,
                "flipped": s.flipped,
                "sensor_raw": s.triplet.sensor,
                "sensor": s.sensor.values(),
                "total": o.total,
                "grad_finite": o.grad.all_finite(),
                "diagnostics": o.diagnostics,
            })
        })
        .collect();
    serde_json::Value::Array(rows).to_string()
}

/// Averages per-sample gradients in batch order and applies one ADAM update.
pub fn train_step(
    net: &SensorFlowNet,
    state: &mut TrainState,
    batch: &[PreparedSample],
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<StepMetrics> {
    let weights = cfg.loss_at(state.step);
    let outcomes = parallel::map(mode, batch, |s| sample_gradient(net, &state.params, s, cfg, &weights))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if outcomes.iter().any(|o| !o.total.is_finite() || !o.grad.all_finite()) {
        return Err(Error::NonFinite { step: state.step, dump: dump_batch(batch, &outcomes) });
    }
    let n = outcomes.len() as f64;
    let mut grad = state.params.zeros_like();
    let mut m = StepMetrics { step: state.step, lr: cfg.learning_rate(state.step), total: 0.0, l_w: 0.0, l_s: 0.0, l_c: 0.0, mask_frac: 0.0 };
    for o in &outcomes {
        grad.add_assign(&o.grad);
        let d = &o.diagnostics;
        m.total += o.total / n;
        m.l_w += (d.l_w_f + d.l_w_b) / n;
        m.l_s += (d.l_s_f + d.l_s_b) / n;
        m.l_c += d.l_c / n;
        let frac = if cfg.bidirectional { 0.5 * (d.mask_valid_fraction_f + d.mask_valid_fraction_b) } else { d.mask_valid_fraction_f };
        m.mask_frac += frac / n;
    }
    grad.scale((1.0 / n) as f32);
    state.adam.step(&mut state.params, &grad, m.lr);
    state.step += 1;
    Ok(m)
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<StepMetrics>,
    /// Time-scale draws that fell off a sequence edge.
    pub skipped_timescale: usize,
}

/// Runs `cfg.total_steps` steps from `init`, calling `on_step` after each.
pub fn train(
    net: &SensorFlowNet,
    data: &Dataset,
    stats: &NormalizationStats,
    cfg: &TrainConfig,
    init: Parameters,
    mode: ExecMode,
    mut on_step: impl FnMut(&StepMetrics, &TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.check_parameters(&init)?;
    if data.len() < cfg.batch_size {
        return Err(Error::Config(format!("{} training triplets cannot fill a batch of {}", data.len(), cfg.batch_size)));
    }
    let mut state = TrainState::new(init, cfg);
    let mut history = Vec::with_capacity(cfg.total_steps);
    let mut skipped = 0;
    while state.step < cfg.total_steps {
        let batch = prepare_batch(data, stats, net, cfg, state.step, &mut skipped);
        let m = train_step(net, &mut state, &batch, cfg, mode)?;
        on_step(&m, &state)?;
        history.push(m);
    }
    Ok(TrainOutcome { state, history, skipped_timescale: skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::train::normalize_sensors;
    use crate::world::{sample_sequence, CameraIntrinsics, TrajectoryConfig, WorldConfig};

    fn tiny_world() -> WorldConfig {
        WorldConfig {
            camera: CameraIntrinsics::centered(32, 16, 20.0),
            trajectory: TrajectoryConfig { frames: 6, ..TrajectoryConfig::default() },
            ..WorldConfig::default()
        }
    }

    fn tiny_setup(skip: bool) -> (SensorFlowNet, Dataset, NormalizationStats) {
        let world = tiny_world();
        let seqs: Vec<_> = (0..2).map(|s| sample_sequence(&world, s, ExecMode::Sequential).unwrap()).collect();
        let data = Dataset::from_sequences(&seqs, false, ExecMode::Sequential);
        let stats = normalize_sensors(data.records()).unwrap();
        let cfg = ModelConfig {
            height: 16,
            width: 32,
            encoder_channels: vec![4, 8, 8],
            skip_connections: skip,
            multiscale_outputs: skip,
            sensor_hidden: 6,
            ..ModelConfig::default()
        };
        (SensorFlowNet::new(&cfg).unwrap(), data, stats)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { batch_size: 3, total_steps: 4, lr_halving_period: 2, base_lr: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_halves_every_period() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 2e-4);
        assert_eq!(cfg.learning_rate(1999), 2e-4);
        assert_eq!(cfg.learning_rate(2000), 1e-4);
        assert_eq!(cfg.learning_rate(4999), 5e-5);
        for step in (0..10_000).step_by(137) {
            assert_eq!(cfg.learning_rate(step), 2e-4 / 2f64.powi((step / 2000) as i32));
        }
    }

    #[test]
    fn regularizer_ramp_scales_only_smoothness_and_consistency() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.loss_at(0), cfg.loss);
        let cfg = TrainConfig { regularizer_ramp: [100, 300], ..cfg };
        assert_eq!(cfg.loss_at(99).lambda_s, 0.0);
        assert_eq!(cfg.loss_at(99).lambda_c, 0.0);
        assert_eq!(cfg.loss_at(200).lambda_s, 0.5 * cfg.loss.lambda_s);
        assert_eq!(cfg.loss_at(300), cfg.loss);
        assert_eq!(cfg.loss_at(0).lambda_w, cfg.loss.lambda_w);
        assert!(TrainConfig { regularizer_ramp: [5, 4], ..cfg }.validate().is_err());
    }

    #[test]
    fn batches_cover_an_epoch_without_repeats() {
        let cfg = TrainConfig { batch_size: 3, seed: 9, ..TrainConfig::default() };
        let mut seen: Vec<usize> = (0..3).flat_map(|s| batch_indices(10, &cfg, s)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        assert_ne!(batch_indices(10, &cfg, 0), batch_indices(10, &cfg, 3));
        assert_eq!(batch_indices(10, &cfg, 4), batch_indices(10, &cfg, 4));
    }

    #[test]
    fn sensors_of_the_two_streams_cancel() {
        let (net, data, stats) = tiny_setup(false);
        let mut skipped = 0;
        for step in 0..4 {
            for s in prepare_batch(&data, &stats, &net, &tiny_cfg(), step, &mut skipped) {
                let minus = -&s.sensor;
                assert!(s.sensor.values().iter().zip(minus.values()).all(|(a, b)| a + b == 0.0));
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params_bitwise() {
        let (net, data, stats) = tiny_setup(false);
        let cfg = TrainConfig { base_lr: 0.0, ..tiny_cfg() };
        let init = net.init(1);
        let out = train(&net, &data, &stats, &cfg, init.clone(), ExecMode::default(), |_, _| Ok(())).unwrap();
        assert!(out.state.params.bitwise_eq(&init));
        assert_eq!(out.history.len(), 4);
    }

    #[test]
    fn fixed_seed_runs_are_identical_across_modes() {
        for skip in [false, true] {
            let (net, data, stats) = tiny_setup(skip);
            let run = |mode| train(&net, &data, &stats, &tiny_cfg(), net.init(2), mode, |_, _| Ok(())).unwrap();
            let a = run(ExecMode::Sequential);
            let b = run(ExecMode::Parallel);
            let c = run(ExecMode::Sequential);
            let lines = |o: &TrainOutcome| o.history.iter().map(|m| serde_json::to_string(m).unwrap()).collect::<Vec<_>>();
            assert_eq!(lines(&a), lines(&b));
            assert_eq!(lines(&a), lines(&c));
            assert!(a.state.params.bitwise_eq(&b.state.params));
            assert!(a.history.iter().all(|m| m.total.is_finite() && m.total > 0.0));
        }
    }

    #[test]
    fn forward_only_ignores_backward_stream() {
        let (net, data, stats) = tiny_setup(false);
        let cfg = TrainConfig { bidirectional: false, ..tiny_cfg() };
        let out = train(&net, &data, &stats, &cfg, net.init(3), ExecMode::default(), |_, _| Ok(())).unwrap();
        assert!(out.history.iter().all(|m| m.l_c == 0.0));
    }

    #[test]
    fn non_finite_loss_aborts_with_dump() {
        let (net, data, stats) = tiny_setup(false);
        let mut params = net.init(4);
        params.tensors_mut()[0].data_mut()[0] = f32::NAN;
        let cfg = tiny_cfg();
        let mut skipped = 0;
        let batch = prepare_batch(&data, &stats, &net, &cfg, 0, &mut skipped);
        let mut state = TrainState::new(params, &cfg);
        match train_step(&net, &mut state, &batch, &cfg, ExecMode::Sequential) {
            Err(Error::NonFinite { step, dump }) => {
                assert_eq!(step, 0);
                let v: serde_json::Value = serde_json::from_str(&dump).unwrap();
                assert_eq!(v.as_array().unwrap().len(), 3);
            }
            other => panic!("expected non-finite abort, got {:?}", other.map(|m| m.total)),
        }
    }

    #[test]
    fn loss_gradient_is_a_descent_direction() {
        let (net, data, stats) = tiny_setup(true);
        let cfg = tiny_cfg();
        let mut skipped = 0;
        let batch = prepare_batch(&data, &stats, &net, &cfg, 0, &mut skipped);
        let p = net.init(5);
        let o = sample_gradient(&net, &p, &batch[0], &cfg, &cfg.loss).unwrap();
        let mut q = p.clone();
        let mut step = o.grad.clone();
        step.scale((-1e-3 / o.grad.squared_norm().sqrt()) as f32);
        q.add_assign(&step);
        let after = sample_gradient(&net, &q, &batch[0], &cfg, &cfg.loss).unwrap();
        assert!(after.total < o.total, "{} -> {}", o.total, after.total);
    }
}
