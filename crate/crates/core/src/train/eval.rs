//! Held-out metrics and sensor-driven view synthesis.

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::normalize::NormalizationStats;
use crate::diffops::warp_bilinear;
use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, ValidMask};
use crate::losses::{consistency_loss, valid_masks, LossWeights};
use crate::model::{Parameters, SensorFlowNet, SensorVector};
use crate::parallel::{self, ExecMode};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Mean endpoint error over GT-valid pixels of both streams.
    pub epe: Option<f64>,
    pub epe_forward: Option<f64>,
    pub epe_backward: Option<f64>,
    /// EPE restricted to pixels the predicted flows also mark consistent.
    pub epe_masked: Option<f64>,
    /// EPE of predicting zero flow on the same pixels.
    pub zero_flow_epe: Option<f64>,
    /// Plain mean absolute difference to the center frame, averaged over both syntheses.
    pub photometric_l1: f64,
    /// Mean per-triplet consistency loss with masks recomputed from the predictions.
    pub consistency: f64,
    pub mask_fraction: f64,
}

/// Sum of endpoint errors and pixel count over `mask`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpeSum {
    pub sum: f64,
    pub count: usize,
}

impl EpeSum {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    fn add(&mut self, o: EpeSum) {
        self.sum += o.sum;
        self.count += o.count;
    }
}

pub fn endpoint_error_sum(pred: &FlowField<f32>, gt: &FlowField<f32>, mask: &ValidMask) -> EpeSum {
    let mut out = EpeSum::default();
    for (i, (p, g)) in pred.data().chunks_exact(2).zip(gt.data().chunks_exact(2)).enumerate() {
        if mask.data()[i] != 0 {
            out.sum += (p[0] as f64 - g[0] as f64).hypot(p[1] as f64 - g[1] as f64);
            out.count += 1;
        }
    }
    out
}

/// Mean EPE over `mask`, `None` when the mask is empty.
pub fn endpoint_error(pred: &FlowField<f32>, gt: &FlowField<f32>, mask: &ValidMask) -> Result<Option<f64>> {
    pred.check_dims(gt, "endpoint_error")?;
    if mask.dims() != pred.dims() {
        return Err(Error::shape("endpoint_error mask", pred.dims(), mask.dims()));
    }
    Ok(endpoint_error_sum(pred, gt, mask).mean())
}

#[derive(Default)]
struct Partial {
    f: EpeSum,
    b: EpeSum,
    masked: EpeSum,
    zero: EpeSum,
    photometric: f64,
    consistency: f64,
    mask_fraction: f64,
}

/// Predicts both streams for every sample of `data` and pools the metrics.
pub fn evaluate(
    net: &SensorFlowNet,
    p: &Parameters,
    data: &Dataset,
    stats: &NormalizationStats,
    weights: &LossWeights,
    mode: ExecMode,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    let units = net.config().units;
    let partials = parallel::map_range(mode, data.len(), |i| -> Result<Partial> {
        let t = data.triplet(i);
        let s = stats.sensor_vector(&t.sensor, units);
        let (pf, pb) = net.predict_bidirectional(p, &t.prev, &t.next, &s)?;
        let (mf, mb) = valid_masks(&pf.flow, &pb.flow, weights)?;
        let mut out = Partial {
            photometric: 0.5
                * (warp_bilinear(&t.prev, &pf.flow)?.mean_abs_diff(&t.mid)?
                    + warp_bilinear(&t.next, &pb.flow)?.mean_abs_diff(&t.mid)?),
            consistency: consistency_loss(&pf.flow, &pb.flow, &mf, &mb, weights)? as f64,
            mask_fraction: 0.5 * (mf.fraction() + mb.fraction()),
            ..Partial::default()
        };
        if let Some(gt) = &data.samples[i].gt {
            let zero = FlowField::zeros(gt.flow_f.height(), gt.flow_f.width());
            out.f = endpoint_error_sum(&pf.flow, &gt.flow_f, &gt.mask_f);
            out.b = endpoint_error_sum(&pb.flow, &gt.flow_b, &gt.mask_b);
            out.masked = endpoint_error_sum(&pf.flow, &gt.flow_f, &gt.mask_f.and(&mf));
            out.masked.add(endpoint_error_sum(&pb.flow, &gt.flow_b, &gt.mask_b.and(&mb)));
            out.zero = endpoint_error_sum(&zero, &gt.flow_f, &gt.mask_f);
            out.zero.add(endpoint_error_sum(&zero, &gt.flow_b, &gt.mask_b));
        }
        Ok(out)
    });
    let mut acc = Partial::default();
    let mut parts = Vec::with_capacity(partials.len());
    for r in partials {
        parts.push(r?);
    }
    for q in &parts {
        acc.f.add(q.f);
        acc.b.add(q.b);
        acc.masked.add(q.masked);
        acc.zero.add(q.zero);
        acc.photometric += q.photometric;
        acc.consistency += q.consistency;
        acc.mask_fraction += q.mask_fraction;
    }
    let n = data.len() as f64;
    let has_gt = data.has_ground_truth();
    let mut both = acc.f;
    both.add(acc.b);
    Ok(EvalReport {
        samples: data.len(),
        epe: has_gt.then(|| both.mean()).flatten(),
        epe_forward: has_gt.then(|| acc.f.mean()).flatten(),
        epe_backward: has_gt.then(|| acc.b.mean()).flatten(),
        epe_masked: has_gt.then(|| acc.masked.mean()).flatten(),
        zero_flow_epe: has_gt.then(|| acc.zero.mean()).flatten(),
        photometric_l1: acc.photometric / n,
        consistency: acc.consistency / n,
        mask_fraction: acc.mask_fraction / n,
    })
}

/// Warps `image` by the flow predicted for sensor `k * s` (`k` signed, nonzero).
pub fn synthesize_view(
    net: &SensorFlowNet,
    p: &Parameters,
    image: &Frame<f32>,
    s: &SensorVector<f32>,
    k: i32,
) -> Result<Frame<f32>> {
    if k == 0 {
        return Err(Error::InvalidInput("view synthesis needs a nonzero time step".into()));
    }
    let flow = net.predict_flow(p, image, &s.scaled(k as f32))?.flow;
    warp_bilinear(image, &flow)
}

/// Mean photometric L1 of synthesizing `I_t` from `I_{t-k}` (with `k S`) and
/// `I_{t+k}` (with `-k S`), for each `k` in `steps`. Only centers where the
/// largest step is available are used, so every entry covers the same set.
pub fn view_synthesis_errors(
    net: &SensorFlowNet,
    p: &Parameters,
    data: &Dataset,
    stats: &NormalizationStats,
    steps: &[usize],
    mode: ExecMode,
) -> Result<Vec<f64>> {
    let kmax = steps.iter().copied().max().unwrap_or(1);
    let usable: Vec<usize> = (0..data.len())
        .filter(|&i| {
            let s = &data.samples[i];
            s.center >= kmax && s.center + kmax < data.sequences[s.sequence].frames.len()
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::InvalidInput(format!("no triplet center has frames {kmax} steps away")));
    }
    let units = net.config().units;
    let rows = parallel::map(mode, &usable, |&i| -> Result<Vec<f64>> {
        let s = &data.samples[i];
        let frames = &data.sequences[s.sequence].frames;
        let sv = stats.sensor_vector(&s.sensor, units);
        let target = &frames[s.center];
        steps
            .iter()
            .map(|&k| {
                let fwd = synthesize_view(net, p, &frames[s.center - k], &sv, k as i32)?.mean_abs_diff(target)?;
                let bwd = synthesize_view(net, p, &frames[s.center + k], &sv, -(k as i32))?.mean_abs_diff(target)?;
                Ok(0.5 * (fwd + bwd))
            })
            .collect()
    });
    let mut sums = vec![0.0; steps.len()];
    for r in rows {
        for (a, v) in sums.iter_mut().zip(r?) {
            *a += v;
        }
    }
    Ok(sums.into_iter().map(|v| v / usable.len() as f64).collect())
}
