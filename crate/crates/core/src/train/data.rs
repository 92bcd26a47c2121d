//! In-memory triplet datasets built from rendered sequences or a manifest.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, ValidMask};
use crate::io::{self, DatasetManifest};
use crate::parallel::{self, ExecMode};
use crate::world::{read_sensor_records, window_mean_displacement, Sequence, SensorRecord};

#[derive(Clone, Debug)]
pub struct SequenceData {
    pub name: String,
    pub frames: Vec<Frame<f32>>,
    pub records: Vec<SensorRecord>,
}

/// Ground truth on the center grid toward each neighbor.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub flow_f: FlowField<f32>,
    pub mask_f: ValidMask,
    pub flow_b: FlowField<f32>,
    pub mask_b: ValidMask,
}

/// One triplet center inside a sequence.
#[derive(Clone, Debug)]
pub struct Sample {
    pub sequence: usize,
    pub center: usize,
    /// Mean displacement twist of readings `t - 1, t, t + 1` (not normalized).
    pub sensor: [f64; 6],
    pub gt: Option<GroundTruth>,
}

/// Frames `(I_{t-k}, I_t, I_{t+k})` with the displacement twist the network should see.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub prev: Frame<f32>,
    pub mid: Frame<f32>,
    pub next: Frame<f32>,
    pub sensor: [f64; 6],
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sequences: Vec<SequenceData>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Every interior center of every sequence, optionally with oracle ground truth.
    pub fn from_sequences(seqs: &[Sequence], with_gt: bool, mode: ExecMode) -> Self {
        let mut data = Dataset::default();
        for (si, seq) in seqs.iter().enumerate() {
            data.sequences.push(SequenceData {
                name: format!("seq_{si:04}"),
                frames: seq.frames.clone(),
                records: seq.records.clone(),
            });
            let centers: Vec<usize> = seq.triplet_centers().collect();
            let gts = parallel::map(mode, &centers, |&t| {
                with_gt.then(|| {
                    let (flow_f, mask_f) = seq.gt_flow(t, t - 1);
                    let (flow_b, mask_b) = seq.gt_flow(t, t + 1);
                    GroundTruth { flow_f, mask_f, flow_b, mask_b }
                })
            });
            for (t, gt) in centers.into_iter().zip(gts) {
                let sensor = window_mean_displacement(&seq.records, t).expect("interior center");
                data.samples.push(Sample { sequence: si, center: t, sensor, gt });
            }
        }
        data
    }

    /// Loads the triplets of `manifest_path`, keeping only sequences of `split` when given.
    pub fn from_manifest(manifest_path: &Path, split: Option<&str>) -> Result<Self> {
        let m = DatasetManifest::load(manifest_path)?;
        let resolve = |rel: &str| DatasetManifest::resolve(manifest_path, rel);
        let keep: Vec<bool> = m.sequences.iter().map(|s| split.is_none_or(|sp| s.split == sp)).collect();
        let mut remap = vec![None; m.sequences.len()];
        let mut data = Dataset::default();
        for (i, s) in m.sequences.iter().enumerate() {
            if !keep[i] {
                continue;
            }
            let frames = s.frames.iter().map(|f| io::read_frame_png(&resolve(f))).collect::<Result<Vec<_>>>()?;
            let records = read_sensor_records(&resolve(&s.sensors))?;
            if records.len() != frames.len() {
                return Err(Error::Manifest {
                    path: manifest_path.into(),
                    message: format!("sequence {}: {} frames but {} sensor records", s.name, frames.len(), records.len()),
                });
            }
            remap[i] = Some(data.sequences.len());
            data.sequences.push(SequenceData { name: s.name.clone(), frames, records });
        }
        for t in &m.triplets {
            let Some(seq) = remap[t.sequence] else { continue };
            let n = data.sequences[seq].frames.len();
            if t.center == 0 || t.center + 1 >= n {
                return Err(Error::Manifest {
                    path: manifest_path.into(),
                    message: format!("triplet center {} outside sequence of {n} frames", t.center),
                });
            }
            let gt = match (&t.gt_flow_f, &t.mask_f, &t.gt_flow_b, &t.mask_b) {
                (Some(ff), Some(mf), Some(fb), Some(mb)) => Some(GroundTruth {
                    flow_f: io::read_flo(&resolve(ff))?,
                    mask_f: io::read_mask_png(&resolve(mf))?,
                    flow_b: io::read_flo(&resolve(fb))?,
                    mask_b: io::read_mask_png(&resolve(mb))?,
                }),
                _ => None,
            };
            data.samples.push(Sample { sequence: seq, center: t.center, sensor: t.sensor, gt });
        }
        if data.samples.is_empty() {
            return Err(Error::Manifest {
                path: manifest_path.into(),
                message: format!("no triplets{}", split.map_or(String::new(), |s| format!(" in split {s}"))),
            });
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.gt.is_some())
    }

    /// The standard one-step triplet of sample `i`.
    pub fn triplet(&self, i: usize) -> Triplet {
        let s = &self.samples[i];
        let frames = &self.sequences[s.sequence].frames;
        Triplet {
            prev: frames[s.center - 1].clone(),
            mid: frames[s.center].clone(),
            next: frames[s.center + 1].clone(),
            sensor: s.sensor,
        }
    }

    /// Every sensor reading of every sequence.
    pub fn records(&self) -> impl Iterator<Item = &SensorRecord> {
        self.sequences.iter().flat_map(|s| &s.records)
    }
}
