//! Dataset manifest: the index `gen` writes and `train`/`eval` read.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::CameraIntrinsics;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub name: String,
    /// Frame PNGs in temporal order, relative to the manifest directory.
    pub frames: Vec<String>,
    /// JSON-lines sensor records, one per frame.
    pub sensors: String,
    pub split: String,
}

/// One `(I_{t-1}, I_t, I_{t+1})` sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletEntry {
    pub sequence: usize,
    /// Frame index of `I_t` inside its sequence.
    pub center: usize,
    pub frames: [String; 3],
    /// Mean displacement twist `[v_x, v_y, v_z, w_x, w_y, w_z] * dt` over the three readings.
    pub sensor: [f64; 6],
    pub dt: f64,
    /// Ground truth on the `I_t` grid toward `I_{t-1}` (forward stream).
    pub gt_flow_f: Option<String>,
    /// Ground truth on the `I_t` grid toward `I_{t+1}` (backward stream).
    pub gt_flow_b: Option<String>,
    pub mask_f: Option<String>,
    pub mask_b: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub camera: CameraIntrinsics,
    pub sequences: Vec<SequenceEntry>,
    pub triplets: Vec<TripletEntry>,
    /// Optional normalization-stats JSON, relative to the manifest directory.
    #[serde(default)]
    pub normalization: Option<String>,
}

impl DatasetManifest {
    pub fn new(camera: CameraIntrinsics) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            camera,
            sequences: Vec::new(),
            triplets: Vec::new(),
            normalization: None,
        }
    }

    /// Appends `other`, re-rooting its relative paths under `prefix`.
    pub fn merge(&mut self, other: DatasetManifest, prefix: &str) {
        let join = |p: &str| {
            if prefix.is_empty() {
                p.to_string()
            } else {
                format!("{prefix}/{p}")
            }
        };
        let offset = self.sequences.len();
        for mut s in other.sequences {
            s.frames = s.frames.iter().map(|p| join(p)).collect();
            s.sensors = join(&s.sensors);
            self.sequences.push(s);
        }
        for mut t in other.triplets {
            t.sequence += offset;
            t.frames = t.frames.clone().map(|p| join(&p));
            for p in [&mut t.gt_flow_f, &mut t.gt_flow_b, &mut t.mask_f, &mut t.mask_b]
                .into_iter()
                .flatten()
            {
                *p = join(p);
            }
            self.triplets.push(t);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        super::write_atomic(path, &json)
    }

    /// Loads and checks version and that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = super::read_bytes(path)?;
        let err = |message: String| Error::Manifest {
            path: path.into(),
            message,
        };
        let m: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(err(format!(
                "version {} does not match supported version {MANIFEST_VERSION}",
                m.version
            )));
        }
        let root = path.parent().unwrap_or(Path::new(""));
        for rel in m.referenced_files() {
            if !root.join(rel).exists() {
                return Err(err(format!("referenced file {rel} is missing")));
            }
        }
        for t in &m.triplets {
            if t.sequence >= m.sequences.len() {
                return Err(err(format!("triplet refers to unknown sequence {}", t.sequence)));
            }
        }
        Ok(m)
    }

    fn referenced_files(&self) -> impl Iterator<Item = &String> {
        let seq = self
            .sequences
            .iter()
            .flat_map(|s| s.frames.iter().chain(std::iter::once(&s.sensors)));
        let trip = self.triplets.iter().flat_map(|t| {
            t.frames
                .iter()
                .chain([&t.gt_flow_f, &t.gt_flow_b, &t.mask_f, &t.mask_b].into_iter().flatten())
        });
        seq.chain(trip).chain(self.normalization.iter())
    }

    pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new("")).join(rel)
    }
}
