//! Scale-only sensor normalization over the direction-symmetrized set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{SensorVector, UnitSubset};
use crate::world::{window_mean_displacement, SensorRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// Per-unit RMS of the displacement twists of `{+S, -S}`.
    pub scale: [f64; 6],
}

impl Default for NormalizationStats {
    fn default() -> Self {
        NormalizationStats { scale: [1.0; 6] }
    }
}

impl NormalizationStats {
    /// The symmetrized multiset has zero mean per unit, so its std is the RMS of `d`.
    pub fn from_displacements(d: &[[f64; 6]]) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::InvalidInput("sensor normalization needs at least one reading".into()));
        }
        let mut scale = [0.0; 6];
        for (u, s) in scale.iter_mut().enumerate() {
            let ms = d.iter().map(|r| r[u] * r[u]).sum::<f64>() / d.len() as f64;
            *s = ms.sqrt();
            if !(*s > 0.0) || !s.is_finite() {
                log::warn!("sensor unit {u} has zero variance; using scale 1");
                *s = 1.0;
            }
        }
        Ok(NormalizationStats { scale })
    }

    pub fn normalize(&self, d: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|u| d[u] / self.scale[u])
    }

    /// Normalized, unit-selected network input.
    pub fn sensor_vector(&self, d: &[f64; 6], units: UnitSubset) -> SensorVector<f32> {
        let n = self.normalize(d);
        SensorVector(units.indices().iter().map(|&i| n[i] as f32).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &serde_json::to_vec_pretty(self).expect("stats serialize"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let s: NormalizationStats = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("normalization stats {}: {e}", path.display())))?;
        if s.scale.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("normalization stats {}: scales must be positive", path.display())));
        }
        Ok(s)
    }
}

/// Scales from the displacement twists `twist * dt` of every reading.
pub fn normalize_sensors<'a>(records: impl IntoIterator<Item = &'a SensorRecord>) -> Result<NormalizationStats> {
    let d: Vec<[f64; 6]> = records.into_iter().map(SensorRecord::displacement).collect();
    NormalizationStats::from_displacements(&d)
}

/// Normalized mean displacement twist of readings `t - 1, t, t + 1`; `None` at a sequence boundary.
pub fn average_sensor_window(records: &[SensorRecord], t: usize, stats: &NormalizationStats) -> Option<[f64; 6]> {
    window_mean_displacement(records, t).map(|d| stats.normalize(&d))
}
