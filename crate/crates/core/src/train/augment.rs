//! Copy-on-use augmentations: horizontal mirror and time-scale variation.

use super::data::{SequenceData, Triplet};
use crate::world::window_mean_displacement;

/// Units that change sign under a left-right mirror: `v_y`, `w_x`, `w_z`.
pub const MIRROR_NEGATED_UNITS: [usize; 3] = [1, 3, 5];

pub fn flip_displacement(d: &[f64; 6]) -> [f64; 6] {
    let mut out = *d;
    for u in MIRROR_NEGATED_UNITS {
        out[u] = -out[u];
    }
    out
}

/// Mirrors all three frames and applies the mirror to the sensor.
pub fn augment_flip(t: &Triplet) -> Triplet {
    Triplet {
        prev: t.prev.flip_horizontal(),
        mid: t.mid.flip_horizontal(),
        next: t.next.flip_horizontal(),
        sensor: flip_displacement(&t.sensor),
    }
}

/// `(I_{t-k}, I_t, I_{t+k})` with the window-averaged displacement twist scaled by `k`.
///
/// Returns `None` and bumps `skipped` when the frames or the sensor window
/// fall outside the sequence.
pub fn augment_timescale(seq: &SequenceData, t: usize, k: usize, skipped: &mut usize) -> Option<Triplet> {
    let n = seq.frames.len();
    let window = window_mean_displacement(&seq.records, t);
    match window {
        Some(d) if k >= 1 && t >= k && t + k < n => Some(Triplet {
            prev: seq.frames[t - k].clone(),
            mid: seq.frames[t].clone(),
            next: seq.frames[t + k].clone(),
            sensor: d.map(|v| v * k as f64),
        }),
        _ => {
            *skipped += 1;
            None
        }
    }
}
