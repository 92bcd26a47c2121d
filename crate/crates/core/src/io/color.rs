//! Middlebury color-wheel flow visualization.

use crate::field::{FlowField, Frame};

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;

pub const COLOR_WHEEL_BINS: usize = RY + YG + GC + CB + BM + MR;

fn color_wheel() -> [[f64; 3]; COLOR_WHEEL_BINS] {
    let mut wheel = [[0.0; 3]; COLOR_WHEEL_BINS];
    let mut i = 0;
    let mut ramp = |n: usize, f: &dyn Fn(f64) -> [f64; 3]| {
        for k in 0..n {
            wheel[i] = f(k as f64 / n as f64);
            i += 1;
        }
    };
    ramp(RY, &|t| [1.0, t, 0.0]);
    ramp(YG, &|t| [1.0 - t, 1.0, 0.0]);
    ramp(GC, &|t| [0.0, 1.0, t]);
    ramp(CB, &|t| [0.0, 1.0 - t, 1.0]);
    ramp(BM, &|t| [t, 0.0, 1.0]);
    ramp(MR, &|t| [1.0, 0.0, 1.0 - t]);
    wheel
}

/// Continuous wheel coordinate in `[0, COLOR_WHEEL_BINS - 1]` encoding the direction of `(u, v)`.
pub fn wheel_position(u: f64, v: f64) -> f64 {
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    (a + 1.0) / 2.0 * (COLOR_WHEEL_BINS - 1) as f64
}

/// Renders flow direction as hue and magnitude (relative to `max_mag`) as saturation.
///
/// `max_mag` defaults to the largest magnitude in the field. Zero flow is white.
pub fn flow_to_color(flow: &FlowField<f32>, max_mag: Option<f64>) -> Frame<f32> {
    let wheel = color_wheel();
    let max = max_mag.unwrap_or_else(|| flow.max_magnitude());
    let norm = if max > 0.0 { max } else { 1.0 };
    Frame::from_fn(flow.height(), flow.width(), |x, y| {
        let [u, v] = flow.pixel(x, y).map(|c| c as f64);
        let rad = u.hypot(v) / norm;
        let fk = wheel_position(u, v);
        let k0 = fk.floor() as usize % COLOR_WHEEL_BINS;
        let k1 = (k0 + 1) % COLOR_WHEEL_BINS;
        let f = fk - fk.floor();
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            let col = if rad <= 1.0 {
                1.0 - rad * (1.0 - col)
            } else {
                col * 0.75
            };
            out[c] = col as f32;
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowField::zeros(3, 4), None);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn opposite_directions_sit_half_a_wheel_apart() {
        for m in [0.5, 3.0, 40.0] {
            let a = wheel_position(m, 0.0);
            let b = wheel_position(-m, 0.0);
            assert!(((a - b).abs() - (COLOR_WHEEL_BINS - 1) as f64 / 2.0).abs() < 1e-12);
            let up = wheel_position(0.0, m);
            let down = wheel_position(0.0, -m);
            assert!(((up - down).abs() - (COLOR_WHEEL_BINS - 1) as f64 / 2.0).abs() < 1e-12);
        }
        let f: FlowField<f32> = Field::from_fn(1, 2, |x, _| if x == 0 { [2.0, 0.0] } else { [-2.0, 0.0] });
        let img = flow_to_color(&f, None);
        assert_ne!(img.pixel(0, 0), img.pixel(1, 0));
    }

    #[test]
    fn scale_cancels_with_max() {
        let f: FlowField<f32> = Field::from_fn(5, 6, |x, y| [x as f32 - 2.5, 1.5 - y as f32]);
        let a = flow_to_color(&f, Some(3.0));
        let b = flow_to_color(&f.scaled(2.0), Some(6.0));
        assert_eq!(a, b);
        assert_eq!(flow_to_color(&f, None), flow_to_color(&f.scaled(2.0), None));
    }
}
