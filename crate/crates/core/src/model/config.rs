use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Which of the six motion units `(v_x, v_y, v_z, w_x, w_y, w_z)` the network sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSubset {
    #[default]
    All6,
    VxWxWyWz,
    VxWz,
}

impl UnitSubset {
    pub fn indices(self) -> &'static [usize] {
        match self {
            UnitSubset::All6 => &[0, 1, 2, 3, 4, 5],
            UnitSubset::VxWxWyWz => &[0, 3, 4, 5],
            UnitSubset::VxWz => &[0, 5],
        }
    }

    pub fn len(self) -> usize {
        self.indices().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// Picks the configured units out of a full 6-vector.
    pub fn select<T: Real>(self, full: &[T; 6]) -> SensorVector<T> {
        SensorVector(self.indices().iter().map(|&i| full[i]).collect())
    }
}

/// Normalized displacement twist restricted to a unit subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorVector<T: Real = f32>(pub Vec<T>);

impl<T: Real> SensorVector<T> {
    pub fn zeros(n: usize) -> Self {
        SensorVector(vec![T::zero(); n])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, k: T) -> Self {
        SensorVector(self.0.iter().map(|&v| v * k).collect())
    }

    pub fn cast<U: Real>(&self) -> SensorVector<U> {
        SensorVector(self.0.iter().map(|v| U::lit(v.as_f64())).collect())
    }
}

impl<T: Real> std::ops::Neg for &SensorVector<T> {
    type Output = SensorVector<T>;

    fn neg(self) -> SensorVector<T> {
        SensorVector(self.0.iter().map(|&v| -v).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Output channels of the stride-2 encoder stages; the last one is the bottleneck.
    pub encoder_channels: Vec<usize>,
    /// Layer-symmetric skips with a modulator at each junction.
    pub skip_connections: bool,
    /// Extra half- and quarter-resolution flow heads (skip variant only).
    pub multiscale_outputs: bool,
    /// Width of the first sensor-encoder layer. The second matches the bottleneck.
    pub sensor_hidden: usize,
    pub units: UnitSubset,
    /// Append normalized pixel-coordinate channels to the input image.
    pub coord_channels: bool,
    /// Init std multiplier of the final flow layer.
    pub head_init_scale: f64,
    /// Negative-side slope of the decoder activations; 0 gives plain ReLUs.
    pub decoder_negative_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 192,
            encoder_channels: vec![16, 32, 64, 96],
            skip_connections: false,
            multiscale_outputs: false,
            sensor_hidden: 32,
            units: UnitSubset::All6,
            coord_channels: true,
            head_init_scale: 0.1,
            decoder_negative_slope: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.encoder_channels.last().expect("validated")
    }

    pub fn input_channels(&self) -> usize {
        if self.coord_channels {
            5
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages();
        if n == 0 || self.encoder_channels.contains(&0) {
            return Err(Error::Config("encoder_channels must be a nonempty list of positive widths".into()));
        }
        let div = 1usize << n;
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return Err(Error::Config(format!(
                "input {}x{} must be a positive multiple of {div} for {n} stride-2 stages",
                self.height, self.width
            )));
        }
        if self.sensor_hidden == 0 {
            return Err(Error::Config("sensor_hidden must be positive".into()));
        }
        if self.multiscale_outputs && (!self.skip_connections || n < 3) {
            return Err(Error::Config(
                "multiscale_outputs needs skip_connections and at least 3 encoder stages".into(),
            ));
        }
        if !(self.head_init_scale > 0.0) {
            return Err(Error::Config("head_init_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.decoder_negative_slope) {
            return Err(Error::Config("decoder_negative_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
