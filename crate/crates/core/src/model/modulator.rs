//! Sensor encoder and the fusion block that injects it into visual activations.

use super::layers::{concat, relu, relu_backward, split, tile, Conv2d, Geometry, Linear, PlaneConv};
use super::params::{ParamSet, Parameters};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Two fully-connected layers with ReLU lifting the sensor vector to `out_c` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorEncoder {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Activations kept for the backward pass of [`SensorEncoder`].
#[derive(Clone, Debug)]
pub struct SensorTrace<T: Real> {
    pub input: Vec<T>,
    pub hidden: Vec<T>,
    pub features: Vec<T>,
}

impl SensorEncoder {
    pub fn new(set: &mut ParamSet, units: usize, hidden: usize, out_c: usize) -> Self {
        SensorEncoder {
            fc1: set.linear("sensor.fc1", units, hidden),
            fc2: set.linear("sensor.fc2", hidden, out_c),
        }
    }

    pub fn units(&self) -> usize {
        self.fc1.in_f
    }

    pub fn channels(&self) -> usize {
        self.fc2.out_f
    }

    pub fn forward<T: Real>(&self, p: &Parameters<T>, s: &[T]) -> Result<SensorTrace<T>> {
        if s.len() != self.units() {
            return Err(Error::shape("encode_sensor", self.units(), s.len()));
        }
        let mut hidden = self.fc1.forward(p, s);
        relu(&mut hidden);
        let mut features = self.fc2.forward(p, &hidden);
        relu(&mut features);
        Ok(SensorTrace { input: s.to_vec(), hidden, features })
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the sensor vector.
    pub fn backward<T: Real>(&self, p: &Parameters<T>, tr: &SensorTrace<T>, d_feat: &[T], g: &mut Parameters<T>) -> Vec<T> {
        let mut d = d_feat.to_vec();
        relu_backward(&tr.features, &mut d);
        let mut dh = self.fc2.backward(p, &tr.hidden, &d, g);
        relu_backward(&tr.hidden, &mut dh);
        self.fc1.backward(p, &tr.input, &dh, g)
    }
}

/// Stack-with-sensor, conv3x3 + ReLU, then a residual block of two conv3x3 + ReLU.
/// No normalization layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Modulator {
    pub channels: usize,
    pub sensor_channels: usize,
    pub fuse: Conv2d,
    pub res_a: Conv2d,
    pub res_b: Conv2d,
}

/// Intermediate activations of one modulator application.
#[derive(Clone, Debug)]
pub struct ModulatorTrace<T: Real> {
    fused: Tensor<T>,
    res_a: Tensor<T>,
    res_b: Tensor<T>,
}

impl Modulator {
    pub fn new(set: &mut ParamSet, name: &str, channels: usize, sensor_channels: usize) -> Self {
        Modulator {
            channels,
            sensor_channels,
            fuse: set.conv(&format!("{name}.fuse"), channels + sensor_channels, channels, Geometry::SAME3),
            res_a: set.conv(&format!("{name}.res_a"), channels, channels, Geometry::SAME3),
            res_b: set.conv(&format!("{name}.res_b"), channels, channels, Geometry::SAME3),
        }
    }

    fn check_activation<T: Real>(&self, act: &Tensor<T>) -> Result<()> {
        if act.shape().len() != 3 || act.chw().0 != self.channels {
            return Err(Error::shape("modulate activation", [self.channels], act.shape()));
        }
        Ok(())
    }

    fn residual<T: Real>(&self, p: &Parameters<T>, mut fused: Tensor<T>) -> (Tensor<T>, ModulatorTrace<T>) {
        relu(fused.data_mut());
        let mut ra = self.res_a.forward(p, &fused);
        relu(ra.data_mut());
        let mut rb = self.res_b.forward(p, &ra);
        relu(rb.data_mut());
        let mut out = fused.clone();
        out.add_assign(&rb);
        (out, ModulatorTrace { fused, res_a: ra, res_b: rb })
    }

    fn residual_backward<T: Real>(
        &self,
        p: &Parameters<T>,
        tr: &ModulatorTrace<T>,
        dy: &Tensor<T>,
        g: &mut Parameters<T>,
    ) -> Tensor<T> {
        let mut d_rb = dy.clone();
        relu_backward(tr.res_b.data(), d_rb.data_mut());
        let mut d_ra = self.res_b.backward(p, &tr.res_a, &d_rb, g, true).expect("dx");
        relu_backward(tr.res_a.data(), d_ra.data_mut());
        let mut d_fused = self.res_a.backward(p, &tr.fused, &d_ra, g, true).expect("dx");
        d_fused.add_assign(dy);
        relu_backward(tr.fused.data(), d_fused.data_mut());
        d_fused
    }

    /// Fast path: the sensor plane is the tiling of `s`, so its conv is evaluated per tap.
    pub fn forward<T: Real>(&self, p: &Parameters<T>, act: &Tensor<T>, s: &[T]) -> Result<(Tensor<T>, ModulatorTrace<T>)> {
        self.check_activation(act)?;
        if s.len() != self.sensor_channels {
            return Err(Error::shape("modulate sensor", self.sensor_channels, s.len()));
        }
        let (_, h, w) = act.chw();
        let mut fused = self.fuse.forward_partial(p, act);
        PlaneConv { conv: &self.fuse, offset: self.channels }.forward(p, s, h, w, &mut fused);
        Ok(self.residual(p, fused))
    }

    /// Returns `(d activation, d s)`.
    pub fn backward<T: Real>(
        &self,
        p: &Parameters<T>,
        act: &Tensor<T>,
        s: &[T],
        tr: &ModulatorTrace<T>,
        dy: &Tensor<T>,
        g: &mut Parameters<T>,
    ) -> (Tensor<T>, Vec<T>) {
        let (_, h, w) = act.chw();
        let d_fused = self.residual_backward(p, tr, dy, g);
        let d_act = self.fuse.backward_partial(p, act, &d_fused, g, true).expect("dx");
        let ds = PlaneConv { conv: &self.fuse, offset: self.channels }.backward(p, s, h, w, &d_fused, g);
        (d_act, ds)
    }

    fn plane_input<T: Real>(&self, act: &Tensor<T>, plane: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_activation(act)?;
        let (_, h, w) = act.chw();
        if plane.shape() != [self.sensor_channels, h, w] {
            return Err(Error::shape("modulate sensor plane", [self.sensor_channels, h, w], plane.shape()));
        }
        Ok(concat(act, plane))
    }

    /// General path over an arbitrary (not necessarily constant) sensor plane.
    pub fn forward_plane<T: Real>(
        &self,
        p: &Parameters<T>,
        act: &Tensor<T>,
        plane: &Tensor<T>,
    ) -> Result<(Tensor<T>, ModulatorTrace<T>)> {
        let stacked = self.plane_input(act, plane)?;
        Ok(self.residual(p, self.fuse.forward(p, &stacked)))
    }

    /// Returns `(d activation, d plane)`.
    pub fn backward_plane<T: Real>(
        &self,
        p: &Parameters<T>,
        act: &Tensor<T>,
        plane: &Tensor<T>,
        tr: &ModulatorTrace<T>,
        dy: &Tensor<T>,
        g: &mut Parameters<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let stacked = self.plane_input(act, plane)?;
        let d_fused = self.residual_backward(p, tr, dy, g);
        let d_stacked = self.fuse.backward(p, &stacked, &d_fused, g, true).expect("dx");
        Ok(split(&d_stacked, self.channels))
    }
}

/// Embeds `s` and tiles the `C`-vector over an `h x w` grid.
pub fn encode_sensor<T: Real>(
    s: &[T],
    target_h: usize,
    target_w: usize,
    p: &Parameters<T>,
    enc: &SensorEncoder,
) -> Result<Tensor<T>> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::shape("encode_sensor target", "nonzero h, w", (target_h, target_w)));
    }
    Ok(tile(&enc.forward(p, s)?.features, target_h, target_w))
}

/// Fuses a sensor feature plane into an activation of the same spatial size.
pub fn modulate<T: Real>(act: &Tensor<T>, sensor_plane: &Tensor<T>, p: &Parameters<T>, m: &Modulator) -> Result<Tensor<T>> {
    Ok(m.forward_plane(p, act, sensor_plane)?.0)
}
