//! Encoder / sensor-modulated bottleneck / decoder flow network.

use super::config::{ModelConfig, SensorVector};
use super::layers::{concat, leaky_relu, leaky_relu_backward, relu, relu_backward, split, Conv2d, ConvTranspose2d, Geometry};
use super::modulator::{encode_sensor, Modulator, ModulatorTrace, SensorEncoder, SensorTrace};
use super::params::{ParamSet, Parameters};
use crate::error::{Error, Result};
use crate::field::{FlowField, Frame};
use crate::real::Real;
use crate::tensor::Tensor;

/// Extra low-resolution flow output, in units of its own (coarse) pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseFlow<T: Real = f32> {
    /// Downsampling factor relative to the input.
    pub factor: usize,
    pub flow: FlowField<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T: Real = f32> {
    pub flow: FlowField<T>,
    pub coarse: Vec<CoarseFlow<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Linear,
    Relu,
    LeakyRelu,
    Tile,
    Concat,
    ResidualAdd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerPath {
    Encoder,
    Modulator,
    Decoder,
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub path: LayerPath,
}

#[derive(Clone, Debug, PartialEq)]
struct CoarseHead {
    stage: usize,
    conv: Conv2d,
}

/// Everything the backward pass of one stream needs.
#[derive(Clone, Debug)]
pub struct StreamTrace<T: Real> {
    input: Tensor<T>,
    enc: Vec<Tensor<T>>,
    sensor: SensorTrace<T>,
    bottleneck: (Tensor<T>, ModulatorTrace<T>),
    skips: Vec<(Tensor<T>, ModulatorTrace<T>)>,
    ups: Vec<Tensor<T>>,
    cats: Vec<Tensor<T>>,
    dec: Vec<Tensor<T>>,
}

impl<T: Real> StreamTrace<T> {
    /// Fraction of positive units in each encoder, bottleneck and decoder activation.
    pub fn live_fractions(&self) -> Vec<f64> {
        let frac = |t: &Tensor<T>| t.data().iter().filter(|v| v.as_f64() > 0.0).count() as f64 / t.data().len().max(1) as f64;
        self.enc.iter().chain(std::iter::once(&self.bottleneck.0)).chain(&self.dec).map(frac).collect()
    }
}

/// Layer structure of the network. Weights live in a separate [`Parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct SensorFlowNet {
    cfg: ModelConfig,
    set: ParamSet,
    encoder: Vec<Conv2d>,
    sensor: SensorEncoder,
    bottleneck: Modulator,
    skip_mods: Vec<Modulator>,
    up: Vec<ConvTranspose2d>,
    fuse: Vec<Conv2d>,
    head: ConvTranspose2d,
    coarse_heads: Vec<CoarseHead>,
}

impl SensorFlowNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let ch = &cfg.encoder_channels;
        let n = ch.len();
        let c_s = cfg.bottleneck_channels();
        let mut set = ParamSet::default();
        let mut prev = cfg.input_channels();
        let encoder = ch
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = set.conv(&format!("enc{}", i + 1), prev, c, Geometry::DOWN3);
                prev = c;
                conv
            })
            .collect();
        let sensor = SensorEncoder::new(&mut set, cfg.units.len(), cfg.sensor_hidden, c_s);
        let bottleneck = Modulator::new(&mut set, "mod.bottleneck", c_s, c_s);
        let skip_mods = if cfg.skip_connections {
            (0..n - 1).map(|i| Modulator::new(&mut set, &format!("mod.skip{}", i + 1), ch[i], c_s)).collect()
        } else {
            Vec::new()
        };
        let mut up = Vec::new();
        let mut fuse = Vec::new();
        for i in (0..n - 1).rev() {
            up.push(set.conv_transpose(&format!("dec{}.up", i + 1), ch[i + 1], ch[i], Geometry::UP4));
            if cfg.skip_connections {
                fuse.push(set.conv(&format!("dec{}.fuse", i + 1), 2 * ch[i], ch[i], Geometry::SAME3));
            }
        }
        // stored shallow-first so that index i is the stage at resolution 1/2^(i+1)
        up.reverse();
        fuse.reverse();
        let head = set.conv_transpose("flow", ch[0], 2, Geometry::UP4);
        set.scale_init(head.weight, cfg.head_init_scale);
        let coarse_heads = if cfg.multiscale_outputs {
            (0..2)
                .map(|stage| {
                    let conv = set.conv(&format!("flow_div{}", 2usize << stage), ch[stage], 2, Geometry::SAME3);
                    set.scale_init(conv.weight, cfg.head_init_scale);
                    CoarseHead { stage, conv }
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(SensorFlowNet { cfg: cfg.clone(), set, encoder, sensor, bottleneck, skip_mods, up, fuse, head, coarse_heads })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_set(&self) -> &ParamSet {
        &self.set
    }

    pub fn sensor_encoder(&self) -> &SensorEncoder {
        &self.sensor
    }

    pub fn bottleneck_modulator(&self) -> &Modulator {
        &self.bottleneck
    }

    /// Downsampling factors and loss weights of the coarse outputs.
    pub fn coarse_factors(&self) -> Vec<usize> {
        self.coarse_heads.iter().map(|h| 2usize << h.stage).collect()
    }

    pub fn init<T: Real>(&self, seed: u64) -> Parameters<T> {
        self.set.init(seed)
    }

    /// Confirms that `p` was built for this network.
    pub fn check_parameters<T: Real>(&self, p: &Parameters<T>) -> Result<()> {
        let specs = self.set.specs();
        if p.tensors().len() != specs.len() {
            return Err(Error::shape("parameters", specs.len(), p.tensors().len()));
        }
        for ((spec, name), t) in specs.iter().zip(p.names()).zip(p.tensors()) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::shape("parameters", (&spec.name, &spec.shape), (name, t.shape())));
            }
        }
        Ok(())
    }

    /// Forward-order listing of every layer with the sub-network it belongs to.
    pub fn layer_graph(&self) -> Vec<LayerNode> {
        let mut g = Vec::new();
        let mut node = |name: String, kind, path| g.push(LayerNode { name, kind, path });
        for i in 0..self.encoder.len() {
            node(format!("enc{}", i + 1), LayerKind::Conv, LayerPath::Encoder);
            node(format!("enc{}.relu", i + 1), LayerKind::Relu, LayerPath::Encoder);
        }
        // the sensor encoder is shared, so it is listed once, under the bottleneck modulator
        let modulator = |node: &mut dyn FnMut(String, LayerKind, LayerPath), name: &str, with_encoder: bool| {
            let encoder = [
                ("sensor.fc1", LayerKind::Linear),
                ("sensor.relu1", LayerKind::Relu),
                ("sensor.fc2", LayerKind::Linear),
                ("sensor.relu2", LayerKind::Relu),
            ];
            let fusion = [
                ("tile", LayerKind::Tile),
                ("stack", LayerKind::Concat),
                ("fuse", LayerKind::Conv),
                ("fuse.relu", LayerKind::Relu),
                ("res_a", LayerKind::Conv),
                ("res_a.relu", LayerKind::Relu),
                ("res_b", LayerKind::Conv),
                ("res_b.relu", LayerKind::Relu),
                ("shortcut", LayerKind::ResidualAdd),
            ];
            let head = if with_encoder { &encoder[..] } else { &[] };
            for &(suffix, kind) in head.iter().chain(&fusion) {
                node(format!("{name}.{suffix}"), kind, LayerPath::Modulator);
            }
        };
        modulator(&mut node, "mod.bottleneck", true);
        for i in 0..self.skip_mods.len() {
            modulator(&mut node, &format!("mod.skip{}", i + 1), false);
        }
        let dec_act = if self.cfg.decoder_negative_slope > 0.0 { LayerKind::LeakyRelu } else { LayerKind::Relu };
        for i in (0..self.up.len()).rev() {
            node(format!("dec{}.up", i + 1), LayerKind::ConvTranspose, LayerPath::Decoder);
            node(format!("dec{}.up.relu", i + 1), dec_act, LayerPath::Decoder);
            if self.cfg.skip_connections {
                node(format!("dec{}.concat", i + 1), LayerKind::Concat, LayerPath::Decoder);
                node(format!("dec{}.fuse", i + 1), LayerKind::Conv, LayerPath::Decoder);
                node(format!("dec{}.fuse.relu", i + 1), dec_act, LayerPath::Decoder);
            }
        }
        for h in &self.coarse_heads {
            node(format!("flow_div{}", 2usize << h.stage), LayerKind::Conv, LayerPath::Head);
        }
        node("flow".into(), LayerKind::ConvTranspose, LayerPath::Head);
        g
    }

    fn input_tensor<T: Real>(&self, image: &Frame<T>) -> Result<Tensor<T>> {
        let (h, w) = image.dims();
        if (h, w) != (self.cfg.height, self.cfg.width) {
            return Err(Error::shape("predict_flow image", (self.cfg.height, self.cfg.width), (h, w)));
        }
        let mut data = image.to_chw().into_data();
        if self.cfg.coord_channels {
            let norm = |i: usize, n: usize| T::lit(2.0 * i as f64 / (n - 1).max(1) as f64 - 1.0);
            data.extend((0..h).flat_map(|_| (0..w).map(move |x| norm(x, w))));
            data.extend((0..h).flat_map(|y| std::iter::repeat_n(norm(y, h), w)));
        }
        Tensor::from_vec(&[self.cfg.input_channels(), h, w], data)
    }

    /// Sensor feature plane at the bottleneck resolution.
    pub fn encode_sensor<T: Real>(&self, p: &Parameters<T>, s: &SensorVector<T>) -> Result<Tensor<T>> {
        let div = 1usize << self.encoder.len();
        encode_sensor(s.values(), self.cfg.height / div, self.cfg.width / div, p, &self.sensor)
    }

    /// Forward pass keeping the activations for [`SensorFlowNet::backward`].
    pub fn forward<T: Real>(
        &self,
        p: &Parameters<T>,
        image: &Frame<T>,
        s: &SensorVector<T>,
    ) -> Result<(Prediction<T>, StreamTrace<T>)> {
        if s.len() != self.cfg.units.len() {
            return Err(Error::shape("predict_flow sensor", self.cfg.units.len(), s.len()));
        }
        let input = self.input_tensor(image)?;
        let mut enc: Vec<Tensor<T>> = Vec::with_capacity(self.encoder.len());
        for conv in &self.encoder {
            let mut y = conv.forward(p, enc.last().unwrap_or(&input));
            relu(y.data_mut());
            enc.push(y);
        }
        let sensor = self.sensor.forward(p, s.values())?;
        let n = enc.len();
        let bottleneck = self.bottleneck.forward(p, &enc[n - 1], &sensor.features)?;
        let skips = self
            .skip_mods
            .iter()
            .zip(&enc)
            .map(|(m, e)| m.forward(p, e, &sensor.features))
            .collect::<Result<Vec<_>>>()?;

        let slope = T::lit(self.cfg.decoder_negative_slope);
        let mut ups = vec![Tensor::zeros(&[0]); n - 1];
        let mut cats = Vec::new();
        let mut dec = vec![Tensor::zeros(&[0]); n - 1];
        for i in (0..n - 1).rev() {
            let below = if i == n - 2 { &bottleneck.0 } else { &dec[i + 1] };
            let mut u = self.up[i].forward(p, below);
            leaky_relu(u.data_mut(), slope);
            if self.cfg.skip_connections {
                let cat = concat(&u, &skips[i].0);
                let mut d = self.fuse[i].forward(p, &cat);
                leaky_relu(d.data_mut(), slope);
                dec[i] = d;
                cats.push(cat);
            } else {
                dec[i] = u.clone();
            }
            ups[i] = u;
        }
        // cats were pushed deepest-first
        cats.reverse();
        let top = if n >= 2 { &dec[0] } else { &bottleneck.0 };
        let flow = FlowField::from_chw(&self.head.forward(p, top))?;
        let coarse = self
            .coarse_heads
            .iter()
            .map(|h| {
                Ok(CoarseFlow { factor: 2usize << h.stage, flow: FlowField::from_chw(&h.conv.forward(p, &dec[h.stage]))? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((Prediction { flow, coarse }, StreamTrace { input, enc, sensor, bottleneck, skips, ups, cats, dec }))
    }

    /// Accumulates parameter gradients into `g`; returns the gradient w.r.t. the sensor vector.
    /// `d_coarse` follows the order of [`Prediction::coarse`] and may be empty.
    pub fn backward<T: Real>(
        &self,
        p: &Parameters<T>,
        tr: &StreamTrace<T>,
        d_flow: &FlowField<T>,
        d_coarse: &[FlowField<T>],
        g: &mut Parameters<T>,
    ) -> Result<Vec<T>> {
        let n = tr.enc.len();
        if d_flow.dims() != (self.cfg.height, self.cfg.width) {
            return Err(Error::shape("flow gradient", (self.cfg.height, self.cfg.width), d_flow.dims()));
        }
        if !d_coarse.is_empty() && d_coarse.len() != self.coarse_heads.len() {
            return Err(Error::shape("coarse gradients", self.coarse_heads.len(), d_coarse.len()));
        }
        let top = if n >= 2 { &tr.dec[0] } else { &tr.bottleneck.0 };
        let d_top = self.head.backward(p, top, &d_flow.to_chw(), g, true).expect("dx");

        let mut d_dec: Vec<Option<Tensor<T>>> = vec![None; n - 1];
        let mut d_bottleneck = None;
        if n >= 2 {
            d_dec[0] = Some(d_top);
        } else {
            d_bottleneck = Some(d_top);
        }
        for (h, dc) in self.coarse_heads.iter().zip(d_coarse) {
            let dx = h.conv.backward(p, &tr.dec[h.stage], &dc.to_chw(), g, true).expect("dx");
            accumulate(&mut d_dec[h.stage], dx);
        }

        let slope = T::lit(self.cfg.decoder_negative_slope);
        let mut d_skips: Vec<Tensor<T>> = Vec::new();
        for i in 0..n - 1 {
            let d = d_dec[i].take().expect("every decoder stage feeds the output");
            let mut d_u = if self.cfg.skip_connections {
                let mut d = d;
                leaky_relu_backward(tr.dec[i].data(), d.data_mut(), slope);
                let d_cat = self.fuse[i].backward(p, &tr.cats[i], &d, g, true).expect("dx");
                let (d_u, d_skip) = split(&d_cat, self.up[i].out_c);
                d_skips.push(d_skip);
                d_u
            } else {
                d
            };
            leaky_relu_backward(tr.ups[i].data(), d_u.data_mut(), slope);
            let below = if i == n - 2 { &tr.bottleneck.0 } else { &tr.dec[i + 1] };
            let d_below = self.up[i].backward(p, below, &d_u, g, true).expect("dx");
            if i == n - 2 {
                d_bottleneck = Some(d_below);
            } else {
                accumulate(&mut d_dec[i + 1], d_below);
            }
        }

        let feats = &tr.sensor.features;
        let mut d_feat = vec![T::zero(); feats.len()];
        let mut d_enc: Vec<Option<Tensor<T>>> = vec![None; n];
        let d_b = d_bottleneck.expect("bottleneck feeds the decoder");
        let (da, ds) = self.bottleneck.backward(p, &tr.enc[n - 1], feats, &tr.bottleneck.1, &d_b, g);
        accumulate(&mut d_enc[n - 1], da);
        add_into(&mut d_feat, &ds);
        for (i, ((m, (_, mt)), dsk)) in self.skip_mods.iter().zip(&tr.skips).zip(&d_skips).enumerate() {
            let (da, ds) = m.backward(p, &tr.enc[i], feats, mt, dsk, g);
            accumulate(&mut d_enc[i], da);
            add_into(&mut d_feat, &ds);
        }

        for i in (0..n).rev() {
            let Some(mut d) = d_enc[i].take() else { continue };
            relu_backward(tr.enc[i].data(), d.data_mut());
            let x = if i == 0 { &tr.input } else { &tr.enc[i - 1] };
            if let Some(dx) = self.encoder[i].backward(p, x, &d, g, i > 0) {
                accumulate(&mut d_enc[i - 1], dx);
            }
        }
        Ok(self.sensor.backward(p, &tr.sensor, &d_feat, g))
    }

    pub fn predict_flow<T: Real>(&self, p: &Parameters<T>, image: &Frame<T>, s: &SensorVector<T>) -> Result<Prediction<T>> {
        Ok(self.forward(p, image, s)?.0)
    }

    /// Weight-tied two-stream prediction: `(f(prev, s+), f(next, -s+))`.
    pub fn predict_bidirectional<T: Real>(
        &self,
        p: &Parameters<T>,
        prev: &Frame<T>,
        next: &Frame<T>,
        s_plus: &SensorVector<T>,
    ) -> Result<(Prediction<T>, Prediction<T>)> {
        if prev.dims() != next.dims() {
            return Err(Error::shape("predict_bidirectional", prev.dims(), next.dims()));
        }
        Ok((self.predict_flow(p, prev, s_plus)?, self.predict_flow(p, next, &-s_plus)?))
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, t: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&t),
        None => *slot = Some(t),
    }
}

fn add_into<T: Real>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Builds the network for `cfg` and draws its initial weights.
pub fn init_parameters(cfg: &ModelConfig, seed: u64) -> Result<Parameters> {
    Ok(SensorFlowNet::new(cfg)?.init(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UnitSubset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(skip: bool, multiscale: bool) -> ModelConfig {
        ModelConfig {
            height: 16,
            width: 24,
            encoder_channels: vec![4, 6, 8],
            skip_connections: skip,
            multiscale_outputs: multiscale,
            sensor_hidden: 5,
            ..ModelConfig::default()
        }
    }

    fn frame(h: usize, w: usize, seed: u64) -> Frame<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn sensor(seed: u64) -> SensorVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SensorVector((0..6).map(|_| rng.random_range(-1.5..1.5)).collect())
    }

    #[test]
    fn output_is_finite_full_resolution() {
        for (skip, ms) in [(false, false), (true, false), (true, true)] {
            let cfg = small(skip, ms);
            let net = SensorFlowNet::new(&cfg).unwrap();
            let p = net.init::<f64>(1);
            let out = net.predict_flow(&p, &frame(16, 24, 2), &sensor(3)).unwrap();
            assert_eq!(out.flow.dims(), (16, 24));
            assert!(out.flow.all_finite());
            if ms {
                assert_eq!(out.coarse.iter().map(|c| (c.factor, c.flow.dims())).collect::<Vec<_>>(), [(2, (8, 12)), (4, (4, 6))]);
            } else {
                assert!(out.coarse.is_empty());
            }
        }
        let net = SensorFlowNet::new(&ModelConfig::default()).unwrap();
        let p = net.init::<f32>(0);
        let out = net.predict_flow(&p, &Frame::filled(64, 192, [0.5; 3]), &SensorVector(vec![0.3; 6])).unwrap();
        assert_eq!(out.flow.dims(), (64, 192));
        assert!(out.flow.all_finite());
    }

    #[test]
    fn sensor_conditioning_is_live() {
        let net = SensorFlowNet::new(&small(false, false)).unwrap();
        let p = net.init::<f64>(4);
        let img = frame(16, 24, 5);
        let s = sensor(6);
        let a = net.predict_flow(&p, &img, &s).unwrap().flow;
        let b = net.predict_flow(&p, &img, &-&s).unwrap().flow;
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn bidirectional_identical_inputs_give_identical_outputs() {
        let net = SensorFlowNet::new(&small(true, false)).unwrap();
        let p = net.init::<f64>(7);
        let img = frame(16, 24, 8);
        let (f, b) = net.predict_bidirectional(&p, &img, &img, &SensorVector::zeros(6)).unwrap();
        assert_eq!(f, b);
    }

    #[test]
    fn swapping_frames_and_negating_sensor_swaps_outputs() {
        let net = SensorFlowNet::new(&small(true, true)).unwrap();
        let p = net.init::<f64>(9);
        let (prev, next) = (frame(16, 24, 10), frame(16, 24, 11));
        let s = sensor(12);
        let (f, b) = net.predict_bidirectional(&p, &prev, &next, &s).unwrap();
        let (f2, b2) = net.predict_bidirectional(&p, &next, &prev, &-&s).unwrap();
        assert_eq!(f, b2);
        assert_eq!(b, f2);
    }

    #[test]
    fn both_streams_share_one_parameter_set() {
        // The backward stream must equal an explicit single-stream call with -s on the same weights.
        let net = SensorFlowNet::new(&small(false, false)).unwrap();
        let p = net.init::<f64>(13);
        let (prev, next) = (frame(16, 24, 14), frame(16, 24, 15));
        let s = sensor(16);
        let (_, b) = net.predict_bidirectional(&p, &prev, &next, &s).unwrap();
        assert_eq!(b, net.predict_flow(&p, &next, &-&s).unwrap());
        // and perturbing a weight moves both streams
        let mut q = p.clone();
        q.get_mut(net.encoder[0].weight).data_mut()[0] += 0.5;
        let (f1, b1) = net.predict_bidirectional(&q, &prev, &next, &s).unwrap();
        let (f0, b0) = net.predict_bidirectional(&p, &prev, &next, &s).unwrap();
        assert_ne!(f1, f0);
        assert_ne!(b1, b0);
    }

    #[test]
    fn modulator_path_has_no_normalization() {
        for (skip, ms) in [(false, false), (true, true)] {
            let net = SensorFlowNet::new(&small(skip, ms)).unwrap();
            let graph = net.layer_graph();
            let mods: Vec<_> = graph.iter().filter(|n| n.path == LayerPath::Modulator).collect();
            assert_eq!(mods.len(), 4 + 9 * (1 + net.skip_mods.len()));
            for m in mods {
                assert!(
                    matches!(
                        m.kind,
                        LayerKind::Linear
                            | LayerKind::Relu
                            | LayerKind::Tile
                            | LayerKind::Concat
                            | LayerKind::Conv
                            | LayerKind::ResidualAdd
                    ),
                    "{m:?}"
                );
            }
            // every declared tensor is referenced by a layer in the graph
            let names: Vec<_> = graph.iter().map(|n| n.name.as_str()).collect();
            for spec in net.param_set().specs() {
                let layer = spec.name.rsplit_once('.').unwrap().0;
                let layer = layer.strip_prefix("sensor.").map_or(layer.to_string(), |f| format!("mod.bottleneck.sensor.{f}"));
                assert!(names.contains(&layer.as_str()), "{layer}");
            }
        }
    }

    #[test]
    fn skip_variant_shares_sensor_encoder() {
        let net = SensorFlowNet::new(&small(true, false)).unwrap();
        let sensor_tensors: Vec<_> =
            net.param_set().specs().iter().filter(|s| s.name.starts_with("sensor.")).map(|s| s.name.clone()).collect();
        assert_eq!(sensor_tensors, ["sensor.fc1.weight", "sensor.fc1.bias", "sensor.fc2.weight", "sensor.fc2.bias"]);
        assert_eq!(net.skip_mods.len(), 2);
        assert!(net.skip_mods.iter().all(|m| m.sensor_channels == 8));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::default();
        let a = init_parameters(&cfg, 5).unwrap();
        let b = init_parameters(&cfg, 5).unwrap();
        let c = init_parameters(&cfg, 6).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(!a.bitwise_eq(&c));
        assert!(a.all_finite());
    }

    #[test]
    fn init_statistics_follow_fan_in() {
        let cfg = ModelConfig::default();
        let net = SensorFlowNet::new(&cfg).unwrap();
        let p = net.init::<f64>(3);
        let w = p.get(net.bottleneck.res_a.weight).data();
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let want = 2.0 / (96.0 * 9.0);
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
        let hw = p.get(net.head.weight).data();
        let hvar = hw.iter().map(|v| v * v).sum::<f64>() / hw.len() as f64;
        let hwant = 0.01 * 2.0 / (16.0 * 4.0);
        assert!((hvar / hwant - 1.0).abs() < 0.2);
        assert!(p.get(net.head.bias).data().iter().all(|&b| b == 0.0));
        let params = p.num_scalars();
        assert!((100_000..600_000).contains(&params), "{params}");
    }

    #[test]
    fn shape_errors_are_reported() {
        let net = SensorFlowNet::new(&small(false, false)).unwrap();
        let p = net.init::<f64>(1);
        assert!(net.predict_flow(&p, &frame(16, 20, 1), &sensor(1)).is_err());
        assert!(net.predict_flow(&p, &frame(16, 24, 1), &SensorVector(vec![0.0; 4])).is_err());
        assert!(net.predict_bidirectional(&p, &frame(16, 24, 1), &frame(8, 24, 1), &sensor(1)).is_err());
        let other = SensorFlowNet::new(&small(true, false)).unwrap().init::<f64>(1);
        assert!(net.check_parameters(&other).is_err());
        assert!(net.check_parameters(&p).is_ok());
        let bad = ModelConfig { height: 20, ..small(false, false) };
        assert!(SensorFlowNet::new(&bad).is_err());
        assert!(SensorFlowNet::new(&small(false, true)).is_err());
    }

    #[test]
    fn unit_subset_sets_sensor_width() {
        for units in [UnitSubset::All6, UnitSubset::VxWxWyWz, UnitSubset::VxWz] {
            let cfg = ModelConfig { units, ..small(false, false) };
            let net = SensorFlowNet::new(&cfg).unwrap();
            assert_eq!(net.sensor_encoder().units(), units.len());
        }
    }

    /// Random linear functional of all outputs; its gradient checks backward against central differences.
    #[test]
    fn backward_matches_finite_differences() {
        for (skip, ms) in [(false, false), (true, true)] {
            let cfg = ModelConfig { coord_channels: true, ..small(skip, ms) };
            let net = SensorFlowNet::new(&cfg).unwrap();
            let p = net.init::<f64>(21);
            let img = frame(16, 24, 22);
            let s = sensor(23);
            let mut rng = ChaCha8Rng::seed_from_u64(24);
            let (pred, tr) = net.forward(&p, &img, &s).unwrap();
            let wf = FlowField::<f64>::from_fn(16, 24, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let wc: Vec<FlowField<f64>> = pred
                .coarse
                .iter()
                .map(|c| {
                    let (h, w) = c.flow.dims();
                    FlowField::from_fn(h, w, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                })
                .collect();
            let objective = |q: &Parameters<f64>, s: &SensorVector<f64>| {
                let pr = net.predict_flow(q, &img, s).unwrap();
                let mut v: f64 = pr.flow.data().iter().zip(wf.data()).map(|(a, b)| a * b).sum();
                for (c, w) in pr.coarse.iter().zip(&wc) {
                    v += c.flow.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
                }
                v
            };
            let mut g = p.zeros_like();
            let ds = net.backward(&p, &tr, &wf, &wc, &mut g).unwrap();
            let h = 1e-5;
            let total = p.num_scalars();
            for _ in 0..40 {
                let (id, k) = p.locate(rng.random_range(0..total)).unwrap();
                let mut q = p.clone();
                q.get_mut(id).data_mut()[k] += h;
                let up = objective(&q, &s);
                q.get_mut(id).data_mut()[k] -= 2.0 * h;
                let down = objective(&q, &s);
                let num = (up - down) / (2.0 * h);
                let ana = g.get(id).data()[k];
                assert!((num - ana).abs() <= 1e-5 * num.abs().max(1.0), "{} [{k}]: {ana} vs {num}", p.names()[id.0]);
            }
            for i in 0..6 {
                let mut sp = s.clone();
                sp.0[i] += h;
                let mut sm = s.clone();
                sm.0[i] -= h;
                let num = (objective(&p, &sp) - objective(&p, &sm)) / (2.0 * h);
                assert!((num - ds[i]).abs() <= 1e-5 * num.abs().max(1.0), "ds[{i}]: {} vs {num}", ds[i]);
            }
        }
    }
}
