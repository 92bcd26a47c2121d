use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, ConvTranspose2d, Geometry, Linear};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of one tensor inside [`Parameters`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Normal with std `scale * sqrt(2 / fan_in)`.
    He { fan_in: usize, scale: f64 },
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Declares the tensors of a network while its layers are built.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    specs: Vec<ParamSpec>,
}

impl ParamSet {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    pub fn conv(&mut self, name: &str, in_c: usize, out_c: usize, geo: Geometry) -> Conv2d {
        let fan_in = in_c * geo.k * geo.k;
        Conv2d {
            in_c,
            out_c,
            geo,
            weight: self.push(format!("{name}.weight"), vec![out_c, fan_in], Init::He { fan_in, scale: 1.0 }),
            bias: self.push(format!("{name}.bias"), vec![out_c], Init::Zero),
        }
    }

    pub fn conv_transpose(&mut self, name: &str, in_c: usize, out_c: usize, geo: Geometry) -> ConvTranspose2d {
        let per_axis = geo.k / geo.stride;
        let fan_in = in_c * per_axis * per_axis;
        ConvTranspose2d {
            in_c,
            out_c,
            geo,
            weight: self.push(
                format!("{name}.weight"),
                vec![in_c, out_c * geo.k * geo.k],
                Init::He { fan_in, scale: 1.0 },
            ),
            bias: self.push(format!("{name}.bias"), vec![out_c], Init::Zero),
        }
    }

    pub fn linear(&mut self, name: &str, in_f: usize, out_f: usize) -> Linear {
        Linear {
            in_f,
            out_f,
            weight: self.push(format!("{name}.weight"), vec![out_f, in_f], Init::He { fan_in: in_f, scale: 1.0 }),
            bias: self.push(format!("{name}.bias"), vec![out_f], Init::Zero),
        }
    }

    /// Multiplies the init std of `id` by `k`.
    pub fn scale_init(&mut self, id: ParamId, k: f64) {
        if let Init::He { scale, .. } = &mut self.specs[id.0].init {
            *scale *= k;
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn zeros<T: Real>(&self) -> Parameters<T> {
        Parameters {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            tensors: self.specs.iter().map(|s| Tensor::zeros(&s.shape)).collect(),
        }
    }

    /// He-initialized weights and zero biases, drawn in declaration order from `seed`.
    pub fn init<T: Real>(&self, seed: u64) -> Parameters<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = self.zeros::<T>();
        for (spec, t) in self.specs.iter().zip(&mut p.tensors) {
            if let Init::He { fan_in, scale } = spec.init {
                let dist = Normal::new(0.0, scale * (2.0 / fan_in as f64).sqrt()).expect("valid std");
                for v in t.data_mut() {
                    *v = T::lit(dist.sample(&mut rng));
                }
            }
        }
        p
    }
}

/// Named tensors of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Parameters<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Parameters { names, tensors }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn zeros_like(&self) -> Self {
        Parameters {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn add_assign(&mut self, other: &Parameters<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in &mut self.tensors {
            t.scale(k);
        }
    }

    /// Sum of squares over every scalar.
    pub fn squared_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Location of the `flat`-th scalar, counting tensors in order.
    pub fn locate(&self, mut flat: usize) -> Option<(ParamId, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            if flat < t.len() {
                return Some((ParamId(i), flat));
            }
            flat -= t.len();
        }
        None
    }

    /// True when both hold the same names, shapes and bit patterns.
    pub fn bitwise_eq(&self, other: &Parameters<T>) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
