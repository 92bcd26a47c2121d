use serde::{Deserialize, Serialize};

use crate::model::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one per parameter scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Parameters,
    pub v: Parameters,
    pub t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, like: &Parameters) -> Self {
        Adam { cfg, m: like.zeros_like(), v: like.zeros_like(), t: 0 }
    }

    /// One bias-corrected update of `params` along `grad` with step size `lr`.
    pub fn step(&mut self, params: &mut Parameters, grad: &Parameters, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        let step = (lr / c1) as f32;
        let inv_c2 = (1.0 / c2) as f32;
        let eps = eps as f32;
        let tensors = params.tensors_mut().iter_mut().zip(grad.tensors());
        let moments = self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut().iter_mut());
        for ((p, g), (m, v)) in tensors.zip(moments) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
    }
}
