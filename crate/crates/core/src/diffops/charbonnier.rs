use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::tensor::Tensor;

/// Generalized Charbonnier penalty `rho(x) = (x^2 + eps^2)^alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Charbonnier {
    pub eps: f64,
    pub alpha: f64,
}

impl Default for Charbonnier {
    fn default() -> Self {
        Charbonnier { eps: 1e-3, alpha: 0.4 }
    }
}

impl Charbonnier {
    #[inline]
    pub fn value<T: Real>(&self, x: T) -> T {
        (x * x + T::lit(self.eps * self.eps)).powf(T::lit(self.alpha))
    }

    #[inline]
    pub fn derivative<T: Real>(&self, x: T) -> T {
        let a = T::lit(self.alpha);
        T::lit(2.0) * a * x * (x * x + T::lit(self.eps * self.eps)).powf(a - T::one())
    }

    /// `rho(0) = eps^(2 alpha)`, the per-element minimum.
    pub fn floor(&self) -> f64 {
        self.eps.powf(2.0 * self.alpha)
    }
}

pub fn charbonnier<T: Real>(x: &Tensor<T>, eps: f64, alpha: f64) -> Tensor<T> {
    let p = Charbonnier { eps, alpha };
    let data = x.data().iter().map(|&v| p.value(v)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn charbonnier_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>, eps: f64, alpha: f64) -> Tensor<T> {
    assert_eq!(x.shape(), grad_out.shape());
    let p = Charbonnier { eps, alpha };
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| g * p.derivative(v))
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let p = Charbonnier::default();
        // 1e-3^(0.8) = 10^-2.4
        assert!((p.value(0.0f64) - 10f64.powf(-2.4)).abs() < 1e-15);
        assert!((p.value(0.0f64) - 3.981e-3).abs() < 1e-6);
        assert!((p.value(2.0f64) - 4.000001f64.powf(0.4)).abs() < 1e-15);
        assert!((p.value(2.0f64) - 1.7411).abs() < 1e-4);
    }

    #[test]
    fn even_and_smooth_at_zero() {
        let p = Charbonnier::default();
        for x in [0.0, 1e-4, 0.3, 2.5, 10.0f64] {
            assert_eq!(p.value(x), p.value(-x));
            assert_eq!(p.derivative(x), -p.derivative(-x));
        }
        assert_eq!(p.derivative(0.0f64), 0.0);
    }
}
