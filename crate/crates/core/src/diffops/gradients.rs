use crate::error::{Error, Result};
use crate::field::FlowField;
use crate::real::Real;
use crate::tensor::Tensor;

/// Forward differences `(dx, dy)` of each flow channel, each shaped `[H, W, 2]`.
///
/// The last column of `dx` and the last row of `dy` are zero.
pub fn spatial_gradients<T: Real>(f: &FlowField<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = f.dims();
    if h < 2 || w < 2 {
        return Err(Error::InvalidInput(format!("spatial_gradients needs H, W >= 2, got {h}x{w}")));
    }
    let mut dx = vec![T::zero(); h * w * 2];
    let mut dy = vec![T::zero(); h * w * 2];
    let d = f.data();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 2;
            for c in 0..2 {
                if x + 1 < w {
                    dx[i + c] = d[i + 2 + c] - d[i + c];
                }
                if y + 1 < h {
                    dy[i + c] = d[i + 2 * w + c] - d[i + c];
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[h, w, 2], dx)?, Tensor::from_vec(&[h, w, 2], dy)?))
}

/// Adjoint of [`spatial_gradients`].
pub fn spatial_gradients_backward<T: Real>(g_dx: &Tensor<T>, g_dy: &Tensor<T>) -> Result<FlowField<T>> {
    let shape = g_dx.shape();
    if shape.len() != 3 || shape[2] != 2 || g_dy.shape() != shape {
        return Err(Error::shape(
            "spatial_gradients_backward",
            "two [H, W, 2] tensors",
            format!("{:?} and {:?}", shape, g_dy.shape()),
        ));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = vec![T::zero(); h * w * 2];
    let (gx, gy) = (g_dx.data(), g_dy.data());
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 2;
            for c in 0..2 {
                if x + 1 < w {
                    out[i + 2 + c] += gx[i + c];
                    out[i + c] -= gx[i + c];
                }
                if y + 1 < h {
                    out[i + 2 * w + c] += gy[i + c];
                    out[i + c] -= gy[i + c];
                }
            }
        }
    }
    FlowField::from_vec(h, w, out)
}
