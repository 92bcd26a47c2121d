use crate::error::Result;
use crate::field::{Field, FlowField};
use crate::real::Real;

/// Lattice cell and weights for a clamped bilinear lookup along one axis.
#[derive(Clone, Copy)]
struct Axis<T> {
    i0: usize,
    i1: usize,
    frac: T,
    /// Coordinate was clamped, so the lookup is locally constant.
    clamped: bool,
}

#[inline]
fn axis<T: Real>(s: T, n: usize) -> Axis<T> {
    let hi = T::lit((n - 1) as f64);
    let clamped = s < T::zero() || s > hi;
    let s = s.max(T::zero()).min(hi);
    if n == 1 {
        return Axis {
            i0: 0,
            i1: 0,
            frac: T::zero(),
            clamped: true,
        };
    }
    let mut i0 = s.floor().to_usize().unwrap_or(0);
    if i0 >= n - 1 {
        i0 = n - 2;
    }
    Axis {
        i0,
        i1: i0 + 1,
        frac: s - T::lit(i0 as f64),
        clamped,
    }
}

/// Bilinear lookup of `src` at continuous `(sx, sy)`, clamped to the border.
pub fn sample_bilinear<T: Real, const C: usize>(src: &Field<T, C>, sx: T, sy: T) -> [T; C] {
    let ax = axis(sx, src.width());
    let ay = axis(sy, src.height());
    let (fx, fy) = (ax.frac, ay.frac);
    let one = T::one();
    let w00 = (one - fx) * (one - fy);
    let w10 = fx * (one - fy);
    let w01 = (one - fx) * fy;
    let w11 = fx * fy;
    let p00 = src.at(ax.i0, ay.i0);
    let p10 = src.at(ax.i1, ay.i0);
    let p01 = src.at(ax.i0, ay.i1);
    let p11 = src.at(ax.i1, ay.i1);
    let mut out = [T::zero(); C];
    for c in 0..C {
        out[c] = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
    }
    out
}

/// Backward warp: `out(x) = source(x + flow(x))`, bilinear with border clamping.
pub fn warp_bilinear<T: Real, const C: usize>(source: &Field<T, C>, flow: &FlowField<T>) -> Result<Field<T, C>> {
    source.check_dims(flow, "warp_bilinear")?;
    Ok(Field::from_fn(source.height(), source.width(), |x, y| {
        let [u, v] = flow.pixel(x, y);
        sample_bilinear(source, T::lit(x as f64) + u, T::lit(y as f64) + v)
    }))
}

/// Adjoint of [`warp_bilinear`]: returns `(d source, d flow)` for upstream `grad_out`.
pub fn warp_bilinear_backward<T: Real, const C: usize>(
    source: &Field<T, C>,
    flow: &FlowField<T>,
    grad_out: &Field<T, C>,
) -> Result<(Field<T, C>, FlowField<T>)> {
    source.check_dims(flow, "warp_bilinear_backward")?;
    source.check_dims(grad_out, "warp_bilinear_backward")?;
    let (h, w) = source.dims();
    let mut d_src = Field::<T, C>::zeros(h, w);
    let mut d_flow = FlowField::<T>::zeros(h, w);
    let one = T::one();
    for y in 0..h {
        for x in 0..w {
            let [u, v] = flow.pixel(x, y);
            let ax = axis(T::lit(x as f64) + u, w);
            let ay = axis(T::lit(y as f64) + v, h);
            let (fx, fy) = (ax.frac, ay.frac);
            let g = grad_out.at(x, y);
            let taps = [
                (ax.i0, ay.i0, (one - fx) * (one - fy)),
                (ax.i1, ay.i0, fx * (one - fy)),
                (ax.i0, ay.i1, (one - fx) * fy),
                (ax.i1, ay.i1, fx * fy),
            ];
            for (tx, ty, wgt) in taps {
                let d = d_src.at_mut(tx, ty);
                for c in 0..C {
                    d[c] += wgt * g[c];
                }
            }
            let p00 = source.at(ax.i0, ay.i0);
            let p10 = source.at(ax.i1, ay.i0);
            let p01 = source.at(ax.i0, ay.i1);
            let p11 = source.at(ax.i1, ay.i1);
            let (mut du, mut dv) = (T::zero(), T::zero());
            for c in 0..C {
                let dsx = (one - fy) * (p10[c] - p00[c]) + fy * (p11[c] - p01[c]);
                let dsy = (one - fx) * (p01[c] - p00[c]) + fx * (p11[c] - p10[c]);
                du += g[c] * dsx;
                dv += g[c] * dsy;
            }
            let df = d_flow.at_mut(x, y);
            if !ax.clamped {
                df[0] = du;
            }
            if !ay.clamped {
                df[1] = dv;
            }
        }
    }
    Ok((d_src, d_flow))
}
