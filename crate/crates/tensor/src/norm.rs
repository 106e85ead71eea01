//! Instance normalization over the spatial axes of `[N, C, ...]` tensors.

use crate::error::{shape_err, Result, TensorError};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Saved forward state needed for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
}

fn layout(dims: &[usize], gain: &[usize], shift: &[usize]) -> Result<(usize, usize, usize)> {
    if dims.len() < 3 {
        return shape_err(format!("instance norm needs [N,C,spatial..], got {dims:?}"));
    }
    let (n, c) = (dims[0], dims[1]);
    if gain != [c] || shift != [c] {
        return shape_err(format!(
            "gain {gain:?} / shift {shift:?} must both be [{c}]"
        ));
    }
    let vol: usize = dims[2..].iter().product();
    if vol < 2 {
        return Err(TensorError::DegenerateNorm(vol));
    }
    Ok((n, c, vol))
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (n, c, vol) = layout(x.dims(), gain.dims(), shift.dims())?;
    let mut y = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * vol;
            let xs = &x.data()[off..off + vol];
            let mean = xs.iter().map(|v| v.as_f64()).sum::<f64>() / vol as f64;
            let var = xs
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / vol as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std.push(istd);
            let (g, s) = (gain.data()[ch], shift.data()[ch]);
            for i in 0..vol {
                let h = T::from_f64((xs[i].as_f64() - mean) * istd);
                xhat[off + i] = h;
                y[off + i] = g * h + s;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.dims().to_vec(), y)?,
        NormCache { xhat, inv_std },
    ))
}

/// Returns `(grad_input, grad_gain, grad_shift)`.
pub(crate) fn backward<T: Scalar>(
    dims: &[usize],
    gain: &Tensor<T>,
    cache: &NormCache<T>,
    grad: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c) = (dims[0], dims[1]);
    let vol: usize = dims[2..].iter().product();
    let mut dx = vec![T::zero(); grad.len()];
    let mut dgain = vec![0.0f64; c];
    let mut dshift = vec![0.0f64; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * vol;
            let dy = &grad[off..off + vol];
            let xh = &cache.xhat[off..off + vol];
            let g = gain.data()[ch].as_f64();
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for (d, h) in dy.iter().zip(xh) {
                sum_dy += d.as_f64();
                sum_dy_xh += d.as_f64() * h.as_f64();
            }
            dgain[ch] += sum_dy_xh;
            dshift[ch] += sum_dy;
            let istd = cache.inv_std[b * c + ch];
            let mean_dxh = g * sum_dy / vol as f64;
            let mean_dxh_xh = g * sum_dy_xh / vol as f64;
            for i in 0..vol {
                let dxh = g * dy[i].as_f64();
                dx[off + i] = T::from_f64(istd * (dxh - mean_dxh - xh[i].as_f64() * mean_dxh_xh));
            }
        }
    }
    (
        dx,
        dgain.into_iter().map(T::from_f64).collect(),
        dshift.into_iter().map(T::from_f64).collect(),
    )
}

/// Stateless instance normalization.
pub fn instance_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    forward(x, gain, shift, eps).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_one_is_degenerate() {
        let x = Tensor::<f32>::ones(vec![1, 2, 1, 1, 1]).unwrap();
        let g = Tensor::ones(vec![2]).unwrap();
        let s = Tensor::zeros(vec![2]).unwrap();
        assert_eq!(
            instance_norm(&x, &g, &s, DEFAULT_EPS),
            Err(TensorError::DegenerateNorm(1))
        );
    }

    #[test]
    fn constant_input_maps_to_shift() {
        let x = Tensor::<f32>::full(vec![2, 2, 2, 3, 3], 0.37).unwrap();
        let g = Tensor::from_vec(vec![2], vec![1.5, -2.0]).unwrap();
        let s = Tensor::from_vec(vec![2], vec![0.25, -0.75]).unwrap();
        let y = instance_norm(&x, &g, &s, DEFAULT_EPS).unwrap();
        for b in 0..2 {
            for c in 0..2 {
                let plane = y.index_axis0(b).unwrap().index_axis0(c).unwrap();
                for &v in plane.data() {
                    assert!((v - s.data()[c]).abs() < 1e-6);
                }
            }
        }
    }
}
