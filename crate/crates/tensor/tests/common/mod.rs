#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sl_tensor::{ConvParams, PaddingMode, Scalar, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random<T: Scalar>(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor<T> {
    Tensor::from_fn(dims.to_vec(), |_| T::from_f64(rng.gen_range(-scale..scale))).unwrap()
}

/// A random convolution case: `(input dims, weight dims, params)` with
/// every axis at most 5 and valid output extents.
pub fn random_conv_case(rng: &mut ChaCha8Rng, allow_circular: bool) -> ([usize; 5], [usize; 5], ConvParams) {
    loop {
        let n = rng.gen_range(1..=2);
        let ci = rng.gen_range(1..=3);
        let co = rng.gen_range(1..=3);
        let mut sp = [0; 3];
        let mut k = [0; 3];
        let mut s = [0; 3];
        let mut p = [0; 3];
        let mut mode = [PaddingMode::Zero; 3];
        for a in 0..3 {
            sp[a] = rng.gen_range(1..=5);
            k[a] = rng.gen_range(1..=3.min(sp[a] + 2));
            s[a] = rng.gen_range(1..=2);
            p[a] = rng.gen_range(0..=k[a] / 2);
            if allow_circular && s[a] == 1 && rng.gen_bool(0.3) && 2 * p[a] < k[a] {
                mode[a] = PaddingMode::Circular;
            }
        }
        let params = ConvParams {
            kernel: k,
            stride: s,
            padding: p,
            mode,
        };
        let ok = (0..3).all(|a| params.output_extent(a, sp[a]).is_ok());
        if ok {
            return ([n, ci, sp[0], sp[1], sp[2]], [co, ci, k[0], k[1], k[2]], params);
        }
    }
}

fn tap(o: usize, k: usize, stride: usize, pad: usize, len: usize, mode: PaddingMode) -> Option<usize> {
    let pos = (o * stride + k) as isize - pad as isize;
    match mode {
        PaddingMode::Zero => (pos >= 0 && pos < len as isize).then_some(pos as usize),
        PaddingMode::Circular => Some(pos.rem_euclid(len as isize) as usize),
    }
}

/// Seven nested loops over (co, oz, oy, ox, ci, kz, ky, kx) per sample, in f64.
pub fn naive_conv3d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, p: &ConvParams) -> Tensor<f64> {
    let d = x.dims();
    let wd = w.dims();
    let (n, ci_n, co_n) = (d[0], d[1], wd[0]);
    let out: Vec<usize> = (0..3)
        .map(|a| (d[2 + a] + 2 * p.padding[a] - p.kernel[a]) / p.stride[a] + 1)
        .collect();
    let mut y = Tensor::zeros(vec![n, co_n, out[0], out[1], out[2]]).unwrap();
    for bi in 0..n {
        for co in 0..co_n {
            for oz in 0..out[0] {
                for oy in 0..out[1] {
                    for ox in 0..out[2] {
                        let mut acc = b.map_or(0.0, |b| b.data()[co]);
                        for ci in 0..ci_n {
                            for kz in 0..wd[2] {
                                for ky in 0..wd[3] {
                                    for kx in 0..wd[4] {
                                        let iz = tap(oz, kz, p.stride[0], p.padding[0], d[2], p.mode[0]);
                                        let iy = tap(oy, ky, p.stride[1], p.padding[1], d[3], p.mode[1]);
                                        let ix = tap(ox, kx, p.stride[2], p.padding[2], d[4], p.mode[2]);
                                        if let (Some(iz), Some(iy), Some(ix)) = (iz, iy, ix) {
                                            acc += w.get(&[co, ci, kz, ky, kx]) * x.get(&[bi, ci, iz, iy, ix]);
                                        }
                                    }
                                }
                            }
                        }
                        y.set(&[bi, co, oz, oy, ox], acc);
                    }
                }
            }
        }
    }
    y
}

/// Scatter form of the transposed convolution, `w` laid out `[Ci, Co, K..]`.
pub fn naive_transposed_conv3d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    p: &ConvParams,
) -> Tensor<f64> {
    let d = x.dims();
    let wd = w.dims();
    let (n, ci_n, co_n) = (d[0], d[1], wd[1]);
    let out: Vec<usize> = (0..3)
        .map(|a| (d[2 + a] - 1) * p.stride[a] + p.kernel[a] - 2 * p.padding[a])
        .collect();
    let mut y = Tensor::zeros(vec![n, co_n, out[0], out[1], out[2]]).unwrap();
    for bi in 0..n {
        for ci in 0..ci_n {
            for iz in 0..d[2] {
                for iy in 0..d[3] {
                    for ix in 0..d[4] {
                        let v = x.get(&[bi, ci, iz, iy, ix]);
                        for co in 0..co_n {
                            for kz in 0..wd[2] {
                                for ky in 0..wd[3] {
                                    for kx in 0..wd[4] {
                                        let oz = tap(iz, kz, p.stride[0], p.padding[0], out[0], p.mode[0]);
                                        let oy = tap(iy, ky, p.stride[1], p.padding[1], out[1], p.mode[1]);
                                        let ox = tap(ix, kx, p.stride[2], p.padding[2], out[2], p.mode[2]);
                                        if let (Some(oz), Some(oy), Some(ox)) = (oz, oy, ox) {
                                            let idx = [bi, co, oz, oy, ox];
                                            let cur = y.get(&idx);
                                            y.set(&idx, cur + v * w.get(&[ci, co, kz, ky, kx]));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        for bi in 0..n {
            for co in 0..co_n {
                for z in 0..out[0] {
                    for yy in 0..out[1] {
                        for xx in 0..out[2] {
                            let idx = [bi, co, z, yy, xx];
                            let cur = y.get(&idx);
                            y.set(&idx, cur + b.data()[co]);
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y).abs())
        .fold(0.0, f64::max)
}
