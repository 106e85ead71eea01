//! Lifting of 2-D samples to a replicated z axis, slice selection from
//! per-slice losses, logit fusion and label decoding.

use serde::{Deserialize, Serialize};
use sl_tensor::{sigmoid_scalar, Scalar, Tensor};

use crate::error::{Result, SlError};

/// Replicates `[C, Y, X]` into `[C, m, Y, X]`.
pub fn lift<T: Copy>(image: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    if m < 1 {
        return Err(SlError::config("lift depth m must be at least 1"));
    }
    if image.rank() != 3 {
        return Err(sl_tensor::TensorError::Shape(format!("lift expects [C, Y, X], got {:?}", image.dims())).into());
    }
    Ok(image.replicate(1, m)?)
}

/// Replicates a target exactly like [`lift`] replicates an input.
pub fn replicate_target<T: Copy>(target: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    lift(target, m)
}

/// Lifts a batch `[N, C, Y, X]` into `[N, C, m, Y, X]`.
pub fn lift_batch<T: Copy>(batch: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    if m < 1 {
        return Err(SlError::config("lift depth m must be at least 1"));
    }
    if batch.rank() != 4 {
        return Err(sl_tensor::TensorError::Shape(format!("lift_batch expects [N, C, Y, X], got {:?}", batch.dims())).into());
    }
    Ok(batch.replicate(2, m)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceStats {
    pub per_slice_loss: Vec<f64>,
    /// 0-based, ascending.
    pub selected: Vec<usize>,
    pub s: usize,
}

impl SliceStats {
    pub fn m(&self) -> usize {
        self.per_slice_loss.len()
    }

    /// Indices not in `selected`, ascending.
    pub fn unselected(&self) -> Vec<usize> {
        (0..self.m()).filter(|z| !self.selected.contains(z)).collect()
    }
}

/// Picks the `s` slices with the smallest loss, ties going to the lower index.
pub fn select_slices(per_slice_loss: &[f64], s: usize) -> Result<SliceStats> {
    let m = per_slice_loss.len();
    if s < 1 || s > m {
        return Err(SlError::config(format!("need 1 <= s <= m, got s={s}, m={m}")));
    }
    if let Some(z) = per_slice_loss.iter().position(|l| !l.is_finite()) {
        return Err(SlError::Numeric(format!("slice {z} has non-finite loss {}", per_slice_loss[z])));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| per_slice_loss[a].total_cmp(&per_slice_loss[b]).then(a.cmp(&b)));
    let mut selected = order[..s].to_vec();
    selected.sort_unstable();
    Ok(SliceStats {
        per_slice_loss: per_slice_loss.to_vec(),
        selected,
        s,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Per-channel sigmoid of the summed logits.
    #[default]
    Sigmoid,
    /// Softmax over channels of the summed logits.
    Softmax,
    /// Mean of the selected slices, for regression heads where a sum would
    /// scale the prediction by `s`.
    DepthMean,
}

fn check_selection(selected: &[usize], m: usize) -> Result<Vec<usize>> {
    if selected.is_empty() {
        return Err(SlError::config("empty slice selection"));
    }
    let mut sorted = selected.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(SlError::config(format!("duplicate slice in selection {selected:?}")));
    }
    if let Some(&z) = sorted.last().filter(|&&z| z >= m) {
        return Err(SlError::config(format!("slice {z} out of range for m={m}")));
    }
    Ok(sorted)
}

/// Sums the selected slices of `[Cout, m, Y, X]` and applies the fusion map.
///
/// Slices are added in ascending index order whatever order `selected`
/// comes in, so the result does not depend on that order.
pub fn fuse_slices<T: Scalar>(logits: &Tensor<T>, selected: &[usize], fusion: Fusion) -> Result<Tensor<T>> {
    let d = logits.dims();
    if d.len() != 4 {
        return Err(sl_tensor::TensorError::Shape(format!("fuse_slices expects [Cout, m, Y, X], got {d:?}")).into());
    }
    let (c, m, plane) = (d[0], d[1], d[2] * d[3]);
    let order = check_selection(selected, m)?;
    // an f64 accumulator makes the sum of identical f32 slices exact
    let mut sum = vec![0.0f64; c * plane];
    for ch in 0..c {
        let dst = &mut sum[ch * plane..(ch + 1) * plane];
        for &z in &order {
            let src = &logits.data()[(ch * m + z) * plane..(ch * m + z + 1) * plane];
            for (a, &v) in dst.iter_mut().zip(src) {
                *a += v.as_f64();
            }
        }
    }
    let k = order.len() as f64;
    let mut acc: Vec<T> = match fusion {
        Fusion::DepthMean => sum.iter().map(|&v| T::from_f64(v / k)).collect(),
        _ => sum.iter().map(|&v| T::from_f64(v)).collect(),
    };
    match fusion {
        Fusion::Sigmoid => acc.iter_mut().for_each(|v| *v = sigmoid_scalar(*v)),
        Fusion::DepthMean => {}
        Fusion::Softmax => {
            for p in 0..plane {
                let max = (0..c).map(|ch| acc[ch * plane + p]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for ch in 0..c {
                    let e = (acc[ch * plane + p] - max).exp();
                    acc[ch * plane + p] = e;
                    total += e;
                }
                for ch in 0..c {
                    acc[ch * plane + p] = acc[ch * plane + p] / total;
                }
            }
        }
    }
    Ok(Tensor::from_vec(vec![c, d[2], d[3]], acc)?)
}

/// Turns fused probabilities `[Cout, Y, X]` into a label map `[Y, X]`.
///
/// One channel thresholds at `p > 0.5`; several channels take the argmax,
/// with ties going to the lowest class.
pub fn decode_segmentation<T: Scalar>(probs: &Tensor<T>) -> Result<Tensor<u8>> {
    let d = probs.dims();
    if d.len() != 3 {
        return Err(sl_tensor::TensorError::Shape(format!("decode expects [Cout, Y, X], got {d:?}")).into());
    }
    let (c, plane) = (d[0], d[1] * d[2]);
    if c > 256 {
        return Err(SlError::config(format!("{c} classes do not fit a u8 label map")));
    }
    let half = T::from_f64(0.5);
    let labels = (0..plane)
        .map(|p| {
            if c == 1 {
                return u8::from(probs.data()[p] > half);
            }
            let mut best = 0;
            for ch in 1..c {
                if probs.data()[ch * plane + p] > probs.data()[best * plane + p] {
                    best = ch;
                }
            }
            best as u8
        })
        .collect();
    Ok(Tensor::from_vec(vec![d[1], d[2]], labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_replicates_every_slice() {
        let img = Tensor::from_fn(vec![3, 4, 4], |i| i as f32 * 0.5 - 3.0).unwrap();
        let lifted = lift(&img, 16).unwrap();
        assert_eq!(lifted.dims(), &[3, 16, 4, 4]);
        for z in 0..16 {
            assert_eq!(lifted.select(1, z).unwrap(), img);
        }
        assert_eq!(lift(&img, 1).unwrap().dims(), &[3, 1, 4, 4]);
        assert!(matches!(lift(&img, 0), Err(SlError::Config(_))));
    }

    #[test]
    fn select_examples() {
        let s = select_slices(&[0.5, 0.2, 0.3, 0.1, 0.4], 2).unwrap();
        assert_eq!(s.selected, vec![1, 3]);
        assert_eq!(s.unselected(), vec![0, 2, 4]);
        assert_eq!(select_slices(&[1.0; 6], 3).unwrap().selected, vec![0, 1, 2]);
        assert!(matches!(select_slices(&[1.0, 2.0], 3), Err(SlError::Config(_))));
        assert!(matches!(select_slices(&[1.0, f64::NAN], 1), Err(SlError::Numeric(_))));
    }

    #[test]
    fn fuse_identical_slices_is_sigmoid_of_scaled_logit() {
        let l = 0.37f32;
        let logits = Tensor::full(vec![1, 6, 2, 2], l).unwrap();
        let fused = fuse_slices(&logits, &[0, 2, 5], Fusion::Sigmoid).unwrap();
        let expect = sigmoid_scalar(l + l + l);
        assert!(fused.data().iter().all(|&v| v == expect));
        let one = fuse_slices(&logits, &[4], Fusion::Sigmoid).unwrap();
        assert!(one.data().iter().all(|&v| v == sigmoid_scalar(l)));
        assert!(fuse_slices(&logits, &[], Fusion::Sigmoid).is_err());
        assert!(fuse_slices(&logits, &[1, 1], Fusion::Sigmoid).is_err());
        assert!(fuse_slices(&logits, &[6], Fusion::Sigmoid).is_err());
    }

    #[test]
    fn softmax_fusion_sums_to_one() {
        let logits = Tensor::from_fn(vec![3, 4, 2, 2], |i| ((i * 7) % 11) as f64 - 5.0).unwrap();
        let fused = fuse_slices(&logits, &[0, 3], Fusion::Softmax).unwrap();
        for p in 0..4 {
            let total: f64 = (0..3).map(|c| fused.data()[c * 4 + p]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_boundaries() {
        let two = Tensor::from_vec(vec![2, 1, 1], vec![0.9f32, 0.1]).unwrap();
        assert_eq!(decode_segmentation(&two).unwrap().data(), &[0]);
        let half = Tensor::from_vec(vec![1, 1, 2], vec![0.5f32, 0.51]).unwrap();
        assert_eq!(decode_segmentation(&half).unwrap().data(), &[0, 1]);
        let tie = Tensor::from_vec(vec![3, 1, 1], vec![0.2f32, 0.4, 0.4]).unwrap();
        assert_eq!(decode_segmentation(&tie).unwrap().data(), &[1]);
    }
}
