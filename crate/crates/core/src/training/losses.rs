//! Slice-wise losses. Each `(sample, slice)` pair of a logit volume is scored
//! against the replicated target, giving an `[N, m]` tensor whose mean is the
//! training objective.

use serde::{Deserialize, Serialize};
use sl_tensor::{sigmoid_scalar, CustomOp, Graph, Scalar, Tensor, TensorError, Var};

use crate::error::{Result, SlError};

/// Smoothing term of the dice and IoU ratios.
pub const SMOOTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    DiceBce,
    /// Weighted BCE plus weighted IoU; uniform weights unless a weight map
    /// is supplied.
    WbceWiou,
    MaskedMseL1,
}

impl LossKind {
    pub fn is_masked(self) -> bool {
        self == Self::MaskedMseL1
    }
}

fn stable_bce(x: f64, q: f64) -> f64 {
    x.max(0.0) - x * q + (-x.abs()).exp().ln_1p()
}

/// Soft dice loss of one channel; adds `scale · ∂/∂x` into `grad`.
fn dice_part(x: &[f64], q: &[f64], scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let p: Vec<f64> = x.iter().map(|&v| sigmoid_scalar(v)).collect();
    let inter: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let total = p.iter().sum::<f64>() + q.iter().sum::<f64>();
    let (num, den) = (2.0 * inter + SMOOTH, total + SMOOTH);
    if let Some(g) = grad {
        for i in 0..x.len() {
            let dp = -(2.0 * q[i] * den - num) / (den * den);
            g[i] += scale * dp * p[i] * (1.0 - p[i]);
        }
    }
    1.0 - num / den
}

fn weight(w: Option<&[f64]>, i: usize) -> f64 {
    w.map_or(1.0, |w| w[i])
}

/// Weighted mean of stable BCE over one channel.
fn bce_part(x: &[f64], q: &[f64], w: Option<&[f64]>, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let wsum: f64 = (0..x.len()).map(|i| weight(w, i)).sum();
    let total: f64 = (0..x.len()).map(|i| weight(w, i) * stable_bce(x[i], q[i])).sum();
    if let Some(g) = grad {
        for i in 0..x.len() {
            g[i] += scale * weight(w, i) * (sigmoid_scalar(x[i]) - q[i]) / wsum;
        }
    }
    total / wsum
}

fn iou_part(x: &[f64], q: &[f64], w: Option<&[f64]>, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let p: Vec<f64> = x.iter().map(|&v| sigmoid_scalar(v)).collect();
    let (mut inter, mut total) = (0.0, 0.0);
    for i in 0..x.len() {
        let wi = weight(w, i);
        inter += wi * p[i] * q[i];
        total += wi * (p[i] + q[i]);
    }
    let (num, den) = (inter + SMOOTH, total - inter + SMOOTH);
    if let Some(g) = grad {
        for i in 0..x.len() {
            let wi = weight(w, i);
            let d_num = wi * q[i];
            let d_den = wi * (1.0 - q[i]);
            let dp = -(d_num * den - num * d_den) / (den * den);
            g[i] += scale * dp * p[i] * (1.0 - p[i]);
        }
    }
    1.0 - num / den
}

fn valid_count(mask: &[f64]) -> Result<f64> {
    let mut count = 0.0;
    for &v in mask {
        if v != 0.0 && v != 1.0 {
            return Err(SlError::InvalidMask(format!("mask value {v} is not binary")));
        }
        count += v;
    }
    if count == 0.0 {
        return Err(SlError::InvalidMask("no valid pixels".into()));
    }
    Ok(count)
}

/// `(mse, l1)` over valid pixels; gradient of their sum goes into `grad`.
fn masked_parts(x: &[f64], t: &[f64], mask: &[f64], scale: f64, grad: Option<&mut [f64]>) -> Result<(f64, f64)> {
    let n = valid_count(mask)?;
    let (mut se, mut ae) = (0.0, 0.0);
    for i in 0..x.len() {
        let d = (x[i] - t[i]) * mask[i];
        se += d * d;
        ae += d.abs();
    }
    if let Some(g) = grad {
        for i in 0..x.len() {
            let d = (x[i] - t[i]) * mask[i];
            let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
            g[i] += scale * (2.0 * d + sign) / n;
        }
    }
    Ok((se / n, ae / n))
}

/// Loss of one slice laid out as `channels` consecutive planes. `aux` is the
/// weight map for `WbceWiou` and the valid mask for `MaskedMseL1`.
fn slice_value(
    kind: LossKind,
    x: &[f64],
    q: &[f64],
    aux: Option<&[f64]>,
    channels: usize,
    scale: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let plane = x.len() / channels;
    let cs = scale / channels as f64;
    let mut total = 0.0;
    for c in 0..channels {
        let r = c * plane..(c + 1) * plane;
        let g = grad.as_deref_mut().map(|g| &mut g[r.clone()]);
        let a = aux.map(|a| &a[r.clone()]);
        total += match kind {
            LossKind::DiceBce => {
                let mut g = g;
                dice_part(&x[r.clone()], &q[r.clone()], cs, g.as_deref_mut()) + bce_part(&x[r.clone()], &q[r], None, cs, g)
            }
            LossKind::WbceWiou => {
                let mut g = g;
                bce_part(&x[r.clone()], &q[r.clone()], a, cs, g.as_deref_mut()) + iou_part(&x[r.clone()], &q[r], a, cs, g)
            }
            LossKind::MaskedMseL1 => {
                let mask = a.ok_or_else(|| SlError::InvalidMask("masked loss needs a valid mask".into()))?;
                let (mse, l1) = masked_parts(&x[r.clone()], &q[r], mask, cs, g)?;
                mse + l1
            }
        };
    }
    Ok(total / channels as f64)
}

pub fn dice_loss(logits: &[f64], target: &[f64]) -> f64 {
    dice_part(logits, target, 0.0, None)
}

pub fn bce_loss(logits: &[f64], target: &[f64], weights: Option<&[f64]>) -> f64 {
    bce_part(logits, target, weights, 0.0, None)
}

pub fn iou_loss(logits: &[f64], target: &[f64], weights: Option<&[f64]>) -> f64 {
    iou_part(logits, target, weights, 0.0, None)
}

pub fn masked_mse(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    Ok(masked_parts(pred, target, mask, 0.0, None)?.0)
}

pub fn masked_l1(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    Ok(masked_parts(pred, target, mask, 0.0, None)?.1)
}

/// Composite loss of a single-channel prediction.
pub fn loss_primitive(kind: LossKind, pred: &[f64], target: &[f64], aux: Option<&[f64]>) -> Result<f64> {
    if pred.len() != target.len() || aux.is_some_and(|a| a.len() != pred.len()) {
        return Err(TensorError::Shape("loss operands differ in length".into()).into());
    }
    slice_value(kind, pred, target, aux, 1, 0.0, None)
}

/// Emphasis map `1 + gain · |local_mean(mask) − mask|` over a
/// `(2·radius+1)²` window, for the weighted BCE/IoU loss.
pub fn boundary_weights<T: Scalar>(mask: &Tensor<T>, radius: usize, gain: f64) -> Result<Tensor<T>> {
    let d = mask.dims();
    if d.len() < 2 {
        return Err(TensorError::Shape(format!("weight map needs at least [Y, X], got {d:?}")).into());
    }
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    let mut out = mask.clone();
    let r = radius as isize;
    for (src, dst) in mask.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for yy in y - r..=y + r {
                    for xx in x - r..=x + r {
                        // zero padding, counted in the window like an average pool
                        if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                            acc += src[yy as usize * w + xx as usize].as_f64();
                        }
                    }
                }
                let local = acc / ((2 * r + 1) * (2 * r + 1)) as f64;
                let v = src[y as usize * w + x as usize].as_f64();
                dst[y as usize * w + x as usize] = T::from_f64(1.0 + gain * (local - v).abs());
            }
        }
    }
    Ok(out)
}

struct SliceLossOp<T: Scalar> {
    kind: LossKind,
    target: Tensor<T>,
    aux: Option<Tensor<T>>,
}

/// Gathers slice `(n, z)` of a `[N, C, m, Y, X]` tensor as C planes.
fn gather<T: Scalar>(t: &Tensor<T>, n: usize, z: usize) -> Vec<f64> {
    let d = t.dims();
    let (c, m, plane) = (d[1], d[2], d[3] * d[4]);
    let mut out = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let off = ((n * c + ch) * m + z) * plane;
        out.extend(t.data()[off..off + plane].iter().map(|v| v.as_f64()));
    }
    out
}

fn scatter<T: Scalar>(t: &mut Tensor<T>, n: usize, z: usize, values: &[f64]) {
    let d = t.dims().to_vec();
    let (c, m, plane) = (d[1], d[2], d[3] * d[4]);
    for ch in 0..c {
        let off = ((n * c + ch) * m + z) * plane;
        for (dst, &v) in t.data_mut()[off..off + plane].iter_mut().zip(&values[ch * plane..(ch + 1) * plane]) {
            *dst = T::from_f64(v);
        }
    }
}

impl<T: Scalar> SliceLossOp<T> {
    fn eval(&self, logits: &Tensor<T>, upstream: Option<&Tensor<T>>) -> Result<(Vec<f64>, Option<Tensor<T>>)> {
        let d = logits.dims();
        let (n, c, m) = (d[0], d[1], d[2]);
        let mut values = Vec::with_capacity(n * m);
        let mut grad = upstream.map(|_| Tensor::zeros(d.to_vec())).transpose()?;
        for b in 0..n {
            for z in 0..m {
                let x = gather(logits, b, z);
                let q = gather(&self.target, b, z);
                let a = self.aux.as_ref().map(|a| gather(a, b, z));
                let scale = upstream.map_or(0.0, |u| u.data()[b * m + z].as_f64());
                let mut g = grad.as_ref().map(|_| vec![0.0; x.len()]);
                values.push(slice_value(self.kind, &x, &q, a.as_deref(), c, scale, g.as_deref_mut())?);
                if let (Some(grad), Some(g)) = (grad.as_mut(), g) {
                    scatter(grad, b, z, &g);
                }
            }
        }
        Ok((values, grad))
    }
}

impl<T: Scalar> CustomOp<T> for SliceLossOp<T> {
    fn name(&self) -> &str {
        "slice_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> sl_tensor::Result<Vec<Option<Tensor<T>>>> {
        let (_, g) = self
            .eval(inputs[0], Some(grad))
            .map_err(|e| TensorError::Config(e.to_string()))?;
        Ok(vec![g])
    }
}

fn check_operands<T: Scalar>(kind: LossKind, logits: &[usize], target: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<()> {
    if logits.len() != 5 || target.dims() != logits {
        return Err(TensorError::Shape(format!(
            "slice loss needs logits and replicated target of equal rank-5 dims, got {logits:?} and {:?}",
            target.dims()
        ))
        .into());
    }
    if let Some(a) = aux {
        if a.dims() != logits {
            return Err(TensorError::Shape(format!("aux map {:?} does not match logits {logits:?}", a.dims())).into());
        }
        if kind == LossKind::WbceWiou && a.data().iter().any(|w| !(w.as_f64() >= 0.0) || !w.is_finite()) {
            return Err(SlError::config("loss weights must be finite and nonnegative"));
        }
    } else if kind.is_masked() {
        return Err(SlError::InvalidMask("masked loss needs a valid mask".into()));
    }
    Ok(())
}

/// Records the slice losses of `logits` `[N, C, m, Y, X]` against the
/// replicated `target` of the same dims. Returns `(total, per_slice)` where
/// `per_slice` is `[N, m]` and `total` its mean.
pub fn slice_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    target: &Tensor<T>,
    aux: Option<&Tensor<T>>,
    kind: LossKind,
) -> Result<(Var, Var)> {
    let dims = g.value(logits).dims().to_vec();
    check_operands(kind, &dims, target, aux)?;
    let op = SliceLossOp {
        kind,
        target: target.clone(),
        aux: aux.cloned(),
    };
    let (values, _) = op.eval(g.value(logits), None)?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(SlError::Numeric(format!(
            "non-finite loss {} at sample {} slice {}",
            values[i],
            i / dims[2],
            i % dims[2]
        )));
    }
    let value = Tensor::from_vec(vec![dims[0], dims[2]], values.into_iter().map(T::from_f64).collect())?;
    let per_slice = g.custom(&[logits], value, Box::new(op));
    let total = g.mean_all(per_slice)?;
    Ok((total, per_slice))
}

/// Forward-only slice loss of one sample: logits `[C, m, Y, X]`, target and
/// optional aux map `[C, Y, X]`. Returns the mean and the `m` slice losses.
pub fn slice_loss<T: Scalar>(
    logits: &Tensor<T>,
    target: &Tensor<T>,
    aux: Option<&Tensor<T>>,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let d = logits.dims();
    if d.len() != 4 {
        return Err(TensorError::Shape(format!("slice_loss expects [C, m, Y, X], got {d:?}")).into());
    }
    let m = d[1];
    let batch = |t: &Tensor<T>| -> Result<Tensor<T>> {
        let r = crate::lifting::replicate_target(t, m)?;
        let dims = [&[1], r.dims()].concat();
        Ok(r.reshape(dims)?)
    };
    let mut g = Graph::new();
    let x = g.constant(logits.clone().reshape([&[1], d].concat())?);
    let target = batch(target)?;
    let aux = aux.map(batch).transpose()?;
    let (total, per) = slice_loss_graph(&mut g, x, &target, aux.as_ref(), kind)?;
    Ok((
        g.value(total).item()?.as_f64(),
        g.value(per).data().iter().map(|v| v.as_f64()).collect(),
    ))
}
