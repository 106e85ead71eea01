//! Overlap and depth metrics, the inter-slice quality score, and
//! correlation statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sl_tensor::{Scalar, Tensor, TensorError};

use crate::error::{Result, SlError};
use crate::lifting::{fuse_slices, lift, SliceStats};
use crate::model::Network;

pub const DELTA1_THRESHOLD: f64 = 1.25;

fn check_binary(t: &Tensor<u8>) -> Result<()> {
    match t.data().iter().find(|&&v| v > 1) {
        Some(v) => Err(SlError::InvalidMask(format!("value {v} in a binary map"))),
        None => Ok(()),
    }
}

/// `2|a∩b| / (|a| + |b|)`; two empty maps score 1.
pub fn dice(a: &Tensor<u8>, b: &Tensor<u8>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(TensorError::Shape(format!("dice of {:?} and {:?}", a.dims(), b.dims())).into());
    }
    check_binary(a)?;
    check_binary(b)?;
    Ok(dice_slices(a.data(), b.data()))
}

fn dice_slices(a: &[u8], b: &[u8]) -> f64 {
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x & y);
        total += usize::from(x) + usize::from(y);
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Binary maps `[K, Y, X]` of slice `z` of logits `[Cout, m, Y, X]`: one map
/// with `logit > 0` when `Cout = 1`, otherwise one-hot maps of the per-pixel
/// argmax (ties to the lowest class).
pub fn binarize_slice<T: Scalar>(logits: &Tensor<T>, z: usize) -> Result<Tensor<u8>> {
    let d = logits.dims();
    if d.len() != 4 || z >= d[1] {
        return Err(TensorError::Shape(format!("slice {z} of logits {d:?}")).into());
    }
    let (c, m, plane) = (d[0], d[1], d[2] * d[3]);
    let at = |ch: usize, p: usize| logits.data()[(ch * m + z) * plane + p];
    let mut out = vec![0u8; c * plane];
    for p in 0..plane {
        if c == 1 {
            out[p] = u8::from(at(0, p) > T::zero());
        } else {
            let best = (1..c).fold(0, |best, ch| if at(ch, p) > at(best, p) { ch } else { best });
            out[best * plane + p] = 1;
        }
    }
    Ok(Tensor::from_vec(vec![c, d[2], d[3]], out)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PqaReport {
    pub q: f64,
    /// `pairwise[i][j]` compares `selected[i]` with `unselected[j]`.
    pub pairwise: Vec<Vec<f64>>,
    pub selected: Vec<usize>,
    pub unselected: Vec<usize>,
}

/// Mean Dice agreement between every selected and every unselected slice.
/// With several classes each pair is macro-averaged over the classes that
/// appear in at least one slice.
pub fn pqa_score<T: Scalar>(logits: &Tensor<T>, stats: &SliceStats) -> Result<PqaReport> {
    let d = logits.dims();
    if d.len() != 4 || d[1] != stats.m() {
        return Err(TensorError::Shape(format!("logits {d:?} for {} slices", stats.m())).into());
    }
    let unselected = stats.unselected();
    if unselected.is_empty() {
        return Err(SlError::config("s = m leaves no unselected slices"));
    }
    let maps = (0..stats.m()).map(|z| binarize_slice(logits, z)).collect::<Result<Vec<_>>>()?;
    let (c, plane) = (d[0], d[2] * d[3]);
    let present: Vec<usize> = (0..c)
        .filter(|&k| maps.iter().any(|mp| mp.data()[k * plane..(k + 1) * plane].contains(&1)))
        .collect();
    let pair = |a: &Tensor<u8>, b: &Tensor<u8>| {
        if present.is_empty() {
            return 1.0;
        }
        present
            .iter()
            .map(|&k| dice_slices(&a.data()[k * plane..(k + 1) * plane], &b.data()[k * plane..(k + 1) * plane]))
            .sum::<f64>()
            / present.len() as f64
    };
    let pairwise: Vec<Vec<f64>> = stats
        .selected
        .iter()
        .map(|&zi| unselected.iter().map(|&zj| pair(&maps[zi], &maps[zj])).collect())
        .collect();
    let count = (stats.selected.len() * unselected.len()) as f64;
    let q = pairwise.iter().flatten().sum::<f64>() / count;
    Ok(PqaReport {
        q,
        pairwise,
        selected: stats.selected.clone(),
        unselected,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    /// Two-sided permutation p-value of `spearman_rho`.
    pub p_value: f64,
    pub n: usize,
    pub permutations: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(SlError::config(format!("need equal lengths >= 3, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(SlError::ConstantInput("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with tied values sharing their average rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&midranks(x), &midranks(y))
}

/// Pearson and Spearman coefficients with a permutation p-value: the share
/// of seeded shuffles of `actual` whose |ρ| reaches the observed |ρ|,
/// counting the observed labelling once.
pub fn correlations(predicted: &[f64], actual: &[f64], permutations: usize, seed: u64) -> Result<CorrelationReport> {
    if predicted.iter().chain(actual).any(|v| !v.is_finite()) {
        return Err(SlError::Numeric("non-finite value in correlation input".into()));
    }
    let pearson_r = pearson(predicted, actual)?;
    let rx = midranks(predicted);
    let mut ry = midranks(actual);
    let rho = pearson(&rx, &ry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    // tolerance so a permutation equal to the observed ranking counts
    let bar = rho.abs() - 1e-12;
    for _ in 0..permutations {
        ry.shuffle(&mut rng);
        if pearson(&rx, &ry)?.abs() >= bar {
            hits += 1;
        }
    }
    Ok(CorrelationReport {
        pearson_r,
        spearman_rho: rho,
        p_value: (hits + 1) as f64 / (permutations + 1) as f64,
        n: predicted.len(),
        permutations,
    })
}

/// RMSE and δ₁ over valid pixels. A pixel counts towards δ₁ when
/// `max(pred/gt, gt/pred) < 1.25`; nonpositive predictions never do.
pub fn depth_metrics<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, valid: &Tensor<T>) -> Result<(f64, f64)> {
    if pred.dims() != gt.dims() || valid.dims() != gt.dims() {
        return Err(TensorError::Shape(format!(
            "depth metrics of {:?}, {:?}, {:?}",
            pred.dims(),
            gt.dims(),
            valid.dims()
        ))
        .into());
    }
    let (mut n, mut se, mut good) = (0usize, 0.0, 0usize);
    for ((p, g), v) in pred.data().iter().zip(gt.data()).zip(valid.data()) {
        let v = v.as_f64();
        if v == 0.0 {
            continue;
        }
        if v != 1.0 {
            return Err(SlError::InvalidMask(format!("mask value {v} is not binary")));
        }
        let (p, g) = (p.as_f64(), g.as_f64());
        if !(g > 0.0) {
            return Err(SlError::InvalidMask(format!("ground truth {g} on a valid pixel")));
        }
        n += 1;
        se += (p - g) * (p - g);
        if p > 0.0 && (p / g).max(g / p) < DELTA1_THRESHOLD {
            good += 1;
        }
    }
    if n == 0 {
        return Err(SlError::InvalidMask("no valid pixels".into()));
    }
    Ok(((se / n as f64).sqrt(), good as f64 / n as f64))
}

/// Logits `[Cout, m, Y, X]` and fused output `[Cout, Y, X]` of one image.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub logits: Tensor<T>,
    pub fused: Tensor<T>,
}

pub fn predict<T: Scalar>(net: &Network<T>, stats: &SliceStats, image: &Tensor<T>) -> Result<Prediction<T>> {
    let spec = net.spec();
    let lifted = lift(image, spec.lift_depth)?;
    let batch = lifted.reshape([&[1], image.dims()[..1].as_ref(), &[spec.lift_depth], &image.dims()[1..]].concat())?;
    let out = net.forward(&batch)?;
    let logits = out.index_axis0(0)?;
    let fused = fuse_slices(&logits, &stats.selected, spec.effective_fusion())?;
    Ok(Prediction { logits, fused })
}
