mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sl_core::{decode_segmentation, fuse_slices, lift, lift_batch, replicate_target, select_slices, Fusion};
use sl_tensor::Tensor;

#[test]
fn every_lifted_slice_equals_the_input() {
    let mut r = rng(1);
    for m in [1, 2, 5, 16] {
        let x = random::<f32>(&mut r, &[3, 7, 9], 2.0);
        let l = lift(&x, m).unwrap();
        assert_eq!(l.dims(), &[3, m, 7, 9]);
        for z in 0..m {
            assert_eq!(bits(&l.select(1, z).unwrap()), bits(&x));
        }
        assert_eq!(replicate_target(&x, m).unwrap(), l);
    }
}

#[test]
fn batch_lifting_matches_per_sample_lifting() {
    let mut r = rng(2);
    let b = random::<f32>(&mut r, &[4, 2, 5, 6], 1.0);
    let lb = lift_batch(&b, 3).unwrap();
    for n in 0..4 {
        assert_eq!(lb.index_axis0(n).unwrap(), lift(&b.index_axis0(n).unwrap(), 3).unwrap());
    }
}

#[test]
fn lifting_rejects_bad_inputs() {
    let x = Tensor::<f32>::zeros(vec![1, 4, 4]).unwrap();
    assert!(lift(&x, 0).is_err());
    assert!(lift(&Tensor::<f32>::zeros(vec![4, 4]).unwrap(), 2).is_err());
}

/// Full sort of `(loss, index)` pairs, first `s` taken and re-sorted by index.
fn selection_oracle(losses: &[f64], s: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = losses.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut sel: Vec<usize> = pairs[..s].iter().map(|p| p.1).collect();
    sel.sort();
    sel
}

#[test]
fn selection_matches_sort_oracle_on_1000_vectors() {
    let mut r = rng(3);
    for case in 0..1000 {
        let m = r.gen_range(1..=32);
        let s = r.gen_range(1..=m);
        // every fourth case draws from a handful of values to force ties
        let losses: Vec<f64> = (0..m)
            .map(|_| if case % 4 == 0 { r.gen_range(0..4) as f64 * 0.25 } else { r.gen_range(0.0..3.0) })
            .collect();
        let stats = select_slices(&losses, s).unwrap();
        assert_eq!(stats.selected, selection_oracle(&losses, s), "case {case}: {losses:?}");
        assert_eq!(stats.s, s);
        assert_eq!(stats.per_slice_loss, losses);
    }
}

#[test]
fn selection_examples() {
    assert_eq!(select_slices(&[0.3, 0.1, 0.2, 0.5], 2).unwrap().selected, vec![1, 2]);
    assert_eq!(select_slices(&[0.2, 0.2, 0.2], 2).unwrap().selected, vec![0, 1]);
    assert!(select_slices(&[0.1, 0.2], 3).is_err());
    assert!(select_slices(&[0.1, 0.2], 0).is_err());
    assert!(select_slices(&[0.1, f64::NAN], 1).is_err());
}

/// Per-pixel sum over the selected slices followed by the fusion map.
fn fusion_oracle(logits: &Tensor<f64>, selected: &[usize], fusion: Fusion) -> Tensor<f64> {
    let d = logits.dims();
    let (c, h, w) = (d[0], d[2], d[3]);
    let mut sums = Tensor::zeros(vec![c, h, w]).unwrap();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let s: f64 = selected.iter().map(|&z| logits.get(&[ch, z, y, x])).sum();
                sums.set(&[ch, y, x], s);
            }
        }
    }
    match fusion {
        Fusion::Sigmoid => sums.map(sigmoid),
        Fusion::DepthMean => sums.map(|v| v / selected.len() as f64),
        Fusion::Softmax => {
            let mut out = sums.clone();
            for y in 0..h {
                for x in 0..w {
                    let z: f64 = (0..c).map(|ch| sums.get(&[ch, y, x]).exp()).sum();
                    for ch in 0..c {
                        out.set(&[ch, y, x], sums.get(&[ch, y, x]).exp() / z);
                    }
                }
            }
            out
        }
    }
}

#[test]
fn fusion_matches_per_pixel_oracle() {
    let mut r = rng(4);
    for _ in 0..50 {
        let c = r.gen_range(1..=3);
        let m = r.gen_range(1..=8);
        let s = r.gen_range(1..=m);
        let logits = random::<f64>(&mut r, &[c, m, 5, 4], 3.0);
        let losses: Vec<f64> = (0..m).map(|_| r.gen()).collect();
        let sel = select_slices(&losses, s).unwrap().selected;
        for fusion in [Fusion::Sigmoid, Fusion::Softmax, Fusion::DepthMean] {
            let got = fuse_slices(&logits, &sel, fusion).unwrap();
            let want = fusion_oracle(&logits, &sel, fusion);
            let err = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{fusion:?}: {err}");
        }
    }
}

#[test]
fn fusion_rejects_bad_selections() {
    let logits = Tensor::<f32>::zeros(vec![1, 3, 2, 2]).unwrap();
    assert!(fuse_slices(&logits, &[], Fusion::Sigmoid).is_err());
    assert!(fuse_slices(&logits, &[0, 0], Fusion::Sigmoid).is_err());
    assert!(fuse_slices(&logits, &[3], Fusion::Sigmoid).is_err());
}

#[test]
fn decode_matches_scan_oracle() {
    let mut r = rng(5);
    for c in [1, 2, 4] {
        let probs = Tensor::<f64>::from_fn(vec![c, 6, 7], |_| r.gen_range(0..5) as f64 * 0.25).unwrap();
        let labels = decode_segmentation(&probs).unwrap();
        assert_eq!(labels.dims(), &[6, 7]);
        for y in 0..6 {
            for x in 0..7 {
                let want = if c == 1 {
                    u8::from(probs.get(&[0, y, x]) > 0.5)
                } else {
                    let mut best = 0;
                    for k in 0..c {
                        if probs.get(&[k, y, x]) > probs.get(&[best, y, x]) {
                            best = k;
                        }
                    }
                    best as u8
                };
                assert_eq!(labels.get(&[y, x]), want);
            }
        }
    }
}

#[test]
fn half_probability_decodes_to_background() {
    let p = Tensor::<f32>::full(vec![1, 2, 2], 0.5).unwrap();
    assert!(decode_segmentation(&p).unwrap().data().iter().all(|&v| v == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn selected_losses_never_exceed_unselected(losses in prop::collection::vec(0.0f64..10.0, 1..40), frac in 0.0f64..1.0) {
        let m = losses.len();
        let s = 1 + ((m - 1) as f64 * frac) as usize;
        let stats = select_slices(&losses, s).unwrap();
        prop_assert_eq!(stats.selected.len(), s);
        prop_assert!(stats.selected.windows(2).all(|w| w[0] < w[1]));
        let worst_in = stats.selected.iter().map(|&z| losses[z]).fold(f64::MIN, f64::max);
        let best_out = stats.unselected().iter().map(|&z| losses[z]).fold(f64::MAX, f64::min);
        prop_assert!(worst_in <= best_out);
    }

    #[test]
    fn fusion_ignores_selection_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let logits = random::<f32>(&mut r, &[2, 6, 3, 3], 5.0);
        let mut sel = vec![4, 0, 2, 5];
        let a = fuse_slices(&logits, &sel, Fusion::Sigmoid).unwrap();
        sel.reverse();
        let b = fuse_slices(&logits, &sel, Fusion::Sigmoid).unwrap();
        prop_assert_eq!(bits(&a), bits(&b));
    }
}
