use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sl_tensor::{Graph, Tensor, TensorError};

use super::losses::{boundary_weights, slice_loss_graph, LossKind};
use super::optim::{clip_grad_norm, clip_grad_value, optimizer_step, AdamState, AdamW, ClipMode, Scheduler};
use crate::error::{Result, SlError};
use crate::lifting::{lift_batch, select_slices, SliceStats};
use crate::model::{ArchSpec, Head, Network};

fn d_lr() -> f64 {
    1e-3
}
fn d_clip() -> f64 {
    0.5
}
fn d_batch() -> usize {
    1
}
fn d_select() -> usize {
    5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryWeight {
    pub radius: usize,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: AdamW,
    #[serde(default)]
    pub scheduler: Scheduler,
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub clip_mode: ClipMode,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Number of slices kept for fusion.
    #[serde(default = "d_select")]
    pub select: usize,
    /// Track per-slice losses over every epoch instead of the final one.
    #[serde(default)]
    pub track_all_epochs: bool,
    /// Boundary emphasis for the weighted BCE/IoU loss; uniform when absent.
    #[serde(default)]
    pub boundary_weight: Option<BoundaryWeight>,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate: d_lr(),
            optimizer: AdamW::default(),
            scheduler: Scheduler::default(),
            grad_clip: d_clip(),
            clip_mode: ClipMode::Norm,
            loss: LossKind::DiceBce,
            seed,
            batch_size: d_batch(),
            select: d_select(),
            track_all_epochs: false,
            boundary_weight: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.select == 0 {
            return Err(SlError::config("epochs, batch_size and select must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SlError::config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.grad_clip > 0.0 && self.grad_clip.is_finite()) {
            return Err(SlError::config(format!("grad_clip must be positive, got {}", self.grad_clip)));
        }
        if self.boundary_weight.is_some() && self.loss != LossKind::WbceWiou {
            return Err(SlError::config("boundary_weight applies to the wbce_wiou loss only"));
        }
        self.optimizer.validate()?;
        self.scheduler.validate()
    }
}

/// One training pair: input `[C, Y, X]`, target `[Cout, Y, X]`, and for
/// masked losses a binary valid mask shaped like the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub valid: Option<Tensor<f32>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks that every sample agrees in geometry with `spec`.
    pub fn validate(&self, spec: &ArchSpec, loss: LossKind) -> Result<()> {
        let first = self.samples.first().ok_or_else(|| SlError::config("dataset is empty"))?;
        let d = first.input.dims();
        if d.len() != 3 || d[0] != spec.in_channels {
            return Err(SlError::config(format!(
                "inputs must be [{}, Y, X], got {d:?}",
                spec.in_channels
            )));
        }
        spec.check_geometry(d[1], d[2])?;
        let tdims = [spec.out_channels, d[1], d[2]];
        for (i, s) in self.samples.iter().enumerate() {
            if s.input.dims() != d || s.target.dims() != tdims {
                return Err(SlError::config(format!(
                    "sample {i}: input {:?} / target {:?} differ from {d:?} / {tdims:?}",
                    s.input.dims(),
                    s.target.dims()
                )));
            }
            match (&s.valid, loss.is_masked()) {
                (Some(v), _) if v.dims() != tdims => {
                    return Err(SlError::config(format!("sample {i}: valid mask {:?}", v.dims())))
                }
                (None, true) => return Err(SlError::InvalidMask(format!("sample {i} has no valid mask"))),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub per_slice_loss: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub config: TrainConfig,
    pub stats: SliceStats,
    pub epoch: usize,
    pub rng_digest: String,
}

fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut h = Sha256::new();
    h.update(rng.get_seed());
    h.update(rng.get_stream().to_le_bytes());
    h.update(rng.get_word_pos().to_le_bytes());
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn stack(items: Vec<&Tensor<f32>>) -> Result<Tensor<f32>> {
    let owned: Vec<Tensor<f32>> = items.into_iter().cloned().collect();
    Ok(Tensor::stack(&owned)?)
}

/// Per-slice losses of one batch against the replicated targets, with the
/// gradient of their mean.
struct StepOutput {
    per_slice: Vec<f64>,
    total: f64,
    grads: Vec<Tensor<f32>>,
}

fn step(net: &Network<f32>, batch: &[&Sample], cfg: &TrainConfig) -> Result<StepOutput> {
    let m = net.spec().lift_depth;
    let inputs = lift_batch(&stack(batch.iter().map(|s| &s.input).collect())?, m)?;
    let targets = lift_batch(&stack(batch.iter().map(|s| &s.target).collect())?, m)?;
    let aux = match (cfg.loss, cfg.boundary_weight) {
        (LossKind::MaskedMseL1, _) => {
            let masks: Vec<&Tensor<f32>> = batch.iter().map(|s| s.valid.as_ref().expect("validated")).collect();
            Some(lift_batch(&stack(masks)?, m)?)
        }
        (LossKind::WbceWiou, Some(bw)) => {
            let maps = batch
                .iter()
                .map(|s| boundary_weights(&s.target, bw.radius, bw.gain))
                .collect::<Result<Vec<_>>>()?;
            Some(lift_batch(&Tensor::stack(&maps)?, m)?)
        }
        _ => None,
    };
    let mut g = Graph::new();
    let x = g.constant(inputs);
    let (logits, vars) = net.forward_graph(&mut g, x, true)?;
    let (total, per) = slice_loss_graph(&mut g, logits, &targets, aux.as_ref(), cfg.loss)?;
    let mut grads = g.backward(total)?;
    let grads = vars
        .iter()
        .zip(net.params())
        .map(|(&v, p)| grads.take(v).map_or_else(|| Tensor::zeros(p.dims().to_vec()), Ok))
        .collect::<std::result::Result<Vec<_>, TensorError>>()?;
    Ok(StepOutput {
        per_slice: g.value(per).data().iter().map(|&v| v as f64).collect(),
        total: g.value(total).item()? as f64,
        grads,
    })
}

/// Dense slice supervision: every output slice is trained against the
/// replicated target, and the final epoch's mean per-slice losses pick the
/// slices used for fusion.
pub fn train(dataset: &Dataset, spec: &ArchSpec, cfg: &TrainConfig) -> Result<Checkpoint> {
    train_with(dataset, spec, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    dataset: &Dataset,
    spec: &ArchSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    cfg.validate()?;
    dataset.validate(spec, cfg.loss)?;
    if spec.head == Head::Depth && !cfg.loss.is_masked() || spec.head == Head::Segmentation && cfg.loss.is_masked() {
        return Err(SlError::config(format!("loss {:?} does not fit a {:?} head", cfg.loss, spec.head)));
    }
    let m = spec.lift_depth;
    if cfg.select > m {
        return Err(SlError::config(format!("select {} exceeds lift depth {m}", cfg.select)));
    }
    let mut net = Network::<f32>::build(spec, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut tracked = vec![0.0; m];
    let mut tracked_count = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cfg.scheduler.lr_at(cfg.learning_rate, epoch);
        order.shuffle(&mut rng);
        let track = cfg.track_all_epochs || epoch + 1 == cfg.epochs;
        let mut epoch_slices = vec![0.0; m];
        let mut epoch_total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let blame = |e: SlError| match e {
                SlError::Numeric(msg) => SlError::Numeric(format!("epoch {}, samples {chunk:?} (batch {b}): {msg}", epoch + 1)),
                other => other,
            };
            let mut out = step(&net, &batch, cfg).map_err(blame)?;
            if !out.total.is_finite() || out.grads.iter().any(|g| !g.is_finite()) {
                return Err(blame(SlError::Numeric("non-finite loss or gradient".into())));
            }
            match cfg.clip_mode {
                ClipMode::Norm => {
                    clip_grad_norm(&mut out.grads, cfg.grad_clip);
                }
                ClipMode::Value => clip_grad_value(&mut out.grads, cfg.grad_clip),
            }
            optimizer_step(net.params_mut(), &out.grads, &mut state, &cfg.optimizer, lr)?;
            for row in out.per_slice.chunks(m) {
                for (z, &v) in row.iter().enumerate() {
                    epoch_slices[z] += v;
                    if track {
                        tracked[z] += v;
                    }
                }
                epoch_total += row.iter().sum::<f64>() / m as f64;
                if track {
                    tracked_count += 1;
                }
            }
        }
        let n = dataset.len() as f64;
        on_epoch(&EpochRecord {
            epoch: epoch + 1,
            mean_loss: epoch_total / n,
            learning_rate: lr,
            per_slice_loss: epoch_slices.iter().map(|v| v / n).collect(),
        });
    }
    let per_slice: Vec<f64> = tracked.iter().map(|v| v / tracked_count as f64).collect();
    let stats = select_slices(&per_slice, cfg.select)?;
    Ok(Checkpoint {
        network: net,
        config: cfg.clone(),
        stats,
        epoch: cfg.epochs,
        rng_digest: rng_digest(&rng),
    })
}
