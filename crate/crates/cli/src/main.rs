//! `slift`: dataset generation, training, inference, quality scoring, cost
//! accounting and gradient checks for spatially lifted networks.
//!
//! Every command logs line-delimited JSON records on stdout. Exit codes:
//! 0 success, 1 invalid input or usage, 2 numeric failure.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sl_core::data::{corrupt_dataset, gen_depth, gen_segmentation, load_dataset, Corruption, Manifest, ShapeFamily, Task};
use sl_core::io::{load_checkpoint, save_checkpoint, write_tensor, AnyTensor};
use sl_core::{
    compare, correlations, decode_segmentation, depth_metrics, dice, lift, model_cost, pqa_score, predict, train_with,
    ActivationKind, ArchSpec, Checkpoint, CostReport, Head, Network, SlError, TrainConfig, ZPadding,
};
use sl_tensor::{check_gradients, Graph, Tensor};

#[derive(Parser)]
#[command(name = "slift", version, about = "Spatial lifting for dense prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset, or a corrupted copy of one.
    GenData(GenDataArgs),
    /// Train a network and write a checkpoint.
    Train(TrainArgs),
    /// Write fused predictions for every sample of a dataset.
    Infer(InferArgs),
    /// Score prediction quality from slice agreement and correlate it with Dice.
    Pqa(PqaArgs),
    /// Dice for segmentation, RMSE and δ₁ for depth.
    Eval(EvalArgs),
    /// Parameter and MAC counts of a spec against a 2-D baseline.
    Costmodel(CostArgs),
    /// Finite-difference check of a small network's gradients.
    Gradcheck(GradArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Segmentation,
    Depth,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "segmentation")]
    task: TaskArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value = "mixed")]
    shape_family: ShapeFamily,
    #[arg(long)]
    seed: Option<u64>,
    /// Corrupt this dataset instead of generating a new one.
    #[arg(long, requires_all = ["corruption", "severity"])]
    from: Option<PathBuf>,
    #[arg(long, requires = "from")]
    corruption: Option<Corruption>,
    #[arg(long, requires = "from")]
    severity: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON document with `spec` and `training` sections.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PqaArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    permutations: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Spec to compare against; defaults to the 2-D U-Net with the same
    /// levels, residual units and channel counts in and out.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// `HEIGHTxWIDTH`, e.g. `512x512`.
    #[arg(long)]
    geometry: String,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct GradArgs {
    /// Spec to check; defaults to a two-level network of width 2 and depth 3.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    size: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    spec: ArchSpec,
    training: TrainConfig,
}

/// A failed command and its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl fmt::Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }

    fn numeric(message: impl fmt::Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }
}

/// Prefixes a core error with the path it concerns.
fn at(path: &Path) -> impl Fn(SlError) -> Failure + '_ {
    move |e| {
        let f = Failure::from(e);
        Failure { message: format!("{}: {}", path.display(), f.message), ..f }
    }
}

impl From<SlError> for Failure {
    fn from(e: SlError) -> Self {
        if e.is_numeric() {
            Self::numeric(e)
        } else {
            Self::invalid(e)
        }
    }
}

impl From<sl_tensor::TensorError> for Failure {
    fn from(e: sl_tensor::TensorError) -> Self {
        SlError::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

fn emit(record: serde_json::Value) {
    // a closed pipe downstream is not an error of ours
    let _ = writeln!(std::io::stdout().lock(), "{record}");
}

/// `--seed`, else `SL_SEED`, else `fallback`.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SL_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Failure::invalid(format!("SL_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn gen_data(a: GenDataArgs) -> Outcome {
    let seed = resolve_seed(a.seed, 0)?;
    let manifest = match (&a.from, a.corruption, a.severity) {
        (Some(src), Some(kind), Some(severity)) => corrupt_dataset(src, &a.out, kind, severity, seed)?,
        _ => match a.task {
            TaskArg::Segmentation => gen_segmentation(&a.out, seed, a.n, a.size, a.shape_family)?,
            TaskArg::Depth => gen_depth(&a.out, seed, a.n, a.size)?,
        },
    };
    emit(json!({
        "event": "dataset",
        "out": a.out,
        "task": manifest.task,
        "samples": manifest.samples.len(),
        "geometry": manifest.geometry,
        "generator": manifest.generator,
    }));
    Ok(())
}

fn check_task(manifest: &Manifest, spec: &ArchSpec) -> Outcome {
    let fits = matches!(
        (manifest.task, spec.head),
        (Task::Segmentation, Head::Segmentation) | (Task::Depth, Head::Depth)
    );
    if !fits {
        return Err(Failure::invalid(format!("{:?} dataset does not fit a {:?} head", manifest.task, spec.head)));
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let mut run: RunConfig = read_json(&a.config)?;
    run.training.seed = resolve_seed(a.seed, run.training.seed)?;
    run.spec.validate()?;
    run.training.validate()?;
    let (manifest, data) = load_dataset(&a.data).map_err(at(&a.data))?;
    check_task(&manifest, &run.spec)?;
    let ck = train_with(&data, &run.spec, &run.training, |r| {
        emit(json!({
            "event": "epoch",
            "epoch": r.epoch,
            "mean_loss": r.mean_loss,
            "learning_rate": r.learning_rate,
            "per_slice_loss": r.per_slice_loss,
        }))
    })?;
    let digest = save_checkpoint(&a.out, &ck)?;
    emit(json!({
        "event": "checkpoint",
        "path": a.out,
        "sha256": digest,
        "selected": ck.stats.selected,
        "per_slice_loss": ck.stats.per_slice_loss,
        "seed": run.training.seed,
    }));
    Ok(())
}

fn load(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, Manifest, sl_core::Dataset), Failure> {
    let ck = load_checkpoint(checkpoint).map_err(at(checkpoint))?;
    let (manifest, set) = load_dataset(data).map_err(at(data))?;
    check_task(&manifest, ck.network.spec())?;
    set.validate(ck.network.spec(), ck.config.loss)?;
    Ok((ck, manifest, set))
}

fn labels_3d(fused: &Tensor<f32>) -> Result<Tensor<u8>, Failure> {
    let labels = decode_segmentation(fused)?;
    let d = labels.dims().to_vec();
    Ok(labels.reshape(vec![1, d[0], d[1]])?)
}

fn infer(a: InferArgs) -> Outcome {
    let (ck, manifest, set) = load(&a.checkpoint, &a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| Failure::invalid(format!("{}: {e}", a.out.display())))?;
    for (i, s) in set.samples.iter().enumerate() {
        let p = predict(&ck.network, &ck.stats, &s.input)?;
        let fused = format!("{i:05}.fused.slt");
        write_tensor(&a.out.join(&fused), &AnyTensor::F32(p.fused.clone()))?;
        let mut rec = json!({"event": "prediction", "index": i, "fused": fused});
        if manifest.task == Task::Segmentation {
            let name = format!("{i:05}.labels.slt");
            write_tensor(&a.out.join(&name), &AnyTensor::U8(labels_3d(&p.fused)?))?;
            rec["labels"] = json!(name);
        }
        emit(rec);
    }
    Ok(())
}

/// Dice of the fused label map against a binary target.
fn fused_dice(fused: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64, Failure> {
    let gt = target.map(|v| u8::from(v > 0.5));
    if fused.dims()[0] == 1 {
        return Ok(dice(&labels_3d(fused)?, &gt)?);
    }
    // one-hot targets: compare per class, averaged over classes present in either
    let labels = decode_segmentation(fused)?;
    let (c, plane) = (fused.dims()[0], labels.numel());
    let mut total = 0.0;
    let mut count = 0;
    for k in 0..c {
        let a = Tensor::from_vec(vec![plane], labels.data().iter().map(|&l| u8::from(l as usize == k)).collect())?;
        let b = Tensor::from_vec(vec![plane], gt.data()[k * plane..(k + 1) * plane].to_vec())?;
        if a.data().contains(&1) || b.data().contains(&1) {
            total += dice(&a, &b)?;
            count += 1;
        }
    }
    Ok(if count == 0 { 1.0 } else { total / count as f64 })
}

fn pqa(a: PqaArgs) -> Outcome {
    let seed = resolve_seed(a.seed, 0)?;
    let (ck, manifest, set) = load(&a.checkpoint, &a.data)?;
    if manifest.task != Task::Segmentation {
        return Err(Failure::invalid("quality scoring needs a segmentation dataset"));
    }
    let (mut qs, mut dices) = (Vec::new(), Vec::new());
    for (i, s) in set.samples.iter().enumerate() {
        let p = predict(&ck.network, &ck.stats, &s.input)?;
        let report = pqa_score(&p.logits, &ck.stats)?;
        let d = fused_dice(&p.fused, &s.target)?;
        emit(json!({"event": "pqa", "index": i, "q": report.q, "dice": d}));
        qs.push(report.q);
        dices.push(d);
    }
    let corr = correlations(&qs, &dices, a.permutations, seed)?;
    emit(json!({"event": "correlation", "report": corr}));
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let (ck, manifest, set) = load(&a.checkpoint, &a.data)?;
    let n = set.len() as f64;
    match manifest.task {
        Task::Segmentation => {
            let mut sum = 0.0;
            for (i, s) in set.samples.iter().enumerate() {
                let d = fused_dice(&predict(&ck.network, &ck.stats, &s.input)?.fused, &s.target)?;
                emit(json!({"event": "sample", "index": i, "dice": d}));
                sum += d;
            }
            emit(json!({"event": "summary", "samples": set.len(), "mean_dice": sum / n}));
        }
        Task::Depth => {
            let (mut rmse, mut d1) = (0.0, 0.0);
            for (i, s) in set.samples.iter().enumerate() {
                let p = predict(&ck.network, &ck.stats, &s.input)?;
                let valid = s.valid.as_ref().ok_or_else(|| Failure::invalid(format!("sample {i} has no valid mask")))?;
                let (r, d) = depth_metrics(&p.fused, &s.target, valid)?;
                emit(json!({"event": "sample", "index": i, "rmse": r, "delta1": d}));
                rmse += r;
                d1 += d;
            }
            emit(json!({"event": "summary", "samples": set.len(), "mean_rmse": rmse / n, "mean_delta1": d1 / n}));
        }
    }
    Ok(())
}

fn parse_geometry(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::invalid(format!("geometry {text:?} is not HEIGHTxWIDTH"));
    let (h, w) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn print_table(label: &str, r: &CostReport) {
    println!("{label} ({}x{}, depth {})", r.geometry.height, r.geometry.width, r.geometry.depth);
    println!("  {:<24} {:>14} {:>16}", "layer", "params", "MACs");
    for row in &r.rows {
        println!("  {:<24} {:>14} {:>16}", row.name, row.params, row.macs);
    }
    println!("  {:<24} {:>14} {:>16}", "total", r.total_params, r.total_macs);
}

fn costmodel(a: CostArgs) -> Outcome {
    let (h, w) = parse_geometry(&a.geometry)?;
    let spec: ArchSpec = read_json(&a.spec)?;
    let base = match &a.baseline {
        Some(p) => read_json(p)?,
        None => ArchSpec::baseline(spec.levels, spec.res_units, spec.in_channels, spec.out_channels),
    };
    let c = compare(&base, &spec, h, w)?;
    match a.format {
        Format::Table => {
            print_table("baseline", &c.a);
            print_table("spec", &c.b);
            println!("param ratio {:.6}  MAC ratio {:.6}", c.param_ratio, c.mac_ratio);
        }
        Format::Json => {
            for (model, report) in [("baseline", &c.a), ("spec", &c.b)] {
                for row in &report.rows {
                    emit(json!({"event": "layer", "model": model, "name": row.name, "kind": row.kind, "params": row.params, "macs": row.macs}));
                }
            }
            emit(json!({
                "event": "summary",
                "geometry": c.b.geometry,
                "spec": {"params": c.b.total_params, "macs": c.b.total_macs},
                "baseline": {"params": c.a.total_params, "macs": c.a.total_macs},
                "param_ratio": c.param_ratio,
                "mac_ratio": c.mac_ratio,
            }));
        }
    }
    Ok(())
}

fn gradcheck(a: GradArgs) -> Outcome {
    use rand::{Rng, SeedableRng};
    let seed = resolve_seed(a.seed, 0)?;
    let spec = match &a.spec {
        Some(p) => read_json(p)?,
        None => {
            let mut s = ArchSpec::sl(2, 1, 2, 3, 1, 1).with_z_padding(ZPadding::Circular);
            s.activation = ActivationKind::LeakyRelu;
            s
        }
    };
    model_cost(&spec, a.size, a.size)?;
    let net = Network::<f64>::build(&spec, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![1, spec.in_channels, spec.lift_depth, a.size, a.size];
    let image = Tensor::from_fn(vec![spec.in_channels, a.size, a.size], |_| rng.gen_range(-1.0..1.0))?;
    let x = lift(&image, spec.lift_depth)?.reshape(dims)?;
    let out_dims = vec![1, spec.out_channels, spec.lift_depth, a.size, a.size];
    let coeff = Tensor::from_fn(out_dims, |_| rng.gen_range(-1.0..1.0))?;
    let n = net.params().len();
    let mut inputs = net.params().to_vec();
    inputs.push(x);
    let report = check_gradients(&inputs, a.step, |g: &mut Graph<f64>, v| {
        let y = net
            .forward_vars(g, v[n], &v[..n])
            .map_err(|e| sl_tensor::TensorError::Shape(e.to_string()))?;
        let c = g.constant(coeff.clone());
        let p = g.mul(y, c)?;
        g.sum_all(p)
    })?;
    for (name, err) in net.names().iter().map(String::as_str).chain(["input"]).zip(&report.rel_errors) {
        emit(json!({"event": "gradient", "tensor": name, "rel_error": err}));
    }
    let worst = report.max_rel_error();
    emit(json!({"event": "summary", "max_rel_error": worst, "tolerance": a.tolerance, "seed": seed}));
    if !(worst < a.tolerance) {
        return Err(Failure::numeric(format!("max relative error {worst:e} exceeds {:e}", a.tolerance)));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Pqa(a) => pqa(a),
        Command::Eval(a) => eval(a),
        Command::Costmodel(a) => costmodel(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
