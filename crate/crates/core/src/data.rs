//! Synthetic datasets: textured shape segmentation, layered depth scenes,
//! and graded corruptions for quality-score studies.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sl_tensor::Tensor;

use crate::error::{Result, SlError};
use crate::io::{read_tensor, write_atomic, write_tensor};
use crate::training::{Dataset, Sample};

pub const MIN_COVERAGE: f64 = 0.05;
pub const MAX_COVERAGE: f64 = 0.60;
const SUPERSAMPLE: usize = 4;
const MAX_DRAWS: usize = 10_000;

/// Generator for sample `index`: the seed picks the key, the index the
/// ChaCha stream, so samples are independent of generation order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Rectangle { cx: f64, cy: f64, half_w: f64, half_h: f64, angle: f64 },
    Ring { cx: f64, cy: f64, outer: f64, inner: f64 },
}

impl Shape {
    /// Whether the point `(x, y)` (pixel units, origin at the top-left
    /// corner) lies inside the shape.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let rot = |cx: f64, cy: f64, a: f64| {
            let (dx, dy) = (x - cx, y - cy);
            let (s, c) = a.sin_cos();
            (dx * c + dy * s, -dx * s + dy * c)
        };
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (u, v) = rot(cx, cy, angle);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rectangle { cx, cy, half_w, half_h, angle } => {
                let (u, v) = rot(cx, cy, angle);
                u.abs() <= half_w && v.abs() <= half_h
            }
            Shape::Ring { cx, cy, outer, inner } => {
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                r2 <= outer * outer && r2 >= inner * inner
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Ellipse,
    Rectangle,
    Ring,
    #[default]
    Mixed,
}

impl std::str::FromStr for ShapeFamily {
    type Err = SlError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| SlError::config(format!("unknown shape family {s:?}")))
    }
}

fn draw_shape(rng: &mut ChaCha8Rng, size: f64, family: ShapeFamily) -> Shape {
    let family = match family {
        ShapeFamily::Mixed => [ShapeFamily::Ellipse, ShapeFamily::Rectangle, ShapeFamily::Ring][rng.gen_range(0..3)],
        f => f,
    };
    let cx = rng.gen_range(0.2..0.8) * size;
    let cy = rng.gen_range(0.2..0.8) * size;
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    match family {
        ShapeFamily::Ellipse => Shape::Ellipse {
            cx,
            cy,
            rx: rng.gen_range(0.08..0.25) * size,
            ry: rng.gen_range(0.08..0.25) * size,
            angle,
        },
        ShapeFamily::Rectangle => Shape::Rectangle {
            cx,
            cy,
            half_w: rng.gen_range(0.07..0.22) * size,
            half_h: rng.gen_range(0.07..0.22) * size,
            angle,
        },
        _ => {
            let outer = rng.gen_range(0.12..0.28) * size;
            Shape::Ring {
                cx,
                cy,
                outer,
                inner: outer * rng.gen_range(0.4..0.7),
            }
        }
    }
}

/// Binary mask of the union of `shapes`, testing each pixel centre.
pub fn rasterize(shapes: &[Shape], size: usize) -> Vec<u8> {
    let mut out = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            out[y * size + x] = u8::from(shapes.iter().any(|s| s.contains(px, py)));
        }
    }
    out
}

/// Fraction of each pixel covered by the union, from a regular
/// `SUPERSAMPLE²` grid of sub-pixel points.
fn coverage_map(shapes: &[Shape], size: usize) -> Vec<f64> {
    let k = SUPERSAMPLE;
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..k {
                for sx in 0..k {
                    let px = x as f64 + (sx as f64 + 0.5) / k as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / k as f64;
                    hits += usize::from(shapes.iter().any(|s| s.contains(px, py)));
                }
            }
            out[y * size + x] = hits as f64 / (k * k) as f64;
        }
    }
    out
}

/// Smooth background: a random low-frequency sinusoid pattern plus pixel noise.
fn texture(rng: &mut ChaCha8Rng, size: usize, level: f64, amplitude: f64, noise: f64) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.05..0.35),
                rng.gen_range(0.05..0.35),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            let wave: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum::<f64>() / norm;
            let n: f64 = rng.sample(StandardNormal);
            level + amplitude * wave + noise * n
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScene {
    pub shapes: Vec<Shape>,
    pub coverage: f64,
}

/// Draws shape sets until the mask covers `[5%, 60%]` of the image.
pub fn draw_segmentation_scene(rng: &mut ChaCha8Rng, size: usize, family: ShapeFamily) -> Result<SegmentationScene> {
    for _ in 0..MAX_DRAWS {
        let count = rng.gen_range(1..=3);
        let shapes: Vec<Shape> = (0..count).map(|_| draw_shape(rng, size as f64, family)).collect();
        let mask = rasterize(&shapes, size);
        let coverage = mask.iter().map(|&v| v as usize).sum::<usize>() as f64 / (size * size) as f64;
        if (MIN_COVERAGE..=MAX_COVERAGE).contains(&coverage) {
            return Ok(SegmentationScene { shapes, coverage });
        }
    }
    Err(SlError::config(format!("size {size} cannot meet the coverage bounds")))
}

/// One image `[1, S, S]` in roughly `[0, 1]` and its mask `[1, S, S]`.
pub fn segmentation_sample(seed: u64, index: u64, size: usize, family: ShapeFamily) -> Result<(Tensor<f32>, Tensor<u8>, SegmentationScene)> {
    let mut rng = sample_rng(seed, index);
    let scene = draw_segmentation_scene(&mut rng, size, family)?;
    let mask = rasterize(&scene.shapes, size);
    let cov = coverage_map(&scene.shapes, size);
    let contrast = rng.gen_range(0.3..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let bg = texture(&mut rng, size, 0.5, 0.12, 0.04);
    let img: Vec<f32> = bg.iter().zip(&cov).map(|(b, c)| (b + contrast * c) as f32).collect();
    Ok((
        Tensor::from_vec(vec![1, size, size], img)?,
        Tensor::from_vec(vec![1, size, size], mask)?,
        scene,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthScene {
    /// Background plane `d0 + gx·x/S + gy·y/S`.
    pub plane: [f64; 3],
    pub occluders: Vec<(Shape, f64)>,
    pub size: usize,
}

impl DepthScene {
    /// Depth at a point: the nearest (smallest) of the background and every
    /// occluder covering the point.
    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        let s = self.size as f64;
        let [d0, gx, gy] = self.plane;
        let mut d = d0 + gx * x / s + gy * y / s;
        for (shape, depth) in &self.occluders {
            if shape.contains(x, y) && *depth < d {
                d = *depth;
            }
        }
        d
    }
}

pub fn draw_depth_scene(rng: &mut ChaCha8Rng, size: usize) -> DepthScene {
    let plane = [rng.gen_range(4.0..6.0), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
    let count = rng.gen_range(1..=3);
    let mut depths: Vec<f64> = Vec::with_capacity(count);
    while depths.len() < count {
        let d = rng.gen_range(1.0..3.5);
        if depths.iter().all(|&o| (o - d).abs() >= 0.25) {
            depths.push(d);
        }
    }
    let occluders = depths
        .into_iter()
        .map(|d| (draw_shape(rng, size as f64, ShapeFamily::Mixed), d))
        .collect();
    DepthScene { plane, occluders, size }
}

/// Image, depth and valid mask `[1, S, S]`. The image is inverse depth with
/// mild texture; a random 10-30% of pixels are marked invalid and their
/// depth zeroed.
pub fn depth_sample(seed: u64, index: u64, size: usize) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<u8>, DepthScene)> {
    let mut rng = sample_rng(seed, index);
    let scene = draw_depth_scene(&mut rng, size);
    let n = size * size;
    let mut depth: Vec<f64> = (0..n)
        .map(|i| scene.depth_at((i % size) as f64 + 0.5, (i / size) as f64 + 0.5))
        .collect();
    let tex = texture(&mut rng, size, 0.0, 0.05, 0.02);
    let img: Vec<f32> = depth.iter().zip(&tex).map(|(d, t)| (2.0 / d + t) as f32).collect();
    let drop_fraction = rng.gen_range(0.1..0.3);
    let dropped = (drop_fraction * n as f64).round() as usize;
    let mut valid = vec![1u8; n];
    for i in sample_indices(&mut rng, n, dropped).into_iter() {
        valid[i] = 0;
        depth[i] = 0.0;
    }
    Ok((
        Tensor::from_vec(vec![1, size, size], img)?,
        Tensor::from_vec(vec![1, size, size], depth.into_iter().map(|d| d as f32).collect())?,
        Tensor::from_vec(vec![1, size, size], valid)?,
        scene,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    GaussianNoise,
    Blur,
    Occlusion,
}

impl std::str::FromStr for Corruption {
    type Err = SlError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| SlError::config(format!("unknown corruption {s:?}")))
    }
}

const NOISE_SIGMA: [f64; 5] = [0.04, 0.08, 0.15, 0.25, 0.4];
const BLUR_SIGMA: [f64; 5] = [0.6, 1.0, 1.6, 2.4, 3.5];
/// Side of the occluding square as a fraction of the image side.
const OCCLUSION_SIDE: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];

/// Noise sigma, blur sigma, or occluded side fraction at `severity`.
pub fn severity_parameter(kind: Corruption, severity: usize) -> Result<f64> {
    if !(1..=5).contains(&severity) {
        return Err(SlError::config(format!("severity must be in 1..=5, got {severity}")));
    }
    Ok(match kind {
        Corruption::GaussianNoise => NOISE_SIGMA[severity - 1],
        Corruption::Blur => BLUR_SIGMA[severity - 1],
        Corruption::Occlusion => OCCLUSION_SIDE[severity - 1],
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of one plane with edge clamping.
fn blur_plane(src: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (0..k.len())
                .map(|j| k[j] * src[y * w + clamp(x as isize + j as isize - r, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..k.len())
                .map(|j| k[j] * tmp[clamp(y as isize + j as isize - r, h) * w + x])
                .sum::<f64>() as f32;
        }
    }
    out
}

/// Applies a corruption to `[C, Y, X]`. For a fixed seed the severities are
/// nested: noise scales one noise field, occlusion grows one square from a
/// fixed corner and fills it from one random field.
pub fn corrupt(image: &Tensor<f32>, kind: Corruption, severity: usize, seed: u64) -> Result<Tensor<f32>> {
    let level = severity_parameter(kind, severity)?;
    let d = image.dims();
    if d.len() != 3 {
        return Err(SlError::config(format!("corrupt expects [C, Y, X], got {d:?}")));
    }
    let (c, h, w) = (d[0], d[1], d[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    match kind {
        Corruption::GaussianNoise => {
            for v in out.data_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v = (*v as f64 + level * n) as f32;
            }
        }
        Corruption::Blur => {
            for ch in 0..c {
                let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
                out.data_mut()[ch * h * w..(ch + 1) * h * w].copy_from_slice(&blur_plane(plane, h, w, level));
            }
        }
        Corruption::Occlusion => {
            let max_side = |n: usize| (OCCLUSION_SIDE[4] * n as f64).ceil() as usize;
            let (sy, sx) = (max_side(h).min(h), max_side(w).min(w));
            let y0 = rng.gen_range(0..=h - sy);
            let x0 = rng.gen_range(0..=w - sx);
            let fill: Vec<f32> = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (ly, lx) = (((level * h as f64).ceil() as usize).min(h), ((level * w as f64).ceil() as usize).min(w));
            for ch in 0..c {
                for y in y0..(y0 + ly).min(h) {
                    for x in x0..(x0 + lx).min(w) {
                        let i = (ch * h + y) * w + x;
                        out.data_mut()[i] = fill[i];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segmentation,
    Depth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub input: String,
    pub target: String,
    #[serde(default)]
    pub valid: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub n: usize,
    pub size: usize,
    #[serde(default)]
    pub shape_family: Option<ShapeFamily>,
    #[serde(default)]
    pub corruption: Option<(Corruption, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub task: Task,
    /// `[height, width]`.
    pub geometry: [usize; 2],
    pub in_channels: usize,
    pub classes: usize,
    pub generator: GeneratorInfo,
    pub samples: Vec<SampleRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn check_n(n: usize, size: usize) -> Result<()> {
    if n == 0 {
        return Err(SlError::config("sample count must be positive"));
    }
    if size < 8 {
        return Err(SlError::config(format!("image size {size} is too small")));
    }
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(manifest)?;
    text.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &text)
}

pub fn gen_segmentation(dir: &Path, seed: u64, n: usize, size: usize, family: ShapeFamily) -> Result<Manifest> {
    check_n(n, size)?;
    fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (img, mask, _) = segmentation_sample(seed, i as u64, size, family)?;
        let rec = SampleRecord {
            input: format!("{i:05}.image.slt"),
            target: format!("{i:05}.mask.slt"),
            valid: None,
        };
        write_tensor(&dir.join(&rec.input), &img.into())?;
        write_tensor(&dir.join(&rec.target), &mask.into())?;
        samples.push(rec);
    }
    let manifest = Manifest {
        task: Task::Segmentation,
        geometry: [size, size],
        in_channels: 1,
        classes: 1,
        generator: GeneratorInfo {
            seed,
            n,
            size,
            shape_family: Some(family),
            corruption: None,
        },
        samples,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn gen_depth(dir: &Path, seed: u64, n: usize, size: usize) -> Result<Manifest> {
    check_n(n, size)?;
    fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (img, depth, valid, _) = depth_sample(seed, i as u64, size)?;
        let rec = SampleRecord {
            input: format!("{i:05}.image.slt"),
            target: format!("{i:05}.depth.slt"),
            valid: Some(format!("{i:05}.valid.slt")),
        };
        write_tensor(&dir.join(&rec.input), &img.into())?;
        write_tensor(&dir.join(&rec.target), &depth.into())?;
        write_tensor(&dir.join(rec.valid.as_ref().expect("set above")), &valid.into())?;
        samples.push(rec);
    }
    let manifest = Manifest {
        task: Task::Depth,
        geometry: [size, size],
        in_channels: 1,
        classes: 1,
        generator: GeneratorInfo {
            seed,
            n,
            size,
            shape_family: None,
            corruption: None,
        },
        samples,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Writes a corrupted copy of a dataset; sample `i` uses seed `seed + i`.
pub fn corrupt_dataset(src: &Path, dst: &Path, kind: Corruption, severity: usize, seed: u64) -> Result<Manifest> {
    severity_parameter(kind, severity)?;
    let (mut manifest, data) = load_dataset(src)?;
    fs::create_dir_all(dst)?;
    for (i, (rec, s)) in manifest.samples.iter().zip(&data.samples).enumerate() {
        let img = corrupt(&s.input, kind, severity, seed.wrapping_add(i as u64))?;
        write_tensor(&dst.join(&rec.input), &img.into())?;
        fs::copy(src.join(&rec.target), dst.join(&rec.target))?;
        if let Some(v) = &rec.valid {
            fs::copy(src.join(v), dst.join(v))?;
        }
    }
    manifest.generator.corruption = Some((kind, severity));
    write_manifest(dst, &manifest)?;
    Ok(manifest)
}

fn resolve(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.is_file() {
        return Err(SlError::config(format!("manifest references missing file {}", p.display())));
    }
    Ok(p)
}

/// Reads and validates a dataset directory: every file must exist and
/// parse, and every tensor must share the manifest geometry.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Dataset)> {
    let text = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.samples.is_empty() {
        return Err(SlError::config("manifest lists no samples"));
    }
    let [h, w] = manifest.geometry;
    let paths = manifest
        .samples
        .iter()
        .map(|r| {
            Ok((
                resolve(dir, &r.input)?,
                resolve(dir, &r.target)?,
                r.valid.as_deref().map(|v| resolve(dir, v)).transpose()?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(paths.len());
    for (i, (input, target, valid)) in paths.into_iter().enumerate() {
        let input = read_tensor(&input)?.to_f32();
        let target = read_tensor(&target)?.to_f32();
        let valid = valid.map(|v| read_tensor(&v).map(|t| t.to_f32())).transpose()?;
        let want_in = [manifest.in_channels, h, w];
        let want_t = [manifest.classes, h, w];
        let bad = input.dims() != want_in || target.dims() != want_t || valid.as_ref().is_some_and(|v| v.dims() != want_t);
        if bad {
            return Err(SlError::config(format!(
                "sample {i} geometry {:?}/{:?} differs from manifest {want_in:?}/{want_t:?}",
                input.dims(),
                target.dims()
            )));
        }
        samples.push(Sample { input, target, valid });
    }
    Ok((manifest, Dataset::new(samples)))
}
