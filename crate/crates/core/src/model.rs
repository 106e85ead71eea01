//! SL-UNet: a channel-constant 3-D U-Net over the lifted volume, and the
//! 2-D baseline U-Net expressed as the `K_z = 1`, `m = 1` special case.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sl_tensor::{ConvParams, Graph, PaddingMode, Scalar, Tensor, TensorError, Var};

use crate::error::{Result, SlError};
use crate::lifting::Fusion;

pub const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.01;
const BASELINE_WIDTH: usize = 32;
const BASELINE_CAP: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    #[default]
    Segmentation,
    Depth,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    #[default]
    Relu,
    LeakyRelu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZPadding {
    #[default]
    Zero,
    Circular,
}

fn default_kernel() -> [usize; 3] {
    [3, 3, 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub levels: usize,
    pub res_units: usize,
    pub channels: Vec<usize>,
    pub lift_depth: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: [usize; 3],
    #[serde(default)]
    pub head: Head,
    #[serde(default)]
    pub activation: ActivationKind,
    #[serde(default)]
    pub z_padding: ZPadding,
    /// Fusion for segmentation heads; depth heads always average.
    #[serde(default)]
    pub fusion: Fusion,
}

impl ArchSpec {
    /// SL-UNet with constant width `width` at every level.
    pub fn sl(levels: usize, res_units: usize, width: usize, lift_depth: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            levels,
            res_units,
            channels: vec![width; levels],
            lift_depth,
            in_channels,
            out_channels,
            kernel: default_kernel(),
            head: Head::Segmentation,
            activation: ActivationKind::Relu,
            z_padding: ZPadding::Zero,
            fusion: Fusion::Sigmoid,
        }
    }

    /// 2-D U-Net with widths doubling from 32 and capped at 512.
    pub fn baseline(levels: usize, res_units: usize, in_channels: usize, out_channels: usize) -> Self {
        let channels = (0..levels)
            .map(|l| BASELINE_WIDTH.saturating_mul(1usize.checked_shl(l as u32).unwrap_or(usize::MAX)).min(BASELINE_CAP))
            .collect();
        Self {
            channels,
            lift_depth: 1,
            kernel: [1, 3, 3],
            ..Self::sl(levels, res_units, 1, 1, in_channels, out_channels)
        }
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_z_padding(mut self, z: ZPadding) -> Self {
        self.z_padding = z;
        self
    }

    pub fn with_kernel(mut self, kernel: [usize; 3]) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SlError::Config(msg));
        if self.levels < 2 {
            return fail(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.channels.len() != self.levels {
            return fail(format!("{} channel entries for {} levels", self.channels.len(), self.levels));
        }
        if self.channels.contains(&0) || self.in_channels == 0 || self.out_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.lift_depth == 0 {
            return fail("lift_depth must be >= 1".into());
        }
        if self.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return fail(format!("kernel extents must be odd and positive, got {:?}", self.kernel));
        }
        if self.levels > 31 {
            return fail("too many levels".into());
        }
        if self.head == Head::Segmentation && self.fusion == Fusion::DepthMean {
            return fail("depth_mean fusion needs a depth head".into());
        }
        Ok(())
    }

    /// Extents must be divisible by `2^(L-1)`.
    pub fn check_geometry(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        let f = 1usize << (self.levels - 1);
        if height == 0 || width == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return Err(SlError::config(format!(
                "spatial extents {height}x{width} are not divisible by 2^(L-1) = {f}"
            )));
        }
        Ok(())
    }

    pub fn effective_fusion(&self) -> Fusion {
        match self.head {
            Head::Depth => Fusion::DepthMean,
            Head::Segmentation => self.fusion,
        }
    }

    fn z_mode(&self) -> PaddingMode {
        match self.z_padding {
            ZPadding::Zero => PaddingMode::Zero,
            ZPadding::Circular => PaddingMode::Circular,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    TransposedConv,
    Norm,
}

/// One parametrized layer; `level` is the resolution level of its output.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPlan {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: ConvParams,
    pub bias: bool,
    pub level: usize,
}

impl LayerPlan {
    /// Parameter tensor names (suffixes) and shapes, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let k = self.params.kernel;
        let mut out = match self.kind {
            LayerKind::Conv => vec![("weight", vec![self.out_channels, self.in_channels, k[0], k[1], k[2]])],
            LayerKind::TransposedConv => vec![("weight", vec![self.in_channels, self.out_channels, k[0], k[1], k[2]])],
            LayerKind::Norm => return vec![("gain", vec![self.out_channels]), ("shift", vec![self.out_channels])],
        };
        if self.bias {
            out.push(("bias", vec![self.out_channels]));
        }
        out
    }

    fn fan_in(&self) -> usize {
        let k = self.params.kernel;
        match self.kind {
            LayerKind::Conv => self.in_channels * k.iter().product::<usize>(),
            LayerKind::TransposedConv => {
                let s = self.params.stride;
                self.in_channels * (0..3).map(|a| k[a].div_ceil(s[a])).product::<usize>()
            }
            LayerKind::Norm => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Block {
    conv: usize,
    norm: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Stage {
    Plain(Block),
    Residual { block: Block, projection: Option<usize> },
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderLevel {
    down: Option<Block>,
    stages: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderLevel {
    level: usize,
    up: Block,
    stages: Vec<Stage>,
}

/// The layer list and wiring of a network, shared by construction and cost
/// accounting so both see the same layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Blueprint {
    pub layers: Vec<LayerPlan>,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    head: usize,
}

struct Planner<'a> {
    spec: &'a ArchSpec,
    layers: Vec<LayerPlan>,
}

impl Planner<'_> {
    fn push(&mut self, name: String, kind: LayerKind, cin: usize, cout: usize, params: ConvParams, bias: bool, level: usize) -> usize {
        self.layers.push(LayerPlan {
            name,
            kind,
            in_channels: cin,
            out_channels: cout,
            params,
            bias,
            level,
        });
        self.layers.len() - 1
    }

    fn same(&self) -> ConvParams {
        ConvParams::same(self.spec.kernel).with_mode(0, self.spec.z_mode())
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, params: ConvParams, level: usize, transposed: bool) -> Block {
        let kind = if transposed { LayerKind::TransposedConv } else { LayerKind::Conv };
        let conv = self.push(format!("{name}.conv"), kind, cin, cout, params, false, level);
        let norm = self.push(format!("{name}.norm"), LayerKind::Norm, cout, cout, ConvParams::new([1, 1, 1]), false, level);
        Block { conv, norm }
    }

    /// `R = 0` gives one plain block; otherwise `R` residual units, the
    /// first projecting when channel counts differ.
    fn stages(&mut self, prefix: &str, cin: usize, cout: usize, level: usize, plain_if_empty: bool) -> Vec<Stage> {
        let r = self.spec.res_units;
        if r == 0 {
            if plain_if_empty {
                let p = self.same();
                return vec![Stage::Plain(self.block(&format!("{prefix}.conv0"), cin, cout, p, level, false))];
            }
            return Vec::new();
        }
        (0..r)
            .map(|i| {
                let c_in = if i == 0 { cin } else { cout };
                let p = self.same();
                let block = self.block(&format!("{prefix}.res{i}"), c_in, cout, p, level, false);
                let projection = (c_in != cout).then(|| {
                    self.push(format!("{prefix}.res{i}.proj"), LayerKind::Conv, c_in, cout, ConvParams::new([1, 1, 1]), false, level)
                });
                Stage::Residual { block, projection }
            })
            .collect()
    }
}

impl Blueprint {
    pub fn new(spec: &ArchSpec) -> Result<Self> {
        spec.validate()?;
        let mut p = Planner {
            spec,
            layers: Vec::new(),
        };
        let c = &spec.channels;
        let kz = spec.kernel[0];
        let mut encoder = Vec::with_capacity(spec.levels);
        for l in 0..spec.levels {
            let prefix = format!("enc{l}");
            let level = if l == 0 {
                EncoderLevel {
                    down: None,
                    stages: p.stages(&prefix, spec.in_channels, c[0], 0, true),
                }
            } else {
                let dp = ConvParams::new([kz, 2, 2])
                    .with_stride([1, 2, 2])
                    .with_padding([kz / 2, 0, 0])
                    .with_mode(0, spec.z_mode());
                let down = p.block(&format!("{prefix}.down"), c[l - 1], c[l], dp, l, false);
                EncoderLevel {
                    down: Some(down),
                    stages: p.stages(&prefix, c[l], c[l], l, false),
                }
            };
            encoder.push(level);
        }
        let mut decoder = Vec::with_capacity(spec.levels - 1);
        for l in (0..spec.levels - 1).rev() {
            let prefix = format!("dec{l}");
            let up_params = ConvParams::new([1, 2, 2]).with_stride([1, 2, 2]);
            let up = p.block(&format!("{prefix}.up"), c[l + 1], c[l], up_params, l, true);
            let stages = p.stages(&prefix, 2 * c[l], c[l], l, true);
            decoder.push(DecoderLevel { level: l, up, stages });
        }
        let head = p.push("head.conv".into(), LayerKind::Conv, c[0], spec.out_channels, ConvParams::new([1, 1, 1]), true, 0);
        Ok(Self {
            layers: p.layers,
            encoder,
            decoder,
            head,
        })
    }

    /// `(name, shape)` of every parameter tensor in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .flat_map(|layer| {
                layer
                    .param_shapes()
                    .into_iter()
                    .map(move |(suffix, shape)| (format!("{}.{suffix}", layer.name), shape))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Network<T: Scalar = f32> {
    spec: ArchSpec,
    blueprint: Blueprint,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    /// Index of each layer's first parameter tensor.
    offsets: Vec<usize>,
}

fn offsets(blueprint: &Blueprint) -> Vec<usize> {
    let mut acc = 0;
    blueprint
        .layers
        .iter()
        .map(|l| {
            let o = acc;
            acc += l.param_shapes().len();
            o
        })
        .collect()
}

impl<T: Scalar> Network<T> {
    /// Fan-in scaled uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// conv weights and biases, unit gain and zero shift for norms. Values are
    /// drawn in f64 so every precision sees the same weights up to rounding.
    pub fn build(spec: &ArchSpec, seed: u64) -> Result<Self> {
        let blueprint = Blueprint::new(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for layer in &blueprint.layers {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for (suffix, shape) in layer.param_shapes() {
                let t = match (layer.kind, suffix) {
                    (LayerKind::Norm, "gain") => Tensor::ones(shape)?,
                    (LayerKind::Norm, _) => Tensor::zeros(shape)?,
                    _ => Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))?,
                };
                names.push(format!("{}.{suffix}", layer.name));
                params.push(t);
            }
        }
        let offsets = offsets(&blueprint);
        Ok(Self {
            spec: spec.clone(),
            blueprint,
            names,
            params,
            offsets,
        })
    }

    /// Rebuilds a network from named tensors, checking names and shapes.
    pub fn from_named(spec: &ArchSpec, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let blueprint = Blueprint::new(spec)?;
        let expected = blueprint.parameter_shapes();
        if expected.len() != named.len() {
            return Err(SlError::config(format!(
                "spec needs {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((ename, eshape), (name, t)) in expected.into_iter().zip(named) {
            if ename != name || eshape != t.dims() {
                return Err(SlError::config(format!(
                    "parameter {name} {:?} does not match expected {ename} {eshape:?}",
                    t.dims()
                )));
            }
            names.push(name);
            params.push(t);
        }
        let offsets = offsets(&blueprint);
        Ok(Self {
            spec: spec.clone(),
            blueprint,
            names,
            params,
            offsets,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn blueprint(&self) -> &Blueprint {
        &self.blueprint
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|t| t.numel() as u64).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            blueprint: self.blueprint.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            offsets: self.offsets.clone(),
        }
    }

    fn check_input(&self, dims: &[usize]) -> Result<()> {
        let s = &self.spec;
        if dims.len() != 5 || dims[1] != s.in_channels || dims[2] != s.lift_depth {
            return Err(TensorError::Shape(format!(
                "network expects [N, {}, {}, Y, X], got {dims:?}",
                s.in_channels, s.lift_depth
            ))
            .into());
        }
        s.check_geometry(dims[3], dims[4])
    }

    /// Records the forward pass on `g`. Parameters enter as trainable leaves
    /// when `trainable`, as constants otherwise; their vars come back in
    /// storage order next to the logits.
    pub fn forward_graph(&self, g: &mut Graph<T>, input: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        self.check_input(g.value(input).dims())?;
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let logits = self.forward_vars(g, input, &vars)?;
        Ok((logits, vars))
    }

    /// Records the forward pass with caller-supplied parameter vars, one per
    /// tensor in storage order; their values must match the stored shapes.
    pub fn forward_vars(&self, g: &mut Graph<T>, input: Var, vars: &[Var]) -> Result<Var> {
        self.check_input(g.value(input).dims())?;
        if vars.len() != self.params.len() {
            return Err(SlError::config(format!("{} parameter vars for {} tensors", vars.len(), self.params.len())));
        }
        for ((v, p), name) in vars.iter().zip(&self.params).zip(&self.names) {
            if g.value(*v).dims() != p.dims() {
                return Err(TensorError::Shape(format!("{name}: var {:?} vs parameter {:?}", g.value(*v).dims(), p.dims())).into());
            }
        }
        Pass { net: self, vars }.run(g, input)
    }

    /// Logits `[N, Cout, m, Y, X]` for a lifted batch.
    pub fn forward(&self, lifted: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(lifted.clone());
        let (y, _) = self.forward_graph(&mut g, x, false)?;
        Ok(g.value(y).clone())
    }
}

struct Pass<'a, T: Scalar> {
    net: &'a Network<T>,
    vars: &'a [Var],
}

impl<T: Scalar> Pass<'_, T> {
    fn var(&self, layer: usize, k: usize) -> Var {
        self.vars[self.net.offsets[layer] + k]
    }

    fn conv(&mut self, g: &mut Graph<T>, x: Var, layer: usize) -> Result<Var> {
        let plan = &self.net.blueprint.layers[layer];
        let w = self.var(layer, 0);
        let b = plan.bias.then(|| self.var(layer, 1));
        Ok(match plan.kind {
            LayerKind::Conv => g.conv3d(x, w, b, &plan.params)?,
            LayerKind::TransposedConv => g.transposed_conv3d(x, w, b, &plan.params)?,
            LayerKind::Norm => unreachable!("norm layer used as conv"),
        })
    }

    fn block(&mut self, g: &mut Graph<T>, x: Var, b: Block) -> Result<Var> {
        let c = self.conv(g, x, b.conv)?;
        let n = g.instance_norm(c, self.var(b.norm, 0), self.var(b.norm, 1), NORM_EPS)?;
        Ok(match self.net.spec.activation {
            ActivationKind::Relu => g.relu(n),
            ActivationKind::LeakyRelu => g.leaky_relu(n, LEAKY_SLOPE),
        })
    }

    fn stages(&mut self, g: &mut Graph<T>, mut x: Var, stages: &[Stage]) -> Result<Var> {
        for st in stages {
            x = match *st {
                Stage::Plain(b) => self.block(g, x, b)?,
                Stage::Residual { block, projection } => {
                    let y = self.block(g, x, block)?;
                    let shortcut = match projection {
                        Some(p) => self.conv(g, x, p)?,
                        None => x,
                    };
                    g.add(shortcut, y)?
                }
            };
        }
        Ok(x)
    }

    fn run(&mut self, g: &mut Graph<T>, input: Var) -> Result<Var> {
        let bp = &self.net.blueprint;
        let mut x = input;
        let mut skips = Vec::with_capacity(bp.encoder.len());
        for level in &bp.encoder {
            if let Some(down) = level.down {
                x = self.block(g, x, down)?;
            }
            x = self.stages(g, x, &level.stages)?;
            skips.push(x);
        }
        for level in &bp.decoder {
            let up = self.block(g, x, level.up)?;
            let cat = g.concat(&[up, skips[level.level]], 1)?;
            x = self.stages(g, cat, &level.stages)?;
        }
        self.conv(g, x, bp.head)
    }
}
