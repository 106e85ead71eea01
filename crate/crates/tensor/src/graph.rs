//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Graph`]; node ids therefore form
//! a topological order and [`Graph::backward`] simply walks them in reverse.
//! Each node is visited once and gradients from multiple consumers are summed.

use crate::conv::{self, ConvGeom, ConvParams};
use crate::error::{shape_err, Result, TensorError};
use crate::norm::{self, NormCache};
use crate::tensor::{numel, strides, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A user-defined differentiable operation. The caller computes the forward
/// value; the op only has to supply vector-Jacobian products.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &str;

    /// Gradients for each input, in input order. `None` means zero.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Norm {
        input: Var,
        gain: Var,
        shift: Var,
        cache: NormCache<T>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum {
        input: Var,
        index_map: Vec<usize>,
    },
    Mean {
        input: Var,
        index_map: Vec<usize>,
        count: usize,
    },
    Max {
        input: Var,
        argmax: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Select {
        input: Var,
        axis: usize,
        index: usize,
    },
    Reshape(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Recording tape of tensor operations.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// For each input element, the flat index of the output element it reduces into.
fn reduce_layout(dims: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(TensorError::Axis {
                axis: w[0],
                rank: dims.len(),
            });
        }
    }
    if let Some(&bad) = sorted.iter().find(|&&a| a >= dims.len()) {
        return Err(TensorError::Axis {
            axis: bad,
            rank: dims.len(),
        });
    }
    let out_dims: Vec<usize> = dims
        .iter()
        .enumerate()
        .filter(|(i, _)| !sorted.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let out_strides = strides(&out_dims);
    // stride of each input axis in the output (0 for reduced axes)
    let mut axis_stride = vec![0; dims.len()];
    let mut k = 0;
    for (i, s) in axis_stride.iter_mut().enumerate() {
        if !sorted.contains(&i) {
            *s = out_strides[k];
            k += 1;
        }
    }
    let n = numel(dims);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; dims.len()];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for a in (0..dims.len()).rev() {
            idx[a] += 1;
            off += axis_stride[a];
            if idx[a] < dims[a] {
                break;
            }
            off -= axis_stride[a] * idx[a];
            idx[a] = 0;
        }
    }
    Ok((out_dims, map))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that gradients are computed for.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Option<Var>, params: &ConvParams) -> Result<Var> {
        let geom = conv::conv_geom(
            self.value(input).dims(),
            self.value(weight).dims(),
            bias.map(|b| self.value(b).dims()),
            params,
        )?;
        let mut out = geom.forward(self.value(input).data(), self.value(weight).data());
        if let Some(b) = bias {
            conv::add_bias(&mut out, self.value(b).data(), geom.batch(), geom.out_volume());
        }
        let value = Tensor::from_vec(geom.out_dims(), out)?;
        let rg = self.rg(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            value,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Transposed convolution with weight layout `[Ci, Co, Kz, Ky, Kx]`.
    pub fn transposed_conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        params: &ConvParams,
    ) -> Result<Var> {
        let geom = conv::transposed_geom(
            self.value(input).dims(),
            self.value(weight).dims(),
            bias.map(|b| self.value(b).dims()),
            params,
        )?;
        let mut out = geom.backward_data(self.value(input).data(), self.value(weight).data());
        if let Some(b) = bias {
            conv::add_bias(&mut out, self.value(b).data(), geom.batch(), geom.in_volume());
        }
        let value = Tensor::from_vec(geom.in_dims(), out)?;
        let rg = self.rg(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            value,
            Op::ConvTranspose {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn instance_norm(&mut self, input: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (value, cache) = norm::forward(self.value(input), self.value(gain), self.value(shift), eps)?;
        let rg = self.rg(&[input, gain, shift]);
        Ok(self.push(
            value,
            Op::Norm {
                input,
                gain,
                shift,
                cache,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        match act {
            Activation::Relu => self.relu(x),
            Activation::LeakyRelu(s) => self.leaky_relu(x, s),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let rg = self.rg(&[x]);
        self.push(value, Op::LeakyRelu(x, s), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid_scalar);
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let value = self.value(x).scale(f);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, f), rg)
    }

    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axes: &[usize]) -> Result<Var> {
        let input = self.value(x);
        let (out_dims, index_map) = reduce_layout(input.dims(), axes)?;
        let out_n = numel(&out_dims);
        let rg = self.rg(&[x]);
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let mut acc = vec![T::zero(); out_n];
                for (&v, &o) in input.data().iter().zip(&index_map) {
                    acc[o] += v;
                }
                let count = input.numel() / out_n;
                let value = if kind == ReduceKind::Mean {
                    let c = T::from_f64(count as f64);
                    acc.into_iter().map(|v| v / c).collect()
                } else {
                    acc
                };
                let value = Tensor::from_vec(out_dims, value)?;
                let op = if kind == ReduceKind::Mean {
                    Op::Mean {
                        input: x,
                        index_map,
                        count,
                    }
                } else {
                    Op::Sum {
                        input: x,
                        index_map,
                    }
                };
                Ok(self.push(value, op, rg))
            }
            ReduceKind::Max => {
                let mut best: Vec<Option<(T, usize)>> = vec![None; out_n];
                for (i, (&v, &o)) in input.data().iter().zip(&index_map).enumerate() {
                    match best[o] {
                        Some((b, _)) if v <= b => {}
                        _ => best[o] = Some((v, i)),
                    }
                }
                let (vals, argmax): (Vec<T>, Vec<usize>) =
                    best.into_iter().map(|b| b.expect("every output has an input")).unzip();
                let value = Tensor::from_vec(out_dims, vals)?;
                Ok(self.push(value, Op::Max { input: x, argmax }, rg))
            }
        }
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        self.reduce(ReduceKind::Sum, x, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        self.reduce(ReduceKind::Mean, x, &axes)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat of zero tensors");
        };
        let base = self.value(first).dims().to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let d = self.value(v).dims();
            let same_rest = d.len() == base.len()
                && d.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return shape_err(format!("concat dims {d:?} vs {base:?} on axis {axis}"));
            }
            total += d[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.dims()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut dims = base;
        dims[axis] = total;
        let value = Tensor::from_vec(dims, data)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Picks `index` along `axis` and drops the axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let value = self.value(x).select(axis, index)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Select { input: x, axis, index }, rg))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(dims.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.value(loss);
        if root.numel() != 1 {
            return shape_err(format!("backward needs a scalar loss, got dims {:?}", root.dims()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(root.dims().to_vec())?);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[var.0].requires_grad {
            return Ok(());
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            } => {
                if self.requires_grad(*input) {
                    let gi = geom.backward_data(g.data(), self.value(*weight).data());
                    self.accumulate(grads, *input, Tensor::from_vec(geom.in_dims(), gi)?)?;
                }
                if self.requires_grad(*weight) {
                    let gw = geom.backward_weight(self.value(*input).data(), g.data());
                    self.accumulate(grads, *weight, Tensor::from_vec(geom.weight_dims(), gw)?)?;
                }
                if let Some(b) = bias {
                    let gb = conv::bias_grad(g.data(), geom.batch(), geom.out_channels(), geom.out_volume());
                    self.accumulate(grads, *b, Tensor::from_vec(vec![gb.len()], gb)?)?;
                }
            }
            Op::ConvTranspose {
                input,
                weight,
                bias,
                geom,
            } => {
                // the op is the adjoint of `geom`: input lives in geom's output space
                if self.requires_grad(*input) {
                    let gi = geom.forward(g.data(), self.value(*weight).data());
                    self.accumulate(grads, *input, Tensor::from_vec(geom.out_dims(), gi)?)?;
                }
                if self.requires_grad(*weight) {
                    let gw = geom.backward_weight(g.data(), self.value(*input).data());
                    self.accumulate(grads, *weight, Tensor::from_vec(geom.weight_dims(), gw)?)?;
                }
                if let Some(b) = bias {
                    let gb = conv::bias_grad(g.data(), geom.batch(), geom.in_channels(), geom.in_volume());
                    self.accumulate(grads, *b, Tensor::from_vec(vec![gb.len()], gb)?)?;
                }
            }
            Op::Norm {
                input,
                gain,
                shift,
                cache,
            } => {
                let dims = self.value(*input).dims();
                let (dx, dg, ds) = norm::backward(dims, self.value(*gain), cache, g.data());
                self.accumulate(grads, *input, Tensor::from_vec(dims.to_vec(), dx)?)?;
                self.accumulate(grads, *gain, Tensor::from_vec(vec![dg.len()], dg)?)?;
                self.accumulate(grads, *shift, Tensor::from_vec(vec![ds.len()], ds)?)?;
            }
            Op::Relu(x) => {
                let gx = self
                    .value(*x)
                    .zip_map(g, |v, d| if v > T::zero() { d } else { T::zero() })?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::LeakyRelu(x, s) => {
                let s = *s;
                let gx = self
                    .value(*x)
                    .zip_map(g, |v, d| if v > T::zero() { d } else { d * s })?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Sigmoid(x) => {
                let gx = node.value.zip_map(g, |y, d| d * y * (T::one() - y))?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |d, v| d * v)?;
                let gb = g.zip_map(self.value(*a), |d, v| d * v)?;
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.scale(*f))?,
            Op::Sum { input, index_map } => {
                let dims = self.value(*input).dims().to_vec();
                let data = index_map.iter().map(|&o| g.data()[o]).collect();
                self.accumulate(grads, *input, Tensor::from_vec(dims, data)?)?;
            }
            Op::Mean {
                input,
                index_map,
                count,
            } => {
                let dims = self.value(*input).dims().to_vec();
                let c = T::from_f64(*count as f64);
                let data = index_map.iter().map(|&o| g.data()[o] / c).collect();
                self.accumulate(grads, *input, Tensor::from_vec(dims, data)?)?;
            }
            Op::Max { input, argmax } => {
                let mut gx = Tensor::zeros(self.value(*input).dims().to_vec())?;
                for (o, &i) in argmax.iter().enumerate() {
                    gx.data_mut()[i] += g.data()[o];
                }
                self.accumulate(grads, *input, gx)?;
            }
            Op::Concat { inputs, axis } => {
                let dims = g.dims();
                let outer = numel(&dims[..*axis]);
                let inner = numel(&dims[*axis + 1..]);
                let total_block = dims[*axis] * inner;
                let mut start = 0;
                for &v in inputs {
                    let vd = self.value(v).dims().to_vec();
                    let block = vd[*axis] * inner;
                    if self.requires_grad(v) {
                        let mut data = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let s = o * total_block + start;
                            data.extend_from_slice(&g.data()[s..s + block]);
                        }
                        self.accumulate(grads, v, Tensor::from_vec(vd, data)?)?;
                    }
                    start += block;
                }
            }
            Op::Select { input, axis, index } => {
                let dims = self.value(*input).dims().to_vec();
                let outer = numel(&dims[..*axis]);
                let len = dims[*axis];
                let inner = numel(&dims[*axis + 1..]);
                let mut gx = Tensor::zeros(dims)?;
                for o in 0..outer {
                    let dst = (o * len + index) * inner;
                    gx.data_mut()[dst..dst + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
                self.accumulate(grads, *input, gx)?;
            }
            Op::Reshape(x) => {
                let dims = self.value(*x).dims().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(dims)?)?;
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&values, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return shape_err(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    ));
                }
                for (&v, gv) in inputs.iter().zip(gs) {
                    if let Some(gv) = gv {
                        if gv.dims() != self.value(v).dims() {
                            return shape_err(format!(
                                "custom op {} gradient dims {:?} vs input {:?}",
                                op.name(),
                                gv.dims(),
                                self.value(v).dims()
                            ));
                        }
                        self.accumulate(grads, v, gv)?;
                    }
                }
            }
        }
        Ok(())
    }
}
