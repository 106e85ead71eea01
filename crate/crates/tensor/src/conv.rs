//! 3-D cross-correlation and its transpose.
//!
//! All kernels accumulate in a fixed loop order, so results are
//! bit-identical between runs for identical operands.

use crate::error::{shape_err, Result, TensorError};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PaddingMode {
    #[default]
    Zero,
    /// Wraps around the axis. Only valid with stride 1 on that axis.
    Circular,
}

/// Kernel geometry for one 3-D convolution, axes ordered `(z, y, x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub mode: [PaddingMode; 3],
}

impl ConvParams {
    pub fn new(kernel: [usize; 3]) -> Self {
        Self {
            kernel,
            stride: [1; 3],
            padding: [0; 3],
            mode: [PaddingMode::Zero; 3],
        }
    }

    /// Stride 1 with `k / 2` padding, which preserves extents for odd kernels.
    pub fn same(kernel: [usize; 3]) -> Self {
        Self::new(kernel).with_padding([kernel[0] / 2, kernel[1] / 2, kernel[2] / 2])
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_mode(mut self, axis: usize, mode: PaddingMode) -> Self {
        self.mode[axis] = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.kernel[a] == 0 || self.stride[a] == 0 {
                return Err(TensorError::Config(format!(
                    "kernel {:?} and stride {:?} must be positive",
                    self.kernel, self.stride
                )));
            }
            if self.mode[a] == PaddingMode::Circular && self.stride[a] != 1 {
                return Err(TensorError::Config(format!(
                    "circular padding on axis {a} requires stride 1"
                )));
            }
        }
        Ok(())
    }

    /// Output extent of the forward convolution along `axis`.
    pub fn output_extent(&self, axis: usize, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding[axis];
        let k = self.kernel[axis];
        let s = self.stride[axis];
        if padded < k {
            return shape_err(format!(
                "axis {axis}: kernel {k} exceeds padded extent {padded}"
            ));
        }
        if !(padded - k).is_multiple_of(s) {
            return shape_err(format!(
                "axis {axis}: ({input} + 2*{} - {k}) is not divisible by stride {s}",
                self.padding[axis]
            ));
        }
        Ok((padded - k) / s + 1)
    }

    /// Output extent of the transposed convolution along `axis`.
    pub fn transposed_extent(&self, axis: usize, input: usize) -> Result<usize> {
        let grown = (input - 1) * self.stride[axis] + self.kernel[axis];
        let trim = 2 * self.padding[axis];
        if grown <= trim {
            return shape_err(format!(
                "axis {axis}: transposed output extent is not positive"
            ));
        }
        Ok(grown - trim)
    }
}

#[derive(Debug, Clone, Copy)]
struct Run {
    out0: usize,
    in0: usize,
    len: usize,
}

/// Tap tables for one axis: which input index feeds output `o` at tap `k`.
#[derive(Debug, Clone)]
struct AxisMap {
    in_len: usize,
    out_len: usize,
    stride: usize,
    fwd: Vec<Option<usize>>,
    inv: Vec<Option<usize>>,
    runs: Vec<Vec<Run>>,
    fused: Option<Fused3>,
    /// Runs from input index to output index; stride 1 only.
    inv_runs: Vec<Vec<Run>>,
    inv_fused: Option<Fused3>,
}

/// Three single-run taps over a shared destination range `[lo, hi)`, where
/// tap `k` reads the source from `src[k]` on; the remainder of each run is
/// listed in `edges`.
#[derive(Debug, Clone)]
struct Fused3 {
    lo: usize,
    hi: usize,
    src: [usize; 3],
    edges: Vec<(usize, Run)>,
}

fn fuse3(runs: &[Vec<Run>], stride: usize) -> Option<Fused3> {
    if stride != 1 || runs.len() != 3 || runs.iter().any(|r| r.len() != 1) {
        return None;
    }
    let lo = runs.iter().map(|r| r[0].out0).max()?;
    let hi = runs.iter().map(|r| r[0].out0 + r[0].len).min()?;
    if lo >= hi {
        return None;
    }
    let mut src = [0; 3];
    let mut edges = Vec::new();
    for (k, r) in runs.iter().map(|r| r[0]).enumerate() {
        src[k] = r.in0 + (lo - r.out0);
        if r.out0 < lo {
            edges.push((k, Run { out0: r.out0, in0: r.in0, len: lo - r.out0 }));
        }
        if r.out0 + r.len > hi {
            edges.push((k, Run { out0: hi, in0: r.in0 + (hi - r.out0), len: r.out0 + r.len - hi }));
        }
    }
    Some(Fused3 { lo, hi, src, edges })
}

fn push_run(runs: &mut Vec<Run>, dst: usize, src: usize, stride: usize) {
    match runs.last_mut() {
        Some(r) if r.out0 + r.len == dst && r.in0 + r.len * stride == src => r.len += 1,
        _ => runs.push(Run { out0: dst, in0: src, len: 1 }),
    }
}

impl AxisMap {
    fn new(in_len: usize, out_len: usize, k: usize, stride: usize, pad: usize, mode: PaddingMode) -> Self {
        let mut fwd = vec![None; k * out_len];
        let mut inv = vec![None; k * in_len];
        let mut runs = Vec::with_capacity(k);
        for tap in 0..k {
            let mut tap_runs: Vec<Run> = Vec::new();
            for o in 0..out_len {
                let pos = (o * stride + tap) as isize - pad as isize;
                let i = match mode {
                    PaddingMode::Zero => {
                        if pos < 0 || pos >= in_len as isize {
                            continue;
                        }
                        pos as usize
                    }
                    PaddingMode::Circular => pos.rem_euclid(in_len as isize) as usize,
                };
                fwd[tap * out_len + o] = Some(i);
                inv[tap * in_len + i] = Some(o);
                push_run(&mut tap_runs, o, i, stride);
            }
            runs.push(tap_runs);
        }
        let mut inv_runs = Vec::new();
        if stride == 1 {
            for tap in 0..k {
                let mut tap_runs = Vec::new();
                for i in 0..in_len {
                    if let Some(o) = inv[tap * in_len + i] {
                        push_run(&mut tap_runs, i, o, 1);
                    }
                }
                inv_runs.push(tap_runs);
            }
        }
        Self {
            in_len,
            out_len,
            stride,
            fused: fuse3(&runs, stride),
            inv_fused: fuse3(&inv_runs, stride),
            fwd,
            inv,
            runs,
            inv_runs,
        }
    }

    #[inline]
    fn fwd(&self, tap: usize, o: usize) -> Option<usize> {
        self.fwd[tap * self.out_len + o]
    }

    #[inline]
    fn inv(&self, tap: usize, i: usize) -> Option<usize> {
        self.inv[tap * self.in_len + i]
    }
}

/// Resolved geometry of a forward convolution from `in_ch` to `out_ch` channels.
#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: [usize; 3],
    in_sp: [usize; 3],
    out_sp: [usize; 3],
    maps: [AxisMap; 3],
}

impl ConvGeom {
    pub(crate) fn new(
        batch: usize,
        in_ch: usize,
        out_ch: usize,
        in_sp: [usize; 3],
        params: &ConvParams,
    ) -> Result<Self> {
        params.validate()?;
        let mut out_sp = [0; 3];
        for a in 0..3 {
            out_sp[a] = params.output_extent(a, in_sp[a])?;
            // each input index must feed at most one output per tap
            if params.mode[a] == PaddingMode::Circular && out_sp[a] > in_sp[a] {
                return Err(TensorError::Config(format!(
                    "circular padding {} too large for kernel {} on axis {a}",
                    params.padding[a], params.kernel[a]
                )));
            }
        }
        let map = |a: usize| {
            AxisMap::new(
                in_sp[a],
                out_sp[a],
                params.kernel[a],
                params.stride[a],
                params.padding[a],
                params.mode[a],
            )
        };
        Ok(Self {
            batch,
            in_ch,
            out_ch,
            kernel: params.kernel,
            in_sp,
            out_sp,
            maps: [map(0), map(1), map(2)],
        })
    }

    pub(crate) fn in_dims(&self) -> Vec<usize> {
        vec![self.batch, self.in_ch, self.in_sp[0], self.in_sp[1], self.in_sp[2]]
    }

    pub(crate) fn out_dims(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_sp[0], self.out_sp[1], self.out_sp[2]]
    }

    pub(crate) fn weight_dims(&self) -> Vec<usize> {
        vec![self.out_ch, self.in_ch, self.kernel[0], self.kernel[1], self.kernel[2]]
    }

    fn in_vol(&self) -> usize {
        self.in_sp.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.out_sp.iter().product()
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Cross-correlation of `input` with `weight`, no bias.
    pub(crate) fn forward<T: Scalar>(&self, input: &[T], weight: &[T]) -> Vec<T> {
        let [_, ky_n, kx_n] = self.kernel;
        let [oz_n, oy_n, ox_n] = self.out_sp;
        let [_, iy_n, ix_n] = self.in_sp;
        let (in_vol, out_vol, kvol) = (self.in_vol(), self.out_vol(), self.kvol());
        let [zmap, ymap, xmap] = &self.maps;
        let sx = xmap.stride;

        let mut out = vec![T::zero(); self.batch * self.out_ch * out_vol];
        for b in 0..self.batch {
            for co in 0..self.out_ch {
                let out_base = (b * self.out_ch + co) * out_vol;
                for oz in 0..oz_n {
                    for oy in 0..oy_n {
                        let row_off = out_base + (oz * oy_n + oy) * ox_n;
                        let orow = &mut out[row_off..row_off + ox_n];
                        for ci in 0..self.in_ch {
                            let in_base = (b * self.in_ch + ci) * in_vol;
                            let w_base = (co * self.in_ch + ci) * kvol;
                            for kz in 0..self.kernel[0] {
                                let Some(iz) = zmap.fwd(kz, oz) else { continue };
                                for ky in 0..ky_n {
                                    let Some(iy) = ymap.fwd(ky, oy) else { continue };
                                    let irow_off = in_base + (iz * iy_n + iy) * ix_n;
                                    let irow = &input[irow_off..irow_off + ix_n];
                                    let w_row = w_base + (kz * ky_n + ky) * kx_n;
                                    row_gather(orow, irow, &weight[w_row..w_row + kx_n], &xmap.runs, xmap.fused.as_ref(), sx);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`forward`](Self::forward) with respect to the input.
    pub(crate) fn backward_data<T: Scalar>(&self, grad_out: &[T], weight: &[T]) -> Vec<T> {
        let [_, ky_n, kx_n] = self.kernel;
        let [_, oy_n, ox_n] = self.out_sp;
        let [iz_n, iy_n, ix_n] = self.in_sp;
        let (in_vol, out_vol, kvol) = (self.in_vol(), self.out_vol(), self.kvol());
        let [zmap, ymap, xmap] = &self.maps;
        let sx = xmap.stride;

        let mut grad_in = vec![T::zero(); self.batch * self.in_ch * in_vol];
        for b in 0..self.batch {
            for ci in 0..self.in_ch {
                let in_base = (b * self.in_ch + ci) * in_vol;
                for iz in 0..iz_n {
                    for iy in 0..iy_n {
                        let row_off = in_base + (iz * iy_n + iy) * ix_n;
                        let girow = &mut grad_in[row_off..row_off + ix_n];
                        for co in 0..self.out_ch {
                            let out_base = (b * self.out_ch + co) * out_vol;
                            let w_base = (co * self.in_ch + ci) * kvol;
                            for kz in 0..self.kernel[0] {
                                let Some(oz) = zmap.inv(kz, iz) else { continue };
                                for ky in 0..ky_n {
                                    let Some(oy) = ymap.inv(ky, iy) else { continue };
                                    let orow_off = out_base + (oz * oy_n + oy) * ox_n;
                                    let gorow = &grad_out[orow_off..orow_off + ox_n];
                                    let w_row = w_base + (kz * ky_n + ky) * kx_n;
                                    let w = &weight[w_row..w_row + kx_n];
                                    if sx == 1 {
                                        row_gather(girow, gorow, w, &xmap.inv_runs, xmap.inv_fused.as_ref(), 1);
                                    } else {
                                        for (kx, &wk) in w.iter().enumerate() {
                                            for r in &xmap.runs[kx] {
                                                scatter_axpy(girow, gorow, wk, r, sx);
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
        grad_in
    }

    /// Gradient of [`forward`](Self::forward) with respect to the weight.
    pub(crate) fn backward_weight<T: Scalar>(&self, input: &[T], grad_out: &[T]) -> Vec<T> {
        let [_, ky_n, kx_n] = self.kernel;
        let [oz_n, oy_n, ox_n] = self.out_sp;
        let [_, iy_n, ix_n] = self.in_sp;
        let (in_vol, out_vol, kvol) = (self.in_vol(), self.out_vol(), self.kvol());
        let [zmap, ymap, xmap] = &self.maps;
        let sx = xmap.stride;

        let mut grad_w = vec![T::zero(); self.out_ch * self.in_ch * kvol];
        for b in 0..self.batch {
            for co in 0..self.out_ch {
                let out_base = (b * self.out_ch + co) * out_vol;
                for ci in 0..self.in_ch {
                    let in_base = (b * self.in_ch + ci) * in_vol;
                    let mut lanes = vec![[T::zero(); 8]; kvol];
                    for oz in 0..oz_n {
                        for kz in 0..self.kernel[0] {
                            let Some(iz) = zmap.fwd(kz, oz) else { continue };
                            for oy in 0..oy_n {
                                let orow_off = out_base + (oz * oy_n + oy) * ox_n;
                                let gorow = &grad_out[orow_off..orow_off + ox_n];
                                for ky in 0..ky_n {
                                    let Some(iy) = ymap.fwd(ky, oy) else { continue };
                                    let irow_off = in_base + (iz * iy_n + iy) * ix_n;
                                    let irow = &input[irow_off..irow_off + ix_n];
                                    let w_row = (kz * ky_n + ky) * kx_n;
                                    row_dots(&mut lanes[w_row..w_row + kx_n], gorow, irow, &xmap.runs, xmap.fused.as_ref(), sx);
                                }
                            }
                        }
                    }
                    let gw = &mut grad_w[(co * self.in_ch + ci) * kvol..][..kvol];
                    for (g, l) in gw.iter_mut().zip(&lanes) {
                        *g += ((l[0] + l[4]) + (l[1] + l[5])) + ((l[2] + l[6]) + (l[3] + l[7]));
                    }
                }
            }
        }
        grad_w
    }
}

/// `dst += Σ_k w[k] · src[tap k]` along one row.
#[inline]
fn row_gather<T: Scalar>(dst: &mut [T], src: &[T], w: &[T], runs: &[Vec<Run>], fused: Option<&Fused3>, stride: usize) {
    let Some(f) = fused else {
        for (kx, &wk) in w.iter().enumerate() {
            for r in &runs[kx] {
                gather_axpy(dst, src, wk, r, stride);
            }
        }
        return;
    };
    let n = f.hi - f.lo;
    let d = &mut dst[f.lo..f.hi];
    let (a, b, c) = (&src[f.src[0]..f.src[0] + n], &src[f.src[1]..f.src[1] + n], &src[f.src[2]..f.src[2] + n]);
    let (w0, w1, w2) = (w[0], w[1], w[2]);
    for j in 0..n {
        d[j] += w0 * a[j] + w1 * b[j] + w2 * c[j];
    }
    for (k, r) in &f.edges {
        gather_axpy(dst, src, w[*k], r, 1);
    }
}

/// Accumulates `⟨g, src[tap k]⟩` into eight partial sums per tap; element
/// `j` of a run lands in lane `j % 8`.
#[inline]
fn row_dots<T: Scalar>(lanes: &mut [[T; 8]], g: &[T], src: &[T], runs: &[Vec<Run>], fused: Option<&Fused3>, stride: usize) {
    let Some(f) = fused else {
        for (kx, l) in lanes.iter_mut().enumerate() {
            for r in &runs[kx] {
                run_dot(l, g, src, r, stride);
            }
        }
        return;
    };
    let n = f.hi - f.lo;
    let gg = &g[f.lo..f.hi];
    let (a, b, c) = (&src[f.src[0]..f.src[0] + n], &src[f.src[1]..f.src[1] + n], &src[f.src[2]..f.src[2] + n]);
    let (mut l0, mut l1, mut l2) = (lanes[0], lanes[1], lanes[2]);
    let full = n / 8 * 8;
    for j in (0..full).step_by(8) {
        let (gj, aj, bj, cj) = (&gg[j..j + 8], &a[j..j + 8], &b[j..j + 8], &c[j..j + 8]);
        for l in 0..8 {
            l0[l] += gj[l] * aj[l];
            l1[l] += gj[l] * bj[l];
            l2[l] += gj[l] * cj[l];
        }
    }
    for j in full..n {
        l0[j - full] += gg[j] * a[j];
        l1[j - full] += gg[j] * b[j];
        l2[j - full] += gg[j] * c[j];
    }
    lanes[0] = l0;
    lanes[1] = l1;
    lanes[2] = l2;
    for (k, r) in &f.edges {
        run_dot(&mut lanes[*k], g, src, r, 1);
    }
}

#[inline]
fn gather_axpy<T: Scalar>(orow: &mut [T], irow: &[T], w: T, r: &Run, stride: usize) {
    let o = &mut orow[r.out0..r.out0 + r.len];
    if stride == 1 {
        for (o, &i) in o.iter_mut().zip(&irow[r.in0..r.in0 + r.len]) {
            *o += w * i;
        }
    } else {
        for (j, o) in o.iter_mut().enumerate() {
            *o += w * irow[r.in0 + j * stride];
        }
    }
}

#[inline]
fn scatter_axpy<T: Scalar>(irow: &mut [T], orow: &[T], w: T, r: &Run, stride: usize) {
    let o = &orow[r.out0..r.out0 + r.len];
    if stride == 1 {
        for (i, &o) in irow[r.in0..r.in0 + r.len].iter_mut().zip(o) {
            *i += w * o;
        }
    } else {
        for (j, &o) in o.iter().enumerate() {
            irow[r.in0 + j * stride] += w * o;
        }
    }
}

/// Adds the products of one run into eight partial sums.
#[inline]
fn run_dot<T: Scalar>(lanes: &mut [T; 8], orow: &[T], irow: &[T], r: &Run, stride: usize) {
    let o = &orow[r.out0..r.out0 + r.len];
    if stride != 1 {
        for (j, &g) in o.iter().enumerate() {
            lanes[j % 8] += g * irow[r.in0 + j * stride];
        }
        return;
    }
    let i = &irow[r.in0..r.in0 + r.len];
    let oc = o.chunks_exact(8);
    let ic = i.chunks_exact(8);
    let (otail, itail) = (oc.remainder(), ic.remainder());
    for (a, b) in oc.zip(ic) {
        for l in 0..8 {
            lanes[l] += a[l] * b[l];
        }
    }
    for (l, (&a, &b)) in otail.iter().zip(itail).enumerate() {
        lanes[l] += a * b;
    }
}

pub(crate) fn split_5d(dims: &[usize], what: &str) -> Result<(usize, usize, [usize; 3])> {
    if dims.len() != 5 {
        return shape_err(format!("{what} must be rank 5 [N,C,Z,Y,X], got {dims:?}"));
    }
    Ok((dims[0], dims[1], [dims[2], dims[3], dims[4]]))
}

fn check_weight(weight: &[usize], out_ch: usize, in_ch: usize, params: &ConvParams) -> Result<()> {
    let expect = [out_ch, in_ch, params.kernel[0], params.kernel[1], params.kernel[2]];
    if weight != expect {
        return shape_err(format!("weight dims {weight:?}, expected {expect:?}"));
    }
    Ok(())
}

fn check_bias(bias: Option<&[usize]>, channels: usize) -> Result<()> {
    match bias {
        Some(d) if d != [channels] => shape_err(format!("bias dims {d:?}, expected [{channels}]")),
        _ => Ok(()),
    }
}

pub(crate) fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], batch: usize, vol: usize) {
    let ch = bias.len();
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate() {
            for v in &mut out[(b * ch + c) * vol..][..vol] {
                *v += bv;
            }
        }
    }
}

pub(crate) fn bias_grad<T: Scalar>(grad_out: &[T], batch: usize, ch: usize, vol: usize) -> Vec<T> {
    let mut g = vec![T::zero(); ch];
    for b in 0..batch {
        for (c, gc) in g.iter_mut().enumerate() {
            *gc += grad_out[(b * ch + c) * vol..][..vol].iter().copied().sum::<T>();
        }
    }
    g
}

/// Geometry for `conv3d(input[N,Ci,..], weight[Co,Ci,..])`.
pub(crate) fn conv_geom(
    input: &[usize],
    weight: &[usize],
    bias: Option<&[usize]>,
    params: &ConvParams,
) -> Result<ConvGeom> {
    let (n, ci, sp) = split_5d(input, "conv3d input")?;
    if weight.len() != 5 {
        return shape_err(format!("conv3d weight must be rank 5, got {weight:?}"));
    }
    let co = weight[0];
    check_weight(weight, co, ci, params)?;
    check_bias(bias, co)?;
    ConvGeom::new(n, ci, co, sp, params)
}

/// Geometry of the forward convolution whose adjoint is
/// `transposed_conv3d(input[N,Ci,..], weight[Ci,Co,..])`.
pub(crate) fn transposed_geom(
    input: &[usize],
    weight: &[usize],
    bias: Option<&[usize]>,
    params: &ConvParams,
) -> Result<ConvGeom> {
    let (n, ci, sp) = split_5d(input, "transposed_conv3d input")?;
    if weight.len() != 5 {
        return shape_err(format!("transposed_conv3d weight must be rank 5, got {weight:?}"));
    }
    let co = weight[1];
    check_weight(weight, ci, co, params)?;
    check_bias(bias, co)?;
    params.validate()?;
    let mut out_sp = [0; 3];
    for a in 0..3 {
        out_sp[a] = params.transposed_extent(a, sp[a])?;
    }
    let geom = ConvGeom::new(n, co, ci, out_sp, params)?;
    if geom.out_sp != sp {
        return shape_err(format!(
            "transposed geometry {out_sp:?} does not map back onto {sp:?}"
        ));
    }
    Ok(geom)
}

/// Standard (unflipped) 3-D cross-correlation.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: &ConvParams,
) -> Result<Tensor<T>> {
    let geom = conv_geom(input.dims(), weight.dims(), bias.map(|b| b.dims()), params)?;
    let mut out = geom.forward(input.data(), weight.data());
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), geom.batch, geom.out_vol());
    }
    Tensor::from_vec(geom.out_dims(), out)
}

/// Transposed 3-D convolution; `weight` is laid out `[Ci, Co, Kz, Ky, Kx]`.
pub fn transposed_conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: &ConvParams,
) -> Result<Tensor<T>> {
    let geom = transposed_geom(input.dims(), weight.dims(), bias.map(|b| b.dims()), params)?;
    let mut out = geom.backward_data(input.data(), weight.data());
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), geom.batch, geom.in_vol());
    }
    Tensor::from_vec(geom.in_dims(), out)
}

impl ConvGeom {
    pub(crate) fn batch(&self) -> usize {
        self.batch
    }

    pub(crate) fn in_volume(&self) -> usize {
        self.in_vol()
    }

    pub(crate) fn out_volume(&self) -> usize {
        self.out_vol()
    }

    pub(crate) fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub(crate) fn out_channels(&self) -> usize {
        self.out_ch
    }
}
