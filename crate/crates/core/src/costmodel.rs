//! Exact parameter and multiply-accumulate counts, walked over the same
//! layer blueprint that [`Network::build`](crate::Network::build) instantiates.
//!
//! Convolutions cost `params_without_bias · Π(output extents)` MACs. A
//! transposed convolution is charged as the forward convolution it is the
//! adjoint of, i.e. over its input extents. Norm layers contribute
//! parameters but no MACs.

use serde::Serialize;

use crate::error::{Result, SlError};
use crate::model::{ArchSpec, Blueprint, LayerKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
    pub geometry: Geometry,
}

fn product(values: impl IntoIterator<Item = u64>) -> Result<u64> {
    values.into_iter().try_fold(1u64, |acc, v| {
        acc.checked_mul(v)
            .filter(|&p| p <= i64::MAX as u64)
            .ok_or_else(|| SlError::Overflow("count exceeds 2^63".into()))
    })
}

fn add(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b)
        .filter(|&s| s <= i64::MAX as u64)
        .ok_or_else(|| SlError::Overflow("count exceeds 2^63".into()))
}

/// `(params, macs)` of one 2-D or 3-D convolution; the dimensionality is
/// the length of `kernel`, which `out_geometry` must match.
pub fn conv_cost(cin: usize, cout: usize, kernel: &[usize], out_geometry: &[usize], bias: bool) -> Result<(u64, u64)> {
    if kernel.len() != out_geometry.len() || !(2..=3).contains(&kernel.len()) {
        return Err(SlError::config(format!(
            "kernel {kernel:?} and geometry {out_geometry:?} must both be 2-D or 3-D"
        )));
    }
    if cin == 0 || cout == 0 || kernel.contains(&0) || out_geometry.contains(&0) {
        return Err(SlError::config("extents must be positive"));
    }
    let weights = product(kernel.iter().map(|&k| k as u64).chain([cin as u64, cout as u64]))?;
    let params = add(weights, if bias { cout as u64 } else { 0 })?;
    let macs = product(std::iter::once(weights).chain(out_geometry.iter().map(|&g| g as u64)))?;
    Ok((params, macs))
}

pub fn model_cost(spec: &ArchSpec, height: usize, width: usize) -> Result<CostReport> {
    spec.check_geometry(height, width)?;
    let bp = Blueprint::new(spec)?;
    let m = spec.lift_depth;
    let at = |level: usize| [m, height >> level, width >> level];
    let mut rows = Vec::with_capacity(bp.layers.len());
    let (mut total_params, mut total_macs) = (0u64, 0u64);
    for layer in &bp.layers {
        let k = layer.params.kernel;
        let (params, macs) = match layer.kind {
            LayerKind::Conv => conv_cost(layer.in_channels, layer.out_channels, &k, &at(layer.level), layer.bias)?,
            LayerKind::TransposedConv => {
                conv_cost(layer.in_channels, layer.out_channels, &k, &at(layer.level + 1), layer.bias)?
            }
            LayerKind::Norm => (2 * layer.out_channels as u64, 0),
        };
        total_params = add(total_params, params)?;
        total_macs = add(total_macs, macs)?;
        rows.push(CostRow {
            name: layer.name.clone(),
            kind: layer.kind,
            params,
            macs,
        });
    }
    Ok(CostReport {
        rows,
        total_params,
        total_macs,
        geometry: Geometry { height, width, depth: m },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub a: CostReport,
    pub b: CostReport,
    /// `b / a`.
    pub param_ratio: f64,
    pub mac_ratio: f64,
}

pub fn compare(a: &ArchSpec, b: &ArchSpec, height: usize, width: usize) -> Result<Comparison> {
    let ra = model_cost(a, height, width)?;
    let rb = model_cost(b, height, width)?;
    Ok(Comparison {
        param_ratio: rb.total_params as f64 / ra.total_params as f64,
        mac_ratio: rb.total_macs as f64 / ra.total_macs as f64,
        a: ra,
        b: rb,
    })
}
