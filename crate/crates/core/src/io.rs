//! On-disk formats.
//!
//! `SLT1` tensor: magic `SLT1`, dtype byte (0 = f32, 1 = f64, 2 = u8), rank
//! byte, two zero bytes, `rank` little-endian u64 extents, then the
//! little-endian row-major payload.
//!
//! `SLCK` checkpoint: magic `SLCK`, u32 little-endian header length, a JSON
//! header, then the parameter tensors as concatenated `SLT1` blobs whose
//! offsets (relative to the end of the header) the header lists.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sl_tensor::{DType, Tensor};

use crate::error::{Result, SlError};
use crate::lifting::SliceStats;
use crate::model::{ArchSpec, Network};
use crate::training::{hex, Checkpoint, TrainConfig};

const TENSOR_MAGIC: &[u8; 4] = b"SLT1";
const CHECKPOINT_MAGIC: &[u8; 4] = b"SLCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            Self::F32(_) => DType::F32,
            Self::F64(_) => DType::F64,
            Self::U8(_) => DType::U8,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            Self::F32(t) => t.dims(),
            Self::F64(t) => t.dims(),
            Self::U8(t) => t.dims(),
        }
    }

    /// Numeric view as f32; u8 values convert exactly.
    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            Self::F32(t) => t.clone(),
            Self::F64(t) => t.cast(),
            Self::U8(t) => t.map(f32::from),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        Self::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        Self::F64(t)
    }
}

impl From<Tensor<u8>> for AnyTensor {
    fn from(t: Tensor<u8>) -> Self {
        Self::U8(t)
    }
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
        DType::U8 => 2,
    }
}

pub fn encode_tensor(t: &AnyTensor) -> Vec<u8> {
    let dims = t.dims();
    let mut out = Vec::with_capacity(8 + 8 * dims.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(dtype_code(t.dtype()));
    out.push(dims.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t {
        AnyTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        AnyTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        AnyTensor::U8(t) => out.extend_from_slice(t.data()),
    }
    out
}

/// Cursor that reports failures with the absolute byte offset.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(SlError::format(
                self.base + self.bytes.len() as u64,
                format!("truncated: {what} needs {n} bytes at offset {}", self.base + self.pos as u64),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }
}

/// Decodes one tensor starting at `bytes[0]`, returning it and the number of
/// bytes consumed. `base` is added to offsets in error messages.
pub fn decode_tensor_at(bytes: &[u8], base: u64) -> Result<(AnyTensor, usize)> {
    let mut r = Reader { bytes, pos: 0, base };
    if r.take(4, "magic")? != TENSOR_MAGIC {
        return Err(SlError::format(base, "bad magic, expected SLT1"));
    }
    let code = r.take(1, "dtype")?[0];
    let rank = r.take(1, "rank")?[0] as usize;
    if r.take(2, "reserved")? != [0, 0] {
        return Err(SlError::format(base + 6, "reserved bytes must be zero"));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count = 1usize;
    for _ in 0..rank {
        let at = r.offset();
        let d = u64::from_le_bytes(r.take(8, "extent")?.try_into().expect("8 bytes"));
        if d == 0 {
            return Err(SlError::format(at, "zero extent"));
        }
        let d = usize::try_from(d).map_err(|_| SlError::format(at, "extent too large"))?;
        count = count.checked_mul(d).ok_or_else(|| SlError::format(at, "element count overflows"))?;
        dims.push(d);
    }
    let width = match code {
        0 => 4,
        1 => 8,
        2 => 1,
        other => return Err(SlError::format(base + 4, format!("unknown dtype code {other}"))),
    };
    let len = count.checked_mul(width).ok_or_else(|| SlError::format(r.offset(), "payload size overflows"))?;
    let payload = r.take(len, "payload")?;
    let t = match code {
        0 => AnyTensor::F32(Tensor::from_vec(
            dims,
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
        )?),
        1 => AnyTensor::F64(Tensor::from_vec(
            dims,
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
        )?),
        _ => AnyTensor::U8(Tensor::from_vec(dims, payload.to_vec())?),
    };
    Ok((t, r.pos))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<AnyTensor> {
    let (t, used) = decode_tensor_at(bytes, 0)?;
    if used != bytes.len() {
        return Err(SlError::format(used as u64, "trailing bytes after tensor payload"));
    }
    Ok(t)
}

/// Writes to a temporary file in the target directory, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_tensor(path: &Path, t: &AnyTensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<AnyTensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    version: u32,
    spec: ArchSpec,
    config: TrainConfig,
    stats: SliceStats,
    epoch: usize,
    rng_digest: String,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut blobs = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in ck.network.named_params() {
        let blob = encode_tensor(&AnyTensor::F32(t.clone()));
        tensors.push(TensorEntry {
            name: name.to_string(),
            offset: blobs.len() as u64,
            length: blob.len() as u64,
        });
        blobs.extend_from_slice(&blob);
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        spec: ck.network.spec().clone(),
        config: ck.config.clone(),
        stats: ck.stats.clone(),
        epoch: ck.epoch,
        rng_digest: ck.rng_digest.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| SlError::config("checkpoint header too large"))?;
    let mut out = Vec::with_capacity(8 + json.len() + blobs.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, base: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(SlError::format(0, "bad magic, expected SLCK"));
    }
    let len = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
    let json = r.take(len, "header")?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| SlError::format(8, format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(SlError::format(8, format!("unsupported checkpoint version {}", header.version)));
    }
    let start = r.pos;
    let blobs = &bytes[start..];
    let mut named = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0u64;
    for e in &header.tensors {
        let at = start as u64 + e.offset;
        if e.offset != expected_offset {
            return Err(SlError::format(at, format!("tensor {} is not contiguous", e.name)));
        }
        let end = e.offset.checked_add(e.length).filter(|&x| x <= blobs.len() as u64);
        let Some(end) = end else {
            return Err(SlError::format(bytes.len() as u64, format!("truncated: tensor {} extends past end", e.name)));
        };
        let slice = &blobs[e.offset as usize..end as usize];
        let (t, used) = decode_tensor_at(slice, at)?;
        if used as u64 != e.length {
            return Err(SlError::format(at, format!("tensor {} length mismatch", e.name)));
        }
        let AnyTensor::F32(t) = t else {
            return Err(SlError::format(at + 4, format!("tensor {} is not f32", e.name)));
        };
        named.push((e.name.clone(), t));
        expected_offset = end;
    }
    if expected_offset != blobs.len() as u64 {
        return Err(SlError::format(start as u64 + expected_offset, "trailing bytes after tensors"));
    }
    let network = Network::from_named(&header.spec, named)?;
    if header.stats.per_slice_loss.len() != header.spec.lift_depth
        || crate::lifting::select_slices(&header.stats.per_slice_loss, header.stats.s)?.selected != header.stats.selected
    {
        return Err(SlError::format(8, "slice statistics inconsistent with the spec"));
    }
    Ok(Checkpoint {
        network,
        config: header.config,
        stats: header.stats,
        epoch: header.epoch,
        rng_digest: header.rng_digest,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<String> {
    let bytes = encode_checkpoint(ck)?;
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
