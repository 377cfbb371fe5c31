//! Binary artifact formats.
//!
//! Trajectory file (`FHTRAJ01`):
//! ```text
//! magic[8] | u64 N | u64 K | u64 d | f64[K*N*d] | JSON trailer | u64 trailer length
//! ```
//! The payload is snapshot-major, then trajectory, then coordinate.
//!
//! Model file (`FHTMODL1`):
//! ```text
//! magic[8] | u64 header length | JSON header | f64 cores in node order
//! ```
//! All integers and floats are little-endian. Both formats record a SHA-256
//! of the float payload, the producing config hash and the format version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::FourierBasis;
use crate::dynamics::{SdeConfig, TrajectoryBatch};
use crate::error::{FhtError, Result};
use crate::model::{FhtModel, ModelMetadata, TensorCore};
use crate::topology::DimensionTree;

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"FHTRAJ01";
pub const MODEL_MAGIC: &[u8; 8] = b"FHTMODL1";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the little-endian bytes of `values`.
pub fn payload_hash(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Hex SHA-256 of arbitrary bytes.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(bytes: &[u8], at: usize) -> Result<u64> {
    bytes
        .get(at..at + 8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| FhtError::Format("truncated file".into()))
}

fn get_f64s(bytes: &[u8], at: usize, count: usize) -> Result<Vec<f64>> {
    let len = count
        .checked_mul(8)
        .ok_or_else(|| FhtError::Format("payload size overflows".into()))?;
    let slice = bytes
        .get(at..at + len)
        .ok_or_else(|| FhtError::Format("truncated payload".into()))?;
    Ok(slice
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn to_usize(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| FhtError::Format(format!("size {v} does not fit")))
}

/// JSON trailer of a trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryTrailer {
    pub version: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeConfig>,
    pub recorded_times: Vec<f64>,
    /// Basis half-width used for the clamp forecast, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_bound: Option<f64>,
    /// Entries outside `[-clamp_bound, clamp_bound]`, per snapshot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_of_range: Option<Vec<u64>>,
    pub payload_sha256: String,
}

pub fn write_trajectories(
    w: &mut impl Write,
    batch: &TrajectoryBatch,
    config_hash: &str,
    clamp_bound: Option<f64>,
) -> Result<()> {
    w.write_all(TRAJECTORY_MAGIC)?;
    for v in [batch.num_trajectories(), batch.num_snapshots(), batch.dim()] {
        put_u64(w, v as u64)?;
    }
    put_f64s(w, batch.data())?;
    let trailer = TrajectoryTrailer {
        version: VERSION.into(),
        config_hash: config_hash.into(),
        sde: batch.config.clone(),
        recorded_times: batch.recorded_times.clone(),
        clamp_bound,
        out_of_range: clamp_bound.map(|b| batch.out_of_range_counts(b)),
        payload_sha256: payload_hash(batch.data()),
    };
    let json = serde_json::to_vec(&trailer)?;
    w.write_all(&json)?;
    put_u64(w, json.len() as u64)?;
    Ok(())
}

pub fn read_trajectories(bytes: &[u8]) -> Result<(TrajectoryBatch, TrajectoryTrailer)> {
    if bytes.get(..8) != Some(TRAJECTORY_MAGIC.as_slice()) {
        return Err(FhtError::Format("not a trajectory file".into()));
    }
    let n = to_usize(get_u64(bytes, 8)?)?;
    let k = to_usize(get_u64(bytes, 16)?)?;
    let d = to_usize(get_u64(bytes, 24)?)?;
    let count = n
        .checked_mul(k)
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| FhtError::Format("payload size overflows".into()))?;
    if bytes.len() < 8 {
        return Err(FhtError::Format("truncated file".into()));
    }
    let trailer_len = to_usize(get_u64(bytes, bytes.len() - 8)?)?;
    let data = get_f64s(bytes, 32, count)?;
    let start = 32 + count * 8;
    if start + trailer_len + 8 != bytes.len() {
        return Err(FhtError::Format("trailer length does not match file size".into()));
    }
    let trailer: TrajectoryTrailer = serde_json::from_slice(&bytes[start..start + trailer_len])?;
    if trailer.payload_sha256 != payload_hash(&data) {
        return Err(FhtError::Format("trajectory payload hash mismatch".into()));
    }
    let batch = TrajectoryBatch::from_parts(n, k, d, data, trailer.recorded_times.clone(), trailer.sde.clone())?;
    Ok((batch, trailer))
}

/// JSON header of a model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub version: String,
    pub tree: DimensionTree,
    pub basis: FourierBasis,
    /// Core shapes in node order.
    pub shapes: Vec<Vec<usize>>,
    pub metadata: ModelMetadata,
    pub payload_sha256: String,
}

pub fn write_model(w: &mut impl Write, model: &FhtModel) -> Result<()> {
    let payload: Vec<f64> = model.cores().iter().flat_map(|c| c.data().iter().copied()).collect();
    let header = ModelHeader {
        version: VERSION.into(),
        tree: model.tree().clone(),
        basis: *model.basis(),
        shapes: model.cores().iter().map(|c| c.shape().to_vec()).collect(),
        metadata: model.metadata.clone(),
        payload_sha256: payload_hash(&payload),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MODEL_MAGIC)?;
    put_u64(w, json.len() as u64)?;
    w.write_all(&json)?;
    put_f64s(w, &payload)?;
    Ok(())
}

pub fn read_model(bytes: &[u8]) -> Result<(FhtModel, ModelHeader)> {
    if bytes.get(..8) != Some(MODEL_MAGIC.as_slice()) {
        return Err(FhtError::Format("not a model file".into()));
    }
    let len = to_usize(get_u64(bytes, 8)?)?;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| FhtError::Format("truncated header".into()))?;
    let header: ModelHeader = serde_json::from_slice(json)?;
    let count: usize = header.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let start = 16 + len;
    if bytes.len() != start + count * 8 {
        return Err(FhtError::Format("payload length does not match core shapes".into()));
    }
    let payload = get_f64s(bytes, start, count)?;
    if header.payload_sha256 != payload_hash(&payload) {
        return Err(FhtError::Format("model payload hash mismatch".into()));
    }
    let mut cores = Vec::with_capacity(header.shapes.len());
    let mut at = 0;
    for shape in &header.shapes {
        let len: usize = shape.iter().product();
        cores.push(TensorCore::new(shape.clone(), payload[at..at + len].to_vec())?);
        at += len;
    }
    let mut model = FhtModel::new(header.tree.clone(), header.basis, cores)?;
    model.metadata = header.metadata.clone();
    Ok((model, header))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(bytes)
}

pub fn save_trajectories(
    path: &Path,
    batch: &TrajectoryBatch,
    config_hash: &str,
    clamp_bound: Option<f64>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trajectories(&mut w, batch, config_hash, clamp_bound)?;
    w.flush()?;
    Ok(())
}

pub fn load_trajectories(path: &Path) -> Result<(TrajectoryBatch, TrajectoryTrailer)> {
    read_trajectories(&read_file(path)?)
}

pub fn save_model(path: &Path, model: &FhtModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(FhtModel, ModelHeader)> {
    read_model(&read_file(path)?)
}

/// Outcome of checking one artifact.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verification {
    pub kind: &'static str,
    pub version: String,
    pub config_hash: Option<String>,
    /// Whether the embedded config hash equals the expected one, if given.
    pub config_matches: Option<bool>,
}

/// Recomputes the payload hash of a trajectory, model or CSV artifact and
/// optionally compares its config hash with `expected`. Payload hashes are
/// checked while parsing; a mismatch is an error.
pub fn verify_file(path: &Path, expected: Option<&str>) -> Result<Verification> {
    let bytes = read_file(path)?;
    let (kind, version, hash) = match bytes.get(..8) {
        Some(m) if m == TRAJECTORY_MAGIC => {
            let (_, t) = read_trajectories(&bytes)?;
            ("trajectory", t.version, Some(t.config_hash))
        }
        Some(m) if m == MODEL_MAGIC => {
            let (_, h) = read_model(&bytes)?;
            ("model", h.version, h.metadata.config_hash)
        }
        _ => {
            let text = String::from_utf8(bytes).map_err(|_| FhtError::Format("unrecognized file".into()))?;
            let (version, hash, body_hash) = parse_csv_preamble(&text)?;
            let body = text.split_once('\n').map_or("", |(_, b)| b);
            if bytes_hash(body.as_bytes()) != body_hash {
                return Err(FhtError::Format("CSV body hash mismatch".into()));
            }
            ("csv", version, Some(hash))
        }
    };
    let config_matches = expected.map(|e| hash.as_deref() == Some(e));
    Ok(Verification {
        kind,
        version,
        config_hash: hash,
        config_matches,
    })
}

/// First line of every CSV artifact:
/// `# fht <version> config_hash=<hex> body_sha256=<hex>`.
pub fn csv_with_preamble(config_hash: &str, body: &str) -> String {
    format!(
        "# fht {VERSION} config_hash={config_hash} body_sha256={}\n{body}",
        bytes_hash(body.as_bytes())
    )
}

fn parse_csv_preamble(text: &str) -> Result<(String, String, String)> {
    let first = text.lines().next().unwrap_or("");
    let mut parts = first.split_whitespace();
    if parts.next() != Some("#") || parts.next() != Some("fht") {
        return Err(FhtError::Format("unrecognized file".into()));
    }
    let version = parts.next().unwrap_or("").to_string();
    let mut config = None;
    let mut body = None;
    for p in parts {
        if let Some(v) = p.strip_prefix("config_hash=") {
            config = Some(v.to_string());
        } else if let Some(v) = p.strip_prefix("body_sha256=") {
            body = Some(v.to_string());
        }
    }
    match (config, body) {
        (Some(c), Some(b)) => Ok((version, c, b)),
        _ => Err(FhtError::Format("CSV preamble lacks hashes".into())),
    }
}
