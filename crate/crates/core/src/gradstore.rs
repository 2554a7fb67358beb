//! Gradient dataset model and the GRDS binary container.
//!
//! GRDS layout (all integers little-endian):
//!
//! ```text
//! magic "GRDS" | u16 version=1 | u8 dtype (0=f32, 1=f64) | u32 layer_count
//! per layer: u32 dim | u8 kind (0=generic, 1=linear) | [u32 in_dim, u32 out_dim]
//!            | u16 name_len | name utf-8
//! u64 n_examples
//! per example: u64 example_id | i32 label | u16 source_len | source utf-8
//!              | u8 split (0=train, 1=val) | u8 flipped | gradient block
//! u32 crc32 of every preceding byte
//! ```
//!
//! The container is written in one pass and never seeks. Values stored as
//! f32 are promoted to f64 on load; round-trips are bit-exact at matching
//! precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRDS_MAGIC: &[u8; 4] = b"GRDS";
pub const GRDS_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum GradStoreError {
    #[error("bad magic bytes (not a GRDS file)")]
    BadMagic,
    #[error("unsupported GRDS version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file at byte {0}")]
    TruncatedFile(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("no validation examples in dataset")]
    NoValidationExamples,
    #[error("row width {got} does not match layer total {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("missing metadata for example_id {0}")]
    MissingMeta(u64),
    #[error("non-finite gradient entry for example_id {0}")]
    NonFiniteEntry(u64),
    #[error("invalid layer spec: {0}")]
    BadLayerSpec(String),
    #[error("invalid dataset: {0}")]
    BadDataset(String),
    #[error("invalid field {field}: {value}")]
    BadField { field: &'static str, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GradStoreError>;

/// On-disk float width for gradient blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Generic,
    /// Linear layer; bias is folded into `in_dim` as an extra constant-1
    /// input, so `dim = in_dim * out_dim` covers the whole layer.
    Linear { in_dim: usize, out_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer_id: usize,
    pub name: String,
    pub dim: usize,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn generic(layer_id: usize, name: impl Into<String>, dim: usize) -> Self {
        Self { layer_id, name: name.into(), dim, kind: LayerKind::Generic }
    }

    pub fn linear(layer_id: usize, name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            layer_id,
            name: name.into(),
            dim: in_dim * out_dim,
            kind: LayerKind::Linear { in_dim, out_dim },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(GradStoreError::BadLayerSpec(format!(
                "layer {} has dim 0",
                self.layer_id
            )));
        }
        if let LayerKind::Linear { in_dim, out_dim } = self.kind {
            if in_dim * out_dim != self.dim {
                return Err(GradStoreError::BadLayerSpec(format!(
                    "layer {}: dim {} != {}x{}",
                    self.layer_id, self.dim, in_dim, out_dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub example_id: u64,
    pub label: i32,
    pub source: String,
    pub split: Split,
    pub flipped: bool,
}

/// Per-example, per-layer gradient rows plus example metadata.
///
/// Immutable after construction; rows are stored row-major with width
/// `total_dim = sum of layer dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientDataset {
    layers: Vec<LayerSpec>,
    meta: Vec<ExampleMeta>,
    gradients: Vec<f64>,
    total_dim: usize,
}

impl GradientDataset {
    pub fn new(layers: Vec<LayerSpec>, meta: Vec<ExampleMeta>, gradients: Vec<f64>) -> Result<Self> {
        let mut total = 0usize;
        for l in &layers {
            l.validate()?;
            total += l.dim;
        }
        if total == 0 {
            return Err(GradStoreError::BadDataset("no layers".into()));
        }
        if gradients.len() != meta.len() * total {
            return Err(GradStoreError::WidthMismatch {
                got: if meta.is_empty() { gradients.len() } else { gradients.len() / meta.len() },
                want: total,
            });
        }
        for (i, m) in meta.iter().enumerate() {
            if gradients[i * total..(i + 1) * total].iter().any(|x| !x.is_finite()) {
                return Err(GradStoreError::NonFiniteEntry(m.example_id));
            }
        }
        Ok(Self { layers, meta, gradients, total_dim: total })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn n_examples(&self) -> usize {
        self.meta.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn meta(&self) -> &[ExampleMeta] {
        &self.meta
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.gradients[i * self.total_dim..(i + 1) * self.total_dim]
    }

    /// Column range of layer `l` within a row.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let start: usize = self.layers[..l].iter().map(|s| s.dim).sum();
        start..start + self.layers[l].dim
    }

    pub fn layer_block(&self, i: usize, l: usize) -> &[f64] {
        &self.row(i)[self.layer_range(l)]
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.meta.len()).filter(|&i| self.meta[i].split == split).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Train)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Val)
    }
}

/// Captured `(h, delta)` activation pairs for linear layers, aligned with a
/// dataset's rows. `h` is the layer input including the constant-1 bias
/// entry, `delta` the loss gradient at the pre-activation output, so
/// `flatten(h x delta)` reproduces the layer's gradient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationStore {
    /// Indices (into the dataset's layer list) of the captured linear layers.
    pub linear_layers: Vec<usize>,
    /// `pairs[example][k] = (h, delta)` for captured layer `k`.
    pub pairs: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryProvenance {
    AveragedValidation,
    Custom,
}

/// Query vector for influence scoring, blocked per layer like gradient rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryVector {
    pub data: Vec<f64>,
    pub provenance: QueryProvenance,
}

/// Arithmetic mean of the validation-split gradient rows.
pub fn build_query(ds: &GradientDataset) -> Result<QueryVector> {
    let val = ds.val_indices();
    if val.is_empty() {
        return Err(GradStoreError::NoValidationExamples);
    }
    let mut acc = vec![0.0_f64; ds.total_dim()];
    for &i in &val {
        for (a, g) in acc.iter_mut().zip(ds.row(i)) {
            *a += g;
        }
    }
    let inv = 1.0 / val.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(QueryVector { data: acc, provenance: QueryProvenance::AveragedValidation })
}

// --- GRDS encoding ---

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn short_str(&mut self, s: &str) -> Result<()> {
        let bytes = s.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(GradStoreError::BadField { field: "string", value: format!("{} bytes", bytes.len()) });
        }
        self.u16(bytes.len() as u16);
        self.buf.extend_from_slice(bytes);
        Ok(())
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(GradStoreError::TruncatedFile(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn short_str(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| GradStoreError::BadField { field: "string", value: "invalid utf-8".into() })
    }
}

/// Encodes the dataset to GRDS bytes at the given precision.
pub fn encode_grds(ds: &GradientDataset, dtype: Dtype) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(GRDS_MAGIC);
    w.u16(GRDS_VERSION);
    w.u8(match dtype {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    });
    w.u32(ds.layers.len() as u32);
    for l in &ds.layers {
        w.u32(l.dim as u32);
        match l.kind {
            LayerKind::Generic => w.u8(0),
            LayerKind::Linear { in_dim, out_dim } => {
                w.u8(1);
                w.u32(in_dim as u32);
                w.u32(out_dim as u32);
            }
        }
        w.short_str(&l.name)?;
    }
    w.u64(ds.n_examples() as u64);
    for (i, m) in ds.meta.iter().enumerate() {
        w.u64(m.example_id);
        w.i32(m.label);
        w.short_str(&m.source)?;
        w.u8(match m.split {
            Split::Train => 0,
            Split::Val => 1,
        });
        w.u8(m.flipped as u8);
        match dtype {
            Dtype::F32 => {
                for &g in ds.row(i) {
                    w.buf.extend_from_slice(&(g as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for &g in ds.row(i) {
                    w.buf.extend_from_slice(&g.to_le_bytes());
                }
            }
        }
    }
    let mut h = crc32fast::Hasher::new();
    h.update(&w.buf);
    let crc = h.finalize();
    w.u32(crc);
    Ok(w.buf)
}

/// Decodes GRDS bytes, verifying magic, version, and trailing checksum.
pub fn decode_grds(bytes: &[u8]) -> Result<(GradientDataset, Dtype)> {
    if bytes.len() < 4 + 2 + 1 + 4 + 8 + 4 {
        return Err(GradStoreError::TruncatedFile(bytes.len()));
    }
    if &bytes[..4] != GRDS_MAGIC {
        return Err(GradStoreError::BadMagic);
    }
    let payload_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[payload_len..].try_into().unwrap());
    let mut h = crc32fast::Hasher::new();
    h.update(&bytes[..payload_len]);
    let computed = h.finalize();
    if stored != computed {
        return Err(GradStoreError::ChecksumMismatch { stored, computed });
    }

    let mut r = ByteReader::new(&bytes[..payload_len]);
    r.take(4)?; // magic
    let version = r.u16()?;
    if version != GRDS_VERSION {
        return Err(GradStoreError::UnsupportedVersion(version));
    }
    let dtype = match r.u8()? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => {
            return Err(GradStoreError::BadField { field: "dtype", value: other.to_string() })
        }
    };
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    let mut total = 0usize;
    for layer_id in 0..layer_count {
        let dim = r.u32()? as usize;
        let kind = match r.u8()? {
            0 => LayerKind::Generic,
            1 => {
                let in_dim = r.u32()? as usize;
                let out_dim = r.u32()? as usize;
                LayerKind::Linear { in_dim, out_dim }
            }
            other => {
                return Err(GradStoreError::BadField { field: "layer kind", value: other.to_string() })
            }
        };
        let name = r.short_str()?;
        let spec = LayerSpec { layer_id, name, dim, kind };
        spec.validate()?;
        total += dim;
        layers.push(spec);
    }
    let n = r.u64()? as usize;
    // Reject widths that cannot match the remaining payload.
    let per_f = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let mut meta = Vec::with_capacity(n);
    let mut gradients = Vec::with_capacity(n * total);
    for _ in 0..n {
        let example_id = r.u64()?;
        let label = r.i32()?;
        let source = r.short_str()?;
        let split = match r.u8()? {
            0 => Split::Train,
            1 => Split::Val,
            other => {
                return Err(GradStoreError::BadField { field: "split", value: other.to_string() })
            }
        };
        let flipped = r.u8()? != 0;
        let block = r.take(total * per_f)?;
        match dtype {
            Dtype::F32 => {
                for c in block.chunks_exact(4) {
                    gradients.push(f32::from_le_bytes(c.try_into().unwrap()) as f64);
                }
            }
            Dtype::F64 => {
                for c in block.chunks_exact(8) {
                    gradients.push(f64::from_le_bytes(c.try_into().unwrap()));
                }
            }
        }
        meta.push(ExampleMeta { example_id, label, source, split, flipped });
    }
    if r.pos != payload_len {
        return Err(GradStoreError::BadDataset(format!(
            "{} trailing bytes after last example",
            payload_len - r.pos
        )));
    }
    Ok((GradientDataset::new(layers, meta, gradients)?, dtype))
}

pub fn write_grds(ds: &GradientDataset, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let bytes = encode_grds(ds, dtype)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_grds(path: impl AsRef<Path>) -> Result<GradientDataset> {
    let bytes = fs::read(path)?;
    Ok(decode_grds(&bytes)?.0)
}

/// Ingests gradients and metadata from two CSV files that share the
/// conceptual header `example_id,label,source,split,flipped,g_0..g_{d-1}`:
/// the gradient file carries `example_id,g_0..g_{d-1}` and the meta file
/// `example_id,label,source,split,flipped`. Rows are joined on example_id;
/// meta rows without gradients are ignored.
pub fn ingest_csv(
    gradients_csv: impl AsRef<Path>,
    meta_csv: impl AsRef<Path>,
    layers: Vec<LayerSpec>,
) -> Result<GradientDataset> {
    let total: usize = layers.iter().map(|l| l.dim).sum();

    let mut meta_by_id = std::collections::HashMap::new();
    let mut meta_reader = csv::Reader::from_path(meta_csv)?;
    for record in meta_reader.records() {
        let record = record?;
        let example_id = parse_field::<u64>(record.get(0), "example_id")?;
        let label = parse_field::<i32>(record.get(1), "label")?;
        let source = record.get(2).unwrap_or("").to_string();
        let split = match record.get(3).unwrap_or("") {
            "train" => Split::Train,
            "val" => Split::Val,
            other => {
                return Err(GradStoreError::BadField { field: "split", value: other.to_string() })
            }
        };
        let flipped = match record.get(4).unwrap_or("") {
            "true" | "1" => true,
            "false" | "0" | "" => false,
            other => {
                return Err(GradStoreError::BadField { field: "flipped", value: other.to_string() })
            }
        };
        meta_by_id.insert(example_id, ExampleMeta { example_id, label, source, split, flipped });
    }

    let mut meta = Vec::new();
    let mut gradients = Vec::new();
    let mut grad_reader = csv::Reader::from_path(gradients_csv)?;
    for record in grad_reader.records() {
        let record = record?;
        let example_id = parse_field::<u64>(record.get(0), "example_id")?;
        if record.len() != total + 1 {
            return Err(GradStoreError::WidthMismatch { got: record.len() - 1, want: total });
        }
        let m = meta_by_id
            .get(&example_id)
            .cloned()
            .ok_or(GradStoreError::MissingMeta(example_id))?;
        for j in 1..record.len() {
            let v: f64 = record
                .get(j)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| GradStoreError::BadField {
                    field: "gradient",
                    value: record.get(j).unwrap_or("").to_string(),
                })?;
            if !v.is_finite() {
                return Err(GradStoreError::NonFiniteEntry(example_id));
            }
            gradients.push(v);
        }
        meta.push(m);
    }
    GradientDataset::new(layers, meta, gradients)
}

fn parse_field<T: std::str::FromStr>(v: Option<&str>, field: &'static str) -> Result<T> {
    v.and_then(|s| s.trim().parse().ok())
        .ok_or(GradStoreError::BadField { field, value: v.unwrap_or("").to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample_dataset(n_train: usize, n_val: usize, seed: u64) -> GradientDataset {
        let layers = vec![
            LayerSpec::linear(0, "layer0", 4, 2),
            LayerSpec::generic(1, "layer1", 4),
        ];
        let total = 12;
        let mut g = crate::rng::stream(seed, "test-data", 0);
        let n = n_train + n_val;
        let meta: Vec<ExampleMeta> = (0..n)
            .map(|i| ExampleMeta {
                example_id: i as u64,
                label: (i % 2) as i32,
                source: format!("src{}", i % 3),
                split: if i < n_train { Split::Train } else { Split::Val },
                flipped: i % 5 == 0,
            })
            .collect();
        let grads: Vec<f64> = (0..n * total).map(|_| g.gen_range(-1.0..1.0)).collect();
        GradientDataset::new(layers, meta, grads).unwrap()
    }

    #[test]
    fn build_query_single_val_row() {
        let layers = vec![LayerSpec::generic(0, "l", 3)];
        let meta = vec![ExampleMeta {
            example_id: 0,
            label: 1,
            source: "s".into(),
            split: Split::Val,
            flipped: false,
        }];
        let ds = GradientDataset::new(layers, meta, vec![1.0, -2.0, 3.0]).unwrap();
        let q = build_query(&ds).unwrap();
        assert_eq!(q.data, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn build_query_two_rows_mean() {
        let layers = vec![LayerSpec::generic(0, "l", 2)];
        let meta: Vec<ExampleMeta> = (0..2)
            .map(|i| ExampleMeta {
                example_id: i,
                label: 0,
                source: String::new(),
                split: Split::Val,
                flipped: false,
            })
            .collect();
        let ds = GradientDataset::new(layers, meta, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let q = build_query(&ds).unwrap();
        assert_eq!(q.data, vec![0.5, 0.5]);
    }

    #[test]
    fn build_query_matches_naive_mean_oracle() {
        let ds = sample_dataset(0, 5, 3);
        let q = build_query(&ds).unwrap();
        let mut expect = vec![0.0; ds.total_dim()];
        for i in 0..5 {
            for (e, g) in expect.iter_mut().zip(ds.row(i)) {
                *e += g / 5.0;
            }
        }
        for (a, b) in q.data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn build_query_requires_validation() {
        let ds = sample_dataset(3, 0, 1);
        assert!(matches!(build_query(&ds), Err(GradStoreError::NoValidationExamples)));
    }

    #[test]
    fn build_query_is_linear_in_scaling() {
        let ds = sample_dataset(2, 4, 9);
        let q = build_query(&ds).unwrap();
        let scaled = GradientDataset::new(
            ds.layers().to_vec(),
            ds.meta().to_vec(),
            (0..ds.n_examples())
                .flat_map(|i| ds.row(i).iter().map(|x| 2.5 * x).collect::<Vec<_>>())
                .collect(),
        )
        .unwrap();
        let q2 = build_query(&scaled).unwrap();
        for (a, b) in q2.data.iter().zip(&q.data) {
            assert!((a - 2.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn grds_round_trip_f64_bit_exact() {
        let ds = sample_dataset(4, 3, 17);
        let bytes = encode_grds(&ds, Dtype::F64).unwrap();
        let (back, dtype) = decode_grds(&bytes).unwrap();
        assert_eq!(dtype, Dtype::F64);
        assert_eq!(back, ds);
    }

    #[test]
    fn grds_round_trip_empty_train() {
        let ds = sample_dataset(0, 1, 5);
        let bytes = encode_grds(&ds, Dtype::F64).unwrap();
        let (back, _) = decode_grds(&bytes).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn grds_f32_write_read_write_is_byte_stable() {
        let ds = sample_dataset(100, 0, 23);
        let bytes1 = encode_grds(&ds, Dtype::F32).unwrap();
        let (mid, dtype) = decode_grds(&bytes1).unwrap();
        assert_eq!(dtype, Dtype::F32);
        let bytes2 = encode_grds(&mid, Dtype::F32).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn grds_corrupted_checksum_rejected() {
        let ds = sample_dataset(2, 1, 29);
        let mut bytes = encode_grds(&ds, Dtype::F64).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        assert!(matches!(
            decode_grds(&bytes),
            Err(GradStoreError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn grds_corrupted_payload_rejected() {
        let ds = sample_dataset(2, 1, 29);
        let mut bytes = encode_grds(&ds, Dtype::F64).unwrap();
        bytes[20] ^= 0x01;
        assert!(matches!(
            decode_grds(&bytes),
            Err(GradStoreError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn grds_bad_magic_and_truncation() {
        let ds = sample_dataset(1, 1, 31);
        let bytes = encode_grds(&ds, Dtype::F64).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_grds(&bad), Err(GradStoreError::BadMagic)));
        assert!(matches!(
            decode_grds(&bytes[..8]),
            Err(GradStoreError::TruncatedFile(_))
        ));
    }

    #[test]
    fn grds_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grds");
        let ds = sample_dataset(7, 2, 37);
        write_grds(&ds, &path, Dtype::F64).unwrap();
        let back = read_grds(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_rejects_width_mismatch() {
        let layers = vec![LayerSpec::generic(0, "l", 3)];
        let meta = vec![ExampleMeta {
            example_id: 0,
            label: 0,
            source: String::new(),
            split: Split::Train,
            flipped: false,
        }];
        assert!(matches!(
            GradientDataset::new(layers, meta, vec![1.0, 2.0]),
            Err(GradStoreError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn ingest_csv_small() {
        let dir = tempfile::tempdir().unwrap();
        let gpath = dir.path().join("g.csv");
        let mpath = dir.path().join("m.csv");
        std::fs::write(&gpath, "example_id,g_0,g_1,g_2\n0,1.0,2.0,3.0\n1,4.0,5.0,6.0\n").unwrap();
        std::fs::write(
            &mpath,
            "example_id,label,source,split,flipped\n0,1,a,train,false\n1,0,b,val,true\n",
        )
        .unwrap();
        let ds = ingest_csv(&gpath, &mpath, vec![LayerSpec::generic(0, "l", 3)]).unwrap();
        assert_eq!(ds.n_examples(), 2);
        assert_eq!(ds.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(ds.meta()[1].split, Split::Val);
        assert!(ds.meta()[1].flipped);
    }

    #[test]
    fn ingest_csv_rejects_nan_and_missing_meta_and_width() {
        let dir = tempfile::tempdir().unwrap();
        let gpath = dir.path().join("g.csv");
        let mpath = dir.path().join("m.csv");
        std::fs::write(&mpath, "example_id,label,source,split,flipped\n0,1,a,train,false\n").unwrap();

        std::fs::write(&gpath, "example_id,g_0,g_1\n0,1.0,nan\n").unwrap();
        let r = ingest_csv(&gpath, &mpath, vec![LayerSpec::generic(0, "l", 2)]);
        assert!(matches!(r, Err(GradStoreError::NonFiniteEntry(0))));

        std::fs::write(&gpath, "example_id,g_0,g_1\n7,1.0,2.0\n").unwrap();
        let r = ingest_csv(&gpath, &mpath, vec![LayerSpec::generic(0, "l", 2)]);
        assert!(matches!(r, Err(GradStoreError::MissingMeta(7))));

        std::fs::write(&gpath, "example_id,g_0,g_1,g_2\n0,1.0,2.0,3.0\n").unwrap();
        let r = ingest_csv(&gpath, &mpath, vec![LayerSpec::generic(0, "l", 2)]);
        assert!(matches!(r, Err(GradStoreError::WidthMismatch { got: 3, want: 2 })));
    }
}
