//! Dataset loading, synthetic data, and the binary artifact formats.
//!
//! Formats (all multi-byte fields little-endian except IDX, which is
//! big-endian by definition):
//!
//! * IDX images (`0x00000803`) and labels (`0x00000801`), optionally gzipped.
//! * `B2F1`: `n, d1, d2, l` as u32, then `n` row-major f32 `d1 x d2`
//!   matrices, then the `l x n` label matrix row-major as bytes in {0, 1}.
//! * `BSDH` model files, see [`encode_model`].
//! * `BSDC` packed code files, see [`encode_codes`].
//! * Run manifests: flat `key = value` text.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::{BilinearModel, FeatureTensor, LabelMatrix, ModelHyper, PackedCodes};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const B2F_MAGIC: &[u8; 4] = b"B2F1";
pub const MODEL_MAGIC: &[u8; 4] = b"BSDH";
pub const MODEL_VERSION: u32 = 1;
pub const CODES_MAGIC: &[u8; 4] = b"BSDC";
pub const CODES_VERSION: u32 = 1;

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidValue(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(0, format!("gzip decode of {}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.bytes.len(),
                format!("truncated while reading {what} ({len} bytes needed at offset {})", self.pos),
            )),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice length"))
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.array(what)?))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64_le(&mut self, what: &str) -> Result<f64> {
        let offset = self.pos;
        let v = f64::from_le_bytes(self.array(what)?);
        if !v.is_finite() {
            return Err(Error::format(offset, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64_le(what)?);
        }
        Ok(DMatrix::from_vec(rows, cols, data))
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes after {what}", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn checked_size(parts: &[usize], offset: usize) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Error::format(offset, "declared sizes overflow"))
}

/// Pixel scaling applied when loading IDX images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelScale {
    /// Divide by 255.
    #[default]
    Unit,
    /// Keep 0..=255.
    Raw,
}

pub fn parse_idx_images(bytes: &[u8], scale: PixelScale) -> Result<FeatureTensor> {
    let mut r = Reader::new(bytes);
    let magic = r.u32_be("IDX magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad IDX image magic {magic:#010x}")));
    }
    let n = r.u32_be("image count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(4, format!("empty image set {n}x{rows}x{cols}")));
    }
    let total = checked_size(&[n, rows, cols], 4)?;
    let pixels = r.take(total, "pixel data")?;
    r.finish("pixel data")?;
    let factor = match scale {
        PixelScale::Unit => 1.0 / 255.0,
        PixelScale::Raw => 1.0,
    };
    let values: Vec<f64> = pixels.iter().map(|&p| f64::from(p) * factor).collect();
    FeatureTensor::from_row_major(n, rows, cols, &values)
}

/// Digit labels one-hot encoded into 10 rows.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<LabelMatrix> {
    let mut r = Reader::new(bytes);
    let magic = r.u32_be("IDX magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad IDX label magic {magic:#010x}")));
    }
    let n = r.u32_be("label count")? as usize;
    if n == 0 {
        return Err(Error::format(4, "empty label set"));
    }
    let start = r.pos;
    let labels = r.take(n, "label data")?;
    r.finish("label data")?;
    if let Some(pos) = labels.iter().position(|&v| v > 9) {
        return Err(Error::format(start + pos, format!("digit label {} out of range", labels[pos])));
    }
    let classes: Vec<usize> = labels.iter().map(|&v| usize::from(v)).collect();
    LabelMatrix::one_hot(&classes, 10)
}

pub fn load_idx(images: &Path, labels: &Path, scale: PixelScale) -> Result<(FeatureTensor, LabelMatrix)> {
    let x = parse_idx_images(&read_maybe_gzip(images)?, scale)?;
    let y = parse_idx_labels(&read_maybe_gzip(labels)?)?;
    if x.len() != y.len() {
        return Err(Error::shape("IDX images vs labels", x.len(), y.len()));
    }
    Ok((x, y))
}

/// Serializes IDX image bytes (used for fixtures and exports).
pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != n * rows * cols {
        return Err(Error::shape("IDX pixels", n * rows * cols, pixels.len()));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidValue(format!("{what} {v} does not fit in u32")))
}

pub fn encode_b2f(x: &FeatureTensor, y: &LabelMatrix) -> Result<Vec<u8>> {
    if x.len() != y.len() {
        return Err(Error::shape("features vs labels", x.len(), y.len()));
    }
    let (d1, d2) = x.dims();
    let (n, l) = (x.len(), y.label_dim());
    let mut out = Vec::with_capacity(20 + n * d1 * d2 * 4 + l * n);
    out.extend_from_slice(B2F_MAGIC);
    for (v, what) in [(n, "n"), (d1, "d1"), (d2, "d2"), (l, "l")] {
        out.extend_from_slice(&u32_field(v, what)?.to_le_bytes());
    }
    for s in x.samples() {
        for r in 0..d1 {
            for c in 0..d2 {
                out.extend_from_slice(&(s[(r, c)] as f32).to_le_bytes());
            }
        }
    }
    for k in 0..l {
        for i in 0..n {
            out.push(y.get(k, i));
        }
    }
    Ok(out)
}

pub fn decode_b2f(bytes: &[u8]) -> Result<(FeatureTensor, LabelMatrix)> {
    let mut r = Reader::new(bytes);
    if &r.array::<4>("B2F magic")? != B2F_MAGIC {
        return Err(Error::format(0, "bad B2F magic"));
    }
    let n = r.u32_le("n")? as usize;
    let d1 = r.u32_le("d1")? as usize;
    let d2 = r.u32_le("d2")? as usize;
    let l = r.u32_le("l")? as usize;
    if n == 0 || d1 == 0 || d2 == 0 || l == 0 {
        return Err(Error::format(4, format!("zero size in header n={n} d1={d1} d2={d2} l={l}")));
    }
    let feature_bytes = checked_size(&[n, d1, d2, 4], 4)?;
    let label_bytes = checked_size(&[l, n], 4)?;
    let expected = 20usize
        .checked_add(feature_bytes)
        .and_then(|v| v.checked_add(label_bytes))
        .ok_or_else(|| Error::format(4, "declared sizes overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected),
            format!("B2F payload is {} bytes, header declares {expected}", bytes.len()),
        ));
    }
    let start = r.pos;
    let raw = r.take(feature_bytes, "features")?;
    let mut values = Vec::with_capacity(n * d1 * d2);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk length"));
        if !v.is_finite() {
            return Err(Error::format(start + 4 * i, "non-finite feature value"));
        }
        values.push(f64::from(v));
    }
    let label_start = r.pos;
    let raw_labels = r.take(label_bytes, "labels")?;
    r.finish("labels")?;
    if let Some(pos) = raw_labels.iter().position(|&v| v > 1) {
        return Err(Error::format(label_start + pos, format!("label byte {} not in {{0,1}}", raw_labels[pos])));
    }
    let columns: Vec<Vec<u8>> = (0..n).map(|i| (0..l).map(|k| raw_labels[k * n + i]).collect()).collect();
    let x = FeatureTensor::from_row_major(n, d1, d2, &values)?;
    let y = LabelMatrix::from_columns(l, &columns)
        .map_err(|e| Error::format(label_start, e.to_string()))?;
    Ok((x, y))
}

pub fn save_b2f(path: &Path, x: &FeatureTensor, y: &LabelMatrix) -> Result<()> {
    write_atomic(path, &encode_b2f(x, y)?)
}

pub fn load_b2f(path: &Path) -> Result<(FeatureTensor, LabelMatrix)> {
    decode_b2f(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub labels: usize,
    pub labels_per_sample: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Each class has a standard-normal prototype matrix. A sample averages the
/// prototypes of its labels and adds `noise`-scaled Gaussian noise. Sample
/// `i`'s first label is `i % labels` so every class is populated once
/// `n >= labels`; further labels are drawn without replacement.
pub fn synth_multilabel(config: &SynthConfig) -> Result<(FeatureTensor, LabelMatrix)> {
    let SynthConfig {
        n,
        d1,
        d2,
        labels,
        labels_per_sample,
        noise,
        seed,
    } = *config;
    if n == 0 || d1 == 0 || d2 == 0 || labels == 0 || labels_per_sample == 0 {
        return Err(Error::InvalidConfig("synthetic sizes must be positive".into()));
    }
    if labels_per_sample > labels {
        return Err(Error::InvalidConfig(format!(
            "labels_per_sample {labels_per_sample} exceeds label count {labels}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise must be finite and >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut prototypes = Vec::with_capacity(labels);
    for _ in 0..labels {
        let mut m = DMatrix::<f64>::zeros(d1, d2);
        for r in 0..d1 {
            for c in 0..d2 {
                m[(r, c)] = normal(&mut rng);
            }
        }
        prototypes.push(m);
    }
    let mut samples = Vec::with_capacity(n);
    let mut columns = Vec::with_capacity(n);
    for i in 0..n {
        let first = i % labels;
        let mut rest: Vec<usize> = (0..labels).filter(|&k| k != first).collect();
        rest.shuffle(&mut rng);
        let mut chosen = vec![first];
        chosen.extend(rest.into_iter().take(labels_per_sample - 1));
        let mut x = DMatrix::<f64>::zeros(d1, d2);
        for &k in &chosen {
            x += &prototypes[k];
        }
        if chosen.len() > 1 {
            x /= chosen.len() as f64;
        }
        if noise > 0.0 {
            for r in 0..d1 {
                for c in 0..d2 {
                    x[(r, c)] += noise * normal(&mut rng);
                }
            }
        }
        let mut col = vec![0u8; labels];
        for &k in &chosen {
            col[k] = 1;
        }
        samples.push(x);
        columns.push(col);
    }
    Ok((FeatureTensor::new(samples)?, LabelMatrix::from_columns(labels, &columns)?))
}

/// Seeded disjoint query/train index sets drawn from `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub query: Vec<usize>,
    pub train: Vec<usize>,
}

pub fn random_split(n: usize, n_query: usize, n_train: usize, seed: u64) -> Result<Split> {
    if n_query + n_train > n {
        return Err(Error::InvalidConfig(format!(
            "split needs {n_query} + {n_train} samples but only {n} available"
        )));
    }
    if n_train == 0 {
        return Err(Error::InvalidConfig("training split must be non-empty".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        query: perm[..n_query].to_vec(),
        train: perm[n_query..n_query + n_train].to_vec(),
    })
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Model file layout:
///
/// ```text
/// "BSDH" | version u32 | d1 d2 c1 c2 c l : u32
/// lambda mu tol : f64 | t1 t2 : u32 | seed u64 | has_mean u8
/// Q1 (d1 x c1) | Q2 (d2 x c2) | U (c x c1c2) | W (c x l)   column-major f64
/// [mean (c1c2) f64]  | trace_len u32 | trace f64 * trace_len
/// ```
pub fn encode_model(model: &BilinearModel) -> Result<Vec<u8>> {
    model.validate()?;
    let (d1, d2) = model.input_dims();
    let h = &model.hyper;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for (v, what) in [
        (d1, "d1"),
        (d2, "d2"),
        (h.c1, "c1"),
        (h.c2, "c2"),
        (h.bits, "c"),
        (model.label_dim(), "l"),
    ] {
        out.extend_from_slice(&u32_field(v, what)?.to_le_bytes());
    }
    for v in [h.lambda, h.mu, h.tol] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&u32_field(h.t1, "t1")?.to_le_bytes());
    out.extend_from_slice(&u32_field(h.t2, "t2")?.to_le_bytes());
    out.extend_from_slice(&h.seed.to_le_bytes());
    out.push(u8::from(model.feature_mean.is_some()));
    put_matrix(&mut out, &model.q1);
    put_matrix(&mut out, &model.q2);
    put_matrix(&mut out, &model.u);
    put_matrix(&mut out, &model.w);
    if let Some(mean) = &model.feature_mean {
        for v in mean.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&u32_field(model.objective_trace.len(), "trace length")?.to_le_bytes());
    for v in &model.objective_trace {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<BilinearModel> {
    let mut r = Reader::new(bytes);
    if &r.array::<4>("model magic")? != MODEL_MAGIC {
        return Err(Error::format(0, "bad model magic"));
    }
    let version = r.u32_le("model version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            what: "model file",
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let mut dims = [0usize; 6];
    for (slot, what) in dims.iter_mut().zip(["d1", "d2", "c1", "c2", "c", "l"]) {
        *slot = r.u32_le(what)? as usize;
        if *slot == 0 {
            return Err(Error::format(r.pos - 4, format!("zero {what}")));
        }
    }
    let [d1, d2, c1, c2, c, l] = dims;
    if c1 > d1 || c2 > d2 {
        return Err(Error::format(8, format!("transition sizes {c1}x{c2} exceed inputs {d1}x{d2}")));
    }
    // every matrix must fit in what remains before allocating
    let needed = checked_size(&[d1, c1], 8)?
        .checked_add(checked_size(&[d2, c2], 8)?)
        .and_then(|v| v.checked_add(c * c1 * c2))
        .and_then(|v| v.checked_add(c * l))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::format(8, "declared sizes overflow"))?;
    let lambda = r.f64_le("lambda")?;
    let mu = r.f64_le("mu")?;
    let tol_offset = r.pos;
    let tol = f64::from_le_bytes(r.array("tol")?);
    if tol.is_nan() {
        return Err(Error::format(tol_offset, "tol is NaN"));
    }
    let t1 = r.u32_le("t1")? as usize;
    let t2 = r.u32_le("t2")? as usize;
    let seed = r.u64_le("seed")?;
    let flag_offset = r.pos;
    let has_mean = match r.u8("mean flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::format(flag_offset, format!("bad mean flag {other}"))),
    };
    if bytes.len() - r.pos < needed {
        return Err(Error::format(bytes.len(), "truncated model matrices"));
    }
    let q1 = r.matrix(d1, c1, "Q1")?;
    let q2 = r.matrix(d2, c2, "Q2")?;
    let u = r.matrix(c, c1 * c2, "U")?;
    let w = r.matrix(c, l, "W")?;
    let feature_mean = if has_mean {
        Some(DVector::from_column_slice(r.matrix(c1 * c2, 1, "feature mean")?.as_slice()))
    } else {
        None
    };
    let trace_len = r.u32_le("trace length")? as usize;
    if (bytes.len() - r.pos) / 8 < trace_len {
        return Err(Error::format(bytes.len(), "truncated objective trace"));
    }
    let trace = (0..trace_len)
        .map(|_| r.f64_le("objective trace"))
        .collect::<Result<Vec<_>>>()?;
    r.finish("model")?;
    let model = BilinearModel {
        q1,
        q2,
        u,
        w,
        feature_mean,
        hyper: ModelHyper {
            lambda,
            mu,
            c1,
            c2,
            bits: c,
            t1,
            t2,
            tol,
            seed,
        },
        objective_trace: trace,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &BilinearModel) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<BilinearModel> {
    decode_model(&fs::read(path)?)
}

/// `"BSDC" | version u32 | bits u32 | n u32 | words u64 * n * ceil(bits/64)`.
pub fn encode_codes(codes: &PackedCodes) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + codes.words().len() * 8);
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&CODES_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field(codes.bits(), "bits")?.to_le_bytes());
    out.extend_from_slice(&u32_field(codes.len(), "code count")?.to_le_bytes());
    for w in codes.words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_codes(bytes: &[u8]) -> Result<PackedCodes> {
    let mut r = Reader::new(bytes);
    if &r.array::<4>("codes magic")? != CODES_MAGIC {
        return Err(Error::format(0, "bad codes magic"));
    }
    let version = r.u32_le("codes version")?;
    if version != CODES_VERSION {
        return Err(Error::Version {
            what: "codes file",
            found: version,
            expected: CODES_VERSION,
        });
    }
    let bits = r.u32_le("bits")? as usize;
    let n = r.u32_le("code count")? as usize;
    if bits == 0 {
        return Err(Error::format(8, "zero code length"));
    }
    let count = checked_size(&[n, bits.div_ceil(64)], 12)?;
    if (bytes.len() - r.pos) / 8 != count || !(bytes.len() - r.pos).is_multiple_of(8) {
        return Err(Error::format(
            bytes.len(),
            format!("codes payload has {} bytes, expected {}", bytes.len() - r.pos, count * 8),
        ));
    }
    let words = (0..count).map(|_| r.u64_le("code word")).collect::<Result<Vec<_>>>()?;
    r.finish("codes")?;
    PackedCodes::from_words(bits, n, words).map_err(|e| Error::format(16, e.to_string()))
}

pub fn save_codes(path: &Path, codes: &PackedCodes) -> Result<()> {
    write_atomic(path, &encode_codes(codes)?)
}

pub fn load_codes(path: &Path) -> Result<PackedCodes> {
    decode_codes(&fs::read(path)?)
}

/// Flat `key = value` run manifest with sorted keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.insert(key.into(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(lineno, format!("manifest line {} has no '='", lineno + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
