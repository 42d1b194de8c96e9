use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bsdh_core::baselines::{bpbc_encode, bpbc_shape, lsh_encode, BpbcModel, LshModel};
use bsdh_core::data::{self, Manifest, PixelScale};
use bsdh_core::{BilinearModel, CodeMatrix, FeatureTensor};
use clap::ValueEnum;

pub const MANIFEST: &str = "manifest.txt";
pub const MODEL: &str = "model.bsdh";
pub const BASELINE: &str = "baseline.txt";
pub const CODES: &str = "codes.bsdc";
pub const TRACE: &str = "trace.csv";
pub const TRAIN_INDICES: &str = "train_indices.txt";
pub const QUERY_INDICES: &str = "query_indices.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Bsdh,
    Bpbc,
    Lsh,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bsdh => "bsdh",
            Method::Bpbc => "bpbc",
            Method::Lsh => "lsh",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Method::from_str(s, true).map_err(|e| anyhow::anyhow!("unknown method {s:?}: {e}"))
    }
}

pub fn parse_scale(s: &str) -> Result<PixelScale> {
    match s {
        "unit" => Ok(PixelScale::Unit),
        "raw" => Ok(PixelScale::Raw),
        other => bail!("unknown pixel scale {other:?}"),
    }
}

/// A trained hash function of any supported method.
#[derive(Debug, Clone)]
pub enum Hasher {
    Bsdh(BilinearModel),
    Bpbc { model: BpbcModel, seed: u64 },
    Lsh(LshModel),
}

impl Hasher {
    pub fn method(&self) -> Method {
        match self {
            Hasher::Bsdh(_) => Method::Bsdh,
            Hasher::Bpbc { .. } => Method::Bpbc,
            Hasher::Lsh(_) => Method::Lsh,
        }
    }

    pub fn bits(&self) -> usize {
        match self {
            Hasher::Bsdh(m) => m.hyper.bits,
            Hasher::Bpbc { model, .. } => model.bits(),
            Hasher::Lsh(m) => m.bits(),
        }
    }

    pub fn baseline(method: Method, bits: usize, d1: usize, d2: usize, seed: u64) -> Result<Self> {
        Ok(match method {
            Method::Bpbc => {
                let (k1, k2) = bpbc_shape(bits, d1, d2)?;
                Hasher::Bpbc {
                    model: BpbcModel::random(d1, d2, k1, k2, seed)?,
                    seed,
                }
            }
            Method::Lsh => Hasher::Lsh(LshModel::random(bits, d1, d2, seed)?),
            Method::Bsdh => bail!("bsdh is trained, not sampled"),
        })
    }

    pub fn encode(&self, x: &FeatureTensor) -> Result<CodeMatrix> {
        Ok(match self {
            Hasher::Bsdh(m) => bsdh_core::encode(x, m)?,
            Hasher::Bpbc { model, .. } => bpbc_encode(x, model)?,
            Hasher::Lsh(m) => lsh_encode(x, m)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        match self {
            Hasher::Bsdh(m) => data::save_model(&dir.join(MODEL), m)?,
            Hasher::Bpbc { model, seed } => {
                let mut f = Manifest::new();
                f.set("method", "bpbc")
                    .set("seed", seed)
                    .set("d1", model.r1.nrows())
                    .set("d2", model.r2.nrows())
                    .set("k1", model.r1.ncols())
                    .set("k2", model.r2.ncols());
                f.save(&dir.join(BASELINE))?;
            }
            Hasher::Lsh(m) => {
                let mut f = Manifest::new();
                f.set("method", "lsh").set("seed", m.seed).set("bits", m.bits());
                f.set("inputs", m.projection.ncols());
                f.save(&dir.join(BASELINE))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path, manifest: &Manifest) -> Result<Self> {
        let method = Method::parse(field(manifest, "method")?)?;
        if method == Method::Bsdh {
            let path = dir.join(MODEL);
            return Ok(Hasher::Bsdh(
                data::load_model(&path).with_context(|| format!("loading {}", path.display()))?,
            ));
        }
        let path = dir.join(BASELINE);
        let f = Manifest::load(&path).with_context(|| format!("loading {}", path.display()))?;
        let seed: u64 = parse_field(&f, "seed")?;
        match method {
            Method::Bpbc => {
                let (d1, d2): (usize, usize) = (parse_field(&f, "d1")?, parse_field(&f, "d2")?);
                let (k1, k2): (usize, usize) = (parse_field(&f, "k1")?, parse_field(&f, "k2")?);
                Ok(Hasher::Bpbc {
                    model: BpbcModel::random(d1, d2, k1, k2, seed)?,
                    seed,
                })
            }
            _ => {
                let bits: usize = parse_field(&f, "bits")?;
                let d1: usize = parse_field(manifest, "data.d1")?;
                let d2: usize = parse_field(manifest, "data.d2")?;
                let model = LshModel::random(bits, d1, d2, seed)?;
                if model.projection.ncols() != parse_field::<usize>(&f, "inputs")? {
                    bail!("{} does not match the run's input size", path.display());
                }
                Ok(Hasher::Lsh(model))
            }
        }
    }
}

pub fn field<'a>(m: &'a Manifest, key: &str) -> Result<&'a str> {
    m.get(key).with_context(|| format!("manifest has no {key:?} entry"))
}

pub fn parse_field<T: std::str::FromStr>(m: &Manifest, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = field(m, key)?;
    raw.parse::<T>()
        .map_err(|e| anyhow::anyhow!("manifest entry {key} = {raw:?}: {e}"))
}

/// A finished training run on disk.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub hasher: Hasher,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let manifest = Manifest::load(&path).with_context(|| format!("reading run manifest {}", path.display()))?;
        let hasher = Hasher::load(dir, &manifest)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            hasher,
        })
    }

    pub fn training_codes(&self) -> Result<bsdh_core::PackedCodes> {
        let path = self.dir.join(CODES);
        data::load_codes(&path).with_context(|| format!("loading {}", path.display()))
    }

    pub fn scale(&self) -> Result<PixelScale> {
        parse_scale(field(&self.manifest, "data.pixel_scale")?)
    }
}
