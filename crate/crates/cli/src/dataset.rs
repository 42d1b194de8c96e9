use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bsdh_core::data::{load_b2f, load_idx, random_split, PixelScale};
use bsdh_core::{FeatureTensor, LabelMatrix};

/// Bundled MNIST subset used when `--data mnist` does not name an existing path.
pub const DEFAULT_MNIST_DIR: &str = "data/mnist5k";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureTensor,
    pub labels: LabelMatrix,
    pub source: PathBuf,
}

fn resolve(data_arg: &str) -> PathBuf {
    let path = PathBuf::from(data_arg);
    if path.exists() || data_arg != "mnist" {
        return path;
    }
    std::env::var_os("BSDH_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR))
}

fn find_idx(dir: &Path, kind: &str, tag: &str) -> Result<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
            name.contains(kind) && name.contains(tag)
        })
        .collect();
    found.sort();
    // prefer the training file when both train and t10k files are present
    if let Some(pos) = found.iter().position(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("train"))) {
        return Ok(found.swap_remove(pos));
    }
    found
        .into_iter()
        .next()
        .with_context(|| format!("no *{kind}*{tag}* file in {}", dir.display()))
}

pub fn load(data_arg: &str, scale: PixelScale) -> Result<Dataset> {
    let source = resolve(data_arg);
    if !source.exists() {
        bail!("data path {} does not exist", source.display());
    }
    let (features, labels) = if source.is_dir() {
        let images = find_idx(&source, "images", "idx3")?;
        let labels = find_idx(&source, "labels", "idx1")?;
        load_idx(&images, &labels, scale).with_context(|| format!("loading IDX data from {}", source.display()))?
    } else if source.extension().is_some_and(|e| e == "b2f") {
        load_b2f(&source).with_context(|| format!("loading {}", source.display()))?
    } else {
        bail!("{} is neither an IDX directory nor a .b2f file", source.display());
    };
    Ok(Dataset {
        features,
        labels,
        source,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<(FeatureTensor, LabelMatrix)> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            bail!("index {bad} out of range for a dataset of {} samples", self.len());
        }
        Ok((self.features.select(indices)?, self.labels.select(indices)?))
    }
}

pub fn split(n: usize, n_query: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = random_split(n, n_query, n_train, seed)?;
    Ok((s.query, s.train))
}

pub fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
    let text: String = indices.iter().map(|i| format!("{i}\n")).collect();
    bsdh_core::data::write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading index file {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse::<usize>()
                .with_context(|| format!("{}:{}: not an index: {l:?}", path.display(), n + 1))
        })
        .collect()
}
