use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use anyhow::{Context, Result};
use bsdh_core::data::{write_atomic, Manifest};
use bsdh_core::retrieval::mean_average_precision;
use bsdh_core::{train, BilinearConfig, FeatureTensor, LabelMatrix, TrainConfig};
use log::{info, warn};
use rayon::prelude::*;

pub const RESULTS: &str = "results.csv";
const HEADER: [&str; 7] = ["lambda", "mu", "c1", "c2", "bits", "map", "status"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lambda: f64,
    pub mu: f64,
    pub c1: usize,
    pub c2: usize,
    pub bits: usize,
}

impl Cell {
    fn key(&self) -> (u64, u64, usize, usize, usize) {
        (self.lambda.to_bits(), self.mu.to_bits(), self.c1, self.c2, self.bits)
    }
}

#[derive(Debug, Clone)]
struct Row {
    cell: Cell,
    map: Option<f64>,
    status: String,
}

pub struct Fold {
    pub train_x: FeatureTensor,
    pub train_y: LabelMatrix,
    pub query_x: FeatureTensor,
    pub query_y: LabelMatrix,
    pub seed: u64,
}

pub struct SweepSettings {
    pub t1: usize,
    pub t2: usize,
    pub tol: f64,
    pub center: bool,
}

pub fn grid(lambdas: &[f64], mus: &[f64], c1s: &[usize], c2s: &[usize], bits: &[usize]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &lambda in lambdas {
        for &mu in mus {
            for &c1 in c1s {
                for &c2 in c2s {
                    for &b in bits {
                        cells.push(Cell {
                            lambda,
                            mu,
                            c1,
                            c2,
                            bits: b,
                        });
                    }
                }
            }
        }
    }
    cells
}

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or("").trim();
        let parse = || -> Result<Row> {
            Ok(Row {
                cell: Cell {
                    lambda: get(0).parse()?,
                    mu: get(1).parse()?,
                    c1: get(2).parse()?,
                    c2: get(3).parse()?,
                    bits: get(4).parse()?,
                },
                map: if get(5).is_empty() { None } else { Some(get(5).parse()?) },
                status: get(6).to_string(),
            })
        };
        rows.push(parse().with_context(|| format!("{}: malformed row {}", path.display(), line + 2))?);
    }
    Ok(rows)
}

fn write_rows(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.cell.lambda.to_string(),
            r.cell.mu.to_string(),
            r.cell.c1.to_string(),
            r.cell.c2.to_string(),
            r.cell.bits.to_string(),
            r.map.map(|m| format!("{m:.6}")).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn run_cell(cell: &Cell, folds: &[Fold], settings: &SweepSettings) -> Result<f64> {
    let mut total = 0.0;
    for fold in folds {
        let projection = BilinearConfig {
            t1: settings.t1,
            ..BilinearConfig::new(cell.c1, cell.c2)
        };
        let config = TrainConfig {
            lambda: cell.lambda,
            mu: cell.mu,
            bits: cell.bits,
            t2: settings.t2,
            tol: settings.tol,
            seed: fold.seed,
            center_features: settings.center,
            ..TrainConfig::default()
        };
        let out = train(&fold.train_x, &fold.train_y, &projection, &config)?;
        let queries = bsdh_core::encode(&fold.query_x, &out.model)?.pack();
        total += mean_average_precision(&queries, &fold.query_y, &out.codes.pack(), &fold.train_y)?.map;
    }
    Ok(total / folds.len() as f64)
}

/// Returns `(computed, skipped)` cell counts.
pub fn run(out: &Path, cells: &[Cell], folds: &[Fold], settings: &SweepSettings, manifest: &Manifest) -> Result<(usize, usize)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(RESULTS);
    let existing = read_rows(&path)?;
    let done: HashMap<_, usize> = existing.iter().enumerate().map(|(i, r)| (r.cell.key(), i)).collect();
    let pending: Vec<(usize, Cell)> = cells
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, c)| !done.contains_key(&c.key()))
        .collect();
    let skipped = cells.len() - pending.len();
    if skipped > 0 {
        info!("{skipped} of {} cells already recorded in {}", cells.len(), path.display());
    }
    manifest.save(&out.join(crate::run::MANIFEST))?;

    // grid-ordered slots for this sweep, followed by rows from other grids
    let mut slots: Vec<Option<Row>> = cells.iter().map(|c| done.get(&c.key()).map(|&i| existing[i].clone())).collect();
    let in_grid: std::collections::HashSet<_> = cells.iter().map(Cell::key).collect();
    let foreign: Vec<Row> = existing.iter().filter(|r| !in_grid.contains(&r.cell.key())).cloned().collect();
    let state = Mutex::new(&mut slots);

    pending.par_iter().try_for_each(|(slot, cell)| -> Result<()> {
        let row = match run_cell(cell, folds, settings) {
            Ok(map) => {
                info!("cell {cell:?}: MAP {map:.4}");
                Row { cell: *cell, map: Some(map), status: "ok".into() }
            }
            Err(e) => {
                warn!("cell {cell:?} failed: {e:#}");
                Row { cell: *cell, map: None, status: format!("error: {e:#}") }
            }
        };
        let mut guard = state.lock().expect("sweep state poisoned");
        guard[*slot] = Some(row);
        let rows: Vec<Row> = guard.iter().flatten().cloned().chain(foreign.iter().cloned()).collect();
        write_rows(&path, &rows)
    })?;
    Ok((pending.len(), skipped))
}
