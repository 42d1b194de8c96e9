//! Hamming ranking over packed codes and the retrieval metrics computed from
//! a ranking: precision@k, recall@k, average precision, MAP and PR curves.
//!
//! Ties in Hamming distance are broken by ascending database index. A database
//! item is relevant to a query when they share at least one label. Queries
//! without any relevant item are left out of the averages.

use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::types::{LabelMatrix, PackedCodes};

/// Number of differing bits between two packed codes of `bits` bits.
pub fn hamming_distance(a: &[u64], b: &[u64], bits: usize) -> Result<u32> {
    let words = bits.div_ceil(64);
    if a.len() != words || b.len() != words {
        return Err(Error::shape(
            "hamming distance",
            format!("{words} words"),
            format!("{} and {} words", a.len(), b.len()),
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingResult {
    /// Database indices by ascending distance, ties by index.
    pub order: Vec<usize>,
    /// Distance of each ranked item.
    pub distances: Vec<u32>,
    pub relevance: Vec<bool>,
}

impl RankingResult {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn relevant_count(&self) -> usize {
        self.relevance.iter().filter(|&&r| r).count()
    }
}

pub fn rank_database(
    query: &[u64],
    database: &PackedCodes,
    database_labels: &LabelMatrix,
    query_labels: &[u8],
) -> Result<RankingResult> {
    if database.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if database_labels.len() != database.len() {
        return Err(Error::shape("database labels", database.len(), database_labels.len()));
    }
    if query_labels.len() != database_labels.label_dim() {
        return Err(Error::shape("query labels", database_labels.label_dim(), query_labels.len()));
    }
    let bits = database.bits();
    let distances = (0..database.len())
        .map(|i| hamming_distance(query, database.code(i), bits))
        .collect::<Result<Vec<u32>>>()?;

    // counting sort keeps index order within each distance bucket
    let mut buckets = vec![0usize; bits + 2];
    for &d in &distances {
        buckets[d as usize + 1] += 1;
    }
    for i in 1..buckets.len() {
        buckets[i] += buckets[i - 1];
    }
    let mut order = vec![0usize; distances.len()];
    for (i, &d) in distances.iter().enumerate() {
        let slot = &mut buckets[d as usize];
        order[*slot] = i;
        *slot += 1;
    }
    let ranked_distances = order.iter().map(|&i| distances[i]).collect();
    let relevance = order
        .iter()
        .map(|&i| database_labels.shares_label(i, query_labels))
        .collect();
    Ok(RankingResult {
        order,
        distances: ranked_distances,
        relevance,
    })
}

fn check_cutoff(result: &RankingResult, k: usize) -> Result<()> {
    if k == 0 || k > result.len() {
        return Err(Error::InvalidValue(format!(
            "cut-off k={k} outside 1..={}",
            result.len()
        )));
    }
    Ok(())
}

fn hits(result: &RankingResult, k: usize) -> usize {
    result.relevance[..k].iter().filter(|&&r| r).count()
}

/// `P_k = (1/k) sum_{i<=k} rel(v_i)`.
pub fn precision_at_k(result: &RankingResult, k: usize) -> Result<f64> {
    check_cutoff(result, k)?;
    Ok(hits(result, k) as f64 / k as f64)
}

/// `R_k = sum_{i<=k} rel(v_i) / sum_i rel(v_i)`.
pub fn recall_at_k(result: &RankingResult, k: usize) -> Result<f64> {
    check_cutoff(result, k)?;
    let total = result.relevant_count();
    if total == 0 {
        return Err(Error::NoRelevantItems);
    }
    Ok(hits(result, k) as f64 / total as f64)
}

/// Mean of `P_i` over the ranks `i` of relevant items, over the full ranking.
pub fn average_precision(result: &RankingResult) -> Result<f64> {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in result.relevance.iter().enumerate() {
        if rel {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    if found == 0 {
        return Err(Error::NoRelevantItems);
    }
    Ok(sum / found as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
}

/// One `(recall, precision)` point per cut-off `k = 1..=n`.
pub fn pr_curve(result: &RankingResult) -> Result<Vec<PrPoint>> {
    let total = result.relevant_count();
    if total == 0 {
        return Err(Error::NoRelevantItems);
    }
    let mut found = 0usize;
    Ok(result
        .relevance
        .iter()
        .enumerate()
        .map(|(i, &rel)| {
            found += usize::from(rel);
            let k = i + 1;
            PrPoint {
                k,
                recall: found as f64 / total as f64,
                precision: found as f64 / k as f64,
            }
        })
        .collect())
}

fn check_sets(
    query_codes: &PackedCodes,
    query_labels: &LabelMatrix,
    database_codes: &PackedCodes,
    database_labels: &LabelMatrix,
) -> Result<()> {
    if query_codes.is_empty() {
        return Err(Error::NoValidQueries);
    }
    if database_codes.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if query_codes.bits() != database_codes.bits() {
        return Err(Error::shape("code lengths", database_codes.bits(), query_codes.bits()));
    }
    if query_labels.len() != query_codes.len() {
        return Err(Error::shape("query labels", query_codes.len(), query_labels.len()));
    }
    if database_labels.len() != database_codes.len() {
        return Err(Error::shape("database labels", database_codes.len(), database_labels.len()));
    }
    if database_labels.label_dim() != query_labels.label_dim() {
        return Err(Error::shape("label dimension", database_labels.label_dim(), query_labels.label_dim()));
    }
    Ok(())
}

fn rank_all(
    query_codes: &PackedCodes,
    query_labels: &LabelMatrix,
    database_codes: &PackedCodes,
    database_labels: &LabelMatrix,
) -> Result<Vec<RankingResult>> {
    check_sets(query_codes, query_labels, database_codes, database_labels)?;
    (0..query_codes.len())
        .into_par_iter()
        .map(|q| {
            rank_database(
                query_codes.code(q),
                database_codes,
                database_labels,
                query_labels.column(q),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSummary {
    pub map: f64,
    pub evaluated: usize,
    /// Queries without any relevant database item.
    pub excluded: Vec<usize>,
}

fn summarize(aps: &[Option<f64>]) -> Result<MapSummary> {
    let excluded: Vec<usize> = aps
        .iter()
        .enumerate()
        .filter_map(|(i, ap)| ap.is_none().then_some(i))
        .collect();
    let valid: Vec<f64> = aps.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoValidQueries);
    }
    if !excluded.is_empty() {
        warn!("{} queries have no relevant database item and were excluded", excluded.len());
    }
    Ok(MapSummary {
        map: valid.iter().sum::<f64>() / valid.len() as f64,
        evaluated: valid.len(),
        excluded,
    })
}

fn optional_ap(result: &RankingResult) -> Result<Option<f64>> {
    match average_precision(result) {
        Ok(ap) => Ok(Some(ap)),
        Err(Error::NoRelevantItems) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn mean_average_precision(
    query_codes: &PackedCodes,
    query_labels: &LabelMatrix,
    database_codes: &PackedCodes,
    database_labels: &LabelMatrix,
) -> Result<MapSummary> {
    let rankings = rank_all(query_codes, query_labels, database_codes, database_labels)?;
    let aps = rankings.iter().map(optional_ap).collect::<Result<Vec<_>>>()?;
    summarize(&aps)
}

/// Query-averaged metrics for one code set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub map: MapSummary,
    pub precision: Vec<(usize, f64)>,
    pub recall: Vec<(usize, f64)>,
    /// Mean PR curve over evaluated queries, one point per cut-off.
    pub pr_curve: Vec<PrPoint>,
    pub database_size: usize,
}

/// Default cut-offs for the precision/recall tables.
pub const DEFAULT_K_GRID: [usize; 7] = [1, 5, 10, 50, 100, 500, 1000];

/// Caps each cut-off at `n`, dropping duplicates.
pub fn cap_k_grid(grid: &[usize], n: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = grid.iter().filter(|&&k| k > 0).map(|&k| k.min(n)).collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

pub fn evaluate(
    query_codes: &PackedCodes,
    query_labels: &LabelMatrix,
    database_codes: &PackedCodes,
    database_labels: &LabelMatrix,
    k_grid: &[usize],
) -> Result<Evaluation> {
    let rankings = rank_all(query_codes, query_labels, database_codes, database_labels)?;
    let n = database_codes.len();
    let ks = cap_k_grid(k_grid, n);
    let aps = rankings.iter().map(optional_ap).collect::<Result<Vec<_>>>()?;
    let map = summarize(&aps)?;

    let mut precision = vec![0.0; ks.len()];
    let mut recall = vec![0.0; ks.len()];
    let mut curve_r = vec![0.0; n];
    let mut curve_p = vec![0.0; n];
    for (ranking, ap) in rankings.iter().zip(&aps) {
        if ap.is_none() {
            continue;
        }
        for (slot, &k) in ks.iter().enumerate() {
            precision[slot] += precision_at_k(ranking, k)?;
            recall[slot] += recall_at_k(ranking, k)?;
        }
        for p in pr_curve(ranking)? {
            curve_r[p.k - 1] += p.recall;
            curve_p[p.k - 1] += p.precision;
        }
    }
    let count = map.evaluated as f64;
    Ok(Evaluation {
        precision: ks.iter().zip(&precision).map(|(&k, &v)| (k, v / count)).collect(),
        recall: ks.iter().zip(&recall).map(|(&k, &v)| (k, v / count)).collect(),
        pr_curve: (0..n)
            .map(|i| PrPoint {
                k: i + 1,
                recall: curve_r[i] / count,
                precision: curve_p[i] / count,
            })
            .collect(),
        map,
        database_size: n,
    })
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub code_length: usize,
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

/// Flattens an evaluation into metric rows; MAP is reported at `k = n`.
pub fn metric_rows(method: &str, code_length: usize, eval: &Evaluation) -> Vec<MetricRow> {
    let row = |metric: &str, k: usize, value: f64| MetricRow {
        method: method.to_string(),
        code_length,
        metric: metric.to_string(),
        k,
        value,
    };
    let mut rows = vec![row("map", eval.database_size, eval.map.map)];
    rows.extend(eval.precision.iter().map(|&(k, v)| row("precision", k, v)));
    rows.extend(eval.recall.iter().map(|&(k, v)| row("recall", k, v)));
    rows
}

/// CSV with header `method,code_length,metric,k,value`.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "code_length", "metric", "k", "value"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.code_length.to_string(),
            r.metric.clone(),
            r.k.to_string(),
            format!("{:.12}", r.value),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// CSV with header `k,recall,precision`.
pub fn write_pr_curve_csv(path: &Path, points: &[PrPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "recall", "precision"])?;
    for p in points {
        w.write_record([
            p.k.to_string(),
            format!("{:.12}", p.recall),
            format!("{:.12}", p.precision),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}
