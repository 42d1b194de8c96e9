mod dataset;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use bsdh_core::data::{self, write_atomic, Manifest, SynthConfig, CODES_VERSION, MODEL_VERSION};
use bsdh_core::retrieval::{metric_rows, write_metrics_csv, write_pr_curve_csv, DEFAULT_K_GRID};
use bsdh_core::{evaluate, train, BilinearConfig, CodeMatrix, TrainConfig};
use clap::{Args, Parser, Subcommand};
use log::info;

use dataset::Dataset;
use run::{Hasher, Method, Run};

#[derive(Parser)]
#[command(name = "bsdh", version, about = "Bilinear supervised discrete hashing for matrix-valued data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a hash function and store the run in a directory.
    Train(TrainArgs),
    /// Encode samples with a stored run.
    Encode(EncodeArgs),
    /// Hamming-ranking retrieval metrics for a stored run.
    Eval(EvalArgs),
    /// Resumable hyper-parameter grid over BSDH settings.
    Sweep(SweepArgs),
    /// Write a synthetic multi-label dataset in B2F format.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// IDX directory, .b2f file, or `mnist` for the bundled subset.
    #[arg(long, default_value = "mnist")]
    data: String,
    /// Pixel scaling for IDX images: `unit` maps to [0,1], `raw` keeps 0..255.
    #[arg(long, default_value = "unit", value_parser = ["unit", "raw"])]
    pixel_scale: String,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 400)]
    n_query: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "bsdh")]
    method: Method,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 32)]
    bits: usize,
    /// Rows kept by the left projection; defaults to half the sample height.
    #[arg(long)]
    c1: Option<usize>,
    /// Columns kept by the right projection; defaults to half the sample width.
    #[arg(long)]
    c2: Option<usize>,
    #[arg(long, default_value_t = 1e-5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    #[arg(long, default_value_t = 5)]
    t1: usize,
    #[arg(long, default_value_t = 10)]
    t2: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subtract the training mean of the projected features before encoding.
    #[arg(long)]
    center: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    run: PathBuf,
    /// Dataset to encode; defaults to the one the run was trained on.
    #[arg(long)]
    data: Option<String>,
    /// File with one sample index per line; all samples when omitted.
    #[arg(long)]
    indices: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: Option<String>,
    /// Query sample indices; defaults to the run's held-out queries.
    #[arg(long)]
    query_indices: Option<PathBuf>,
    /// Database sample indices; defaults to the run's training set.
    #[arg(long)]
    database_indices: Option<PathBuf>,
    /// Encode every sample with the hash function. By default, training
    /// samples on either side keep the codes learned for them.
    #[arg(long)]
    encode_all: bool,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.00001")]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    mus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "14")]
    c1s: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "14")]
    c2s: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    bits_list: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    t1: usize,
    #[arg(long, default_value_t = 10)]
    t2: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent splits per cell; MAP is averaged over them.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long)]
    center: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    d1: usize,
    #[arg(long, default_value_t = 8)]
    d2: usize,
    #[arg(long, default_value_t = 4)]
    labels: usize,
    #[arg(long, default_value_t = 1)]
    labels_per_sample: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    if let Some(n) = std::env::var_os("BSDH_WORKERS") {
        let n: usize = n
            .to_string_lossy()
            .parse()
            .context("BSDH_WORKERS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn derive_seed(master: u64, repeat: usize) -> u64 {
    master ^ (repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn data_manifest(m: &mut Manifest, ds: &Dataset, args: &DataArgs) {
    let (d1, d2) = ds.features.dims();
    let source = std::fs::canonicalize(&ds.source).unwrap_or_else(|_| ds.source.clone());
    m.set("data.source", source.display())
        .set("data.n", ds.len())
        .set("data.d1", d1)
        .set("data.d2", d2)
        .set("data.labels", ds.labels.label_dim())
        .set("data.pixel_scale", &args.pixel_scale)
        .set("split.seed", args.split_seed)
        .set("split.n_train", args.n_train)
        .set("split.n_query", args.n_query);
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = TrainConfig {
        lambda: a.lambda,
        mu: a.mu,
        bits: a.bits,
        t2: a.t2,
        tol: a.tol,
        seed: a.seed,
        center_features: a.center,
        ..TrainConfig::default()
    };
    config.validate()?;
    ensure!(a.t1 > 0, "t1 must be at least 1");
    ensure!(a.c1 != Some(0) && a.c2 != Some(0), "c1 and c2 must be at least 1");

    let scale = run::parse_scale(&a.data.pixel_scale)?;
    let ds = dataset::load(&a.data.data, scale)?;
    let (d1, d2) = ds.features.dims();
    let (c1, c2) = (a.c1.unwrap_or(d1.div_ceil(2)), a.c2.unwrap_or(d2.div_ceil(2)));
    ensure!(c1 <= d1 && c2 <= d2, "projection size {c1}x{c2} exceeds sample size {d1}x{d2}");
    let (query, train_idx) = dataset::split(ds.len(), a.data.n_query, a.data.n_train, a.data.split_seed)?;
    let (train_x, train_y) = ds.subset(&train_idx)?;

    let mut manifest = Manifest::new();
    manifest.set("method", a.method.name()).set("bits", a.bits).set("seed", a.seed);
    data_manifest(&mut manifest, &ds, &a.data);
    manifest.set("format.codes_version", CODES_VERSION);

    let (hasher, codes, trace) = match a.method {
        Method::Bsdh => {
            let projection = BilinearConfig {
                t1: a.t1,
                ..BilinearConfig::new(c1, c2)
            };
            let out = train(&train_x, &train_y, &projection, &config)?;
            info!(
                "trained in {} iterations (converged: {}), final objective {:.6e}",
                out.iterations,
                out.converged,
                out.model.objective_trace.last().copied().unwrap_or(f64::NAN)
            );
            manifest
                .set("format.model_version", MODEL_VERSION)
                .set("lambda", a.lambda)
                .set("mu", a.mu)
                .set("c1", c1)
                .set("c2", c2)
                .set("t1", a.t1)
                .set("t2", a.t2)
                .set("tol", a.tol)
                .set("center", a.center)
                .set("iterations", out.iterations)
                .set("converged", out.converged)
                .set("bilinear_rounds", out.bilinear.rounds);
            let trace = out.model.objective_trace.clone();
            (Hasher::Bsdh(out.model), out.codes, trace)
        }
        method => {
            let hasher = Hasher::baseline(method, a.bits, d1, d2, a.seed)?;
            let codes = hasher.encode(&train_x)?;
            (hasher, codes, Vec::new())
        }
    };

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    hasher.save(&a.out)?;
    data::save_codes(&a.out.join(run::CODES), &codes.pack())?;
    let mut csv_text = String::from("iteration,objective\n");
    for (i, v) in trace.iter().enumerate() {
        csv_text.push_str(&format!("{},{v:e}\n", i + 1));
    }
    write_atomic(&a.out.join(run::TRACE), csv_text.as_bytes())?;
    dataset::write_indices(&a.out.join(run::TRAIN_INDICES), &train_idx)?;
    dataset::write_indices(&a.out.join(run::QUERY_INDICES), &query)?;
    // the manifest goes last so a complete manifest implies complete artifacts
    manifest.save(&a.out.join(run::MANIFEST))?;
    println!("wrote {} run to {}", a.method.name(), a.out.display());
    Ok(())
}

fn run_dataset(run: &Run, data: Option<&str>) -> Result<Dataset> {
    let data_arg = match data {
        Some(d) => d.to_string(),
        None => run::field(&run.manifest, "data.source")?.to_string(),
    };
    let ds = dataset::load(&data_arg, run.scale()?)?;
    let expected: (usize, usize) = (
        run::parse_field(&run.manifest, "data.d1")?,
        run::parse_field(&run.manifest, "data.d2")?,
    );
    ensure!(
        ds.features.dims() == expected,
        "dataset samples are {:?} but the run expects {expected:?}",
        ds.features.dims()
    );
    Ok(ds)
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let run = Run::open(&a.run)?;
    let ds = run_dataset(&run, a.data.as_deref())?;
    let indices = match &a.indices {
        Some(p) => dataset::read_indices(p)?,
        None => (0..ds.len()).collect(),
    };
    ensure!(!indices.is_empty(), "nothing to encode");
    let (x, _) = ds.subset(&indices)?;
    let codes = run.hasher.encode(&x)?.pack();
    data::save_codes(&a.out, &codes)?;
    println!("encoded {} samples into {} bits", codes.len(), codes.bits());
    Ok(())
}

/// Codes for `indices`, reusing the run's learned codes where the index
/// belongs to the training set.
fn sample_codes(run: &Run, ds: &Dataset, indices: &[usize], reuse: bool) -> Result<CodeMatrix> {
    let (x, _) = ds.subset(indices)?;
    if !reuse {
        return run.hasher.encode(&x);
    }
    let train_idx = dataset::read_indices(&run.dir.join(run::TRAIN_INDICES))?;
    let stored = run.training_codes()?.unpack();
    ensure!(
        stored.len() == train_idx.len(),
        "{} holds {} codes for {} training indices",
        run::CODES,
        stored.len(),
        train_idx.len()
    );
    let position: std::collections::HashMap<usize, usize> = train_idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let missing: Vec<usize> = (0..indices.len()).filter(|&j| !position.contains_key(&indices[j])).collect();
    let fresh = if missing.is_empty() {
        None
    } else {
        info!("encoding {} samples outside the training set", missing.len());
        Some(run.hasher.encode(&x.select(&missing)?)?)
    };
    let mut next_fresh = 0;
    let columns: Vec<Vec<i8>> = indices
        .iter()
        .map(|i| match position.get(i) {
            Some(&p) => stored.column(p).to_vec(),
            None => {
                let col = fresh.as_ref().map(|f| f.column(next_fresh).to_vec()).unwrap_or_default();
                next_fresh += 1;
                col
            }
        })
        .collect();
    Ok(CodeMatrix::from_columns(stored.bits(), &columns)?)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let run = Run::open(&a.run)?;
    let ds = run_dataset(&run, a.data.as_deref())?;
    let query_path = a.query_indices.clone().unwrap_or_else(|| run.dir.join(run::QUERY_INDICES));
    let db_path = a.database_indices.clone().unwrap_or_else(|| run.dir.join(run::TRAIN_INDICES));
    let query_idx = dataset::read_indices(&query_path)?;
    let db_idx = dataset::read_indices(&db_path)?;
    ensure!(!query_idx.is_empty(), "query set {} is empty", query_path.display());
    ensure!(!db_idx.is_empty(), "database {} is empty", db_path.display());

    let (_, query_y) = ds.subset(&query_idx)?;
    let (_, db_y) = ds.subset(&db_idx)?;
    let query_codes = sample_codes(&run, &ds, &query_idx, !a.encode_all)?.pack();
    let db_codes = sample_codes(&run, &ds, &db_idx, !a.encode_all)?.pack();
    let k_grid = a.k_grid.clone().unwrap_or_else(|| DEFAULT_K_GRID.to_vec());
    let result = evaluate(&query_codes, &query_y, &db_codes, &db_y, &k_grid)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let method = run.hasher.method().name();
    let bits = run.hasher.bits();
    write_metrics_csv(&a.out.join("metrics.csv"), &metric_rows(method, bits, &result))?;
    write_pr_curve_csv(&a.out.join("pr_curve.csv"), &result.pr_curve)?;
    let mut m = Manifest::new();
    m.set("run", run.dir.display())
        .set("method", method)
        .set("bits", bits)
        .set("queries", query_idx.len())
        .set("queries.evaluated", result.map.evaluated)
        .set("queries.excluded", result.map.excluded.len())
        .set("database", db_idx.len())
        .set("encode_all", a.encode_all)
        .set("map", format!("{:.6}", result.map.map));
    m.save(&a.out.join(run::MANIFEST))?;
    if !result.map.excluded.is_empty() {
        log::warn!("{} queries have no relevant database items and were excluded", result.map.excluded.len());
    }
    println!("{method} {bits} bits: MAP {:.4} over {} queries", result.map.map, result.map.evaluated);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    ensure!(a.repeats > 0, "repeats must be at least 1");
    ensure!(a.t1 > 0 && a.t2 > 0, "t1 and t2 must be at least 1");
    let cells = sweep::grid(&a.lambdas, &a.mus, &a.c1s, &a.c2s, &a.bits_list);
    ensure!(!cells.is_empty(), "the grid is empty");
    for c in &cells {
        TrainConfig {
            lambda: c.lambda,
            mu: c.mu,
            bits: c.bits,
            ..TrainConfig::default()
        }
        .validate()
        .with_context(|| format!("grid cell {c:?}"))?;
    }

    let scale = run::parse_scale(&a.data.pixel_scale)?;
    let ds = dataset::load(&a.data.data, scale)?;
    let mut folds = Vec::with_capacity(a.repeats);
    for r in 0..a.repeats {
        let (query, train_idx) = dataset::split(ds.len(), a.data.n_query, a.data.n_train, derive_seed(a.data.split_seed, r))?;
        if query.is_empty() {
            bail!("sweeps need at least one query sample");
        }
        let (train_x, train_y) = ds.subset(&train_idx)?;
        let (query_x, query_y) = ds.subset(&query)?;
        folds.push(sweep::Fold {
            train_x,
            train_y,
            query_x,
            query_y,
            seed: derive_seed(a.seed, r),
        });
    }

    let mut manifest = Manifest::new();
    data_manifest(&mut manifest, &ds, &a.data);
    manifest
        .set("sweep.repeats", a.repeats)
        .set("sweep.seed", a.seed)
        .set("t1", a.t1)
        .set("t2", a.t2)
        .set("tol", a.tol)
        .set("center", a.center);
    let settings = sweep::SweepSettings {
        t1: a.t1,
        t2: a.t2,
        tol: a.tol,
        center: a.center,
    };
    let (computed, skipped) = sweep::run(&a.out, &cells, &folds, &settings, &manifest)?;
    println!(
        "sweep: {computed} cells computed, {skipped} already present, results in {}",
        a.out.join(sweep::RESULTS).display()
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let (x, y) = data::synth_multilabel(&SynthConfig {
        n: a.n,
        d1: a.d1,
        d2: a.d2,
        labels: a.labels,
        labels_per_sample: a.labels_per_sample,
        noise: a.noise,
        seed: a.seed,
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    data::save_b2f(&a.out, &x, &y)?;
    println!("wrote {} samples of {}x{} to {}", a.n, a.d1, a.d2, a.out.display());
    Ok(())
}
