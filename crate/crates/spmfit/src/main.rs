//! Command-line front end: each pipeline stage is a subcommand that writes
//! its artifacts — and a manifest naming every file with its content hash —
//! under a run directory.
//!
//! Outputs are plain CSV (header row, shortest round-trip floats) and JSON
//! (pretty, stable key order) for offline plotting; the sensitivity command
//! additionally emits a gnuplot script next to its data. Re-running a
//! command with the same config and seed reproduces every primary output
//! byte for byte; wall time is recorded only in the manifest, so manifest
//! output hashes are the reproducibility check.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{info, warn};

use spmfit::artifacts::{
    read_basis, read_curves, read_json, read_task_set, write_basis, write_csv_report,
    write_curves, write_inference, write_task, RunDir, RunManifest, TaskRecord, FORMAT_VERSION,
};
use spmfit::config::Config;
use spmfit::data::{export_csv, extract_discharge, ingest_csv, CsvSchema};
use spmfit::fit::{CollocationSet, Fitter};
use spmfit::inverse::{
    correlation_diagnostics, export_rows, infer_battery, infer_cycle, normalized_error,
    sensitivity_scan, synthetic_truth_sets, InverseContext, InverseOptions, RunStatus,
    SensitivityScan,
};
use spmfit::meta::{held_out_errors, run_meta_training, sample_tasks, MetaStatus};
use spmfit::metrics::{label_radii, mean_sd, relative_l2};
use spmfit::model::{apply_scaling, ElectrodeKind, ScalingFactors};
use spmfit::ocp::OcpCurve;
use spmfit::solver::{benchmark_solver, solve_reference, SolverGrid};
use spmfit::voltage::{synthesize_reference_curve, DischargeCurve};
use spmfit::{Error, Result};

/// Environment variable naming the base run directory used when `--out` is
/// omitted; each command then writes under `<dir>/<subcommand>`.
const RUN_DIR_ENV: &str = "SPMFIT_RUN_DIR";

#[derive(Parser)]
#[command(
    name = "spmfit",
    version,
    about = "Single-particle battery surrogate: task generation, meta-training, \
             benchmarking, and inverse inference of degradation factors",
    after_help = "Every command writes a manifest.json naming each output file and its \
                  SHA-256 hash; re-runs with the same config and seed reproduce the \
                  outputs byte for byte. Existing files in the run directory are \
                  overwritten."
)]
struct Cli {
    /// Worker threads for label solving, genome evaluation, and restarts
    /// (default: all logical cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample diffusion tasks and solve their reference labels.
    GenTasks {
        /// TOML config; defaults are the built-in reference parameters.
        #[arg(long, value_name = "TOML")]
        config: Option<PathBuf>,
        /// Master seed for task sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run directory (default: $SPMFIT_RUN_DIR/gen-tasks or runs/gen-tasks).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Evolve the shared feature basis over a generated task set.
    TrainMeta {
        /// Run directory produced by gen-tasks (reads tasks/ and labels/).
        #[arg(long, value_name = "DIR")]
        tasks: PathBuf,
        #[arg(long, value_name = "TOML")]
        config: Option<PathBuf>,
        /// Master seed for the evolution strategy.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Accuracy/time table: the fitted basis against finite-volume meshes.
    Benchmark {
        /// Basis file written by train-meta (basis/basis.json).
        #[arg(long, value_name = "JSON")]
        basis: PathBuf,
        /// Task file written by gen-tasks (tasks/<id>.json).
        #[arg(long, value_name = "JSON")]
        task: PathBuf,
        /// Radial mesh sizes to time.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        meshes: Vec<usize>,
        /// Timed repetitions per row (minimum 3).
        #[arg(long, default_value_t = 25)]
        repeats: usize,
        /// Integer sub-steps per 60 s interval for the mesh rows.
        #[arg(long, default_value_t = 1)]
        substeps: usize,
        #[arg(long, value_name = "TOML")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Infer per-cycle scaling factors from measured discharge curves.
    Infer {
        #[arg(long, value_name = "JSON")]
        basis: PathBuf,
        /// Extracted curves record (reports/<id>-curves.json from ingest) or
        /// a normalized cycling CSV, ingested with the default schema.
        #[arg(long, value_name = "FILE")]
        curves: PathBuf,
        /// Override the configured number of restarts per cycle.
        #[arg(long)]
        restarts: Option<usize>,
        /// Master seed; restart seeds derive from it per cycle.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Battery id for CSV input (default: the file stem).
        #[arg(long)]
        battery: Option<String>,
        #[arg(long, value_name = "TOML")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// One-at-a-time sensitivity of the terminal voltage to each factor.
    Sensitivity {
        #[arg(long, value_name = "JSON")]
        basis: PathBuf,
        /// Base state as eta_dp,eta_dn,eta_gp,eta_cmaxp.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_name = "F,F,F,F")]
        state: Vec<f64>,
        /// Relative perturbations (eta -> eta*(1+delta); each > -1).
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            default_value = "-0.1,0.1"
        )]
        deltas: Vec<f64>,
        /// Time samples over the discharge horizon.
        #[arg(long, default_value_t = 61)]
        samples: usize,
        #[arg(long, value_name = "TOML")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Inverse-inference validation on synthetic curves with known factors.
    Validate {
        #[arg(long, value_name = "JSON")]
        basis: PathBuf,
        /// Which canned degradation states to invert.
        #[arg(long, value_delimiter = ',', default_value = "early,middle,late")]
        synthetic_set: Vec<String>,
        /// Restarts per curve (default 100; correlations need at least 20).
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "TOML")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Normalize a cycling CSV and extract constant-current discharge curves.
    Ingest {
        /// Cycling log to ingest.
        #[arg(long = "in", value_name = "CSV")]
        input: PathBuf,
        /// Column-alias schema JSON (default: the normalized column names).
        #[arg(long, value_name = "JSON")]
        schema: Option<PathBuf>,
        /// Battery id used in output file names (default: the file stem).
        #[arg(long)]
        battery: Option<String>,
        #[arg(long, value_name = "TOML")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: failed to size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenTasks { config, seed, out } => cmd_gen_tasks(config, seed, out),
        Command::TrainMeta { tasks, config, seed, out } => {
            cmd_train_meta(tasks, config, seed, out)
        }
        Command::Benchmark { basis, task, meshes, repeats, substeps, config, out } => {
            cmd_benchmark(basis, task, meshes, repeats, substeps, config, out)
        }
        Command::Infer { basis, curves, restarts, seed, battery, config, out } => {
            cmd_infer(basis, curves, restarts, seed, battery, config, out)
        }
        Command::Sensitivity { basis, state, deltas, samples, config, out } => {
            cmd_sensitivity(basis, state, deltas, samples, config, out)
        }
        Command::Validate { basis, synthetic_set, restarts, seed, config, out } => {
            cmd_validate(basis, synthetic_set, restarts, seed, config, out)
        }
        Command::Ingest { input, schema, battery, config, out } => {
            cmd_ingest(input, schema, battery, config, out)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => {
            let cfg = Config::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn resolve_out(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let base = std::env::var(RUN_DIR_ENV).unwrap_or_else(|_| "runs".to_string());
        Path::new(&base).join(command)
    })
}

fn load_ocp(cfg: &Config) -> Result<(OcpCurve, OcpCurve)> {
    let positive = match &cfg.ocp.positive_path {
        Some(p) => OcpCurve::load(Path::new(p))?,
        None => OcpCurve::builtin_positive(),
    };
    let negative = match &cfg.ocp.negative_path {
        Some(p) => OcpCurve::load(Path::new(p))?,
        None => OcpCurve::builtin_negative(),
    };
    Ok((positive, negative))
}

/// Build the inverse-problem context from a basis file and the config's
/// reference cell, fixed factors, collocation grid, and potential curves.
fn build_context(cfg: &Config, basis_path: &Path) -> Result<(InverseContext, String)> {
    let (outcome, basis_id) = read_basis(basis_path)?;
    let colloc = CollocationSet::tensor(cfg.meta.colloc_nt, cfg.meta.colloc_nr)?;
    let fitter = Fitter::new(outcome.basis, outcome.penalties, colloc)?;
    let (positive, negative) = load_ocp(cfg)?;
    let ctx =
        InverseContext::new(cfg.reference_cell(), cfg.fixed_factors(), fitter, positive, negative)?;
    Ok((ctx, basis_id))
}

fn inverse_options(cfg: &Config, restarts: Option<usize>) -> InverseOptions {
    InverseOptions {
        restarts: restarts.unwrap_or(cfg.inverse.restarts),
        generations: cfg.inverse.generations,
        population: cfg.inverse.population,
        sigma0: cfg.inverse.sigma0,
    }
}

fn status_str(status: RunStatus) -> &'static str {
    match status {
        RunStatus::Converged => "converged",
        RunStatus::Stalled => "stalled",
        RunStatus::Penalized => "penalized",
    }
}

/// Shortest round-trip decimal form, so CSV cells re-parse to identical bits.
fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

// ---------------------------------------------------------------------------
// gen-tasks
// ---------------------------------------------------------------------------

fn cmd_gen_tasks(config: Option<PathBuf>, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(config.as_deref())?;
    let run = RunDir::create(&resolve_out(out, "gen-tasks"))?;
    let mut manifest = RunManifest::new("gen-tasks", seed, &cfg)?;
    if let Some(p) = &config {
        manifest.add_input(p)?;
    }

    let tasks = sample_tasks(&cfg, seed)?;
    for task in tasks.train.iter().chain(tasks.test.iter()) {
        let (task_path, label_path) = write_task(&run, task)?;
        manifest.add_output(&run, &task_path)?;
        manifest.add_output(&run, &label_path)?;
    }
    info!(
        "gen-tasks: {} train + {} test tasks under {}",
        tasks.train.len(),
        tasks.test.len(),
        run.root().display()
    );

    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&run)
}

// ---------------------------------------------------------------------------
// train-meta
// ---------------------------------------------------------------------------

fn cmd_train_meta(
    tasks: PathBuf,
    config: Option<PathBuf>,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(config.as_deref())?;
    let run = RunDir::create(&resolve_out(out, "train-meta"))?;
    let mut manifest = RunManifest::new("train-meta", seed, &cfg)?;
    if let Some(p) = &config {
        manifest.add_input(p)?;
    }

    let tasks_run = RunDir::open(&tasks)?;
    let upstream = tasks_run.manifest_path();
    if upstream.exists() {
        manifest.add_input(&upstream)?;
    } else {
        warn!("task directory {} has no manifest.json; provenance not recorded", tasks.display());
    }
    let task_set = read_task_set(&tasks_run)?;
    info!(
        "train-meta: {} train / {} test tasks; population {}, up to {} generations ({})",
        task_set.train.len(),
        task_set.test.len(),
        cfg.meta.population,
        cfg.meta.generations,
        cfg.meta.es
    );

    let outcome = run_meta_training(&cfg, &task_set, seed)?;
    if outcome.status == MetaStatus::Stalled {
        warn!(
            "meta-training stalled: no improvement for {} generations (best fitness {:.6e})",
            cfg.meta.patience, outcome.best_fitness
        );
    }

    let (basis_path, basis_id) = write_basis(&run, &outcome)?;
    manifest.add_output(&run, &basis_path)?;

    let fitness_path = run.reports().join("fitness.csv");
    let rows: Vec<Vec<String>> = outcome
        .history
        .iter()
        .map(|g| vec![s(g.generation), s(g.best), s(g.mean), s(g.median)])
        .collect();
    write_csv_report(&fitness_path, &["generation", "best", "mean", "median"], &rows)?;
    manifest.add_output(&run, &fitness_path)?;

    // Held-out generalization, split by electrode kind: the number that
    // decides whether the basis is worth deploying. A basis that cannot
    // fine-tune some held-out task is reported, not fatal — the training
    // artifacts above are already on disk.
    let colloc = CollocationSet::tensor(cfg.meta.colloc_nt, cfg.meta.colloc_nr)?;
    match held_out_errors(&outcome.basis, outcome.penalties, &colloc, &task_set.test) {
        Ok((pos, neg)) => {
            let n_pos =
                task_set.test.iter().filter(|t| t.task.kind == ElectrodeKind::Positive).count();
            let n_neg = task_set.test.len() - n_pos;
            let heldout_path = run.reports().join("held-out.csv");
            write_csv_report(
                &heldout_path,
                &["kind", "n_tasks", "mean_rel_l2"],
                &[
                    vec!["positive".into(), s(n_pos), s(pos)],
                    vec!["negative".into(), s(n_neg), s(neg)],
                ],
            )?;
            manifest.add_output(&run, &heldout_path)?;
            info!(
                "held-out mean relative L2: positive {pos:.3e} ({n_pos}), negative {neg:.3e} ({n_neg})"
            );
        }
        Err(e) => warn!("held-out evaluation failed: {e}"),
    }

    info!(
        "train-meta: best fitness {:.6e} after {} generations; basis {}",
        outcome.best_fitness,
        outcome.history.len(),
        basis_id
    );

    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&run)
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_benchmark(
    basis: PathBuf,
    task: PathBuf,
    meshes: Vec<usize>,
    repeats: usize,
    substeps: usize,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(config.as_deref())?;
    let run = RunDir::create(&resolve_out(out, "benchmark"))?;
    let mut manifest = RunManifest::new("benchmark", 0, &cfg)?;
    manifest.add_input(&basis)?;
    manifest.add_input(&task)?;
    if let Some(p) = &config {
        manifest.add_input(p)?;
    }

    let record: TaskRecord = read_json(&task)?;
    if record.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: format version {} (expected {FORMAT_VERSION})",
            task.display(),
            record.format_version
        )));
    }
    let (alpha, beta) = (record.task.alpha, record.task.beta);
    info!("benchmark: task {} (alpha {:.4e}, beta {:.4e})", record.id, alpha, beta);

    // Shared truth for every row: the high-resolution solve sampled onto the
    // evaluation grid. Errors of the basis row and the mesh rows are then
    // directly comparable.
    let reference = solve_reference(alpha, beta, SolverGrid::reference())?;
    let truth = reference.sample_grid(&label_radii())?;

    // Basis row: fine-tune + evaluate, repeated like the solver timings.
    // Feature-matrix assembly is cached in the fitter just as operator
    // factorization is cached in the solver, so both rows time the
    // per-parameter work an inverse loop actually pays.
    let (outcome, basis_id) = read_basis(&basis)?;
    let colloc = CollocationSet::tensor(cfg.meta.colloc_nt, cfg.meta.colloc_nr)?;
    let fitter = Fitter::new(outcome.basis, outcome.penalties, colloc)?;
    let repeats = repeats.max(3);
    let mut secs = Vec::with_capacity(repeats);
    let mut predicted = Vec::new();
    for _ in 0..repeats {
        let t = Instant::now();
        let sol = fitter.fine_tune(alpha, beta)?;
        predicted = fitter.predict_labels(&sol);
        secs.push(t.elapsed().as_secs_f64());
    }
    let basis_err = relative_l2(&predicted, &truth);
    let (basis_mean_s, basis_sd_s) = mean_sd(&secs);

    let mesh_rows = benchmark_solver(alpha, beta, &meshes, substeps, repeats)?;

    let mut rows = vec![vec![
        format!("basis-{}", &basis_id[..12.min(basis_id.len())]),
        s(basis_err),
        s(basis_mean_s),
        s(basis_sd_s),
    ]];
    for r in &mesh_rows {
        rows.push(vec![format!("mesh-{}", r.mesh), s(r.rel_l2), s(r.mean_seconds), s(r.sd_seconds)]);
    }
    let table_path = run.reports().join("benchmark.csv");
    write_csv_report(&table_path, &["case", "rel_l2", "mean_seconds", "sd_seconds"], &rows)?;
    manifest.add_output(&run, &table_path)?;

    info!("basis: rel L2 {basis_err:.3e}, {:.2e} ± {:.1e} s", basis_mean_s, basis_sd_s);
    for r in &mesh_rows {
        info!(
            "mesh-{}: rel L2 {:.3e}, {:.2e} ± {:.1e} s",
            r.mesh, r.rel_l2, r.mean_seconds, r.sd_seconds
        );
    }
    if let Some(m32) = mesh_rows.iter().find(|r| r.mesh == 32) {
        info!(
            "basis vs mesh-32: {:.2}x wall time, error {:.3e} vs {:.3e}",
            basis_mean_s / m32.mean_seconds,
            basis_err,
            m32.rel_l2
        );
    }

    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&run)
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

/// Load discharge curves from either an extracted-curves record or a
/// normalized cycling CSV (ingested on the fly with the default schema).
fn load_curves(
    path: &Path,
    battery: Option<&str>,
    cfg: &Config,
) -> Result<(String, Vec<DischargeCurve>)> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "json" => {
            let record = read_curves(path)?;
            if let Some(id) = battery {
                if id != record.battery_id {
                    warn!(
                        "--battery {} ignored: curves record names battery {}",
                        id, record.battery_id
                    );
                }
            }
            Ok((record.battery_id, record.curves))
        }
        "csv" => {
            let battery_id = battery.map(str::to_string).unwrap_or_else(|| file_stem(path));
            let report = ingest_csv(path, &CsvSchema::default())?;
            info!("ingested {} rows ({} rejected)", report.rows.len(), report.rejects.len());
            let outcome = extract_discharge(&report.rows, &battery_id, &cfg.protocol)?;
            Ok((battery_id, outcome.curves))
        }
        other => Err(Error::Format(format!(
            "curves file must be .json (extracted record) or .csv (normalized log), got .{other}"
        ))),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|v| v.to_string_lossy().into_owned()).unwrap_or_else(|| "battery".into())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    basis: PathBuf,
    curves: PathBuf,
    restarts: Option<usize>,
    seed: u64,
    battery: Option<String>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(config.as_deref())?;
    let run = RunDir::create(&resolve_out(out, "infer"))?;
    let mut manifest = RunManifest::new("infer", seed, &cfg)?;
    manifest.add_input(&basis)?;
    manifest.add_input(&curves)?;
    if let Some(p) = &config {
        manifest.add_input(p)?;
    }

    let (ctx, basis_id) = build_context(&cfg, &basis)?;
    let (battery_id, curve_list) = load_curves(&curves, battery.as_deref(), &cfg)?;
    let opts = inverse_options(&cfg, restarts);
    info!(
        "infer: battery {battery_id}, {} curves, {} restarts x {} generations each",
        curve_list.len(),
        opts.restarts,
        opts.generations
    );

    let inference = infer_battery(&ctx, &battery_id, &curve_list, &opts, seed)?;
    for outcome in &inference.cycles {
        match &outcome.inference {
            Some(inf) => {
                let (conv, stall, pen) = inf.status_counts();
                let med = |name: &str| {
                    inf.summary.iter().find(|f| f.name == name).map(|f| f.median).unwrap_or(f64::NAN)
                };
                info!(
                    "cycle {}: eta_dp {:.3}, eta_dn {:.3}, mse {:.3e} ({} converged / {} stalled / {} penalized)",
                    inf.cycle,
                    med("eta_dp"),
                    med("eta_dn"),
                    inf.mse_median,
                    conv,
                    stall,
                    pen
                );
            }
            None => warn!(
                "cycle {}: inference failed: {}",
                outcome.cycle,
                outcome.error.as_deref().unwrap_or("unknown")
            ),
        }
    }

    let inference_path = write_inference(&run, &basis_id, &cfg.protocol, &inference)?;
    manifest.add_output(&run, &inference_path)?;

    let summary_path = run.reports().join(format!("{battery_id}-summary.csv"));
    let rows: Vec<Vec<String>> = export_rows(&inference)
        .iter()
        .map(|r| {
            vec![
                r.battery.clone(),
                s(r.cycle),
                r.factor.clone(),
                s(r.min),
                s(r.median),
                s(r.max),
                s(r.mse_median),
                s(r.capacity_ah),
            ]
        })
        .collect();
    write_csv_report(
        &summary_path,
        &["battery", "cycle", "factor", "min", "median", "max", "mse_median", "capacity_ah"],
        &rows,
    )?;
    manifest.add_output(&run, &summary_path)?;

    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&run)
}

// ---------------------------------------------------------------------------
// sensitivity
// ---------------------------------------------------------------------------

fn cmd_sensitivity(
    basis: PathBuf,
    state: Vec<f64>,
    deltas: Vec<f64>,
    samples: usize,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(config.as_deref())?;
    if state.len() != 4 {
        return Err(Error::Config(format!(
            "--state needs four values (eta_dp,eta_dn,eta_gp,eta_cmaxp), got {}",
            state.len()
        )));
    }
    for v in &state {
        if !v.is_finite() || *v <= 0.0 {
            return Err(Error::Config(format!("--state entries must be finite and positive, got {v}")));
        }
    }
    let run = RunDir::create(&resolve_out(out, "sensitivity"))?;
    let mut manifest = RunManifest::new("sensitivity", 0, &cfg)?;
    manifest.add_input(&basis)?;
    if let Some(p) = &config {
        manifest.add_input(p)?;
    }

    // The scan is a model study, so the base state may sit outside the
    // inference ranges; `unbounded` is the sanctioned constructor for that.
    let base = ScalingFactors::unbounded(state[0], state[1], state[2], state[3]);
    let (ctx, _) = build_context(&cfg, &basis)?;
    let scan = sensitivity_scan(&ctx, &base, &deltas, samples, Some(cfg.protocol.cutoff_voltage))?;

    let summary_path = run.reports().join("sensitivity.csv");
    let mut rows = Vec::new();
    for (i, report) in scan.reports.iter().enumerate() {
        for c in &report.curves {
            rows.push(vec![
                report.factor.clone(),
                s(c.delta),
                s(c.factors.as_array()[i]),
                s(c.max_abs_dv),
            ]);
        }
    }
    write_csv_report(&summary_path, &["factor", "delta", "value", "max_abs_dv"], &rows)?;
    manifest.add_output(&run, &summary_path)?;

    let curves_path = run.reports().join("sensitivity-curves.csv");
    let mut crows = Vec::new();
    for &(t, v) in &scan.base.samples {
        crows.push(vec!["base".to_string(), s(0.0), s(t), s(v)]);
    }
    for report in &scan.reports {
        for c in &report.curves {
            for &(t, v) in &c.curve.samples {
                crows.push(vec![report.factor.clone(), s(c.delta), s(t), s(v)]);
            }
        }
    }
    write_csv_report(&curves_path, &["factor", "delta", "time_s", "voltage_v"], &crows)?;
    manifest.add_output(&run, &curves_path)?;

    let script_path = run.reports().join("sensitivity.gp");
    std::fs::write(&script_path, gnuplot_script(&scan))?;
    manifest.add_output(&run, &script_path)?;

    // Rank factors by their largest voltage deviation across the deltas.
    let mut ranking: Vec<(String, f64)> = scan
        .reports
        .iter()
        .map(|r| {
            let worst = r.curves.iter().map(|c| c.max_abs_dv).fold(0.0, f64::max);
            (r.factor.clone(), worst)
        })
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    let ranked: Vec<String> =
        ranking.iter().map(|(f, dv)| format!("{f} {:.1} mV", dv * 1e3)).collect();
    info!("sensitivity ranking (max |dV| over deltas): {}", ranked.join(" > "));

    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&run)
}

/// A gnuplot script over `sensitivity-curves.csv`: one pane, the base curve
/// plus each perturbed voltage trace. Emitted as text so the binary carries
/// no graphics dependency.
fn gnuplot_script(scan: &SensitivityScan) -> String {
    let mut series = vec![
        "'sensitivity-curves.csv' every ::1 \
         using 3:(strcol(1) eq 'base' ? $4 : NaN) with lines lw 2 lc rgb 'black' title 'base'"
            .to_string(),
    ];
    for report in &scan.reports {
        for c in &report.curves {
            if c.delta == 0.0 {
                continue;
            }
            series.push(format!(
                "'' every ::1 using 3:(strcol(1) eq '{f}' && abs($2 - ({d})) < 1e-12 ? $4 : NaN) \
                 with lines title '{f} {pct:+.0}%'",
                f = report.factor,
                d = c.delta,
                pct = c.delta * 100.0
            ));
        }
    }
    format!(
        "# Terminal-voltage sensitivity traces. Render with: gnuplot sensitivity.gp\n\
         set datafile separator ','\n\
         set term pngcairo size 960,640 noenhanced\n\
         set output 'sensitivity.png'\n\
         set xlabel 'time (s)'\n\
         set ylabel 'terminal voltage (V)'\n\
         set key outside right\n\
         plot {}\n",
        series.join(", \\\n     ")
    )
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(
    basis: PathBuf,
    synthetic_set: Vec<String>,
    restarts: Option<usize>,
    seed: u64,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(config.as_deref())?;
    let run = RunDir::create(&resolve_out(out, "validate"))?;
    let mut manifest = RunManifest::new("validate", seed, &cfg)?;
    manifest.add_input(&basis)?;
    if let Some(p) = &config {
        manifest.add_input(p)?;
    }

    let available = synthetic_truth_sets();
    let mut selected = Vec::new();
    for name in &synthetic_set {
        let found = available
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| {
                Error::Config(format!("unknown synthetic curve '{name}' (expected early, middle, late)"))
            })?;
        selected.push(found);
    }

    let (ctx, _basis_id) = build_context(&cfg, &basis)?;
    let (positive, negative) = load_ocp(&cfg)?;
    let opts = inverse_options(&cfg, Some(restarts.unwrap_or(100)));
    info!(
        "validate: {} synthetic curves, {} restarts x {} generations each",
        selected.len(),
        opts.restarts,
        opts.generations
    );

    let mut run_rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut corr_rows = Vec::new();
    let mut observed = Vec::new();
    for &k in &selected {
        let (name, truth) = &available[k];
        // Observed data comes from the finite-volume route, so the inversion
        // is tested against a forward map it did not train on.
        let cell = apply_scaling(&cfg.reference_cell(), truth, &cfg.fixed_factors())?;
        let synth = synthesize_reference_curve(
            &cell,
            &positive,
            &negative,
            "synthetic",
            (k + 1) as u32,
            SolverGrid::labels(),
            Some(cfg.protocol.cutoff_voltage),
        )?;
        if synth.implausible {
            warn!("synthetic curve '{name}' clamps {:.0}% of stoichiometry samples", synth.clamp_fraction * 100.0);
        }

        let inference = infer_cycle(&ctx, &synth.curve, &opts, seed)?;
        observed.push(synth.curve);

        for (i, r) in inference.runs.iter().enumerate() {
            let f = r.factors.as_array();
            run_rows.push(vec![
                name.to_string(),
                s(i),
                s(r.seed),
                s(f[0]),
                s(f[1]),
                s(f[2]),
                s(f[3]),
                s(r.mse),
                status_str(r.status).to_string(),
                s(u8::from(inference.filtered.contains(&i))),
                s(normalized_error(&r.factors, truth, ctx.space())),
            ]);
        }

        let truth_arr = truth.as_array();
        for (j, f) in inference.summary.iter().enumerate() {
            let bracketed = f.min <= truth_arr[j] && truth_arr[j] <= f.max;
            summary_rows.push(vec![
                name.to_string(),
                f.name.clone(),
                s(truth_arr[j]),
                s(f.min),
                s(f.median),
                s(f.max),
                s(u8::from(bracketed)),
            ]);
            info!(
                "{name}: {} truth {:.3} -> filtered [{:.3}, {:.3}], median {:.3}{}",
                f.name,
                truth_arr[j],
                f.min,
                f.max,
                f.median,
                if bracketed { "" } else { "  (NOT bracketed)" }
            );
        }

        if opts.restarts >= 20 {
            let corr = correlation_diagnostics(&inference.runs, truth, ctx.space())?;
            for c in &corr {
                corr_rows.push(vec![
                    name.to_string(),
                    s(c.percent),
                    s(c.n_used),
                    c.rho.map(s).unwrap_or_default(),
                ]);
            }
            let rho_at = |p: u32| {
                corr.iter()
                    .find(|c| c.percent == p)
                    .and_then(|c| c.rho)
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "undefined".into())
            };
            info!("{name}: Spearman rho(mse, error) {} at 100%, {} at 50%", rho_at(100), rho_at(50));
        } else {
            warn!("correlations skipped: {} restarts < 20", opts.restarts);
        }
    }

    let runs_path = run.reports().join("validate-runs.csv");
    write_csv_report(
        &runs_path,
        &[
            "curve", "run", "seed", "eta_dp", "eta_dn", "eta_gp", "eta_cmaxp", "mse", "status",
            "filtered", "normalized_error",
        ],
        &run_rows,
    )?;
    manifest.add_output(&run, &runs_path)?;

    let summary_path = run.reports().join("validate-summary.csv");
    write_csv_report(
        &summary_path,
        &["curve", "factor", "truth", "min", "median", "max", "bracketed"],
        &summary_rows,
    )?;
    manifest.add_output(&run, &summary_path)?;

    if !corr_rows.is_empty() {
        let corr_path = run.reports().join("validate-correlations.csv");
        write_csv_report(&corr_path, &["curve", "percent", "n_used", "rho"], &corr_rows)?;
        manifest.add_output(&run, &corr_path)?;
    }

    let curves_path = write_curves(&run, "synthetic", &observed, &[])?;
    manifest.add_output(&run, &curves_path)?;

    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&run)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

fn cmd_ingest(
    input: PathBuf,
    schema: Option<PathBuf>,
    battery: Option<String>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let t0 = Instant::now();
    let cfg = load_config(config.as_deref())?;
    let run = RunDir::create(&resolve_out(out, "ingest"))?;
    let mut manifest = RunManifest::new("ingest", 0, &cfg)?;
    manifest.add_input(&input)?;
    if let Some(p) = &config {
        manifest.add_input(p)?;
    }

    let schema_cfg = match &schema {
        Some(p) => {
            manifest.add_input(p)?;
            read_json::<CsvSchema>(p)?
        }
        None => CsvSchema::default(),
    };
    let battery_id = battery.unwrap_or_else(|| file_stem(&input));

    let report = ingest_csv(&input, &schema_cfg)?;
    info!(
        "ingest: {} rows accepted, {} rejected from {}",
        report.rows.len(),
        report.rejects.len(),
        input.display()
    );

    let rejects_path = run.reports().join(format!("{battery_id}-rejects.csv"));
    let reject_rows: Vec<Vec<String>> =
        report.rejects.iter().map(|r| vec![s(r.line), r.reason.clone()]).collect();
    write_csv_report(&rejects_path, &["line", "reason"], &reject_rows)?;
    manifest.add_output(&run, &rejects_path)?;

    let normalized_path = run.reports().join(format!("{battery_id}-normalized.csv"));
    export_csv(&report.rows, BufWriter::new(File::create(&normalized_path)?))?;
    manifest.add_output(&run, &normalized_path)?;

    let outcome = extract_discharge(&report.rows, &battery_id, &cfg.protocol)?;
    info!("extracted {} discharge curves", outcome.curves.len());
    for curve in &outcome.curves {
        info!(
            "cycle {}: {} samples, {:.0} s, capacity {:.3} Ah",
            curve.cycle,
            curve.samples.len(),
            curve.end_time(),
            curve.capacity_ah()
        );
    }
    let curves_path = write_curves(&run, &battery_id, &outcome.curves, &outcome.warnings)?;
    manifest.add_output(&run, &curves_path)?;

    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&run)
}
