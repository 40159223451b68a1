//! Run-directory layout, typed artifact files, and the run manifest.
//!
//! Every command writes into a run directory with a fixed shape —
//! `tasks/`, `labels/`, `basis/`, `inferences/`, `reports/` — plus a
//! `manifest.json` at the root naming the command, a full config snapshot,
//! the seeds, the tool version, and the SHA-256 of every input and output
//! file. Primary outputs carry no timestamps or timings (those live only in
//! the manifest), so a re-run from the same config and seeds reproduces
//! them byte for byte; comparing manifests' output hashes is the
//! reproducibility check.
//!
//! JSON artifacts are serde structs (stable key order), floats print in
//! shortest round-trip form in both JSON and CSV, and every typed file
//! embeds a `format_version`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ProtocolConfig;
use crate::error::{Error, Result};
use crate::inverse::BatteryInference;
use crate::meta::{MetaOutcome, MetaTask, TaskSet};
use crate::metrics::{label_radii, label_times, LABEL_NR, LABEL_NT};
use crate::model::ElectrodeTask;
use crate::voltage::DischargeCurve;

/// Version stamp embedded in every typed artifact file.
pub const FORMAT_VERSION: u32 = 1;

/// Subdirectories of a run directory, in creation order.
pub const RUN_SUBDIRS: [&str; 5] = ["tasks", "labels", "basis", "inferences", "reports"];

// ---------------------------------------------------------------------------
// Hashing and generic IO
// ---------------------------------------------------------------------------

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Write a value as pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a JSON artifact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn check_version(found: u32, path: &Path) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: format version {found}, this build reads {FORMAT_VERSION}",
            path.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

/// A run directory with the standard artifact layout.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create the directory (and all subdirectories) if missing.
    pub fn create(root: &Path) -> Result<Self> {
        for sub in RUN_SUBDIRS {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    /// Open an existing run directory.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Config(format!("run directory {} does not exist", root.display())));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn tasks(&self) -> PathBuf {
        self.root.join("tasks")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("labels")
    }

    pub fn basis(&self) -> PathBuf {
        self.root.join("basis")
    }

    pub fn inferences(&self) -> PathBuf {
        self.root.join("inferences")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// A named file and the SHA-256 of its contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory (outputs) or as given (inputs).
    pub path: String,
    pub sha256: String,
}

/// Everything needed to audit and reproduce one command invocation.
///
/// Wall time is recorded here and only here: primary outputs stay
/// byte-identical across re-runs, so output hash equality between two
/// manifests is the reproducibility criterion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    /// Subcommand name plus the arguments that shape its outputs.
    pub command: String,
    /// Crate version that produced the run.
    pub version: String,
    /// Master seed the command ran with.
    pub seed: u64,
    /// Full config snapshot, sufficient to reproduce the run.
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    /// Wall time of the command; excluded from reproducibility comparison.
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
        })
    }

    /// Record an input file by hash, under the path it was given as.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Record an output file by hash, relative to the run directory.
    pub fn add_output(&mut self, run: &RunDir, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(run.root()).unwrap_or(path);
        self.outputs.push(FileEntry {
            path: rel.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Write the manifest at the run root (sorted outputs for stable diffs).
    pub fn write(&mut self, run: &RunDir) -> Result<()> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.inputs.sort_by(|a, b| a.path.cmp(&b.path));
        write_json(&run.manifest_path(), self)
    }

    /// Output hashes keyed by path, for reproducibility comparison.
    pub fn output_hashes(&self) -> Vec<(String, String)> {
        self.outputs.iter().map(|e| (e.path.clone(), e.sha256.clone())).collect()
    }
}

// ---------------------------------------------------------------------------
// Task and label files
// ---------------------------------------------------------------------------

/// One sampled diffusion task, persisted without its labels (those live in
/// `labels/<id>.csv` beside it).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub format_version: u32,
    pub id: String,
    pub task: ElectrodeTask,
}

/// Write one task to `tasks/<id>.json` and its labels to `labels/<id>.csv`.
/// Returns the two paths written.
pub fn write_task(run: &RunDir, task: &MetaTask) -> Result<(PathBuf, PathBuf)> {
    let task_path = run.tasks().join(format!("{}.json", task.id));
    write_json(
        &task_path,
        &TaskRecord { format_version: FORMAT_VERSION, id: task.id.clone(), task: task.task },
    )?;
    let label_path = run.labels().join(format!("{}.csv", task.id));
    write_labels(&label_path, &task.labels)?;
    Ok((task_path, label_path))
}

/// Write a label grid as CSV with columns `t_hat,r_hat,c_hat`, row-major by
/// time over the 61 × 64 evaluation grid. Floats print in shortest
/// round-trip form.
pub fn write_labels(path: &Path, labels: &[f64]) -> Result<()> {
    if labels.len() != LABEL_NT * LABEL_NR {
        return Err(Error::Format(format!(
            "label grid must have {} values ({LABEL_NT} × {LABEL_NR}), got {}",
            LABEL_NT * LABEL_NR,
            labels.len()
        )));
    }
    let times = label_times();
    let radii = label_radii();
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "t_hat,r_hat,c_hat")?;
    for (i, &t) in times.iter().enumerate() {
        for (j, &r) in radii.iter().enumerate() {
            writeln!(w, "{t},{r},{}", labels[i * LABEL_NR + j])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a label CSV back into the row-major grid vector.
pub fn read_labels(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut labels = Vec::with_capacity(LABEL_NT * LABEL_NR);
    for record in rdr.records() {
        let record = record?;
        let c: f64 = record
            .get(2)
            .ok_or_else(|| Error::Format(format!("{}: row with < 3 fields", path.display())))?
            .parse()
            .map_err(|e| Error::Format(format!("{}: bad c_hat: {e}", path.display())))?;
        labels.push(c);
    }
    if labels.len() != LABEL_NT * LABEL_NR {
        return Err(Error::Format(format!(
            "{}: expected {} label rows, got {}",
            path.display(),
            LABEL_NT * LABEL_NR,
            labels.len()
        )));
    }
    Ok(labels)
}

/// Read every task (with labels) from a run directory, sorted by id, and
/// partition into train/test by id prefix.
pub fn read_task_set(run: &RunDir) -> Result<TaskSet> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(run.tasks())? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            ids.push(path);
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Config(format!("no task files under {}", run.tasks().display())));
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for path in ids {
        let record: TaskRecord = read_json(&path)?;
        check_version(record.format_version, &path)?;
        let labels = read_labels(&run.labels().join(format!("{}.csv", record.id)))?;
        let task = MetaTask { id: record.id.clone(), task: record.task, labels };
        if record.id.starts_with("train-") {
            train.push(task);
        } else if record.id.starts_with("test-") {
            test.push(task);
        } else {
            return Err(Error::Format(format!(
                "task id '{}' has neither train- nor test- prefix",
                record.id
            )));
        }
    }
    Ok(TaskSet { train, test })
}

// ---------------------------------------------------------------------------
// Basis and inference files
// ---------------------------------------------------------------------------

/// Persisted meta-training outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisRecord {
    pub format_version: u32,
    pub outcome: MetaOutcome,
}

/// Write the trained basis to `basis/basis.json`; returns the path and the
/// file's hash, which doubles as the basis identity for inference runs.
pub fn write_basis(run: &RunDir, outcome: &MetaOutcome) -> Result<(PathBuf, String)> {
    let path = run.basis().join("basis.json");
    write_json(&path, &BasisRecord { format_version: FORMAT_VERSION, outcome: outcome.clone() })?;
    let id = sha256_file(&path)?;
    Ok((path, id))
}

/// Read a basis file and return the outcome plus its content hash.
pub fn read_basis(path: &Path) -> Result<(MetaOutcome, String)> {
    let record: BasisRecord = read_json(path)?;
    check_version(record.format_version, path)?;
    let id = sha256_file(path)?;
    Ok((record.outcome, id))
}

/// Persisted per-battery inference results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub format_version: u32,
    pub battery_id: String,
    /// Content hash of the basis file the inference ran against.
    pub basis_id: String,
    pub protocol: ProtocolConfig,
    pub inference: BatteryInference,
}

/// Write inference results to `inferences/<battery_id>.json`.
pub fn write_inference(
    run: &RunDir,
    basis_id: &str,
    protocol: &ProtocolConfig,
    inference: &BatteryInference,
) -> Result<PathBuf> {
    let path = run.inferences().join(format!("{}.json", inference.battery_id));
    write_json(
        &path,
        &InferenceRecord {
            format_version: FORMAT_VERSION,
            battery_id: inference.battery_id.clone(),
            basis_id: basis_id.to_string(),
            protocol: protocol.clone(),
            inference: inference.clone(),
        },
    )?;
    Ok(path)
}

pub fn read_inference(path: &Path) -> Result<InferenceRecord> {
    let record: InferenceRecord = read_json(path)?;
    check_version(record.format_version, path)?;
    Ok(record)
}

/// Persisted extracted discharge curves (the `ingest` output consumed by
/// `infer`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvesRecord {
    pub format_version: u32,
    pub battery_id: String,
    pub curves: Vec<DischargeCurve>,
    pub warnings: Vec<String>,
}

/// Write extracted curves to `reports/<battery_id>-curves.json`.
pub fn write_curves(
    run: &RunDir,
    battery_id: &str,
    curves: &[DischargeCurve],
    warnings: &[String],
) -> Result<PathBuf> {
    let path = run.reports().join(format!("{battery_id}-curves.json"));
    write_json(
        &path,
        &CurvesRecord {
            format_version: FORMAT_VERSION,
            battery_id: battery_id.to_string(),
            curves: curves.to_vec(),
            warnings: warnings.to_vec(),
        },
    )?;
    Ok(path)
}

pub fn read_curves(path: &Path) -> Result<CurvesRecord> {
    let record: CurvesRecord = read_json(path)?;
    check_version(record.format_version, path)?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// CSV report helpers
// ---------------------------------------------------------------------------

/// Write a CSV report from a header and row-producing closure output.
/// Floats must already be formatted by the caller (use `to_string` for
/// shortest round-trip form).
pub fn write_csv_report(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
