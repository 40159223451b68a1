//! Cycling-data ingestion and discharge-segment extraction.
//!
//! Measurements arrive as a normalized CSV schema — one row per logged
//! sample with cycle index, step label, time, voltage, and current — rather
//! than any instrument-native layout. A small schema-mapping config
//! (column-name aliases, a sign convention for current) adapts foreign
//! headers to the normalized form, which keeps the pipeline dataset-agnostic
//! while the protocol constants default to a 1.35 A constant-current
//! discharge with a 2.7 V cutoff.
//!
//! Sign conventions differ between layers on purpose: logged current is
//! negative during discharge (instrument convention), while the cell model
//! treats discharge current as positive. The extractor crosses that boundary:
//! it matches rows near −I_target and emits [`DischargeCurve`]s carrying the
//! positive model-side current.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ProtocolConfig;
use crate::error::{Error, Result};
use crate::voltage::DischargeCurve;

/// Fraction of malformed rows above which ingestion fails outright.
pub const MAX_REJECT_FRACTION: f64 = 0.10;

/// Discharge segments shorter than this are dropped with a warning.
pub const MIN_SEGMENT_SAMPLES: usize = 10;

/// Step classification of one logged row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    ChargeCc,
    ChargeCv,
    Discharge,
    Rest,
    Other,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::ChargeCc => "charge_cc",
            StepKind::ChargeCv => "charge_cv",
            StepKind::Discharge => "discharge",
            StepKind::Rest => "rest",
            StepKind::Other => "other",
        }
    }

    /// Map a step label to a kind; labels not in the alias table are
    /// `Other`, which is harmless because segment extraction keys on the
    /// measured current, not the label.
    fn from_label(label: &str, aliases: &[(String, StepKind)]) -> StepKind {
        let needle = label.trim().to_ascii_lowercase();
        aliases
            .iter()
            .find(|(alias, _)| alias.to_ascii_lowercase() == needle)
            .map(|&(_, kind)| kind)
            .unwrap_or(StepKind::Other)
    }
}

/// One logged sample in the normalized schema.
///
/// Within a cycle, time is non-negative and non-decreasing; voltage is
/// finite. Current is signed: charging positive, discharging negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclingRecordRow {
    pub cycle: u32,
    pub step_kind: StepKind,
    pub time_s: f64,
    pub voltage_v: f64,
    pub current_a: f64,
}

/// Column-name aliases and sign convention mapping a CSV layout onto the
/// normalized schema. Alias matching is case-insensitive; the first header
/// matching any alias of a logical column wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub cycle: Vec<String>,
    pub step: Vec<String>,
    pub time_s: Vec<String>,
    pub voltage_v: Vec<String>,
    pub current_a: Vec<String>,
    /// Multiplier applied to the current column on ingest. Use −1.0 for
    /// instruments that log discharge current as positive; the normalized
    /// schema wants it negative.
    pub current_sign: f64,
    /// Step-label → kind table (case-insensitive); unlisted labels map to
    /// [`StepKind::Other`].
    pub step_labels: Vec<(String, StepKind)>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        let own = |s: &[&str]| s.iter().map(|v| v.to_string()).collect::<Vec<_>>();
        Self {
            cycle: own(&["cycle"]),
            step: own(&["step"]),
            time_s: own(&["time_s"]),
            voltage_v: own(&["voltage_V"]),
            current_a: own(&["current_A"]),
            current_sign: 1.0,
            step_labels: [
                ("charge_cc", StepKind::ChargeCc),
                ("charge_cv", StepKind::ChargeCv),
                ("discharge", StepKind::Discharge),
                ("rest", StepKind::Rest),
                ("other", StepKind::Other),
            ]
            .into_iter()
            .map(|(label, kind)| (label.to_string(), kind))
            .collect(),
        }
    }
}

impl CsvSchema {
    fn validate(&self) -> Result<()> {
        if !self.current_sign.is_finite() || self.current_sign == 0.0 {
            return Err(Error::Schema(format!(
                "current_sign must be finite and nonzero, got {}",
                self.current_sign
            )));
        }
        for (name, aliases) in [
            ("cycle", &self.cycle),
            ("step", &self.step),
            ("time_s", &self.time_s),
            ("voltage_V", &self.voltage_v),
            ("current_A", &self.current_a),
        ] {
            if aliases.is_empty() {
                return Err(Error::Schema(format!("column '{name}' has no aliases")));
            }
        }
        Ok(())
    }
}

/// A row that failed validation, with its 1-based line number in the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

/// Result of one ingestion: accepted rows in file order plus the rejects
/// report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: Vec<CyclingRecordRow>,
    pub rejects: Vec<RejectedRow>,
}

fn resolve_column(headers: &csv::StringRecord, aliases: &[String]) -> Option<usize> {
    headers.iter().position(|h| {
        let h = h.trim().to_ascii_lowercase();
        aliases.iter().any(|a| a.to_ascii_lowercase() == h)
    })
}

/// Accept integer cycle indices written either as integers or as
/// integer-valued floats ("3" and "3.0" both mean cycle 3); instrument
/// exports disagree on this.
fn parse_cycle(field: &str) -> std::result::Result<u32, String> {
    let field = field.trim();
    if let Ok(v) = field.parse::<u32>() {
        return Ok(v);
    }
    match field.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&v) => Ok(v as u32),
        _ => Err(format!("cycle index '{field}' is not a non-negative integer")),
    }
}

fn parse_float(field: &str, column: &str) -> std::result::Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("{column} '{field}' is not a number"))
}

/// Ingest a normalized cycling CSV from any reader.
///
/// The header row is required; each logical column must be mappable through
/// the schema aliases or the whole ingestion fails with a schema error.
/// Row-level violations (unparseable numbers, non-finite voltage, negative
/// or backwards time) are collected into the rejects report with their line
/// numbers; more than 10% rejected rows is an ingestion error. Accepted
/// rows keep file order, so ingestion is idempotent and order-preserving.
pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<IngestReport> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);

    let headers = rdr.headers().map_err(|e| Error::Schema(format!("missing header row: {e}")))?.clone();
    let column = |name: &str, aliases: &[String]| -> Result<usize> {
        resolve_column(&headers, aliases).ok_or_else(|| {
            Error::Schema(format!(
                "required column '{name}' not found in header [{}] (aliases tried: {})",
                headers.iter().collect::<Vec<_>>().join(", "),
                aliases.join(", ")
            ))
        })
    };
    let c_cycle = column("cycle", &schema.cycle)?;
    let c_step = column("step", &schema.step)?;
    let c_time = column("time_s", &schema.time_s)?;
    let c_volt = column("voltage_V", &schema.voltage_v)?;
    let c_curr = column("current_A", &schema.current_a)?;

    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    let mut total = 0usize;
    // Last accepted time per cycle, for the monotonicity invariant.
    let mut last_time: BTreeMap<u32, f64> = BTreeMap::new();

    for record in rdr.records() {
        total += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejects.push(RejectedRow { line, reason: format!("unreadable record: {e}") });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let reject = |reason: String, rejects: &mut Vec<RejectedRow>| {
            rejects.push(RejectedRow { line, reason });
        };

        let field = |idx: usize| record.get(idx).unwrap_or("");
        let parsed = (|| -> std::result::Result<CyclingRecordRow, String> {
            let cycle = parse_cycle(field(c_cycle))?;
            let step_kind = StepKind::from_label(field(c_step), &schema.step_labels);
            let time_s = parse_float(field(c_time), "time_s")?;
            let voltage_v = parse_float(field(c_volt), "voltage_V")?;
            let current_a = parse_float(field(c_curr), "current_A")? * schema.current_sign;
            if !time_s.is_finite() || time_s < 0.0 {
                return Err(format!("time_s {time_s} must be finite and non-negative"));
            }
            if !voltage_v.is_finite() {
                return Err(format!("voltage_V {voltage_v} must be finite"));
            }
            if !current_a.is_finite() {
                return Err(format!("current_A {current_a} must be finite"));
            }
            if let Some(&prev) = last_time.get(&cycle) {
                if time_s < prev {
                    return Err(format!(
                        "time_s {time_s} goes backwards within cycle {cycle} (previous {prev})"
                    ));
                }
            }
            Ok(CyclingRecordRow { cycle, step_kind, time_s, voltage_v, current_a })
        })();

        match parsed {
            Ok(row) => {
                last_time.insert(row.cycle, row.time_s);
                rows.push(row);
            }
            Err(reason) => reject(reason, &mut rejects),
        }
    }

    if total > 0 && rejects.len() as f64 > MAX_REJECT_FRACTION * total as f64 {
        return Err(Error::Ingestion { rejected: rejects.len(), total });
    }
    if !rejects.is_empty() {
        log::warn!("ingestion rejected {}/{} rows", rejects.len(), total);
    }
    Ok(IngestReport { rows, rejects })
}

/// Ingest a normalized cycling CSV file. See [`ingest_reader`].
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), schema)
}

/// Write rows as a normalized CSV (default column names). Floats print in
/// shortest round-trip form, so export → re-ingest reproduces the rows
/// bit for bit.
pub fn export_csv<W: Write>(rows: &[CyclingRecordRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cycle", "step", "time_s", "voltage_V", "current_A"])?;
    for row in rows {
        w.write_record(&[
            row.cycle.to_string(),
            row.step_kind.as_str().to_string(),
            row.time_s.to_string(),
            row.voltage_v.to_string(),
            row.current_a.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Discharge curves extracted from one ingestion, with human-readable
/// warnings for cycles that contributed nothing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub curves: Vec<DischargeCurve>,
    pub warnings: Vec<String>,
}

/// Extract the constant-current discharge segment of every cycle.
///
/// Per cycle, the maximal contiguous run of samples with
/// `|current_a + I_target| ≤ tolerance·I_target` (discharge current is
/// negative in the normalized schema) and `voltage ≥ cutoff` becomes the
/// cycle's curve: time is rebased to zero at the segment start, and a
/// segment crossing the cutoff mid-cycle simply ends at the last sample at
/// or above it. Segments shorter than [`MIN_SEGMENT_SAMPLES`] are dropped
/// with a warning. Curves longer than `protocol.max_curve_samples` are
/// decimated by uniform stride (callers keep the raw file on disk). Cycles
/// without any qualifying run produce a warning, never an error; the curves
/// carry the positive model-side discharge current.
pub fn extract_discharge(
    rows: &[CyclingRecordRow],
    battery_id: &str,
    protocol: &ProtocolConfig,
) -> Result<ExtractionOutcome> {
    if rows.is_empty() {
        return Err(Error::Config("discharge extraction needs at least one row".into()));
    }
    let target = protocol.discharge_current;
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::Config(format!(
            "discharge current target must be positive, got {target}"
        )));
    }
    let tol = protocol.current_tolerance * target;

    let mut by_cycle: BTreeMap<u32, Vec<&CyclingRecordRow>> = BTreeMap::new();
    for row in rows {
        by_cycle.entry(row.cycle).or_default().push(row);
    }

    let mut curves = Vec::new();
    let mut warnings = Vec::new();

    for (&cycle, cycle_rows) in &by_cycle {
        let qualifies = |r: &CyclingRecordRow| {
            (r.current_a + target).abs() <= tol && r.voltage_v >= protocol.cutoff_voltage
        };

        // Maximal contiguous qualifying run (first wins ties).
        let mut best: Option<(usize, usize)> = None; // half-open [start, end)
        let mut i = 0;
        while i < cycle_rows.len() {
            if qualifies(cycle_rows[i]) {
                let start = i;
                while i < cycle_rows.len() && qualifies(cycle_rows[i]) {
                    i += 1;
                }
                if best.is_none_or(|(s, e)| i - start > e - s) {
                    best = Some((start, i));
                }
            } else {
                i += 1;
            }
        }

        let Some((start, end)) = best else {
            warnings.push(format!("cycle {cycle}: no discharge segment at {target} A"));
            continue;
        };

        // Rebase time; logged samples may repeat a timestamp at step
        // boundaries, and the curve wants strictly increasing time.
        let t0 = cycle_rows[start].time_s;
        let mut samples: Vec<(f64, f64)> = Vec::with_capacity(end - start);
        for r in &cycle_rows[start..end] {
            let t = r.time_s - t0;
            if samples.last().is_none_or(|&(prev, _)| t > prev) || samples.is_empty() {
                samples.push((t, r.voltage_v));
            }
        }

        if samples.len() < MIN_SEGMENT_SAMPLES {
            warnings.push(format!(
                "cycle {cycle}: discharge segment has {} samples (< {MIN_SEGMENT_SAMPLES}), dropped",
                samples.len()
            ));
            continue;
        }

        if samples.len() > protocol.max_curve_samples {
            let stride = samples.len().div_ceil(protocol.max_curve_samples);
            log::debug!(
                "cycle {cycle}: decimating {} samples by stride {stride}",
                samples.len()
            );
            samples = samples.into_iter().step_by(stride).collect();
        }

        let curve = DischargeCurve {
            battery_id: battery_id.to_string(),
            cycle,
            current: target,
            cutoff_voltage: protocol.cutoff_voltage,
            samples,
        };
        curve.validate()?;
        curves.push(curve);
    }

    if curves.is_empty() {
        warnings.push("no cycle produced a discharge segment".to_string());
    }
    for w in &warnings {
        log::warn!("battery '{battery_id}': {w}");
    }
    Ok(ExtractionOutcome { curves, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::model::{apply_scaling, ScalingFactors};
    use crate::ocp::OcpCurve;
    use crate::solver::SolverGrid;
    use crate::voltage::synthesize_reference_curve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn csv_text(body: &str) -> String {
        format!("cycle,step,time_s,voltage_V,current_A\n{body}")
    }

    #[test]
    fn two_cycle_file_partitions_in_order() {
        let text = csv_text(
            "1,rest,0.0,4.2,0.0\n\
             1,discharge,10.0,4.1,-1.35\n\
             1,discharge,20.0,4.0,-1.35\n\
             2,charge_cc,0.0,3.0,1.35\n\
             2,charge_cv,100.0,4.2,0.4\n\
             2,discharge,200.0,4.1,-1.35\n",
        );
        let report = ingest_reader(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert!(report.rejects.is_empty());
        assert_eq!(report.rows.len(), 6);

        let cycles: Vec<u32> = report.rows.iter().map(|r| r.cycle).collect();
        assert_eq!(cycles, [1, 1, 1, 2, 2, 2]);
        for w in report.rows.windows(2) {
            if w[0].cycle == w[1].cycle {
                assert!(w[0].time_s <= w[1].time_s, "times monotone per cycle");
            }
        }
        assert_eq!(report.rows[0].step_kind, StepKind::Rest);
        assert_eq!(report.rows[4].step_kind, StepKind::ChargeCv);
        // Unknown labels map to Other rather than failing the row.
        let odd = csv_text("1,cccv_hold,0.0,4.2,0.0\n");
        let report = ingest_reader(odd.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(report.rows[0].step_kind, StepKind::Other);
    }

    #[test]
    fn bad_rows_are_rejected_with_line_numbers() {
        // Line 1 is the header; data starts at line 2. Five bad rows need
        // at least 51 data rows to stay under the 10% rejection limit.
        let mut body = String::from(
            "1,discharge,0.0,4.1,-1.35\n\
             1,discharge,1.0,NaN,-1.35\n\
             1,discharge,2.0,4.0,-1.35\n\
             1,discharge,1.5,3.9,-1.35\n\
             1,discharge,3.0,3.9,oops\n\
             1,discharge,4.0,3.8,-1.35\n\
             one,discharge,5.0,3.8,-1.35\n\
             1,discharge,-1.0,3.8,-1.35\n",
        );
        for i in 0..43 {
            body.push_str(&format!("1,discharge,{}.0,3.5,-1.35\n", 5 + i));
        }
        let report = ingest_reader(csv_text(&body).as_bytes(), &CsvSchema::default()).unwrap();

        // NaN voltage (line 3), backwards time (line 5), non-numeric current
        // (line 6), non-integer cycle (line 8), negative time (line 9).
        let lines: Vec<u64> = report.rejects.iter().map(|r| r.line).collect();
        assert_eq!(lines, [3, 5, 6, 8, 9]);
        assert!(report.rejects[0].reason.contains("voltage_V"));
        assert!(report.rejects[1].reason.contains("backwards"));
        assert!(report.rejects[2].reason.contains("current_A"));
        assert!(report.rejects[3].reason.contains("cycle"));
        assert!(report.rejects[4].reason.contains("time_s"));
        assert_eq!(report.rows.len(), 46);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let text = "cycle,step,time_s,voltage_V\n1,rest,0.0,4.2\n";
        let err = ingest_reader(text.as_bytes(), &CsvSchema::default()).unwrap_err();
        match err {
            Error::Schema(msg) => assert!(msg.contains("current_A"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
        assert_eq!(err_exit(), 2);

        fn err_exit() -> i32 {
            let text = "cycle,step,time_s,voltage_V\n1,rest,0.0,4.2\n";
            ingest_reader(text.as_bytes(), &CsvSchema::default()).unwrap_err().exit_code()
        }
    }

    #[test]
    fn excessive_rejects_fail_ingestion() {
        // 3 bad rows out of 20 (15%) crosses the 10% limit.
        let mut body = String::new();
        for i in 0..20 {
            if i % 7 == 1 {
                body.push_str(&format!("1,discharge,{i}.0,NaN,-1.35\n"));
            } else {
                body.push_str(&format!("1,discharge,{i}.0,3.9,-1.35\n"));
            }
        }
        let err = ingest_reader(csv_text(&body).as_bytes(), &CsvSchema::default()).unwrap_err();
        match err {
            Error::Ingestion { rejected, total } => {
                assert_eq!(rejected, 3);
                assert_eq!(total, 20);
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn export_reingest_round_trip_is_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let kinds = [
            StepKind::ChargeCc,
            StepKind::ChargeCv,
            StepKind::Discharge,
            StepKind::Rest,
            StepKind::Other,
        ];
        let mut rows = Vec::new();
        for cycle in 1..=3u32 {
            let mut t = 0.0;
            for _ in 0..40 {
                t += rng.random::<f64>() * 37.0;
                rows.push(CyclingRecordRow {
                    cycle,
                    step_kind: kinds[rng.random_range(0..kinds.len())],
                    time_s: t,
                    voltage_v: 2.5 + 1.8 * rng.random::<f64>(),
                    current_a: 3.0 * (rng.random::<f64>() - 0.5),
                });
            }
        }

        let mut buffer = Vec::new();
        export_csv(&rows, &mut buffer).unwrap();
        let report = ingest_reader(buffer.as_slice(), &CsvSchema::default()).unwrap();
        assert!(report.rejects.is_empty());
        // Shortest round-trip float printing makes this bitwise, not approximate.
        assert_eq!(report.rows, rows);
    }

    #[test]
    fn schema_aliases_and_sign_convention_normalize_foreign_files() {
        let text = "Cycle_Index,Step_Name,Test_Time(s),Voltage(V),Current(A)\n\
                    3.0,DisCharge,12.5,3.95,1.35\n\
                    3.0,Rest,13.5,3.96,0.0\n";
        let schema = CsvSchema {
            cycle: vec!["Cycle_Index".into()],
            step: vec!["Step_Name".into()],
            time_s: vec!["Test_Time(s)".into()],
            voltage_v: vec!["Voltage(V)".into()],
            current_a: vec!["Current(A)".into()],
            // This instrument logs discharge current positive.
            current_sign: -1.0,
            ..CsvSchema::default()
        };
        let report = ingest_reader(text.as_bytes(), &schema).unwrap();
        assert!(report.rejects.is_empty());
        assert_eq!(report.rows[0].cycle, 3);
        assert_eq!(report.rows[0].step_kind, StepKind::Discharge);
        assert_eq!(report.rows[0].current_a, -1.35);
        assert_eq!(report.rows[1].current_a, -0.0);
    }

    /// Synthesize a reference discharge curve and embed it in a fake CC-CV
    /// cycle log. All times are dyadic, so rebasing is exact.
    fn embedded_cycle(cycle: u32, offset: f64) -> (Vec<CyclingRecordRow>, DischargeCurve) {
        let cfg = Config::default();
        let factors = ScalingFactors::new(2.5, 0.25, 2.5, 1.0).unwrap();
        let cell = apply_scaling(&cfg.reference_cell(), &factors, &cfg.fixed_factors()).unwrap();
        let mut synthetic = synthesize_reference_curve(
            &cell,
            &OcpCurve::builtin_positive(),
            &OcpCurve::builtin_negative(),
            "bat-7",
            cycle,
            SolverGrid { n_t: 61, ..SolverGrid::default() },
            Some(2.7),
        )
        .unwrap()
        .curve;
        // Snap the uniform 60 s grid onto exactly representable times so
        // that embedding at a dyadic offset and rebasing is lossless.
        for (k, s) in synthetic.samples.iter_mut().enumerate() {
            s.0 = 60.0 * k as f64;
        }

        let mut rows = Vec::new();
        // Charge and taper before the discharge, rest after.
        rows.push(CyclingRecordRow {
            cycle,
            step_kind: StepKind::ChargeCc,
            time_s: offset - 128.0,
            voltage_v: 4.0,
            current_a: 1.35,
        });
        rows.push(CyclingRecordRow {
            cycle,
            step_kind: StepKind::ChargeCv,
            time_s: offset - 64.0,
            voltage_v: 4.2,
            current_a: 0.3,
        });
        for &(t, v) in &synthetic.samples {
            rows.push(CyclingRecordRow {
                cycle,
                step_kind: StepKind::Discharge,
                time_s: offset + t,
                voltage_v: v,
                current_a: -1.35,
            });
        }
        let t_end = offset + synthetic.end_time();
        rows.push(CyclingRecordRow {
            cycle,
            step_kind: StepKind::Rest,
            time_s: t_end + 64.0,
            voltage_v: 3.4,
            current_a: 0.0,
        });
        (rows, synthetic)
    }

    #[test]
    fn extraction_recovers_embedded_synthetic_curve() {
        let (mut rows, curve1) = embedded_cycle(1, 8192.0);
        let (rows2, curve2) = embedded_cycle(2, 16384.0);
        rows.extend(rows2);

        let outcome = extract_discharge(&rows, "bat-7", &ProtocolConfig::default()).unwrap();
        assert_eq!(outcome.curves.len(), 2);
        assert!(outcome.warnings.is_empty());

        for (extracted, original) in outcome.curves.iter().zip([&curve1, &curve2]) {
            assert_eq!(extracted.cycle, original.cycle);
            assert_eq!(extracted.current, 1.35, "model-side discharge current is positive");
            // Sample-for-sample: dyadic offsets make the rebase exact.
            assert_eq!(extracted.samples, original.samples);
        }
    }

    #[test]
    fn cutoff_truncates_mid_segment() {
        // Voltage marches through the cutoff; the run must end at the last
        // sample at or above 2.7 V.
        let mut rows = Vec::new();
        for i in 0..30 {
            rows.push(CyclingRecordRow {
                cycle: 1,
                step_kind: StepKind::Discharge,
                time_s: 10.0 * i as f64,
                voltage_v: 4.0 - 0.05 * i as f64,
                current_a: -1.35,
            });
        }
        let outcome = extract_discharge(&rows, "b", &ProtocolConfig::default()).unwrap();
        assert_eq!(outcome.curves.len(), 1);
        let curve = &outcome.curves[0];
        // 4.0 − 0.05i ≥ 2.7 ⇔ i ≤ 26.
        assert_eq!(curve.samples.len(), 27);
        assert!(curve.samples.iter().all(|&(_, v)| v >= 2.7));
        assert_eq!(curve.samples[0].0, 0.0, "time rebased to segment start");
    }

    #[test]
    fn all_rest_file_yields_empty_result_with_warning() {
        let rows: Vec<CyclingRecordRow> = (0..20)
            .map(|i| CyclingRecordRow {
                cycle: 1 + i / 10,
                step_kind: StepKind::Rest,
                time_s: i as f64,
                voltage_v: 3.8,
                current_a: 0.0,
            })
            .collect();
        let outcome = extract_discharge(&rows, "b", &ProtocolConfig::default()).unwrap();
        assert!(outcome.curves.is_empty());
        assert!(!outcome.warnings.is_empty());

        // Empty input violates the precondition instead.
        assert!(extract_discharge(&[], "b", &ProtocolConfig::default()).is_err());
    }

    #[test]
    fn short_segments_are_dropped_with_warning() {
        let mut rows = Vec::new();
        for i in 0..8 {
            rows.push(CyclingRecordRow {
                cycle: 4,
                step_kind: StepKind::Discharge,
                time_s: i as f64,
                voltage_v: 3.9,
                current_a: -1.35,
            });
        }
        let outcome = extract_discharge(&rows, "b", &ProtocolConfig::default()).unwrap();
        assert!(outcome.curves.is_empty());
        assert!(outcome.warnings.iter().any(|w| w.contains("cycle 4") && w.contains("dropped")));
    }

    #[test]
    fn maximal_run_wins_and_current_tolerance_gates() {
        let mut rows = Vec::new();
        // Short qualifying run, then a rest, then a longer qualifying run.
        for i in 0..12 {
            rows.push(CyclingRecordRow {
                cycle: 1,
                step_kind: StepKind::Discharge,
                time_s: i as f64,
                voltage_v: 4.0,
                current_a: -1.35,
            });
        }
        rows.push(CyclingRecordRow {
            cycle: 1,
            step_kind: StepKind::Rest,
            time_s: 12.0,
            voltage_v: 4.0,
            current_a: 0.0,
        });
        for i in 13..33 {
            rows.push(CyclingRecordRow {
                cycle: 1,
                step_kind: StepKind::Discharge,
                time_s: i as f64,
                // 2% off target stays inside the 5% tolerance band.
                voltage_v: 3.9,
                current_a: -1.377,
            });
        }
        let outcome = extract_discharge(&rows, "b", &ProtocolConfig::default()).unwrap();
        assert_eq!(outcome.curves.len(), 1);
        assert_eq!(outcome.curves[0].samples.len(), 20, "longer run wins");
        assert_eq!(outcome.curves[0].samples[0], (0.0, 3.9));

        // A 10% deviation falls outside the band and splits the run.
        rows[20].current_a = -1.5;
        let outcome = extract_discharge(&rows, "b", &ProtocolConfig::default()).unwrap();
        let n = outcome.curves[0].samples.len();
        assert!(n < 20, "tolerance violation must split the run, got {n}");
    }

    #[test]
    fn long_curves_are_decimated_by_uniform_stride() {
        let mut rows = Vec::new();
        for i in 0..1500 {
            rows.push(CyclingRecordRow {
                cycle: 1,
                step_kind: StepKind::Discharge,
                time_s: i as f64,
                voltage_v: 4.0 - 1e-4 * i as f64,
                current_a: -1.35,
            });
        }
        let protocol = ProtocolConfig::default();
        let outcome = extract_discharge(&rows, "b", &protocol).unwrap();
        let curve = &outcome.curves[0];
        assert!(curve.samples.len() <= protocol.max_curve_samples);
        // Stride 3 over 1500 samples keeps every third, starting at t = 0.
        assert_eq!(curve.samples.len(), 500);
        assert_eq!(curve.samples[0].0, 0.0);
        assert_eq!(curve.samples[1].0, 3.0);
        curve.validate().unwrap();
    }
}
