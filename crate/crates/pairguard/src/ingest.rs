//! Run-log and epoch-log parsing.
//!
//! This is the boundary between training pipelines and the statistics
//! core. Two delimited formats come in:
//!
//! - run logs, header `dataset,scenario,seed,arm,metric,value` plus an
//!   optional `meta` column, one row per completed run;
//! - epoch logs, header `dataset,scenario,seed,arm,epoch,value`, one row
//!   per logged epoch of a training curve.
//!
//! Headers are case-sensitive but order-insensitive. Unknown extra columns
//! are folded into `meta` as `name=value` notes rather than rejected, so
//! logs from newer pipelines still load. Parsing is fail-fast on anything
//! that would corrupt an analysis: bad arm labels, non-finite values,
//! duplicate keys, epochs that do not strictly increase.

use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed header: missing required column \"{missing}\" (got {got:?})")]
    MalformedHeader { missing: &'static str, got: Vec<String> },
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: u64, key: String },
    #[error("line {line}: value {value} is not finite")]
    NonFiniteValue { line: u64, value: String },
    #[error("line {line}: epochs for {key} are not strictly increasing (epoch {epoch})")]
    NonMonotoneEpochs { line: u64, key: String, epoch: u64 },
}

/// Which side of the comparison a run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Baseline,
    Variant,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Baseline => "baseline",
            Arm::Variant => "variant",
        })
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "variant" => Ok(Arm::Variant),
            other => Err(format!("arm must be one of baseline, variant (got \"{other}\")")),
        }
    }
}

/// One completed run's final metric value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub scenario: String,
    pub seed: u64,
    pub arm: Arm,
    pub metric_name: String,
    pub value: f64,
    /// Free-text environment fingerprint; extra input columns are folded
    /// in here as `name=value` pairs.
    pub meta: Option<String>,
}

/// One logged epoch of a training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub dataset: String,
    pub scenario: String,
    pub seed: u64,
    pub arm: Arm,
    pub epoch: u64,
    pub value: f64,
}

/// Parsed run log plus non-fatal observations made while parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
    pub notes: Vec<String>,
}

/// Parsed epoch log, sorted by (dataset, scenario, seed, arm, epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub records: Vec<EpochRecord>,
    pub notes: Vec<String>,
}

const RUN_COLUMNS: [&str; 6] = ["dataset", "scenario", "seed", "arm", "metric", "value"];
const EPOCH_COLUMNS: [&str; 6] = ["dataset", "scenario", "seed", "arm", "epoch", "value"];

struct Header {
    required: Vec<usize>,
    meta: Option<usize>,
    extras: Vec<(usize, String)>,
}

fn resolve_header(
    headers: &csv::StringRecord,
    required: &[&'static str],
    with_meta: bool,
) -> Result<Header, IngestError> {
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    let mut indices = Vec::with_capacity(required.len());
    for col in required {
        match names.iter().position(|n| n == col) {
            Some(i) => indices.push(i),
            None => {
                return Err(IngestError::MalformedHeader {
                    missing: col,
                    got: names,
                })
            }
        }
    }
    let meta = if with_meta {
        names.iter().position(|n| n == "meta")
    } else {
        None
    };
    let extras = names
        .iter()
        .enumerate()
        .filter(|(i, _)| !indices.contains(i) && Some(*i) != meta)
        .map(|(i, n)| (i, n.clone()))
        .collect();
    Ok(Header {
        required: indices,
        meta,
        extras,
    })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_row_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::BadRow {
        line,
        reason: e.to_string(),
    }
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'r str, IngestError> {
    record.get(idx).ok_or_else(|| IngestError::BadRow {
        line,
        reason: format!("missing field \"{name}\""),
    })
}

fn parse_field<T: FromStr>(raw: &str, name: &str, line: u64) -> Result<T, IngestError>
where
    T::Err: fmt::Display,
{
    raw.parse().map_err(|e| IngestError::BadRow {
        line,
        reason: format!("{name} \"{raw}\": {e}"),
    })
}

fn finite_value(raw: &str, scale: f64, line: u64) -> Result<f64, IngestError> {
    let v: f64 = parse_field(raw, "value", line)?;
    if !v.is_finite() {
        return Err(IngestError::NonFiniteValue {
            line,
            value: raw.to_string(),
        });
    }
    let scaled = v * scale;
    if !scaled.is_finite() {
        return Err(IngestError::NonFiniteValue {
            line,
            value: format!("{raw} (after scaling by {scale})"),
        });
    }
    Ok(scaled)
}

fn fold_meta(explicit: Option<&str>, extras: &[(usize, String)], record: &csv::StringRecord) -> Option<String> {
    let mut parts: Vec<String> = Vec::new();
    if let Some(m) = explicit {
        if !m.is_empty() {
            parts.push(m.to_string());
        }
    }
    for (idx, name) in extras {
        if let Some(v) = record.get(*idx) {
            parts.push(format!("{name}={v}"));
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("; "))
    }
}

fn reader_from<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Parses a run log. `scale` multiplies every value on the way in, for
/// logs that store fractions instead of percentage points.
pub fn parse_run_log<R: Read>(input: R, scale: f64) -> Result<RunLog, IngestError> {
    let mut reader = reader_from(input);
    let header = resolve_header(reader.headers()?, &RUN_COLUMNS, true)?;
    let mut notes = Vec::new();
    if !header.extras.is_empty() {
        let names: Vec<&str> = header.extras.iter().map(|(_, n)| n.as_str()).collect();
        notes.push(format!("extra columns folded into meta: {}", names.join(", ")));
    }
    let mut seen: BTreeSet<(String, String, u64, Arm, String)> = BTreeSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_row_error)?;
        let line = record_line(&row);
        let get = |slot: usize, name: &str| field(&row, header.required[slot], name, line);
        let dataset = get(0, "dataset")?.to_string();
        let scenario = get(1, "scenario")?.to_string();
        let seed: u64 = parse_field(get(2, "seed")?, "seed", line)?;
        let arm: Arm = get(3, "arm")?
            .parse()
            .map_err(|reason| IngestError::BadRow { line, reason })?;
        let metric_name = get(4, "metric")?.to_string();
        let value = finite_value(get(5, "value")?, scale, line)?;
        let key = (dataset.clone(), scenario.clone(), seed, arm, metric_name.clone());
        if !seen.insert(key) {
            return Err(IngestError::DuplicateKey {
                line,
                key: format!("{dataset}/{scenario}/seed {seed}/{arm}/{metric_name}"),
            });
        }
        let explicit = match header.meta {
            Some(i) => row.get(i),
            None => None,
        };
        records.push(RunRecord {
            dataset,
            scenario,
            seed,
            arm,
            metric_name,
            value,
            meta: fold_meta(explicit, &header.extras, &row),
        });
    }
    Ok(RunLog { records, notes })
}

/// Parses an epoch log. Epochs must be >= 1 and strictly increasing per
/// (dataset, scenario, seed, arm) curve; output is sorted for grouping.
pub fn parse_epoch_log<R: Read>(input: R, scale: f64) -> Result<EpochLog, IngestError> {
    let mut reader = reader_from(input);
    let header = resolve_header(reader.headers()?, &EPOCH_COLUMNS, false)?;
    let mut notes = Vec::new();
    if !header.extras.is_empty() {
        let names: Vec<&str> = header.extras.iter().map(|(_, n)| n.as_str()).collect();
        notes.push(format!("ignoring extra columns: {}", names.join(", ")));
    }
    let mut last_epoch: BTreeMap<(String, String, u64, Arm), u64> = BTreeMap::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_row_error)?;
        let line = record_line(&row);
        let get = |slot: usize, name: &str| field(&row, header.required[slot], name, line);
        let dataset = get(0, "dataset")?.to_string();
        let scenario = get(1, "scenario")?.to_string();
        let seed: u64 = parse_field(get(2, "seed")?, "seed", line)?;
        let arm: Arm = get(3, "arm")?
            .parse()
            .map_err(|reason| IngestError::BadRow { line, reason })?;
        let epoch: u64 = parse_field(get(4, "epoch")?, "epoch", line)?;
        if epoch == 0 {
            return Err(IngestError::BadRow {
                line,
                reason: "epoch must be >= 1".to_string(),
            });
        }
        let value = finite_value(get(5, "value")?, scale, line)?;
        let key = (dataset.clone(), scenario.clone(), seed, arm);
        if let Some(&prev) = last_epoch.get(&key) {
            if epoch <= prev {
                return Err(IngestError::NonMonotoneEpochs {
                    line,
                    key: format!("{}/{}/seed {}/{}", key.0, key.1, key.2, key.3),
                    epoch,
                });
            }
        }
        last_epoch.insert(key, epoch);
        records.push(EpochRecord {
            dataset,
            scenario,
            seed,
            arm,
            epoch,
            value,
        });
    }
    records.sort_by(|a, b| {
        (&a.dataset, &a.scenario, a.seed, a.arm, a.epoch)
            .cmp(&(&b.dataset, &b.scenario, b.seed, b.arm, b.epoch))
    });
    Ok(EpochLog { records, notes })
}

/// Writes records in the canonical run-log form. The meta column is always
/// present; empty meta round-trips to absent.
pub fn write_run_log<W: Write>(out: W, records: &[RunRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "scenario", "seed", "arm", "metric", "value", "meta"])?;
    for r in records {
        w.write_record([
            r.dataset.as_str(),
            r.scenario.as_str(),
            &r.seed.to_string(),
            &r.arm.to_string(),
            r.metric_name.as_str(),
            &r.value.to_string(),
            r.meta.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes records in the canonical epoch-log form.
pub fn write_epoch_log<W: Write>(out: W, records: &[EpochRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPOCH_COLUMNS)?;
    for r in records {
        w.write_record([
            r.dataset.as_str(),
            r.scenario.as_str(),
            &r.seed.to_string(),
            &r.arm.to_string(),
            &r.epoch.to_string(),
            &r.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pairing status of one (dataset, scenario, metric) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPairing {
    pub dataset: String,
    pub scenario: String,
    pub metric_name: String,
    /// Seeds with exactly one baseline and one variant run.
    pub complete_seeds: Vec<u64>,
    /// Seeds missing one arm.
    pub unpaired_seeds: Vec<u64>,
    /// Seeds carrying more than one run for the same arm.
    pub duplicate_seeds: Vec<u64>,
}

impl GroupPairing {
    pub fn is_complete(&self) -> bool {
        self.unpaired_seeds.is_empty() && self.duplicate_seeds.is_empty()
    }
}

/// Machine-readable pairing report across all groups in a log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingReport {
    pub groups: Vec<GroupPairing>,
}

impl PairingReport {
    pub fn is_complete(&self) -> bool {
        self.groups.iter().all(GroupPairing::is_complete)
    }

    pub fn problem_count(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.unpaired_seeds.len() + g.duplicate_seeds.len())
            .sum()
    }
}

/// Reports pairing problems instead of failing; the caller decides whether
/// an incomplete group is fatal.
pub fn validate_pairing(records: &[RunRecord]) -> PairingReport {
    let mut groups: BTreeMap<(String, String, String), BTreeMap<u64, (u32, u32)>> = BTreeMap::new();
    for r in records {
        let counts = groups
            .entry((r.dataset.clone(), r.scenario.clone(), r.metric_name.clone()))
            .or_default()
            .entry(r.seed)
            .or_insert((0, 0));
        match r.arm {
            Arm::Baseline => counts.0 += 1,
            Arm::Variant => counts.1 += 1,
        }
    }
    let groups = groups
        .into_iter()
        .map(|((dataset, scenario, metric_name), seeds)| {
            let mut g = GroupPairing {
                dataset,
                scenario,
                metric_name,
                complete_seeds: Vec::new(),
                unpaired_seeds: Vec::new(),
                duplicate_seeds: Vec::new(),
            };
            for (seed, (b, v)) in seeds {
                if b > 1 || v > 1 {
                    g.duplicate_seeds.push(seed);
                } else if b == 1 && v == 1 {
                    g.complete_seeds.push(seed);
                } else {
                    g.unpaired_seeds.push(seed);
                }
            }
            g
        })
        .collect();
    PairingReport { groups }
}

/// Cross-file check: each curve's final epoch should match some run-log
/// value for the same (dataset, scenario, seed, arm) within `tol`. Returns
/// one finding per curve that has run records but no match.
pub fn final_epoch_mismatches(runs: &[RunRecord], epochs: &[EpochRecord], tol: f64) -> Vec<String> {
    let mut finals: BTreeMap<(&str, &str, u64, Arm), (u64, f64)> = BTreeMap::new();
    for e in epochs {
        let key = (e.dataset.as_str(), e.scenario.as_str(), e.seed, e.arm);
        let slot = finals.entry(key).or_insert((e.epoch, e.value));
        if e.epoch >= slot.0 {
            *slot = (e.epoch, e.value);
        }
    }
    let mut findings = Vec::new();
    for ((dataset, scenario, seed, arm), (epoch, value)) in finals {
        let candidates: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| r.dataset == dataset && r.scenario == scenario && r.seed == seed && r.arm == arm)
            .collect();
        if candidates.is_empty() {
            continue;
        }
        if !candidates.iter().any(|r| (r.value - value).abs() <= tol) {
            findings.push(format!(
                "{dataset}/{scenario}/seed {seed}/{arm}: final epoch {epoch} value {value} matches no run-log value"
            ));
        }
    }
    findings
}
