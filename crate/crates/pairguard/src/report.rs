//! Rendering of summary tables and plot-data files.
//!
//! This layer never computes statistics: every number it emits comes from a
//! stored summary row or epoch record. Rendering is a pure function of its
//! inputs, with fixed decimal formatting and LF line endings, so re-running
//! a report byte-identically reproduces the files.
//!
//! Formatting rules:
//! - deltas and interval endpoints: two decimals, with negative zero
//!   normalized to "0.00";
//! - p-values: two significant figures, never fewer than two decimals
//!   ("1.00", "0.25", "0.090", "0.0030"). Monte Carlo p-values are bounded
//!   below by 1/(1+draws) by construction, so they never render as zero.

use crate::ingest::{Arm, EpochRecord};
use crate::protocol::{AnalysisConfig, RuleMode, ScenarioSummary};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("summary table is empty")]
    EmptyTable,
    #[error("no epoch records match the selection")]
    NoData,
    #[error("summary line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

/// One rendered summary row; exactly the fields the delimited form carries,
/// so write followed by parse is the identity on rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub scenario: String,
    pub scenario_type: String,
    pub delta_single: f64,
    pub delta_paired: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_perm: f64,
    pub p_unpaired: f64,
    pub significant: bool,
}

impl From<&ScenarioSummary> for SummaryRow {
    fn from(s: &ScenarioSummary) -> Self {
        SummaryRow {
            dataset: s.dataset.clone(),
            scenario: s.scenario.clone(),
            scenario_type: s.scenario_type.clone(),
            delta_single: s.delta_single,
            delta_paired: s.delta_paired,
            ci_low: s.ci.lower,
            ci_high: s.ci.upper,
            p_perm: s.p_perm,
            p_unpaired: s.p_unpaired,
            significant: s.decision.significant,
        }
    }
}

/// A summary table plus the provenance needed to audit it. Only the rows
/// and the config digest are rendered into the table files; timestamps
/// would break byte-identical re-runs and live in a sidecar instead.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub generated_at: String,
    pub tool_version: String,
    pub config_digest: String,
}

impl SummaryTable {
    /// Sorts by (dataset, scenario, metric) and converts to render rows.
    pub fn from_summaries(
        mut summaries: Vec<ScenarioSummary>,
        tool_version: &str,
        config_digest: &str,
        generated_at: &str,
    ) -> Self {
        summaries.sort_by(|a, b| {
            (&a.dataset, &a.scenario, &a.metric_name).cmp(&(&b.dataset, &b.scenario, &b.metric_name))
        });
        SummaryTable {
            rows: summaries.iter().map(SummaryRow::from).collect(),
            generated_at: generated_at.to_string(),
            tool_version: tool_version.to_string(),
            config_digest: config_digest.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryFormat {
    Delimited,
    Markdown,
}

/// Digest of the analysis settings that determine every statistic, so a
/// stored table is auditable against the configuration that produced it.
pub fn analysis_digest(analysis: &AnalysisConfig) -> String {
    let mut h = Sha256::new();
    h.update(analysis.rule.alpha.to_bits().to_le_bytes());
    h.update(match analysis.rule.mode {
        RuleMode::StrictAnd => b"strict".as_slice(),
        RuleMode::LenientOr => b"lenient".as_slice(),
    });
    h.update(analysis.bootstrap.replicates.to_le_bytes());
    h.update(analysis.bootstrap.confidence_level.to_bits().to_le_bytes());
    h.update(analysis.bootstrap.master_seed.to_le_bytes());
    h.update(u64::from(analysis.max_exhaustive_k).to_le_bytes());
    h.update(analysis.permutation_draws.to_le_bytes());
    match analysis.single_seed {
        Some(seed) => {
            h.update([1u8]);
            h.update(seed.to_le_bytes());
        }
        None => h.update([0u8]),
    }
    hex::encode(h.finalize())
}

/// Two decimals, with negative zero folded to "0.00".
pub fn format_fixed(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

/// Two significant figures with at least two decimals.
pub fn format_p(p: f64) -> String {
    if p <= 0.0 {
        return "0.00".to_string();
    }
    // The exponent of the 2-significant-figure rounding decides how many
    // decimals that rounding needs; both roundings agree on carries.
    let sci = format!("{p:.1e}");
    let exponent: i32 = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    let decimals = if exponent >= 0 {
        2
    } else {
        (2).max(-exponent as usize + 1)
    };
    format!("{p:.decimals$}")
}

const SUMMARY_HEADER: &str =
    "dataset,scenario,type,delta_single,delta_paired,ci_low,ci_high,p_perm,p_unpaired,decision";

fn decision_label(significant: bool) -> &'static str {
    if significant {
        "significant"
    } else {
        "not_significant"
    }
}

fn row_cells(row: &SummaryRow) -> [String; 10] {
    [
        row.dataset.clone(),
        row.scenario.clone(),
        row.scenario_type.clone(),
        format_fixed(row.delta_single),
        format_fixed(row.delta_paired),
        format_fixed(row.ci_low),
        format_fixed(row.ci_high),
        format_p(row.p_perm),
        format_p(row.p_unpaired),
        decision_label(row.significant).to_string(),
    ]
}

/// Renders the table. The delimited form opens with a `# config_digest=`
/// comment line; the markdown form is the bare table for embedding.
pub fn write_summary(table: &SummaryTable, format: SummaryFormat) -> Result<String, ReportError> {
    if table.rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    match format {
        SummaryFormat::Delimited => {
            let mut out = Vec::new();
            {
                use std::io::Write;
                writeln!(out, "# config_digest={}", table.config_digest).expect("vec write");
                let mut w = csv::Writer::from_writer(&mut out);
                w.write_record(SUMMARY_HEADER.split(',')).expect("vec write");
                for row in &table.rows {
                    w.write_record(row_cells(row)).expect("vec write");
                }
                w.flush().expect("vec write");
            }
            Ok(String::from_utf8(out).expect("rendered ascii"))
        }
        SummaryFormat::Markdown => {
            let mut out = String::new();
            writeln!(out, "| {} |", SUMMARY_HEADER.split(',').collect::<Vec<_>>().join(" | "))
                .expect("string write");
            writeln!(out, "|{}", "---|".repeat(10)).expect("string write");
            for row in &table.rows {
                writeln!(out, "| {} |", row_cells(row).join(" | ")).expect("string write");
            }
            Ok(out)
        }
    }
}

/// Parses the delimited summary form back into a table. Timestamps and the
/// tool version are not stored in the file, so they come back empty.
pub fn parse_summary(text: &str) -> Result<SummaryTable, ReportError> {
    let mut lines = text.splitn(2, '\n');
    let first = lines.next().unwrap_or("");
    let digest = first
        .strip_prefix("# config_digest=")
        .ok_or_else(|| ReportError::Malformed {
            line: 1,
            reason: "expected a \"# config_digest=\" line".to_string(),
        })?
        .trim_end_matches('\r')
        .to_string();
    let rest = lines.next().unwrap_or("");
    let mut reader = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ReportError::Malformed {
            line: 2,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let expected: Vec<&str> = SUMMARY_HEADER.split(',').collect();
    if headers != expected {
        return Err(ReportError::Malformed {
            line: 2,
            reason: format!("header {headers:?} does not match {expected:?}"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        // Positions count lines within `rest`; the digest line comes first.
        let record = record.map_err(|e| ReportError::Malformed {
            line: e.position().map(|p| p.line() + 1).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() + 1).unwrap_or(0);
        if record.len() != 10 {
            return Err(ReportError::Malformed {
                line,
                reason: format!("expected 10 fields, got {}", record.len()),
            });
        }
        let num = |idx: usize, name: &str| -> Result<f64, ReportError> {
            let raw = record.get(idx).unwrap_or("");
            let v: f64 = raw.parse().map_err(|e| ReportError::Malformed {
                line,
                reason: format!("{name} \"{raw}\": {e}"),
            })?;
            if !v.is_finite() {
                return Err(ReportError::Malformed {
                    line,
                    reason: format!("{name} \"{raw}\" is not finite"),
                });
            }
            Ok(v)
        };
        let significant = match record.get(9).unwrap_or("") {
            "significant" => true,
            "not_significant" => false,
            other => {
                return Err(ReportError::Malformed {
                    line,
                    reason: format!("decision must be significant or not_significant (got \"{other}\")"),
                })
            }
        };
        rows.push(SummaryRow {
            dataset: record.get(0).unwrap_or("").to_string(),
            scenario: record.get(1).unwrap_or("").to_string(),
            scenario_type: record.get(2).unwrap_or("").to_string(),
            delta_single: num(3, "delta_single")?,
            delta_paired: num(4, "delta_paired")?,
            ci_low: num(5, "ci_low")?,
            ci_high: num(6, "ci_high")?,
            p_perm: num(7, "p_perm")?,
            p_unpaired: num(8, "p_unpaired")?,
            significant,
        });
    }
    Ok(SummaryTable {
        rows,
        generated_at: String::new(),
        tool_version: String::new(),
        config_digest: digest,
    })
}

/// Effect-size plot data: one bar per row plus a zero-reference marker.
pub fn emit_effect_plot_data(table: &SummaryTable) -> Result<String, ReportError> {
    if table.rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let mut out = String::from("label,delta_paired,ci_low,ci_high\n");
    for row in &table.rows {
        writeln!(
            out,
            "{} {},{},{},{}",
            row.dataset,
            row.scenario,
            format_fixed(row.delta_paired),
            format_fixed(row.ci_low),
            format_fixed(row.ci_high)
        )
        .expect("string write");
    }
    out.push_str("zero_reference,0.00,0.00,0.00\n");
    Ok(out)
}

/// Paired-vs-unpaired p-value scatter data, excluding no-improve rows
/// (their p-values of 1.0 carry no information about the comparison). The
/// conventional 0.05 threshold line rides along as metadata.
pub fn emit_pvalue_scatter_data(table: &SummaryTable) -> Result<String, ReportError> {
    if table.rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let mut out = String::from("# threshold=0.05\ndataset,scenario,p_unpaired,p_perm\n");
    for row in table.rows.iter().filter(|r| r.scenario_type != "no-improve") {
        writeln!(
            out,
            "{},{},{},{}",
            row.dataset,
            row.scenario,
            format_p(row.p_unpaired),
            format_p(row.p_perm)
        )
        .expect("string write");
    }
    Ok(out)
}

/// File name for one learning-curve selection; anything outside
/// [A-Za-z0-9.-] becomes '_' so labels cannot escape the output directory.
pub fn curve_file_name(dataset: &str, scenario: &str) -> String {
    let sanitize = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect()
    };
    format!("fig_curves_{}_{}.csv", sanitize(dataset), sanitize(scenario))
}

/// Learning-curve plot data for one (dataset, scenario): every logged epoch
/// of every seed and arm, at full stored precision.
pub fn emit_learning_curve_data(
    epochs: &[EpochRecord],
    dataset: &str,
    scenario: &str,
) -> Result<String, ReportError> {
    let mut selected: Vec<&EpochRecord> = epochs
        .iter()
        .filter(|e| e.dataset == dataset && e.scenario == scenario)
        .collect();
    if selected.is_empty() {
        return Err(ReportError::NoData);
    }
    selected.sort_by_key(|e| (e.seed, e.arm, e.epoch));
    let mut out = String::from("seed,arm,epoch,value\n");
    for e in selected {
        writeln!(out, "{},{},{},{}", e.seed, e.arm, e.epoch, e.value).expect("string write");
    }
    Ok(out)
}

/// Per-seed final-epoch gap (variant minus baseline) for one (dataset,
/// scenario); equals the run-log delta when the two files are consistent.
pub fn final_epoch_gaps(
    epochs: &[EpochRecord],
    dataset: &str,
    scenario: &str,
) -> Result<Vec<(u64, f64)>, ReportError> {
    use std::collections::BTreeMap;
    let mut finals: BTreeMap<(u64, Arm), f64> = BTreeMap::new();
    for e in epochs.iter().filter(|e| e.dataset == dataset && e.scenario == scenario) {
        // Epoch logs are sorted, so the last write is the final epoch.
        finals.insert((e.seed, e.arm), e.value);
    }
    let mut gaps = Vec::new();
    for (&(seed, arm), &value) in &finals {
        if arm == Arm::Variant {
            if let Some(&base) = finals.get(&(seed, Arm::Baseline)) {
                gaps.push((seed, value - base));
            }
        }
    }
    if gaps.is_empty() {
        return Err(ReportError::NoData);
    }
    Ok(gaps)
}
