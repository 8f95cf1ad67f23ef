//! Command-line surface: `pairguard {evaluate, simulate, report, validate}`.
//!
//! Exit codes carry meaning for pipelines: 0 is success, 1 is a hard
//! failure (unreadable input, bad flags; diagnostic on stderr, never a
//! stack trace), 2 means the analysis ran but the data has findings such
//! as unpaired seeds (`--warn-only` downgrades that to 0).
//!
//! Output files are byte-identical across re-runs with the same inputs and
//! flags. Anything time-dependent goes to the `run_metadata.json` sidecar,
//! which also records every resolved setting, defaults included, and the
//! configuration digest embedded in the summary table.

use crate::ingest::{
    final_epoch_mismatches, parse_epoch_log, parse_run_log, validate_pairing, EpochRecord,
    PairingReport, RunRecord,
};
use crate::protocol::{
    build_paired_sample, compare_schemes, AnalysisConfig, DecisionRule, MetricDirection, RuleMode,
    ScenarioSummary,
};
use crate::report::{
    analysis_digest, curve_file_name, emit_effect_plot_data, emit_learning_curve_data,
    emit_pvalue_scatter_data, parse_summary, write_summary, SummaryFormat, SummaryTable,
};
use crate::resample::BootstrapConfig;
use crate::simulate::{parse_scenario_file, sweep, PowerStudyConfig, SweepRow};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "pairguard",
    version,
    about = "Paired multi-seed evaluation: per-seed deltas, BCa intervals, sign-flip permutation tests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate a run log group by group and write summary + figure data
    Evaluate(EvaluateArgs),
    /// Run Monte Carlo power studies from a scenario file
    Simulate(SimulateArgs),
    /// Re-render tables and figure data from a stored summary
    Report(ReportArgs),
    /// Check run-log pairing without evaluating
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleArg {
    /// Interval excludes zero AND permutation p < alpha
    Strict,
    /// Interval excludes zero OR permutation p < alpha
    Lenient,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatArg {
    Csv,
    Md,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Run log to evaluate
    #[arg(long)]
    pub input: PathBuf,
    /// Epoch log; adds learning-curve data files and a consistency check
    #[arg(long)]
    pub epochs: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
    /// Significance level; the interval level is 1 - alpha
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap replicates per group
    #[arg(long, default_value_t = 10_000)]
    pub bootstrap: u64,
    /// "exhaustive" or a Monte Carlo draw count; default enumerates up to
    /// k = 20 and samples 9999 draws beyond that
    #[arg(long)]
    pub perm: Option<String>,
    #[arg(long, value_enum, default_value_t = RuleArg::Strict)]
    pub rule: RuleArg,
    /// Master seed; PAIRGUARD_SEED applies when the flag is absent
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplies metric values on ingest (use 100 for fraction-valued logs)
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Seed shown in the single-run column; default is the lowest seed
    #[arg(long)]
    pub single_seed: Option<u64>,
    /// Summary format: summary.csv or summary.md
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Exit 0 even when the data has findings
    #[arg(long)]
    pub warn_only: bool,
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario file: flat `key = value` lines; k, true_delta, and rho
    /// accept comma lists and become sweep axes
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario file's alpha when given
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap replicates inside each trial
    #[arg(long, default_value_t = 10_000)]
    pub bootstrap: u64,
    /// "exhaustive" or a Monte Carlo draw count, for the in-trial test
    #[arg(long)]
    pub perm: Option<String>,
    /// Overrides the scenario file's master_seed when given (PAIRGUARD_SEED
    /// counts as given)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Margin the single-run scheme must beat to claim improvement
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Stored summary table (the delimited form written by evaluate)
    #[arg(long)]
    pub input: PathBuf,
    /// Epoch log for learning-curve data files
    #[arg(long)]
    pub epochs: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
    /// Multiplies epoch values on ingest
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Md)]
    pub format: FormatArg,
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Run log to check
    #[arg(long)]
    pub input: PathBuf,
    /// Epoch log; enables the cross-file consistency check
    #[arg(long)]
    pub epochs: Option<PathBuf>,
    /// Multiplies metric values on ingest
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Directory for the machine-readable pairing_report.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, short)]
    pub verbose: bool,
}

/// Parses argv and dispatches; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Report(args) => cmd_report(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PermMode {
    /// Enumerate up to k = 20, then 9999 Monte Carlo draws.
    Auto,
    /// Enumerate always; groups beyond k = 24 are refused.
    Exhaustive,
    MonteCarlo(u64),
}

impl PermMode {
    fn max_exhaustive_k(self) -> u32 {
        match self {
            PermMode::Auto => 20,
            PermMode::Exhaustive => 24,
            PermMode::MonteCarlo(_) => 0,
        }
    }

    fn draws(self) -> u64 {
        match self {
            PermMode::Auto | PermMode::Exhaustive => 9999,
            PermMode::MonteCarlo(n) => n,
        }
    }

    fn describe(self) -> String {
        match self {
            PermMode::Auto => "auto".to_string(),
            PermMode::Exhaustive => "exhaustive".to_string(),
            PermMode::MonteCarlo(n) => format!("monte_carlo:{n}"),
        }
    }
}

fn resolve_perm(flag: &Option<String>) -> Result<PermMode, String> {
    match flag.as_deref() {
        None => Ok(PermMode::Auto),
        Some("exhaustive") => Ok(PermMode::Exhaustive),
        Some(raw) => match raw.parse::<u64>() {
            Ok(n) if n >= 1 => Ok(PermMode::MonteCarlo(n)),
            _ => Err(format!(
                "--perm must be \"exhaustive\" or a positive draw count (got \"{raw}\")"
            )),
        },
    }
}

const DEFAULT_SEED: u64 = 42;

fn resolve_seed(flag: Option<u64>, env_value: Option<&str>) -> Result<(u64, bool), String> {
    if let Some(seed) = flag {
        return Ok((seed, true));
    }
    match env_value {
        Some(raw) => raw
            .trim()
            .parse()
            .map(|s| (s, true))
            .map_err(|_| format!("PAIRGUARD_SEED must be an unsigned integer (got \"{raw}\")")),
        None => Ok((DEFAULT_SEED, false)),
    }
}

fn seed_from_env(flag: Option<u64>) -> Result<(u64, bool), String> {
    let env_value = std::env::var("PAIRGUARD_SEED").ok();
    resolve_seed(flag, env_value.as_deref())
}

fn check_alpha(alpha: f64) -> Result<(), String> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(format!("--alpha must lie in (0, 1) (got {alpha})"))
    }
}

fn read_input(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn ensure_out_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn load_epochs(path: &Path, scale: f64, verbose: bool) -> Result<Vec<EpochRecord>, String> {
    let text = read_input(path)?;
    let log = parse_epoch_log(text.as_bytes(), scale).map_err(|e| format!("{}: {e}", path.display()))?;
    if verbose {
        for note in &log.notes {
            println!("note: {note}");
        }
    }
    Ok(log.records)
}

fn pairing_findings(report: &PairingReport) -> Vec<String> {
    let mut findings = Vec::new();
    for g in &report.groups {
        let key = format!("{}/{}/{}", g.dataset, g.scenario, g.metric_name);
        for seed in &g.unpaired_seeds {
            findings.push(format!("{key}: seed {seed} is missing its partner run"));
        }
        for seed in &g.duplicate_seeds {
            findings.push(format!("{key}: seed {seed} has duplicate runs for one arm"));
        }
    }
    findings
}

/// Writes the figure-data files shared by evaluate and report; returns the
/// file names written.
fn write_figures(
    table: &SummaryTable,
    epochs: Option<&[EpochRecord]>,
    out: &Path,
) -> Result<Vec<String>, String> {
    let mut written = Vec::new();
    let effect = emit_effect_plot_data(table).map_err(|e| e.to_string())?;
    write_output(out, "fig_effect_sizes.csv", &effect)?;
    written.push("fig_effect_sizes.csv".to_string());
    let scatter = emit_pvalue_scatter_data(table).map_err(|e| e.to_string())?;
    write_output(out, "fig_pvalues.csv", &scatter)?;
    written.push("fig_pvalues.csv".to_string());
    if let Some(records) = epochs {
        let selections: BTreeSet<(String, String)> = records
            .iter()
            .map(|e| (e.dataset.clone(), e.scenario.clone()))
            .collect();
        for (dataset, scenario) in selections {
            let name = curve_file_name(&dataset, &scenario);
            let data = emit_learning_curve_data(records, &dataset, &scenario)
                .map_err(|e| e.to_string())?;
            write_output(out, &name, &data)?;
            written.push(name);
        }
    }
    Ok(written)
}

fn write_metadata(out: &Path, body: serde_json::Value) -> Result<(), String> {
    let text = serde_json::to_string_pretty(&body).expect("metadata serializes");
    write_output(out, "run_metadata.json", &format!("{text}\n"))
}

fn evaluable_groups(
    records: &[RunRecord],
    report: &PairingReport,
    findings: &mut Vec<String>,
) -> Vec<(String, String, String, Vec<RunRecord>)> {
    let mut groups = Vec::new();
    for g in &report.groups {
        let key = format!("{}/{}/{}", g.dataset, g.scenario, g.metric_name);
        if g.complete_seeds.is_empty() {
            findings.push(format!("{key}: no complete seed pairs, skipped"));
            continue;
        }
        if g.complete_seeds.len() < 2 {
            findings.push(format!(
                "{key}: needs at least 2 paired seeds for the unpaired comparison, skipped"
            ));
            continue;
        }
        let complete: BTreeSet<u64> = g.complete_seeds.iter().copied().collect();
        let subset: Vec<RunRecord> = records
            .iter()
            .filter(|r| {
                r.dataset == g.dataset
                    && r.scenario == g.scenario
                    && r.metric_name == g.metric_name
                    && complete.contains(&r.seed)
            })
            .cloned()
            .collect();
        groups.push((g.dataset.clone(), g.scenario.clone(), g.metric_name.clone(), subset));
    }
    groups
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<i32, String> {
    check_alpha(args.alpha)?;
    let perm = resolve_perm(&args.perm)?;
    let (seed, _) = seed_from_env(args.seed)?;
    let text = read_input(&args.input)?;
    let log = parse_run_log(text.as_bytes(), args.scale)
        .map_err(|e| format!("{}: {e}", args.input.display()))?;
    if args.verbose {
        for note in &log.notes {
            println!("note: {note}");
        }
    }
    let pairing = validate_pairing(&log.records);
    let mut findings = pairing_findings(&pairing);

    let analysis = AnalysisConfig {
        bootstrap: BootstrapConfig {
            replicates: args.bootstrap,
            confidence_level: 1.0 - args.alpha,
            master_seed: seed,
        },
        max_exhaustive_k: perm.max_exhaustive_k(),
        permutation_draws: perm.draws(),
        rule: DecisionRule {
            alpha: args.alpha,
            mode: match args.rule {
                RuleArg::Strict => RuleMode::StrictAnd,
                RuleArg::Lenient => RuleMode::LenientOr,
            },
        },
        single_seed: args.single_seed,
        independent_arms: None,
    };

    let mut rows: Vec<ScenarioSummary> = Vec::new();
    for (dataset, scenario, metric, subset) in
        evaluable_groups(&log.records, &pairing, &mut findings)
    {
        let sample = build_paired_sample(
            &subset,
            &dataset,
            &scenario,
            &metric,
            MetricDirection::HigherIsBetter,
        )
        .map_err(|e| format!("{dataset}/{scenario}/{metric}: {e}"))?;
        if perm == PermMode::Exhaustive && sample.k() > 24 {
            return Err(format!(
                "{dataset}/{scenario}/{metric}: k = {} exceeds the exhaustive enumeration cap of 24; \
                 use --perm with a draw count",
                sample.k()
            ));
        }
        let row = compare_schemes(&sample, &analysis)
            .map_err(|e| format!("{dataset}/{scenario}/{metric}: {e}"))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format!(
            "{}: no evaluable groups (every group was skipped or empty)",
            args.input.display()
        ));
    }

    let epochs = match &args.epochs {
        Some(path) => {
            let records = load_epochs(path, args.scale, args.verbose)?;
            findings.extend(final_epoch_mismatches(&log.records, &records, 1e-9));
            Some(records)
        }
        None => None,
    };

    let digest = analysis_digest(&analysis);
    let generated_at = unix_now().to_string();
    let table = SummaryTable::from_summaries(
        rows,
        env!("CARGO_PKG_VERSION"),
        &digest,
        &generated_at,
    );

    ensure_out_dir(&args.out)?;
    let (summary_name, format) = match args.format {
        FormatArg::Csv => ("summary.csv", SummaryFormat::Delimited),
        FormatArg::Md => ("summary.md", SummaryFormat::Markdown),
    };
    let rendered = write_summary(&table, format).map_err(|e| e.to_string())?;
    write_output(&args.out, summary_name, &rendered)?;
    let mut written = vec![summary_name.to_string()];
    written.extend(write_figures(&table, epochs.as_deref(), &args.out)?);

    write_metadata(
        &args.out,
        serde_json::json!({
            "subcommand": "evaluate",
            "tool_version": env!("CARGO_PKG_VERSION"),
            "generated_at_unix": generated_at,
            "config_digest": digest,
            "settings": {
                "input": args.input.display().to_string(),
                "epochs": args.epochs.as_ref().map(|p| p.display().to_string()),
                "out": args.out.display().to_string(),
                "alpha": args.alpha,
                "bootstrap": args.bootstrap,
                "perm": perm.describe(),
                "rule": match args.rule { RuleArg::Strict => "strict", RuleArg::Lenient => "lenient" },
                "seed": seed,
                "scale": args.scale,
                "single_seed": args.single_seed,
                "format": match args.format { FormatArg::Csv => "csv", FormatArg::Md => "md" },
                "warn_only": args.warn_only,
            },
            "findings": findings,
        }),
    )?;

    for finding in &findings {
        println!("finding: {finding}");
    }
    let significant = table.rows.iter().filter(|r| r.significant).count();
    println!(
        "evaluated {} groups, {significant} significant; wrote {} to {}",
        table.rows.len(),
        written.join(", "),
        args.out.display()
    );
    if findings.is_empty() || args.warn_only {
        Ok(0)
    } else {
        Ok(2)
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, String> {
    let perm = resolve_perm(&args.perm)?;
    let text = read_input(&args.scenario)?;
    let parsed = parse_scenario_file(&text).map_err(|e| format!("{}: {e}", args.scenario.display()))?;
    let mut base = parsed.base;
    if let Some(alpha) = args.alpha {
        check_alpha(alpha)?;
        base.alpha = alpha;
    }
    let (seed, explicit) = seed_from_env(args.seed)?;
    if explicit {
        base.master_seed = seed;
    }
    let tuning = PowerStudyConfig {
        bootstrap_replicates: args.bootstrap,
        max_exhaustive_k: perm.max_exhaustive_k(),
        permutation_draws: perm.draws(),
        single_run_threshold: args.threshold,
    };
    let rows: Vec<SweepRow> = sweep(&base, &parsed.grid, &parsed.schemes, &tuning)
        .map_err(|e| format!("{}: {e}", args.scenario.display()))?;

    for row in &rows {
        let rejections = (row.rejection_rate * row.trials as f64).round() as u64;
        println!(
            "k={} true_delta={} rho={} shape={} {} rejections: {}/{}",
            row.k, row.true_delta, row.rho, row.shape, row.scheme, rejections, row.trials
        );
    }

    ensure_out_dir(&args.out)?;
    let mut buf = Vec::new();
    crate::simulate::write_sweep_table(&mut buf, &rows).map_err(|e| e.to_string())?;
    write_output(&args.out, "sweep.csv", &String::from_utf8(buf).expect("ascii table"))?;
    write_metadata(
        &args.out,
        serde_json::json!({
            "subcommand": "simulate",
            "tool_version": env!("CARGO_PKG_VERSION"),
            "generated_at_unix": unix_now().to_string(),
            "settings": {
                "scenario": args.scenario.display().to_string(),
                "out": args.out.display().to_string(),
                "alpha": base.alpha,
                "bootstrap": args.bootstrap,
                "perm": perm.describe(),
                "seed": base.master_seed,
                "threshold": args.threshold,
                "trials": base.trials,
                "sigma_baseline": base.sigma_baseline,
                "sigma_variant": base.sigma_variant,
                "shape": base.delta_noise_shape.to_string(),
                "schemes": parsed.schemes.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "grid_k": parsed.grid.k,
                "grid_true_delta": parsed.grid.true_delta,
                "grid_rho": parsed.grid.rho,
            },
        }),
    )?;
    println!("wrote sweep.csv to {}", args.out.display());
    Ok(0)
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32, String> {
    let text = read_input(&args.input)?;
    let table = parse_summary(&text).map_err(|e| format!("{}: {e}", args.input.display()))?;
    if table.rows.is_empty() {
        return Err(format!("{}: summary has no rows", args.input.display()));
    }
    let epochs = match &args.epochs {
        Some(path) => Some(load_epochs(path, args.scale, args.verbose)?),
        None => None,
    };
    ensure_out_dir(&args.out)?;
    let (summary_name, format) = match args.format {
        FormatArg::Csv => ("summary.csv", SummaryFormat::Delimited),
        FormatArg::Md => ("summary.md", SummaryFormat::Markdown),
    };
    let rendered = write_summary(&table, format).map_err(|e| e.to_string())?;
    write_output(&args.out, summary_name, &rendered)?;
    let mut written = vec![summary_name.to_string()];
    written.extend(write_figures(&table, epochs.as_deref(), &args.out)?);
    write_metadata(
        &args.out,
        serde_json::json!({
            "subcommand": "report",
            "tool_version": env!("CARGO_PKG_VERSION"),
            "generated_at_unix": unix_now().to_string(),
            "config_digest": table.config_digest,
            "settings": {
                "input": args.input.display().to_string(),
                "epochs": args.epochs.as_ref().map(|p| p.display().to_string()),
                "out": args.out.display().to_string(),
                "scale": args.scale,
                "format": match args.format { FormatArg::Csv => "csv", FormatArg::Md => "md" },
            },
            "note": "rendered from stored summary; statistics unchanged",
        }),
    )?;
    println!(
        "rendered {} rows; wrote {} to {}",
        table.rows.len(),
        written.join(", "),
        args.out.display()
    );
    Ok(0)
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<i32, String> {
    let text = read_input(&args.input)?;
    let log = parse_run_log(text.as_bytes(), args.scale)
        .map_err(|e| format!("{}: {e}", args.input.display()))?;
    if args.verbose {
        for note in &log.notes {
            println!("note: {note}");
        }
    }
    let report = validate_pairing(&log.records);
    let mut findings = pairing_findings(&report);
    for g in &report.groups {
        println!(
            "{}/{}/{}: {} seeds paired, {} issues",
            g.dataset,
            g.scenario,
            g.metric_name,
            g.complete_seeds.len(),
            g.unpaired_seeds.len() + g.duplicate_seeds.len()
        );
    }
    if let Some(path) = &args.epochs {
        let records = load_epochs(path, args.scale, args.verbose)?;
        findings.extend(final_epoch_mismatches(&log.records, &records, 1e-9));
    }
    for finding in &findings {
        println!("finding: {finding}");
    }
    let paired: usize = report.groups.iter().map(|g| g.complete_seeds.len()).sum();
    println!("{paired} seeds paired, {} issues", findings.len());
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        let body = serde_json::to_string_pretty(&report).expect("report serializes");
        write_output(out, "pairing_report.json", &format!("{body}\n"))?;
    }
    Ok(if findings.is_empty() { 0 } else { 2 })
}
