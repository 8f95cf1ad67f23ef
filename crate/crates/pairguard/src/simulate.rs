//! Monte Carlo laboratory for the evaluation schemes.
//!
//! Generates correlated paired run outcomes (X, Y) with known ground truth
//! and measures how often each evaluation scheme declares significance.
//! At true_delta = 0 that frequency is the false-positive rate; away from
//! zero it is power.
//!
//! The gaussian shape draws (X, Y) from the exact bivariate normal with
//! means (true_delta, 0), the configured sigmas, and correlation rho via
//! the Cholesky construction. The shifted_lognormal shape keeps Y gaussian
//! and replaces the variant margin with a lognormal transformed to the same
//! mean and variance:
//!
//!   W = (exp(s g) - exp(s^2/2)) / (exp(s^2/2) sqrt(exp(s^2) - 1)),  s = 0.6
//!
//! where g is standard normal, so E[W] = 0 and Var(W) = 1 but W is right
//! skewed. Corr(W, z) = rho requires Corr(g, z) = rho sqrt(exp(s^2)-1) / s,
//! which stays in [-1, 1] only for |rho| <= 0.911; scenarios beyond 0.91
//! are rejected rather than silently decorrelated.
//!
//! Determinism: every scenario derives three stream families keyed by a
//! digest of its parameters (draws, bootstrap seeds, permutation seeds) and
//! each trial uses substream(trial_index) of each, so results are bit-exact
//! regardless of how trials are scheduled across threads.

use crate::protocol::{decide, DecisionRule, PairedSample, ProtocolError, RuleMode, SeedPair};
use crate::resample::{bca_interval, sign_flip_test, BootstrapConfig, ResampleError, StreamFamily};
use crate::stat::{welch_t_test, StatError};
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("sweep grid has {cells} cells, cap is {cap}")]
    GridTooLarge { cells: usize, cap: usize },
    #[error("scenario file line {line}: {reason}")]
    ScenarioFile { line: usize, reason: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Stat(#[from] StatError),
}

/// Marginal shape of the variant outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseShape {
    #[default]
    Gaussian,
    ShiftedLognormal,
}

impl fmt::Display for NoiseShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseShape::Gaussian => "gaussian",
            NoiseShape::ShiftedLognormal => "shifted_lognormal",
        })
    }
}

impl FromStr for NoiseShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(NoiseShape::Gaussian),
            "shifted_lognormal" => Ok(NoiseShape::ShiftedLognormal),
            other => Err(format!(
                "shape must be one of gaussian, shifted_lognormal (got \"{other}\")"
            )),
        }
    }
}

/// One evaluation scheme applied inside each simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Declares improvement when one seed's delta exceeds a threshold.
    /// Has no error control at all; kept as the cautionary comparator.
    SingleRun,
    /// Two-sided Welch's t-test on the arms with pairing ignored.
    UnpairedWelch,
    /// BCa lower bound > 0 AND permutation p < alpha.
    PairedStrict,
    /// BCa lower bound > 0 OR permutation p < alpha.
    PairedLenient,
}

pub const ALL_SCHEMES: [Scheme; 4] = [
    Scheme::SingleRun,
    Scheme::UnpairedWelch,
    Scheme::PairedStrict,
    Scheme::PairedLenient,
];

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::SingleRun => "single_run",
            Scheme::UnpairedWelch => "unpaired_welch",
            Scheme::PairedStrict => "paired_strict",
            Scheme::PairedLenient => "paired_lenient",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_run" => Ok(Scheme::SingleRun),
            "unpaired_welch" => Ok(Scheme::UnpairedWelch),
            "paired_strict" => Ok(Scheme::PairedStrict),
            "paired_lenient" => Ok(Scheme::PairedLenient),
            other => Err(format!(
                "scheme must be one of single_run, unpaired_welch, paired_strict, paired_lenient (got \"{other}\")"
            )),
        }
    }
}

/// Largest |rho| the skewed margin can represent; see the module docs.
pub const MAX_LOGNORMAL_RHO: f64 = 0.91;

const LOGNORMAL_SIGMA: f64 = 0.6;

/// Ground-truth generator parameters for one simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub true_delta: f64,
    pub sigma_baseline: f64,
    pub sigma_variant: f64,
    pub rho: f64,
    /// Seeds (paired runs) per trial.
    pub k: u32,
    pub trials: u64,
    pub alpha: f64,
    pub master_seed: u64,
    pub delta_noise_shape: NoiseShape,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            true_delta: 0.0,
            sigma_baseline: 1.0,
            sigma_variant: 1.0,
            rho: 0.9,
            k: 5,
            trials: 1000,
            alpha: 0.05,
            master_seed: 42,
            delta_noise_shape: NoiseShape::Gaussian,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        if !self.true_delta.is_finite() {
            return bad(format!("true_delta {} is not finite", self.true_delta));
        }
        for (name, sigma) in [("sigma_baseline", self.sigma_baseline), ("sigma_variant", self.sigma_variant)] {
            if !sigma.is_finite() || sigma < 0.0 {
                return bad(format!("{name} must be finite and >= 0 (got {sigma})"));
            }
        }
        if !self.rho.is_finite() || self.rho.abs() > 1.0 {
            return bad(format!("rho must lie in [-1, 1] (got {})", self.rho));
        }
        if self.delta_noise_shape == NoiseShape::ShiftedLognormal && self.rho.abs() > MAX_LOGNORMAL_RHO {
            return bad(format!(
                "|rho| <= {MAX_LOGNORMAL_RHO} is the representable range for shifted_lognormal (got {})",
                self.rho
            ));
        }
        if self.k < 1 {
            return bad("k must be >= 1".to_string());
        }
        if self.trials < 1 {
            return bad("trials must be >= 1".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1) (got {})", self.alpha));
        }
        Ok(())
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.true_delta.to_bits().to_le_bytes());
        h.update(self.sigma_baseline.to_bits().to_le_bytes());
        h.update(self.sigma_variant.to_bits().to_le_bytes());
        h.update(self.rho.to_bits().to_le_bytes());
        h.update(u64::from(self.k).to_le_bytes());
        h.update(self.trials.to_le_bytes());
        h.update(self.alpha.to_bits().to_le_bytes());
        h.update(self.master_seed.to_le_bytes());
        h.update(self.delta_noise_shape.to_string().as_bytes());
        hex::encode(h.finalize())
    }
}

/// Measured behavior of one scheme under one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub scheme: Scheme,
    pub rejection_rate: f64,
    /// Mean BCa interval width across trials; None for schemes that do not
    /// build an interval.
    pub mean_ci_width: Option<f64>,
    pub trials: u64,
    pub standard_error: f64,
}

/// Inner-analysis knobs for the schemes run inside each trial. These trade
/// fidelity for trial throughput and are deliberately separate from the
/// scenario, which describes the world rather than the analyst.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerStudyConfig {
    /// Bootstrap replicates per trial (>= 100).
    pub bootstrap_replicates: u64,
    pub max_exhaustive_k: u32,
    pub permutation_draws: u64,
    /// The single-run scheme claims improvement when its one delta exceeds
    /// this margin.
    pub single_run_threshold: f64,
}

impl Default for PowerStudyConfig {
    fn default() -> Self {
        PowerStudyConfig {
            bootstrap_replicates: 1000,
            max_exhaustive_k: 20,
            permutation_draws: 999,
            single_run_threshold: 0.0,
        }
    }
}

fn standard_normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Draws one paired outcome (X, Y): variant and baseline metric for the
/// same seed. Means are (true_delta, 0), standard deviations the sigmas,
/// and Corr(X, Y) = rho, for both shapes. The scenario must be valid.
pub fn draw_paired_run<R: Rng>(scenario: &SimScenario, rng: &mut R) -> (f64, f64) {
    let (z1, z2) = standard_normal_pair(rng);
    let y = scenario.sigma_baseline * z1;
    let x = match scenario.delta_noise_shape {
        NoiseShape::Gaussian => {
            let mix = scenario.rho * z1 + (1.0 - scenario.rho * scenario.rho).sqrt() * z2;
            scenario.true_delta + scenario.sigma_variant * mix
        }
        NoiseShape::ShiftedLognormal => {
            let s = LOGNORMAL_SIGMA;
            let mean_ln = (s * s / 2.0).exp();
            let sd_ln = mean_ln * (s * s).exp_m1().sqrt();
            let rho_g = scenario.rho * (s * s).exp_m1().sqrt() / s;
            let g = rho_g * z1 + (1.0 - rho_g * rho_g).sqrt() * z2;
            let w = ((s * g).exp() - mean_ln) / sd_ln;
            scenario.true_delta + scenario.sigma_variant * w
        }
    };
    (x, y)
}

struct TrialOutcome {
    /// Bit i set when schemes[i] rejected.
    reject_mask: u8,
    ci_width: Option<f64>,
}

/// Runs `scenario.trials` simulated experiments and reports, per scheme,
/// how often it declared significance. Results are bit-exact for a given
/// scenario no matter how the trials are scheduled.
pub fn run_power_study(
    scenario: &SimScenario,
    schemes: &[Scheme],
    tuning: &PowerStudyConfig,
) -> Result<Vec<SimResult>, SimError> {
    scenario.validate()?;
    if schemes.is_empty() {
        return Ok(Vec::new());
    }
    let digest = scenario.digest();
    let draw_family = StreamFamily::new(scenario.master_seed, &format!("sim-draws:{digest}"));
    let boot_family = StreamFamily::new(scenario.master_seed, &format!("sim-boot:{digest}"));
    let perm_family = StreamFamily::new(scenario.master_seed, &format!("sim-perm:{digest}"));
    let needs_paired = schemes
        .iter()
        .any(|s| matches!(s, Scheme::PairedStrict | Scheme::PairedLenient));
    let needs_welch = schemes.iter().any(|s| matches!(s, Scheme::UnpairedWelch));

    let per_trial = |trial: u64| -> Result<TrialOutcome, SimError> {
        let mut rng = draw_family.substream(trial);
        let pairs: Vec<SeedPair> = (0..scenario.k)
            .map(|i| {
                let (x, y) = draw_paired_run(scenario, &mut rng);
                SeedPair {
                    seed: u64::from(i),
                    theta_variant: x,
                    theta_baseline: y,
                }
            })
            .collect();
        let sample = PairedSample::new("sim", "trial", "delta", pairs)?;
        let paired = if needs_paired {
            let boot_seed = boot_family.substream(trial).gen::<u64>();
            let perm_seed = perm_family.substream(trial).gen::<u64>();
            let interval = bca_interval(
                &sample,
                &BootstrapConfig {
                    replicates: tuning.bootstrap_replicates,
                    confidence_level: 1.0 - scenario.alpha,
                    master_seed: boot_seed,
                },
            )?;
            let permutation = sign_flip_test(
                &sample,
                tuning.max_exhaustive_k,
                tuning.permutation_draws,
                perm_seed,
            )?;
            Some((interval, permutation))
        } else {
            None
        };
        // An unpaired test needs at least two runs per arm; below that the
        // scheme simply never rejects.
        let welch_p = if needs_welch && scenario.k >= 2 {
            Some(welch_t_test(&sample.variant_values(), &sample.baseline_values())?.p_two_sided)
        } else {
            None
        };
        let mut reject_mask = 0u8;
        for (i, scheme) in schemes.iter().enumerate() {
            let reject = match scheme {
                Scheme::SingleRun => sample.deltas()[0] > tuning.single_run_threshold,
                Scheme::UnpairedWelch => welch_p.is_some_and(|p| p < scenario.alpha),
                Scheme::PairedStrict | Scheme::PairedLenient => {
                    let (interval, permutation) = paired.as_ref().expect("paired analysis ran");
                    let mode = if *scheme == Scheme::PairedStrict {
                        RuleMode::StrictAnd
                    } else {
                        RuleMode::LenientOr
                    };
                    let rule = DecisionRule {
                        alpha: scenario.alpha,
                        mode,
                    };
                    decide(interval.lower, permutation.p_two_sided, &rule).significant
                }
            };
            if reject {
                reject_mask |= 1 << i;
            }
        }
        Ok(TrialOutcome {
            reject_mask,
            ci_width: paired.as_ref().map(|(interval, _)| interval.width()),
        })
    };

    let outcomes: Vec<TrialOutcome> = (0..scenario.trials)
        .into_par_iter()
        .map(per_trial)
        .collect::<Result<_, _>>()?;

    // Sequential aggregation over the trial-ordered outcomes keeps the
    // width sum independent of thread scheduling.
    let mut counts = vec![0u64; schemes.len()];
    let mut width_sum = 0.0f64;
    for outcome in &outcomes {
        for (i, count) in counts.iter_mut().enumerate() {
            if outcome.reject_mask & (1 << i) != 0 {
                *count += 1;
            }
        }
        if let Some(w) = outcome.ci_width {
            width_sum += w;
        }
    }
    let trials = scenario.trials;
    Ok(schemes
        .iter()
        .zip(counts)
        .map(|(&scheme, count)| {
            let rate = count as f64 / trials as f64;
            let has_interval = matches!(scheme, Scheme::PairedStrict | Scheme::PairedLenient);
            SimResult {
                scheme,
                rejection_rate: rate,
                mean_ci_width: has_interval.then(|| width_sum / trials as f64),
                trials,
                standard_error: (rate * (1.0 - rate) / trials as f64).sqrt(),
            }
        })
        .collect())
}

/// Axes of a sweep; the cross product of the three lists is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub k: Vec<u32>,
    pub true_delta: Vec<f64>,
    pub rho: Vec<f64>,
}

pub const SWEEP_CELL_CAP: usize = 10_000;

/// One output row of a sweep: a grid point plus one scheme's measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: u32,
    pub true_delta: f64,
    pub rho: f64,
    pub shape: NoiseShape,
    pub scheme: Scheme,
    pub rejection_rate: f64,
    pub se: f64,
    pub trials: u64,
}

/// Evaluates every grid point with every scheme. All non-swept parameters
/// come from `base`; each cell gets its own derived streams, so the table
/// does not depend on evaluation order.
pub fn sweep(
    base: &SimScenario,
    grid: &SweepGrid,
    schemes: &[Scheme],
    tuning: &PowerStudyConfig,
) -> Result<Vec<SweepRow>, SimError> {
    if grid.k.is_empty() || grid.true_delta.is_empty() || grid.rho.is_empty() {
        return Err(SimError::InvalidScenario("sweep grid has an empty axis".to_string()));
    }
    let cells = grid.k.len() * grid.true_delta.len() * grid.rho.len();
    if cells > SWEEP_CELL_CAP {
        return Err(SimError::GridTooLarge {
            cells,
            cap: SWEEP_CELL_CAP,
        });
    }
    let mut rows = Vec::with_capacity(cells * schemes.len());
    for &k in &grid.k {
        for &true_delta in &grid.true_delta {
            for &rho in &grid.rho {
                let scenario = SimScenario {
                    k,
                    true_delta,
                    rho,
                    ..base.clone()
                };
                for result in run_power_study(&scenario, schemes, tuning)? {
                    rows.push(SweepRow {
                        k,
                        true_delta,
                        rho,
                        shape: scenario.delta_noise_shape,
                        scheme: result.scheme,
                        rejection_rate: result.rejection_rate,
                        se: result.standard_error,
                        trials: result.trials,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Writes sweep rows as a delimited plot-data table.
pub fn write_sweep_table<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "k,true_delta,rho,shape,scheme,rejection_rate,se,trials")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k, r.true_delta, r.rho, r.shape, r.scheme, r.rejection_rate, r.se, r.trials
        )?;
    }
    Ok(())
}

/// A parsed scenario file: the base scenario (first value of each swept
/// axis) plus the full grid and scheme list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub base: SimScenario,
    pub grid: SweepGrid,
    pub schemes: Vec<Scheme>,
}

const SCENARIO_KEYS: [&str; 10] = [
    "true_delta",
    "sigma_baseline",
    "sigma_variant",
    "rho",
    "k",
    "trials",
    "alpha",
    "master_seed",
    "delta_noise_shape",
    "schemes",
];

fn levenshtein(a: &str, b: &str) -> usize {
    let b_len = b.chars().count();
    let mut prev: Vec<usize> = (0..=b_len).collect();
    let mut cur = vec![0usize; b_len + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.chars().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b_len]
}

fn unknown_key_error(line: usize, key: &str) -> SimError {
    let nearest = SCENARIO_KEYS
        .iter()
        .map(|k| (levenshtein(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 3);
    let mut reason = match nearest {
        Some((_, suggestion)) => format!("unknown key \"{key}\" (did you mean \"{suggestion}\"?)"),
        None => format!("unknown key \"{key}\""),
    };
    reason.push_str(&format!("; valid keys: {}", SCENARIO_KEYS.join(", ")));
    SimError::ScenarioFile { line, reason }
}

fn parse_list<T: FromStr>(value: &str, key: &str, line: usize) -> Result<Vec<T>, SimError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            item.parse().map_err(|e| SimError::ScenarioFile {
                line,
                reason: format!("{key} \"{item}\": {e}"),
            })
        })
        .collect()
}

fn parse_one<T: FromStr>(value: &str, key: &str, line: usize) -> Result<T, SimError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| SimError::ScenarioFile {
        line,
        reason: format!("{key} \"{value}\": {e}"),
    })
}

/// Parses a flat key = value scenario file. `#` starts a comment; the keys
/// are the `SimScenario` field names, with `k`, `true_delta`, and `rho`
/// accepting comma lists (sweep axes) and `schemes` a comma list of scheme
/// names. Missing keys fall back to `SimScenario::default()` and all four
/// schemes.
pub fn parse_scenario_file(text: &str) -> Result<ScenarioFile, SimError> {
    let defaults = SimScenario::default();
    let mut k = vec![defaults.k];
    let mut true_delta = vec![defaults.true_delta];
    let mut rho = vec![defaults.rho];
    let mut base = defaults;
    let mut schemes = ALL_SCHEMES.to_vec();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(SimError::ScenarioFile {
                line,
                reason: format!("expected key = value (got \"{content}\")"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(SimError::ScenarioFile {
                line,
                reason: format!("key \"{key}\" has an empty value"),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(SimError::ScenarioFile {
                line,
                reason: format!("duplicate key \"{key}\""),
            });
        }
        match key {
            "true_delta" => true_delta = parse_list(value, key, line)?,
            "sigma_baseline" => base.sigma_baseline = parse_one(value, key, line)?,
            "sigma_variant" => base.sigma_variant = parse_one(value, key, line)?,
            "rho" => rho = parse_list(value, key, line)?,
            "k" => k = parse_list(value, key, line)?,
            "trials" => base.trials = parse_one(value, key, line)?,
            "alpha" => base.alpha = parse_one(value, key, line)?,
            "master_seed" => base.master_seed = parse_one(value, key, line)?,
            "delta_noise_shape" => base.delta_noise_shape = parse_one(value, key, line)?,
            "schemes" => schemes = parse_list(value, key, line)?,
            _ => return Err(unknown_key_error(line, key)),
        }
    }
    base.k = k[0];
    base.true_delta = true_delta[0];
    base.rho = rho[0];
    base.validate()?;
    Ok(ScenarioFile {
        base,
        grid: SweepGrid { k, true_delta, rho },
        schemes,
    })
}
