//! Pairing of runs by seed, the evaluation schemes, and the decision rule.
//!
//! A `PairedSample` holds one variant run and one baseline run per seed for
//! a single (dataset, scenario, metric) group; the per-seed deltas drive
//! every paired analysis. Three schemes are compared side by side:
//!
//! - single run: the delta of one seed, no uncertainty at all;
//! - unpaired: Welch's t-test on the two arms, pairing ignored;
//! - paired: BCa interval plus sign-flip permutation test on the deltas.
//!
//! The strict rule declares significance only when the interval excludes
//! zero AND the permutation p-value beats alpha. The lenient variant
//! accepts either. Strict can never flag a row the lenient rule would not.

use crate::ingest::{Arm, RunRecord};
use crate::resample::{bca_interval, sign_flip_test, BCaInterval, BootstrapConfig, PermutationResult, ResampleError};
use crate::stat::{welch_t_test, StatError, WelchResult};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("seed {0} is missing its partner run")]
    UnpairedSeed(u64),
    #[error("duplicate record for seed {seed}, arm {arm}")]
    DuplicateRecord { seed: u64, arm: Arm },
    #[error("no records for group {0}")]
    NoRecords(String),
    #[error("seed {0} not present in the sample")]
    SeedNotFound(u64),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

/// One seed's pair of runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedPair {
    pub seed: u64,
    pub theta_variant: f64,
    pub theta_baseline: f64,
}

/// Which direction counts as an improvement for a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricDirection {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

/// Complete paired runs for one (dataset, scenario, metric) group.
///
/// Pairs are sorted by seed and seeds are unique. For higher-is-better
/// metrics deltas[i] is exactly theta_variant[i] - theta_baseline[i];
/// lower-is-better metrics flip the subtraction so a positive delta always
/// means the variant improved.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub dataset: String,
    pub scenario: String,
    pub metric_name: String,
    direction: MetricDirection,
    pairs: Vec<SeedPair>,
    deltas: Vec<f64>,
}

impl PairedSample {
    pub fn new(
        dataset: &str,
        scenario: &str,
        metric_name: &str,
        pairs: Vec<SeedPair>,
    ) -> Result<Self, ProtocolError> {
        Self::with_direction(dataset, scenario, metric_name, pairs, MetricDirection::default())
    }

    pub fn with_direction(
        dataset: &str,
        scenario: &str,
        metric_name: &str,
        mut pairs: Vec<SeedPair>,
        direction: MetricDirection,
    ) -> Result<Self, ProtocolError> {
        if pairs.is_empty() {
            return Err(ProtocolError::NoRecords(format!(
                "{dataset}/{scenario}/{metric_name}"
            )));
        }
        pairs.sort_by_key(|p| p.seed);
        for w in pairs.windows(2) {
            if w[0].seed == w[1].seed {
                return Err(ProtocolError::DuplicateRecord {
                    seed: w[1].seed,
                    arm: Arm::Variant,
                });
            }
        }
        if pairs
            .iter()
            .any(|p| !p.theta_variant.is_finite() || !p.theta_baseline.is_finite())
        {
            return Err(ProtocolError::Stat(StatError::NonFiniteValue));
        }
        let deltas = pairs
            .iter()
            .map(|p| match direction {
                MetricDirection::HigherIsBetter => p.theta_variant - p.theta_baseline,
                MetricDirection::LowerIsBetter => p.theta_baseline - p.theta_variant,
            })
            .collect();
        Ok(PairedSample {
            dataset: dataset.to_string(),
            scenario: scenario.to_string(),
            metric_name: metric_name.to_string(),
            direction,
            pairs,
            deltas,
        })
    }

    pub fn pairs(&self) -> &[SeedPair] {
        &self.pairs
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    pub fn direction(&self) -> MetricDirection {
        self.direction
    }

    pub fn mean_delta(&self) -> f64 {
        self.deltas.iter().sum::<f64>() / self.deltas.len() as f64
    }

    pub fn variant_values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.theta_variant).collect()
    }

    pub fn baseline_values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.theta_baseline).collect()
    }

    /// RNG stream label scoping a resampling purpose to this group.
    pub fn stream_label(&self, purpose: &str) -> String {
        format!(
            "{purpose}:{}:{}:{}",
            self.dataset, self.scenario, self.metric_name
        )
    }
}

/// How strictly to combine the interval check and the permutation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RuleMode {
    /// Significant only if the interval excludes zero AND p < alpha.
    #[default]
    StrictAnd,
    /// Significant if the interval excludes zero OR p < alpha.
    LenientOr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRule {
    pub alpha: f64,
    pub mode: RuleMode,
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule {
            alpha: 0.05,
            mode: RuleMode::StrictAnd,
        }
    }
}

/// Outcome of applying a [`DecisionRule`], with one reason per check.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationDecision {
    pub significant: bool,
    pub reasons: Vec<String>,
    pub rule: DecisionRule,
}

/// Applies the decision rule to an interval lower bound and a permutation
/// p-value. Pure: the result depends on nothing else, so a stored summary
/// row can reproduce its decision exactly.
pub fn decide(ci_lower: f64, p_perm: f64, rule: &DecisionRule) -> EvaluationDecision {
    let ci_pass = ci_lower > 0.0;
    let p_pass = p_perm < rule.alpha;
    let reasons = vec![
        if ci_pass {
            format!("ci_low {ci_lower:.4} > 0")
        } else {
            format!("ci_low {ci_lower:.4} <= 0")
        },
        if p_pass {
            format!("p_perm {p_perm:.4} < alpha {}", rule.alpha)
        } else {
            format!("p_perm {p_perm:.4} >= alpha {}", rule.alpha)
        },
    ];
    let significant = match rule.mode {
        RuleMode::StrictAnd => ci_pass && p_pass,
        RuleMode::LenientOr => ci_pass || p_pass,
    };
    EvaluationDecision {
        significant,
        reasons,
        rule: *rule,
    }
}

/// Settings shared by one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub bootstrap: BootstrapConfig,
    /// Enumerate all sign assignments while 2^k <= 2^max_exhaustive_k.
    pub max_exhaustive_k: u32,
    /// Monte Carlo permutation draws beyond the exhaustive range.
    pub permutation_draws: u64,
    pub rule: DecisionRule,
    /// Seed for the single-run scheme; lowest seed when absent.
    pub single_seed: Option<u64>,
    /// Genuinely independent arm values for the unpaired scheme. When
    /// absent the paired arms are reused with pairing ignored.
    pub independent_arms: Option<IndependentArms>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndependentArms {
    pub baseline: Vec<f64>,
    pub variant: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bootstrap: BootstrapConfig::default(),
            max_exhaustive_k: 20,
            permutation_draws: 9999,
            rule: DecisionRule::default(),
            single_seed: None,
            independent_arms: None,
        }
    }
}

/// Paired-scheme evaluation of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEvaluation {
    pub delta_paired: f64,
    pub interval: BCaInterval,
    pub permutation: PermutationResult,
    pub decision: EvaluationDecision,
}

/// Unpaired-scheme evaluation; delta and t follow the variant-minus-
/// baseline convention.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedEvaluation {
    pub delta_unpaired: f64,
    pub welch: WelchResult,
}

/// One row of the final comparison, spanning all three schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub dataset: String,
    pub scenario: String,
    pub scenario_type: String,
    /// Internal grouping key; the rendered table has no metric column.
    pub metric_name: String,
    pub delta_single: f64,
    pub delta_paired: f64,
    pub ci: BCaInterval,
    pub p_perm: f64,
    pub p_unpaired: f64,
    pub decision: EvaluationDecision,
}

/// Builds the paired sample for one (dataset, scenario, metric) group.
///
/// Every seed present must carry exactly one baseline and one variant
/// record; anything else is an error naming the offending seed.
pub fn build_paired_sample(
    records: &[RunRecord],
    dataset: &str,
    scenario: &str,
    metric: &str,
    direction: MetricDirection,
) -> Result<PairedSample, ProtocolError> {
    let mut by_seed: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in records {
        if r.dataset != dataset || r.scenario != scenario || r.metric_name != metric {
            continue;
        }
        let slot = by_seed.entry(r.seed).or_default();
        let cell = match r.arm {
            Arm::Variant => &mut slot.0,
            Arm::Baseline => &mut slot.1,
        };
        if cell.replace(r.value).is_some() {
            return Err(ProtocolError::DuplicateRecord {
                seed: r.seed,
                arm: r.arm,
            });
        }
    }
    if by_seed.is_empty() {
        return Err(ProtocolError::NoRecords(format!("{dataset}/{scenario}/{metric}")));
    }
    let mut pairs = Vec::with_capacity(by_seed.len());
    for (seed, (variant, baseline)) in by_seed {
        match (variant, baseline) {
            (Some(v), Some(b)) => pairs.push(SeedPair {
                seed,
                theta_variant: v,
                theta_baseline: b,
            }),
            _ => return Err(ProtocolError::UnpairedSeed(seed)),
        }
    }
    PairedSample::with_direction(dataset, scenario, metric, pairs, direction)
}

/// Delta of a single run pair: the lowest seed by default, or a chosen one.
pub fn single_run_delta(sample: &PairedSample, chosen_seed: Option<u64>) -> Result<f64, ProtocolError> {
    match chosen_seed {
        None => Ok(sample.deltas()[0]),
        Some(seed) => sample
            .pairs()
            .iter()
            .position(|p| p.seed == seed)
            .map(|i| sample.deltas()[i])
            .ok_or(ProtocolError::SeedNotFound(seed)),
    }
}

/// Full paired evaluation: BCa interval, sign-flip test, decision.
pub fn evaluate_paired(sample: &PairedSample, analysis: &AnalysisConfig) -> Result<PairedEvaluation, ProtocolError> {
    let interval = bca_interval(sample, &analysis.bootstrap)?;
    let permutation = sign_flip_test(
        sample,
        analysis.max_exhaustive_k,
        analysis.permutation_draws,
        analysis.bootstrap.master_seed,
    )?;
    let decision = decide(interval.lower, permutation.p_two_sided, &analysis.rule);
    Ok(PairedEvaluation {
        delta_paired: interval.point_estimate,
        interval,
        permutation,
        decision,
    })
}

/// Unpaired comparison of the two arms via Welch's t-test.
pub fn evaluate_unpaired(baseline_values: &[f64], variant_values: &[f64]) -> Result<UnpairedEvaluation, ProtocolError> {
    let welch = welch_t_test(variant_values, baseline_values)?;
    Ok(UnpairedEvaluation {
        delta_unpaired: welch.group_a.mean - welch.group_b.mean,
        welch,
    })
}

/// Conventional type label for the shipped scenario names.
pub fn scenario_type_label(scenario: &str) -> &'static str {
    match scenario {
        "S0" => "no-improve",
        "S1" => "small gain",
        "S2" => "medium gain",
        _ => "-",
    }
}

/// Runs all three schemes on one group and assembles the summary row.
///
/// The unpaired scheme reuses the paired arms with pairing ignored unless
/// `analysis.independent_arms` supplies genuinely independent runs.
pub fn compare_schemes(sample: &PairedSample, analysis: &AnalysisConfig) -> Result<ScenarioSummary, ProtocolError> {
    let delta_single = single_run_delta(sample, analysis.single_seed)?;
    let paired = evaluate_paired(sample, analysis)?;
    let (baseline, variant) = match &analysis.independent_arms {
        Some(arms) => (arms.baseline.clone(), arms.variant.clone()),
        None => (sample.baseline_values(), sample.variant_values()),
    };
    let unpaired = evaluate_unpaired(&baseline, &variant)?;
    Ok(ScenarioSummary {
        dataset: sample.dataset.clone(),
        scenario: sample.scenario.clone(),
        scenario_type: scenario_type_label(&sample.scenario).to_string(),
        metric_name: sample.metric_name.clone(),
        delta_single,
        delta_paired: paired.delta_paired,
        ci: paired.interval,
        p_perm: paired.permutation.p_two_sided,
        p_unpaired: unpaired.welch.p_two_sided,
        decision: paired.decision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(dataset: &str, scenario: &str, seed: u64, arm: Arm, value: f64) -> RunRecord {
        RunRecord {
            dataset: dataset.into(),
            scenario: scenario.into(),
            seed,
            arm,
            metric_name: "accuracy".into(),
            value,
            meta: None,
        }
    }

    fn sample_from_deltas(deltas: &[f64]) -> PairedSample {
        let pairs = deltas
            .iter()
            .enumerate()
            .map(|(i, d)| SeedPair {
                seed: i as u64,
                theta_variant: *d,
                theta_baseline: 0.0,
            })
            .collect();
        PairedSample::new("ds", "sc", "accuracy", pairs).unwrap()
    }

    #[test]
    fn build_pairs_and_sorts_by_seed() {
        let records = vec![
            record("c10", "S1", 3, Arm::Variant, 91.5),
            record("c10", "S1", 1, Arm::Baseline, 90.0),
            record("c10", "S1", 3, Arm::Baseline, 90.5),
            record("c10", "S1", 1, Arm::Variant, 91.0),
        ];
        let s = build_paired_sample(&records, "c10", "S1", "accuracy", MetricDirection::HigherIsBetter).unwrap();
        assert_eq!(s.k(), 2);
        assert_eq!(s.pairs()[0].seed, 1);
        assert_eq!(s.pairs()[1].seed, 3);
        assert_eq!(s.deltas()[0], 91.0 - 90.0);
        assert_eq!(s.deltas()[1], 91.5 - 90.5);
    }

    #[test]
    fn build_is_order_independent() {
        let mut records = vec![
            record("c10", "S1", 1, Arm::Baseline, 90.0),
            record("c10", "S1", 1, Arm::Variant, 91.0),
            record("c10", "S1", 2, Arm::Baseline, 89.0),
            record("c10", "S1", 2, Arm::Variant, 89.5),
            record("c10", "S1", 3, Arm::Baseline, 90.4),
            record("c10", "S1", 3, Arm::Variant, 90.4),
        ];
        let a = build_paired_sample(&records, "c10", "S1", "accuracy", MetricDirection::HigherIsBetter).unwrap();
        records.reverse();
        records.swap(0, 3);
        let b = build_paired_sample(&records, "c10", "S1", "accuracy", MetricDirection::HigherIsBetter).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_reports_unpaired_seed() {
        let records = vec![
            record("c10", "S1", 1, Arm::Baseline, 90.0),
            record("c10", "S1", 1, Arm::Variant, 91.0),
            record("c10", "S1", 3, Arm::Baseline, 90.0),
        ];
        assert_eq!(
            build_paired_sample(&records, "c10", "S1", "accuracy", MetricDirection::HigherIsBetter),
            Err(ProtocolError::UnpairedSeed(3))
        );
    }

    #[test]
    fn build_reports_duplicates_and_empty_groups() {
        let records = vec![
            record("c10", "S1", 1, Arm::Variant, 90.0),
            record("c10", "S1", 1, Arm::Variant, 91.0),
        ];
        assert_eq!(
            build_paired_sample(&records, "c10", "S1", "accuracy", MetricDirection::HigherIsBetter),
            Err(ProtocolError::DuplicateRecord { seed: 1, arm: Arm::Variant })
        );
        assert!(matches!(
            build_paired_sample(&records, "c10", "S9", "accuracy", MetricDirection::HigherIsBetter),
            Err(ProtocolError::NoRecords(_))
        ));
    }

    #[test]
    fn lower_is_better_flips_deltas() {
        let pairs = vec![SeedPair { seed: 1, theta_variant: 0.8, theta_baseline: 1.0 }];
        let s = PairedSample::with_direction("d", "s", "loss", pairs, MetricDirection::LowerIsBetter).unwrap();
        assert_eq!(s.deltas()[0], 1.0 - 0.8);
    }

    #[test]
    fn single_run_uses_lowest_seed_or_override() {
        let pairs = vec![
            SeedPair { seed: 9, theta_variant: 3.0, theta_baseline: 1.0 },
            SeedPair { seed: 2, theta_variant: 5.0, theta_baseline: 1.0 },
        ];
        let s = PairedSample::new("d", "s", "m", pairs).unwrap();
        assert_eq!(single_run_delta(&s, None).unwrap(), 4.0);
        assert_eq!(single_run_delta(&s, Some(9)).unwrap(), 2.0);
        assert_eq!(single_run_delta(&s, Some(4)), Err(ProtocolError::SeedNotFound(4)));
    }

    #[test]
    fn decision_rule_truth_table() {
        let strict = DecisionRule { alpha: 0.05, mode: RuleMode::StrictAnd };
        let lenient = DecisionRule { alpha: 0.05, mode: RuleMode::LenientOr };
        // (ci_low, p, strict, lenient)
        let cases = [
            (0.4, 0.01, true, true),
            (0.4, 0.25, false, true),
            (-0.1, 0.01, false, true),
            (-0.1, 0.25, false, false),
            (0.0, 0.01, false, true),
        ];
        for (lo, p, want_strict, want_lenient) in cases {
            assert_eq!(decide(lo, p, &strict).significant, want_strict, "strict {lo} {p}");
            assert_eq!(decide(lo, p, &lenient).significant, want_lenient, "lenient {lo} {p}");
        }
    }

    #[test]
    fn identical_arms_are_exactly_null() {
        // Zero tolerance: equal runs must yield literal zeros, a degenerate
        // interval, and p = 1 on both tests.
        let records: Vec<RunRecord> = (1..=3)
            .flat_map(|seed| {
                [
                    record("d", "S0", seed, Arm::Baseline, 90.0 + seed as f64 * 0.1),
                    record("d", "S0", seed, Arm::Variant, 90.0 + seed as f64 * 0.1),
                ]
            })
            .collect();
        let sample = build_paired_sample(&records, "d", "S0", "accuracy", MetricDirection::HigherIsBetter).unwrap();
        let analysis = AnalysisConfig::default();
        let row = compare_schemes(&sample, &analysis).unwrap();
        assert_eq!(row.delta_single, 0.0);
        assert_eq!(row.delta_paired, 0.0);
        assert_eq!((row.ci.lower, row.ci.upper), (0.0, 0.0));
        assert!(row.ci.degenerate);
        assert_eq!(row.p_perm, 1.0);
        assert_eq!(row.p_unpaired, 1.0);
        assert!(!row.decision.significant);
    }

    #[test]
    fn paired_and_unpaired_point_estimates_agree() {
        let pairs = vec![
            SeedPair { seed: 1, theta_variant: 90.5, theta_baseline: 90.0 },
            SeedPair { seed: 2, theta_variant: 91.5, theta_baseline: 90.5 },
            SeedPair { seed: 3, theta_variant: 92.5, theta_baseline: 91.0 },
        ];
        let s = PairedSample::new("d", "S1", "accuracy", pairs).unwrap();
        let unpaired = evaluate_unpaired(&s.baseline_values(), &s.variant_values()).unwrap();
        assert!((s.mean_delta() - unpaired.delta_unpaired).abs() < 1e-12);
    }

    #[test]
    fn compare_schemes_assembles_row() {
        let pairs = vec![
            SeedPair { seed: 1, theta_variant: 90.46, theta_baseline: 90.0 },
            SeedPair { seed: 2, theta_variant: 91.14, theta_baseline: 90.5 },
            SeedPair { seed: 3, theta_variant: 91.82, theta_baseline: 91.0 },
        ];
        let s = PairedSample::new("agn", "S1", "accuracy", pairs).unwrap();
        let row = compare_schemes(&s, &AnalysisConfig::default()).unwrap();
        assert_eq!(row.scenario_type, "small gain");
        assert!((row.delta_paired - 0.64).abs() < 1e-9);
        assert_eq!(row.p_perm, 0.25);
        assert!(!row.decision.significant);
        assert!(row.ci.lower <= row.delta_paired && row.delta_paired <= row.ci.upper);
    }

    #[test]
    fn independent_arms_override_unpaired_test() {
        let s = sample_from_deltas(&[0.5, 1.0, 1.5]);
        let analysis = AnalysisConfig {
            independent_arms: Some(IndependentArms {
                baseline: vec![10.0, 11.0, 12.0],
                variant: vec![10.1, 11.1, 12.1],
            }),
            ..AnalysisConfig::default()
        };
        let row = compare_schemes(&s, &analysis).unwrap();
        let direct = evaluate_unpaired(&[10.0, 11.0, 12.0], &[10.1, 11.1, 12.1]).unwrap();
        assert_eq!(row.p_unpaired, direct.welch.p_two_sided);
    }

    proptest! {
        #[test]
        fn strict_never_fires_without_lenient(lo in -1.0f64..1.0, p in 0.0001f64..1.0) {
            let strict = decide(lo, p, &DecisionRule { alpha: 0.05, mode: RuleMode::StrictAnd });
            let lenient = decide(lo, p, &DecisionRule { alpha: 0.05, mode: RuleMode::LenientOr });
            prop_assert!(!strict.significant || lenient.significant);
        }

        #[test]
        fn three_seeds_never_reach_significance(
            magnitudes in proptest::collection::vec(0.01f64..50.0, 3),
            negative in any::<bool>(),
        ) {
            // The exhaustive sign-flip floor at k = 3 is 2/8 = 0.25, which
            // can never beat alpha = 0.05, so the strict rule cannot fire
            // no matter how large the deltas are.
            let deltas: Vec<f64> = magnitudes.iter().map(|m| if negative { -m } else { *m }).collect();
            let sample = sample_from_deltas(&deltas);
            let analysis = AnalysisConfig {
                bootstrap: BootstrapConfig { replicates: 200, ..BootstrapConfig::default() },
                ..AnalysisConfig::default()
            };
            let eval = evaluate_paired(&sample, &analysis).unwrap();
            prop_assert!(!eval.decision.significant);
            prop_assert!(eval.permutation.p_two_sided >= 0.25);
        }

        #[test]
        fn paired_mean_matches_arm_mean_difference(
            baselines in proptest::collection::vec(50.0f64..99.0, 2..7),
            bumps in proptest::collection::vec(-2.0f64..2.0, 7),
        ) {
            let pairs: Vec<SeedPair> = baselines
                .iter()
                .zip(&bumps)
                .enumerate()
                .map(|(i, (b, d))| SeedPair { seed: i as u64, theta_variant: b + d, theta_baseline: *b })
                .collect();
            let s = PairedSample::new("d", "s", "m", pairs).unwrap();
            let vb = s.variant_values().iter().sum::<f64>() / s.k() as f64;
            let bb = s.baseline_values().iter().sum::<f64>() / s.k() as f64;
            prop_assert!((s.mean_delta() - (vb - bb)).abs() < 1e-10);
        }
    }
}
