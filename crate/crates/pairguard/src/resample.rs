//! Deterministic resampling machinery: keyed RNG substreams, bootstrap
//! distributions of the mean delta, BCa confidence intervals, and
//! sign-flip permutation tests.
//!
//! Determinism contract: every replicate draws from its own substream,
//! selected by (master_seed, analysis label, replicate index). Results are
//! therefore bit-identical for a given master seed regardless of
//! evaluation order, worker count, or scheduling.

use crate::protocol::PairedSample;
use crate::stat::{normal_cdf, normal_quantile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("empty sample")]
    EmptySample,
    #[error("too few runs: need at least {needed}, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Coordinates of one independent RNG substream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngStreamKey {
    pub master_seed: u64,
    pub analysis_label: String,
    pub replicate_index: u64,
}

/// All substreams sharing one master seed and analysis label.
///
/// The label is hashed once; individual substreams then differ only in the
/// ChaCha stream nonce, so creating replicate streams is cheap and two
/// distinct replicate indices can never overlap.
#[derive(Clone)]
pub struct StreamFamily {
    base: ChaCha12Rng,
}

impl StreamFamily {
    pub fn new(master_seed: u64, analysis_label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(master_seed.to_le_bytes());
        h.update((analysis_label.len() as u64).to_le_bytes());
        h.update(analysis_label.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&h.finalize());
        StreamFamily {
            base: ChaCha12Rng::from_seed(seed),
        }
    }

    pub fn substream(&self, replicate_index: u64) -> ChaCha12Rng {
        let mut rng = self.base.clone();
        rng.set_stream(replicate_index);
        rng
    }
}

/// Deterministic substream for a full key.
pub fn substream(key: &RngStreamKey) -> ChaCha12Rng {
    StreamFamily::new(key.master_seed, &key.analysis_label).substream(key.replicate_index)
}

/// Bootstrap settings. `replicates` must be at least 100 and the
/// confidence level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: u64,
    pub confidence_level: f64,
    pub master_seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 10_000,
            confidence_level: 0.95,
            master_seed: 42,
        }
    }
}

impl BootstrapConfig {
    pub fn new(replicates: u64, confidence_level: f64, master_seed: u64) -> Result<Self, ResampleError> {
        let cfg = BootstrapConfig {
            replicates,
            confidence_level,
            master_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ResampleError> {
        if self.replicates < 100 {
            return Err(ResampleError::InvalidConfig("bootstrap replicates must be >= 100"));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(ResampleError::InvalidConfig("confidence level must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Bias-corrected accelerated bootstrap interval for the mean delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BCaInterval {
    pub lower: f64,
    pub upper: f64,
    pub point_estimate: f64,
    pub confidence_level: f64,
    /// Bias-correction constant z0; 0 for degenerate intervals.
    pub bias_correction: f64,
    /// Jackknife acceleration a; 0 for degenerate intervals.
    pub acceleration: f64,
    pub replicates: u64,
    pub degenerate: bool,
}

impl BCaInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Sign-flip permutation test result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationResult {
    /// Observed statistic, the mean of the deltas.
    pub t_observed: f64,
    pub p_two_sided: f64,
    pub mode: PermutationMode,
    /// 2^k sign assignments in exhaustive mode, sampled draws otherwise.
    pub draws: u64,
    /// Assignments with |T| >= |T_obs|; includes the identity in
    /// exhaustive mode, excludes it in Monte Carlo mode.
    pub exceed_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationMode {
    Exhaustive,
    MonteCarlo,
}

/// Bootstrap distribution of the mean delta: `replicates` resamples of the
/// k deltas with replacement, one mean per replicate.
///
/// Replicate i draws from substream (master_seed, "bootstrap:<sample id>", i),
/// so the vector is independent of evaluation order and parallelism.
pub fn bootstrap_means(sample: &PairedSample, config: &BootstrapConfig) -> Result<Vec<f64>, ResampleError> {
    config.validate()?;
    let deltas = sample.deltas();
    let k = deltas.len();
    if k == 0 {
        return Err(ResampleError::EmptySample);
    }
    let family = StreamFamily::new(config.master_seed, &sample.stream_label("bootstrap"));
    let mut means = Vec::with_capacity(config.replicates as usize);
    for i in 0..config.replicates {
        let mut rng = family.substream(i);
        let mut sum = 0.0;
        for _ in 0..k {
            sum += deltas[rng.gen_range(0..k)];
        }
        means.push(sum / k as f64);
    }
    Ok(means)
}

/// Jackknife acceleration constant for the mean statistic.
///
/// Uses leave-one-out means; returns 0 when the spread term vanishes
/// (all deltas equal).
pub fn jackknife_acceleration(sample: &PairedSample) -> Result<f64, ResampleError> {
    let deltas = sample.deltas();
    let k = deltas.len();
    if k < 2 {
        return Err(ResampleError::TooFewRuns { needed: 2, got: k });
    }
    let total: f64 = deltas.iter().sum();
    let loo: Vec<f64> = deltas.iter().map(|d| (total - d) / (k - 1) as f64).collect();
    let loo_mean = loo.iter().sum::<f64>() / k as f64;
    let mut sum_sq = 0.0;
    let mut sum_cu = 0.0;
    for v in &loo {
        let dev = loo_mean - v;
        sum_sq += dev * dev;
        sum_cu += dev * dev * dev;
    }
    // sqrt keeps the expression exactly equivariant under power-of-two
    // rescaling of the deltas, unlike powf(1.5).
    let denom = 6.0 * (sum_sq * sum_sq.sqrt());
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(sum_cu / denom)
}

/// BCa-adjusted quantile levels (alpha1, alpha2) for bias correction z0,
/// acceleration a, and the given confidence level.
pub fn bca_adjusted_levels(z0: f64, accel: f64, confidence_level: f64) -> (f64, f64) {
    let alpha = 1.0 - confidence_level;
    let z_lo = normal_quantile(alpha / 2.0).expect("level validated");
    let z_hi = -z_lo;
    let adjust = |z: f64| {
        let w = z0 + z;
        normal_cdf(z0 + w / (1.0 - accel * w))
    };
    (adjust(z_lo), adjust(z_hi))
}

/// Empirical quantile, type 1 (inverse of the empirical cdf): the
/// ceil(p*n)-th order statistic. Input must be sorted ascending.
pub fn empirical_quantile_type1(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if p <= 0.0 {
        return sorted[0];
    }
    let idx = (p * n as f64).ceil() as usize;
    sorted[idx.clamp(1, n) - 1]
}

/// BCa bootstrap confidence interval for the mean delta.
///
/// Degenerate cases (all bootstrap means equal, or the bias-correction
/// count pinned at 0 or B) collapse to the point interval and are flagged
/// rather than extrapolated.
pub fn bca_interval(sample: &PairedSample, config: &BootstrapConfig) -> Result<BCaInterval, ResampleError> {
    let deltas = sample.deltas();
    if deltas.is_empty() {
        return Err(ResampleError::EmptySample);
    }
    let point = sample.mean_delta();
    let mut means = bootstrap_means(sample, config)?;
    let b = config.replicates as f64;

    let degenerate = |_reason: ()| BCaInterval {
        lower: point,
        upper: point,
        point_estimate: point,
        confidence_level: config.confidence_level,
        bias_correction: 0.0,
        acceleration: 0.0,
        replicates: config.replicates,
        degenerate: true,
    };

    if means.iter().all(|m| *m == means[0]) {
        return Ok(degenerate(()));
    }
    let below = means.iter().filter(|m| **m < point).count() as f64;
    let ties = means.iter().filter(|m| **m == point).count() as f64;
    // Ties between a bootstrap mean and the point estimate count half
    // toward the bias correction.
    let m_below = below + 0.5 * ties;
    if m_below <= 0.0 || m_below >= b {
        return Ok(degenerate(()));
    }
    let z0 = normal_quantile(m_below / b).expect("0 < m/B < 1");
    let accel = if deltas.len() >= 2 {
        jackknife_acceleration(sample)?
    } else {
        0.0
    };
    let (a1, a2) = bca_adjusted_levels(z0, accel, config.confidence_level);
    means.sort_by(f64::total_cmp);
    let lower = empirical_quantile_type1(&means, a1);
    let upper = empirical_quantile_type1(&means, a2);
    Ok(BCaInterval {
        // The interval always brackets the point estimate.
        lower: lower.min(point),
        upper: upper.max(point),
        point_estimate: point,
        confidence_level: config.confidence_level,
        bias_correction: z0,
        acceleration: accel,
        replicates: config.replicates,
        degenerate: false,
    })
}

// Ties in |T| against |T_obs| are decided with this relative tolerance so
// bit-level noise in the sums cannot drop an exact tie.
const TIE_REL_TOL: f64 = 1e-12;

/// Two-sided sign-flip permutation test on the paired deltas.
///
/// Enumerate all 2^k sign assignments when 2^k <= 2^max_exhaustive_k
/// (p = exceedances / 2^k, identity included, so p >= 1/2^k); otherwise
/// draw `draws` random assignments and use the add-one estimate
/// p = (1 + exceedances) / (1 + draws).
pub fn sign_flip_test(
    sample: &PairedSample,
    max_exhaustive_k: u32,
    draws: u64,
    master_seed: u64,
) -> Result<PermutationResult, ResampleError> {
    let deltas = sample.deltas();
    let k = deltas.len();
    if k == 0 {
        return Err(ResampleError::EmptySample);
    }
    let sum_obs: f64 = deltas.iter().sum();
    let t_observed = sum_obs / k as f64;
    let threshold = sum_obs.abs() * (1.0 - TIE_REL_TOL);

    if (k as u32) < 64 && (k as u32) <= max_exhaustive_k {
        let total: u64 = 1 << k;
        let mut exceed = 0u64;
        for mask in 0..total {
            let mut sum = 0.0;
            for (i, d) in deltas.iter().enumerate() {
                sum += if mask >> i & 1 == 1 { -d } else { *d };
            }
            if sum.abs() >= threshold {
                exceed += 1;
            }
        }
        Ok(PermutationResult {
            t_observed,
            p_two_sided: exceed as f64 / total as f64,
            mode: PermutationMode::Exhaustive,
            draws: total,
            exceed_count: exceed,
        })
    } else {
        if draws == 0 {
            return Err(ResampleError::InvalidConfig("Monte Carlo permutation needs draws > 0"));
        }
        let family = StreamFamily::new(master_seed, &sample.stream_label("sign-flip"));
        let mut exceed = 0u64;
        for j in 0..draws {
            let mut rng = family.substream(j);
            let mut sum = 0.0;
            let mut word = 0u64;
            let mut bits = 0u32;
            for d in deltas {
                if bits == 0 {
                    word = rng.gen::<u64>();
                    bits = 64;
                }
                sum += if word & 1 == 1 { -d } else { *d };
                word >>= 1;
                bits -= 1;
            }
            if sum.abs() >= threshold {
                exceed += 1;
            }
        }
        Ok(PermutationResult {
            t_observed,
            p_two_sided: (1.0 + exceed as f64) / (1.0 + draws as f64),
            mode: PermutationMode::MonteCarlo,
            draws,
            exceed_count: exceed,
        })
    }
}
