//! Paired multi-seed evaluation of A/B training runs.
//!
//! Small accuracy gains reported from a single training run are routinely
//! noise. This crate evaluates a variant against a baseline by pairing runs
//! on shared seeds, then asks two independent questions about the per-seed
//! deltas: does a bias-corrected accelerated (BCa) bootstrap interval
//! exclude zero, and does a sign-flip permutation test reject at level
//! alpha? The strict decision rule requires both.
//!
//! Modules:
//! - [`stat`]: deterministic numerical primitives (normal cdf/quantile,
//!   Student-t tail, Welch's t-test).
//! - [`resample`]: keyed RNG substreams, bootstrap, BCa intervals,
//!   sign-flip permutation tests.
//! - [`protocol`]: paired samples, evaluation schemes, the decision rule.
//! - [`ingest`]: run-log and epoch-log parsing and pairing validation.
//! - [`simulate`]: synthetic paired runs, false-positive and power studies.
//! - [`report`]: summary tables and figure data files.
//! - [`cli`]: the `pairguard` command-line tool.
//!
//! Every analysis is deterministic: a master seed plus a stream label and a
//! replicate index select an independent RNG substream, so results do not
//! depend on evaluation order or thread count.

pub mod cli;
pub mod ingest;
pub mod protocol;
pub mod report;
pub mod resample;
pub mod simulate;
pub mod stat;
