//! Oracle, invariant and gradient self-checks, shared by `vinet check` and
//! the acceptance tests.

pub mod format;
pub mod gradient;
pub mod oracles;
pub mod protocol;
pub mod stn;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::data::SampleSource;
use crate::error::Result;
use crate::synth::{DatasetSpec, SyntheticCorpus};

use gradient::{gradient_suite, GradientCheck, FD_STEP, FD_TOLERANCE};
use oracles::{KERNEL_TOLERANCE, SPEARMAN_TOLERANCE};

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub gradient_seeds: u64,
    pub stn_trials: usize,
    pub spearman_trials: usize,
    pub invariance_trials: usize,
    pub determinism_epochs: usize,
    pub round_trip_samples: usize,
    /// Directory for the files written by the format checks.
    pub scratch: PathBuf,
}

impl CheckOptions {
    pub fn new(scratch: PathBuf) -> Self {
        CheckOptions {
            gradient_seeds: 20,
            stn_trials: 500,
            spearman_trials: 1000,
            invariance_trials: 2000,
            determinism_epochs: 2,
            round_trip_samples: 100,
            scratch,
        }
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let started = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { name: name.to_string(), passed, detail, seconds: started.elapsed().as_secs_f64() }
}

/// Finite-difference gradients of every operation and the full network.
pub fn check_gradients(opts: &CheckOptions) -> CheckResult {
    timed("gradients", || {
        let checks = gradient_suite(0..opts.gradient_seeds, FD_STEP)?;
        let failed: Vec<String> = checks
            .iter()
            .filter(|c| !c.passed(FD_TOLERANCE))
            .map(|c| format!("{}@{}={:.2e}", c.op, c.seed, c.error))
            .collect();
        let worst = checks.iter().map(|c| c.error).fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
        let ops: BTreeSet<&str> = checks.iter().map(|c| c.op.as_str()).collect();
        // a tensor must be probed on a smooth piece by at least one network check
        let models: Vec<&GradientCheck> = checks.iter().filter(|c| c.op.starts_with("model_")).collect();
        let mut never: BTreeSet<&str> =
            models.first().map(|c| c.uncovered.iter().map(String::as_str).collect()).unwrap_or_default();
        for c in &models {
            let here: BTreeSet<&str> = c.uncovered.iter().map(String::as_str).collect();
            never = never.intersection(&here).copied().collect();
        }
        let skipped: usize = checks.iter().map(|c| c.skipped).sum();
        let entries: usize = checks.iter().map(|c| c.entries).sum();
        let mut detail = format!(
            "{} checks over {} ops x {} seeds, {entries} entries, worst relative error {worst:.2e} (h={FD_STEP:e}, tol {FD_TOLERANCE:e}); {skipped} network probes crossed a kink and were redrawn",
            checks.len(),
            ops.len(),
            opts.gradient_seeds
        );
        if !failed.is_empty() {
            detail.push_str(&format!("; failed: {}", failed.join(", ")));
        }
        if !never.is_empty() {
            detail.push_str(&format!("; never probed: {never:?}"));
        }
        Ok((failed.is_empty() && never.is_empty() && !models.is_empty(), detail))
    })
}

pub fn check_stn(opts: &CheckOptions) -> CheckResult {
    timed("stn exactness", || {
        let r = stn::stn_exactness(opts.stn_trials);
        let passed = r.identity_ok() && r.linearity_ok() && r.composition_ok() && r.padding_ok();
        Ok((
            passed,
            format!(
                "{} trials: identity {:.1e}, linearity {:.1e}, composition {:.1e}, outside {:.1e}, vs direct {:.1e}, outside grad {:.1e}",
                r.trials, r.identity, r.linearity, r.composition, r.outside, r.versus_direct, r.outside_grad
            ),
        ))
    })
}

pub fn check_oracles(opts: &CheckOptions) -> CheckResult {
    timed("oracle equivalence", || {
        let parts = [
            ("conv2d", oracles::conv_vs_direct(), KERNEL_TOLERANCE),
            ("conv2d batch grad", oracles::conv_batch_gradient(), KERNEL_TOLERANCE),
            ("maxpool2d", oracles::maxpool_vs_direct(), 0.0),
            ("linear", oracles::linear_vs_direct(), KERNEL_TOLERANCE),
            ("spearman", oracles::spearman_vs_oracle(opts.spearman_trials), SPEARMAN_TOLERANCE),
            ("cross entropy", oracles::cross_entropy_points(), KERNEL_TOLERANCE),
        ];
        let passed = parts.iter().all(|(_, gap, tol)| gap.within(*tol));
        let detail = parts
            .iter()
            .map(|(name, gap, _)| format!("{name} {} cases worst {:.1e}", gap.cases, gap.worst))
            .collect::<Vec<_>>()
            .join("; ");
        Ok((passed, detail))
    })
}

pub fn check_protocol(opts: &CheckOptions) -> CheckResult {
    timed("protocol conformance", || {
        let corpus = SyntheticCorpus::new(DatasetSpec::default())?;
        let (plans, hygiene) = protocol::split_hygiene(corpus.samples())?;
        let inv = protocol::score_invariance(opts.invariance_trials);
        let (a, b) = protocol::training_determinism(opts.determinism_epochs)?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let identical = !a.is_empty() && bits(&a) == bits(&b);
        let passed = hygiene.is_empty() && plans > 0 && inv.failures == 0 && inv.skipped * 10 < inv.trials && identical;
        let mut detail = format!(
            "{plans} split plans, {} hygiene problems; score invariance {}/{} trials failed ({} near-ties skipped); loss curve {:?} vs {:?} {}",
            hygiene.len(),
            inv.failures,
            inv.trials,
            inv.skipped,
            a,
            b,
            if identical { "bit-identical" } else { "DIFFERS" }
        );
        if let Some(first) = hygiene.first() {
            detail.push_str(&format!("; first problem: {first}"));
        }
        Ok((passed, detail))
    })
}

pub fn check_format(opts: &CheckOptions) -> CheckResult {
    timed("format round trip", || {
        let broken = format::round_trip(&opts.scratch.join("round_trip"), opts.round_trip_samples)?;
        let cases = format::malformed_headers(&opts.scratch.join("malformed"))?;
        let bad: Vec<String> = cases
            .iter()
            .filter(|c| !c.passed())
            .map(|c| format!("{}: expected offset {}, got {:?}", c.name, c.expected, c.reported))
            .collect();
        let mut detail = format!(
            "{}/{} samples bit-exact; {}/{} malformed files rejected at the right offset",
            opts.round_trip_samples - broken.len(),
            opts.round_trip_samples,
            cases.len() - bad.len(),
            cases.len()
        );
        if !bad.is_empty() {
            detail.push_str(&format!("; {}", bad.join("; ")));
        }
        Ok((broken.is_empty() && bad.is_empty(), detail))
    })
}

/// Every check, in a fixed order.
pub fn run_all(opts: &CheckOptions) -> Vec<CheckResult> {
    vec![check_gradients(opts), check_stn(opts), check_oracles(opts), check_protocol(opts), check_format(opts)]
}
