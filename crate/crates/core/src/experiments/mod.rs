//! Trial orchestration: single trials, aggregate runs, drift calibration,
//! defense comparison and parameter sweeps.

mod presets;
mod scenario;
mod trial;

pub use presets::{
    find_preset, list_presets, measured_presets, presets, BrowserPreset, PoolKind, ReportedBandwidth, PRESETS,
};
pub use scenario::{Defense, Scenario, ScriptedAction};
pub use trial::{run_trial, run_trial_traced, Actor, FailureKind, TraceEntry, TraceKind, TrialResult};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::{DriftModel, PoolError};
use crate::protocol::ProtocolError;
use crate::sim::SimError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("unknown sweep parameter {0:?}")]
    UnknownParameter(String),
}

/// Aggregate over the trials of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub trials: u32,
    pub successes: u32,
    pub success_rate: f64,
    pub message_bits: usize,
    pub mean_setup_s: f64,
    pub mean_send_s: f64,
    pub mean_total_s: f64,
    /// Mean total time over successful trials only; 0 when none succeeded.
    pub mean_total_success_s: f64,
    /// Bits per second over successful trials; 0 when none succeeded.
    pub throughput_bps: f64,
    pub mean_bits_correct: f64,
    pub failures: BTreeMap<FailureKind, u32>,
}

impl ExperimentSummary {
    pub fn from_results(results: &[TrialResult]) -> Self {
        let n = results.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TrialResult) -> f64| results.iter().map(f).sum::<f64>() / n;
        let successes: Vec<&TrialResult> = results.iter().filter(|r| r.success).collect();
        let message_bits = results.first().map_or(0, |r| r.message_bits);
        let mean_total_success_s = if successes.is_empty() {
            0.0
        } else {
            successes.iter().map(|r| r.total_s()).sum::<f64>() / successes.len() as f64
        };
        let throughput_bps = if mean_total_success_s > 0.0 {
            message_bits as f64 / mean_total_success_s
        } else {
            0.0
        };
        let mut failures: BTreeMap<FailureKind, u32> = FailureKind::ALL.iter().map(|&k| (k, 0)).collect();
        for r in results {
            *failures.entry(r.failure_kind).or_default() += 1;
        }
        Self {
            trials: results.len() as u32,
            successes: successes.len() as u32,
            success_rate: successes.len() as f64 / n,
            message_bits,
            mean_setup_s: mean(&|r| r.setup_s()),
            mean_send_s: mean(&|r| r.send_s()),
            mean_total_s: mean(&|r| r.total_s()),
            mean_total_success_s,
            throughput_bps,
            mean_bits_correct: mean(&|r| r.bits_correct as f64),
            failures,
        }
    }

    pub fn failure_count(&self, kind: FailureKind) -> u32 {
        self.failures.get(&kind).copied().unwrap_or(0)
    }
}

/// Runs every trial of `scenario`, in index order.
pub fn run_trials_detailed(scenario: &Scenario) -> Result<Vec<TrialResult>, ExperimentError> {
    scenario.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..scenario.trials)
            .into_par_iter()
            .map(|i| run_trial(scenario, i))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..scenario.trials).map(|i| run_trial(scenario, i)).collect()
    }
}

pub fn run_trials(scenario: &Scenario) -> Result<ExperimentSummary, ExperimentError> {
    Ok(ExperimentSummary::from_results(&run_trials_detailed(scenario)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub tolerance: f64,
    pub max_iterations: u32,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            max_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub drift_probability: f64,
    pub observed_success: f64,
    pub iterations: u32,
}

/// Bisects the drift probability until `scenario` (with its own trial count
/// and seed) succeeds at roughly `target`.
pub fn calibrate_drift(scenario: &Scenario, target: f64) -> Result<Calibration, ExperimentError> {
    calibrate_drift_with(scenario, target, CalibrationOptions::default())
}

pub fn calibrate_drift_with(
    scenario: &Scenario,
    target: f64,
    opts: CalibrationOptions,
) -> Result<Calibration, ExperimentError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(ExperimentError::CalibrationFailed(format!(
            "target {target} is not within (0, 1)"
        )));
    }
    let rate_at = |p: f64| -> Result<f64, ExperimentError> {
        let mut s = scenario.clone();
        s.drift = DriftModel::with_probability(p);
        Ok(run_trials(&s)?.success_rate)
    };
    let (lo_rate, hi_rate) = (rate_at(0.0)?, rate_at(1.0)?);
    if lo_rate < target || hi_rate > target {
        return Err(ExperimentError::CalibrationFailed(format!(
            "target {target} not bracketed: success {lo_rate} at p=0, {hi_rate} at p=1"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best = Calibration {
        drift_probability: 0.0,
        observed_success: lo_rate,
        iterations: 0,
    };
    for i in 1..=opts.max_iterations {
        let mid = (lo + hi) / 2.0;
        let rate = rate_at(mid)?;
        if (rate - target).abs() < (best.observed_success - target).abs() {
            best = Calibration {
                drift_probability: mid,
                observed_success: rate,
                iterations: i,
            };
        }
        best.iterations = i;
        if (rate - target).abs() <= opts.tolerance {
            return Ok(Calibration {
                drift_probability: mid,
                observed_success: rate,
                iterations: i,
            });
        }
        if rate > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Default defense parameters used by [`evaluate_defenses`].
pub const DEFAULT_WIDEN_FACTOR: u64 = 100;
pub const DEFAULT_SITE_CAP: u64 = 32;

/// Runs the same trials under each defense. Only the defense differs.
pub fn evaluate_defenses(base: &Scenario) -> Result<Vec<(Defense, ExperimentSummary)>, ExperimentError> {
    if base.defense != Defense::None {
        return Err(ExperimentError::InvalidScenario(format!(
            "defense comparison needs an undefended base, got {}",
            base.defense
        )));
    }
    [
        Defense::None,
        Defense::PartitionBySite,
        Defense::WidenPool {
            factor: DEFAULT_WIDEN_FACTOR,
        },
        Defense::HybridCap {
            per_site_limit: DEFAULT_SITE_CAP,
        },
    ]
    .into_iter()
    .map(|d| Ok((d, run_trials(&base.clone().with_defense(d))?)))
    .collect()
}

/// Names accepted by [`sweep`].
pub const SWEEP_PARAMETERS: &[&str] = &[
    "pulse_interval",
    "negotiate_interval",
    "arrival_rate",
    "drift_probability",
    "tab_count",
];

/// Applies one sweep value to a scenario.
pub fn apply_parameter(scenario: &mut Scenario, name: &str, value: f64) -> Result<(), ExperimentError> {
    match name {
        "pulse_interval" | "pulse_interval_s" => scenario.pulse_interval = value,
        "negotiate_interval" | "negotiate_interval_s" => scenario.negotiate_interval = value,
        "arrival_rate" | "noise_rate_hz" => scenario.noise.arrival_rate = value,
        "drift_probability" | "drift_prob" => scenario.drift = DriftModel::with_probability(value),
        "tab_count" | "noise_tabs" => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(ExperimentError::InvalidScenario(format!(
                    "tab_count must be a whole number, got {value}"
                )));
            }
            scenario.noise.tab_count = value as u32;
        }
        other => return Err(ExperimentError::UnknownParameter(other.to_string())),
    }
    Ok(())
}

pub fn sweep(
    scenario: &Scenario,
    parameter: &str,
    values: &[f64],
) -> Result<Vec<(f64, ExperimentSummary)>, ExperimentError> {
    values
        .iter()
        .map(|&v| {
            let mut s = scenario.clone();
            apply_parameter(&mut s, parameter, v)?;
            Ok((v, run_trials(&s)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimTime;

    fn result(success: bool, total_ms: u64) -> TrialResult {
        TrialResult {
            trial: 0,
            success,
            setup_time: SimTime::from_millis(100),
            send_time: SimTime::from_millis(total_ms - 100),
            total_time: SimTime::from_millis(total_ms),
            bits_correct: if success { 35 } else { 0 },
            message_bits: 35,
            failure_kind: if success {
                FailureKind::None
            } else {
                FailureKind::ChannelDead
            },
            start_wait: SimTime::ZERO,
            sender: Some(0),
            race_split: [128, 127],
            final_time: SimTime::ZERO,
        }
    }

    #[test]
    fn summary_of_one_is_that_trial() {
        let s = ExperimentSummary::from_results(&[result(true, 600)]);
        assert_eq!(s.success_rate, 1.0);
        assert!((s.mean_total_s - 0.6).abs() < 1e-12);
        assert!((s.throughput_bps - 35.0 / 0.6).abs() < 1e-9);
        assert_eq!(s.failure_count(FailureKind::None), 1);
    }

    #[test]
    fn throughput_ignores_failures() {
        let s = ExperimentSummary::from_results(&[result(true, 600), result(false, 5000)]);
        assert_eq!(s.success_rate, 0.5);
        assert!((s.throughput_bps - 35.0 / 0.6).abs() < 1e-9);
        assert_eq!(s.failure_count(FailureKind::ChannelDead), 1);
    }

    #[test]
    fn unknown_sweep_parameter() {
        let s = Scenario::preset("chrome-ws").unwrap().with_trials(1);
        assert!(matches!(
            sweep(&s, "moon_phase", &[1.0]),
            Err(ExperimentError::UnknownParameter(_))
        ));
    }

    #[test]
    fn calibration_rejects_bad_targets() {
        let s = Scenario::preset("chrome-ws").unwrap().with_trials(1);
        assert!(calibrate_drift(&s, 1.0).is_err());
        assert!(calibrate_drift(&s, 0.0).is_err());
    }

    #[test]
    fn defenses_need_undefended_base() {
        let s = Scenario::preset("chrome-ws")
            .unwrap()
            .with_defense(Defense::PartitionBySite);
        assert!(evaluate_defenses(&s).is_err());
    }
}
