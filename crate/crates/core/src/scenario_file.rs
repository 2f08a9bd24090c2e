//! Flat `key=value` scenario files, per-trial CSV and JSON summaries.
//!
//! A preset, when given, is applied first wherever it appears in the file;
//! every other key then overrides one field. Blank lines and lines starting
//! with `#` are ignored. Unknown keys are rejected.

use std::path::Path;

use thiserror::Error;

use crate::experiments::{Defense, ExperimentError, ExperimentSummary, PoolKind, Scenario, TrialResult};
use crate::pool::{ContextId, DriftModel, FeedbackModel, PoolScope};
use crate::protocol::BitString;
use crate::sim::NoiseProfile;

pub const CSV_HEADER: &str = "trial,success,setup_s,send_s,total_s,bits_correct,failure_kind";

/// Keys understood by [`parse_scenario_str`], in the order
/// [`scenario_to_text`] writes them.
pub const KEYS: &[&str] = &[
    "preset",
    "pool_size",
    "pkt_size",
    "pool_scope",
    "negotiate_interval_s",
    "pulse_interval_s",
    "message_bits",
    "message",
    "trials",
    "seed",
    "defense",
    "defense_param",
    "drift_prob",
    "feedback_delay_max_ms",
    "noise_tabs",
    "noise_api_prob",
    "noise_rate_hz",
    "noise_hold_s",
    "noise_burst_max",
    "sender_site",
    "sender_profile",
    "receiver_site",
    "receiver_profile",
    "start_jitter_us",
    "static_hold",
    "assumed_pool_size",
    "bidirectional",
];

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

impl From<ExperimentError> for ScenarioFileError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidScenario(m) => ScenarioFileError::Validation(m),
            other => ScenarioFileError::Validation(other.to_string()),
        }
    }
}

/// A parsed file, plus whether it pinned its own seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScenario {
    pub scenario: Scenario,
    pub seed_given: bool,
}

/// Starting point when no preset is named.
pub fn custom_base() -> Scenario {
    Scenario {
        preset: None,
        pool_kind: PoolKind::WebSocket,
        pool_size: 255,
        scope: PoolScope::Profile,
        pkt_size: 5,
        negotiate_interval: 2.0,
        pulse_interval: 5.0 / 7.0,
        message_bits: 35,
        message: None,
        sender_ctx: ContextId::new("sender.example", "default"),
        receiver_ctx: ContextId::new("receiver.example", "default"),
        noise: NoiseProfile::quiet(),
        drift: DriftModel::disabled(),
        feedback: FeedbackModel::immediate(),
        defense: Defense::None,
        trials: 100,
        seed: 1,
        start_jitter_ticks: Scenario::DEFAULT_JITTER_TICKS,
        over_consume: crate::protocol::DEFAULT_OVER_CONSUME,
        bidirectional: false,
        static_hold: 0,
        assumed_pool_size: None,
        scripted: Vec::new(),
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ParsedScenario, ScenarioFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<ParsedScenario, ScenarioFileError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ScenarioFileError::Parse {
                line,
                reason: format!("expected key=value, got {trimmed:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ScenarioFileError::Parse {
                line,
                reason: format!("unknown key {key:?}"),
            });
        }
        if entries.iter().any(|(_, k, _): &(usize, &str, &str)| *k == key) {
            return Err(ScenarioFileError::Parse {
                line,
                reason: format!("duplicate key {key:?}"),
            });
        }
        entries.push((line, key, value));
    }

    let mut scenario = match entries.iter().find(|(_, k, _)| *k == "preset") {
        Some(&(line, _, name)) => Scenario::preset(name).ok_or_else(|| ScenarioFileError::Parse {
            line,
            reason: format!("unknown preset {name:?}"),
        })?,
        None => custom_base(),
    };

    let mut defense_name: Option<(usize, &str)> = None;
    let mut defense_param: Option<u64> = None;
    let mut seed_given = false;
    for &(line, key, value) in &entries {
        let err = |reason: String| ScenarioFileError::Parse { line, reason };
        let num = |v: &str| -> Result<f64, ScenarioFileError> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("{key}: expected a number, got {v:?}")))
        };
        let int = |v: &str| -> Result<u64, ScenarioFileError> {
            v.parse::<u64>()
                .map_err(|_| err(format!("{key}: expected a non-negative integer, got {v:?}")))
        };
        match key {
            "preset" => {}
            "pool_size" => scenario.pool_size = int(value)?,
            "pkt_size" => {
                scenario.pkt_size = narrow(int(value)?).ok_or_else(|| err(format!("pkt_size {value} too large")))?
            }
            "pool_scope" => scenario.scope = value.parse().map_err(err)?,
            "negotiate_interval_s" => scenario.negotiate_interval = num(value)?,
            "pulse_interval_s" => scenario.pulse_interval = num(value)?,
            "message_bits" => scenario.message_bits = int(value)? as usize,
            "message" => scenario.message = Some(value.parse::<BitString>().map_err(|e| err(e.to_string()))?),
            "trials" => {
                scenario.trials = narrow(int(value)?).ok_or_else(|| err(format!("trials {value} too large")))?
            }
            "seed" => {
                scenario.seed = int(value)?;
                seed_given = true;
            }
            "defense" => defense_name = Some((line, value)),
            "defense_param" => defense_param = Some(int(value)?),
            "drift_prob" => {
                let p = num(value)?;
                scenario.drift = if p == 0.0 {
                    DriftModel::disabled()
                } else {
                    DriftModel::with_probability(p)
                };
            }
            "feedback_delay_max_ms" => scenario.feedback = FeedbackModel::uniform_ms(num(value)?),
            "noise_tabs" => {
                scenario.noise.tab_count =
                    narrow(int(value)?).ok_or_else(|| err(format!("noise_tabs {value} too large")))?
            }
            "noise_api_prob" => scenario.noise.api_use_probability = num(value)?,
            "noise_rate_hz" => scenario.noise.arrival_rate = num(value)?,
            "noise_hold_s" => scenario.noise.hold_mean = num(value)?,
            "noise_burst_max" => scenario.noise.burst_max = int(value)?,
            "sender_site" => scenario.sender_ctx.site = value.to_string(),
            "sender_profile" => scenario.sender_ctx.profile = value.to_string(),
            "receiver_site" => scenario.receiver_ctx.site = value.to_string(),
            "receiver_profile" => scenario.receiver_ctx.profile = value.to_string(),
            "start_jitter_us" => scenario.start_jitter_ticks = int(value)?,
            "static_hold" => scenario.static_hold = int(value)?,
            "assumed_pool_size" => scenario.assumed_pool_size = Some(int(value)?),
            "bidirectional" => {
                scenario.bidirectional = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(err(format!("bidirectional: expected true or false, got {value:?}"))),
                }
            }
            _ => unreachable!("key list checked above"),
        }
    }
    match defense_name {
        Some((line, name)) => {
            scenario.defense =
                Defense::from_parts(name, defense_param).map_err(|reason| ScenarioFileError::Parse { line, reason })?
        }
        None if defense_param.is_some() => {
            return Err(ScenarioFileError::Validation(
                "defense_param given without defense".into(),
            ))
        }
        None => {}
    }
    scenario.validate()?;
    Ok(ParsedScenario { scenario, seed_given })
}

fn narrow<T: TryFrom<u64>>(v: u64) -> Option<T> {
    T::try_from(v).ok()
}

/// Writes every field of `scenario` that the file format can express.
/// Parsing the output yields the same scenario.
pub fn scenario_to_text(scenario: &Scenario) -> String {
    let mut lines = Vec::new();
    let mut put = |k: &str, v: String| lines.push(format!("{k}={v}"));
    if let Some(p) = &scenario.preset {
        put("preset", p.clone());
    }
    put("pool_size", scenario.pool_size.to_string());
    put("pkt_size", scenario.pkt_size.to_string());
    put("pool_scope", scenario.scope.to_string());
    put("negotiate_interval_s", scenario.negotiate_interval.to_string());
    put("pulse_interval_s", scenario.pulse_interval.to_string());
    put("message_bits", scenario.message_bits.to_string());
    if let Some(m) = &scenario.message {
        put("message", m.to_string());
    }
    put("trials", scenario.trials.to_string());
    put("seed", scenario.seed.to_string());
    put("defense", scenario.defense.name().to_string());
    if let Some(p) = scenario.defense.param() {
        put("defense_param", p.to_string());
    }
    let drift = if scenario.drift.enabled {
        scenario.drift.drift_probability
    } else {
        0.0
    };
    put("drift_prob", drift.to_string());
    put("feedback_delay_max_ms", scenario.feedback.max_delay_ms.to_string());
    put("noise_tabs", scenario.noise.tab_count.to_string());
    put("noise_api_prob", scenario.noise.api_use_probability.to_string());
    put("noise_rate_hz", scenario.noise.arrival_rate.to_string());
    put("noise_hold_s", scenario.noise.hold_mean.to_string());
    put("noise_burst_max", scenario.noise.burst_max.to_string());
    put("sender_site", scenario.sender_ctx.site.clone());
    put("sender_profile", scenario.sender_ctx.profile.clone());
    put("receiver_site", scenario.receiver_ctx.site.clone());
    put("receiver_profile", scenario.receiver_ctx.profile.clone());
    put("start_jitter_us", scenario.start_jitter_ticks.to_string());
    put("static_hold", scenario.static_hold.to_string());
    if let Some(n) = scenario.assumed_pool_size {
        put("assumed_pool_size", n.to_string());
    }
    put("bidirectional", scenario.bidirectional.to_string());
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Per-trial CSV, header included.
pub fn results_to_csv(results: &[TrialResult]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in results {
        w.write_record([
            r.trial.to_string(),
            u8::from(r.success).to_string(),
            format!("{:.3}", r.setup_s()),
            format!("{:.3}", r.send_s()),
            format!("{:.3}", r.total_s()),
            r.bits_correct.to_string(),
            r.failure_kind.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn summary_to_json(summary: &ExperimentSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}
