use std::fmt;

use serde::{Deserialize, Serialize};

use super::presets::{BrowserPreset, PoolKind};
use super::ExperimentError;
use crate::pool::{ContextId, DriftModel, FeedbackModel, PoolScope};
use crate::protocol::{BitString, ProtocolParams};
use crate::sim::NoiseProfile;
use crate::time::SimTime;

/// Browser-side countermeasure applied to the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Defense {
    None,
    /// Key the pool by site on top of its existing scope.
    PartitionBySite,
    /// Multiply the limit; the wider system-level pool is shared with
    /// proportionally more background consumers.
    WidenPool {
        factor: u64,
    },
    /// Lift the global limit but cap what each site may hold.
    HybridCap {
        per_site_limit: u64,
    },
}

impl Defense {
    /// Global limit multiplier used when a hybrid cap replaces the
    /// browser limit.
    pub const HYBRID_GLOBAL_FACTOR: u64 = 100;

    pub fn name(&self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::PartitionBySite => "partition_site",
            Defense::WidenPool { .. } => "widen",
            Defense::HybridCap { .. } => "hybrid_cap",
        }
    }

    pub fn param(&self) -> Option<u64> {
        match *self {
            Defense::WidenPool { factor } => Some(factor),
            Defense::HybridCap { per_site_limit } => Some(per_site_limit),
            _ => None,
        }
    }

    /// Builds a defense from its name and optional numeric parameter.
    pub fn from_parts(name: &str, param: Option<u64>) -> Result<Self, String> {
        match name.to_ascii_lowercase().as_str() {
            "none" => Ok(Defense::None),
            "partition_site" | "partition" | "partitionbysite" => Ok(Defense::PartitionBySite),
            "widen" | "widen_pool" | "widenpool" => Ok(Defense::WidenPool {
                factor: param.unwrap_or(100),
            }),
            "hybrid_cap" | "hybrid" | "hybridcap" => Ok(Defense::HybridCap {
                per_site_limit: param.unwrap_or(32),
            }),
            other => Err(format!("unknown defense {other:?}")),
        }
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            Some(p) => write!(f, "{}({p})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// Extra pool activity injected at fixed instants, for probing exactly
/// how a single disturbance affects a transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAction {
    pub at: SimTime,
    pub ctx: ContextId,
    pub consume: u64,
    pub release: u64,
}

/// Full description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub preset: Option<String>,
    pub pool_kind: PoolKind,
    pub pool_size: u64,
    pub scope: PoolScope,
    pub pkt_size: u32,
    pub negotiate_interval: f64,
    pub pulse_interval: f64,
    pub message_bits: usize,
    /// Fixed message for the first party; `None` draws a fresh one per
    /// trial from the trial seed.
    pub message: Option<BitString>,
    pub sender_ctx: ContextId,
    pub receiver_ctx: ContextId,
    pub noise: NoiseProfile,
    pub drift: DriftModel,
    pub feedback: FeedbackModel,
    pub defense: Defense,
    pub trials: u32,
    pub seed: u64,
    /// Ticks by which the second party reaches the race after the first.
    pub start_jitter_ticks: u64,
    pub over_consume: u64,
    /// Exchange roles after the first message and send back.
    pub bidirectional: bool,
    /// Resources held by a static background context for the whole trial.
    pub static_hold: u64,
    /// Pool size the colluding scripts work with, when they have tuned
    /// themselves to something other than the enforced limit.
    pub assumed_pool_size: Option<u64>,
    pub scripted: Vec<ScriptedAction>,
}

impl Scenario {
    pub const DEFAULT_JITTER_TICKS: u64 = 1;

    pub fn from_preset(preset: &BrowserPreset) -> Self {
        Self {
            preset: Some(preset.name.to_string()),
            pool_kind: preset.pool_kind,
            pool_size: preset.pool_size,
            scope: preset.scope,
            pkt_size: preset.pkt_size,
            negotiate_interval: preset.negotiate_interval,
            pulse_interval: preset.pulse_interval,
            message_bits: preset.message_bits,
            message: None,
            sender_ctx: ContextId::new("sender.example", "default"),
            receiver_ctx: ContextId::new("receiver.example", "default"),
            noise: NoiseProfile {
                api_use_probability: preset.pool_kind.page_load_usage(),
                ..NoiseProfile::quiet()
            },
            drift: DriftModel::disabled(),
            feedback: FeedbackModel::uniform_ms(preset.feedback_max_ms),
            defense: Defense::None,
            trials: 100,
            seed: 1,
            start_jitter_ticks: Self::DEFAULT_JITTER_TICKS,
            over_consume: crate::protocol::DEFAULT_OVER_CONSUME,
            bidirectional: false,
            static_hold: 0,
            assumed_pool_size: None,
            scripted: Vec::new(),
        }
    }

    /// Preset by name; `None` if unknown.
    pub fn preset(name: &str) -> Option<Self> {
        super::presets::find_preset(name).map(Self::from_preset)
    }

    pub fn with_trials(mut self, trials: u32) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_defense(mut self, defense: Defense) -> Self {
        self.defense = defense;
        self
    }

    pub fn with_drift(mut self, p: f64) -> Self {
        self.drift = DriftModel::with_probability(p);
        self
    }

    pub fn chunk_count(&self) -> usize {
        self.message_bits / self.pkt_size.max(1) as usize
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |m: String| Err(ExperimentError::InvalidScenario(m));
        if self.trials < 1 {
            return invalid("trials must be at least 1".into());
        }
        match self.defense {
            Defense::WidenPool { factor } if factor < 1 => return invalid("widen factor must be at least 1".into()),
            Defense::HybridCap { per_site_limit } if per_site_limit < 1 => {
                return invalid("per-site limit must be at least 1".into())
            }
            _ => {}
        }
        if self.message_bits == 0 {
            return invalid("message_bits must be positive".into());
        }
        if let Some(m) = &self.message {
            if m.len() != self.message_bits {
                return invalid(format!(
                    "message has {} bits but message_bits is {}",
                    m.len(),
                    self.message_bits
                ));
            }
        }
        if self.sender_ctx == self.receiver_ctx {
            return invalid("sender and receiver must be distinct contexts".into());
        }
        self.protocol_params(BitString::from_bits(vec![false; self.message_bits]))
            .validate()?;
        self.drift.validate()?;
        self.feedback.validate()?;
        self.noise.validate()?;
        if self.static_hold >= self.pool_size {
            return invalid(format!(
                "static_hold {} must be below pool_size {}",
                self.static_hold, self.pool_size
            ));
        }
        Ok(())
    }

    /// Pool limit after the defense is applied.
    pub fn effective_pool_limit(&self) -> u64 {
        match self.defense {
            Defense::WidenPool { factor } => self.pool_size * factor,
            Defense::HybridCap { .. } => self.pool_size * Defense::HYBRID_GLOBAL_FACTOR,
            _ => self.pool_size,
        }
    }

    pub fn effective_scope(&self) -> PoolScope {
        match (self.defense, self.scope) {
            (Defense::PartitionBySite, PoolScope::Application | PoolScope::Site) => PoolScope::Site,
            (Defense::PartitionBySite, _) => PoolScope::SiteAndProfile,
            (_, s) => s,
        }
    }

    pub fn effective_noise(&self) -> NoiseProfile {
        match self.defense {
            Defense::WidenPool { factor } => NoiseProfile {
                arrival_rate: self.noise.arrival_rate * factor as f64,
                ..self.noise
            },
            _ => self.noise,
        }
    }

    /// The pool size the colluding scripts assume: an explicit
    /// `assumed_pool_size`, else the widened limit when the browser widens,
    /// else the original limit.
    pub fn attacker_pool_size(&self) -> u64 {
        if let Some(n) = self.assumed_pool_size {
            return n;
        }
        match self.defense {
            Defense::WidenPool { factor } => self.pool_size * factor,
            _ => self.pool_size,
        }
    }

    pub fn protocol_params(&self, message: BitString) -> ProtocolParams {
        ProtocolParams {
            pool_size: self.attacker_pool_size(),
            pkt_size: self.pkt_size,
            negotiate_interval: self.negotiate_interval,
            pulse_interval: self.pulse_interval,
            message,
        }
    }
}
