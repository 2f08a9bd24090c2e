//! Benign background tabs that use the same pool as the attack.
//!
//! Page-level usage frequencies give only the chance that a tab touches
//! the API at all. The temporal pattern below (Poisson acquisitions,
//! exponential hold times) is one plausible instantiation, not a measured
//! one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample, DistributionSpec, Scheduler, SimError, SimRng};
use crate::pool::{ContextId, ResourcePool};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub tab_count: u32,
    /// Chance that a given tab uses the pooled API.
    pub api_use_probability: f64,
    /// Acquisitions per second per active tab.
    pub arrival_rate: f64,
    /// Mean hold duration, seconds.
    pub hold_mean: f64,
    /// Each acquisition asks for uniform `1..=burst_max` resources.
    pub burst_max: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self::quiet()
    }
}

impl NoiseProfile {
    pub const DEFAULT_ARRIVAL_RATE: f64 = 0.1;
    pub const DEFAULT_HOLD_MEAN: f64 = 10.0;
    pub const DEFAULT_BURST_MAX: u64 = 4;

    /// No background tabs at all.
    pub fn quiet() -> Self {
        Self {
            tab_count: 0,
            api_use_probability: 0.0,
            arrival_rate: Self::DEFAULT_ARRIVAL_RATE,
            hold_mean: Self::DEFAULT_HOLD_MEAN,
            burst_max: Self::DEFAULT_BURST_MAX,
        }
    }

    pub fn tabs(tab_count: u32, api_use_probability: f64) -> Self {
        Self {
            tab_count,
            api_use_probability,
            ..Self::quiet()
        }
    }

    pub fn is_quiet(&self) -> bool {
        self.tab_count == 0 || self.api_use_probability == 0.0 || self.arrival_rate == 0.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidNoise(m));
        if !(0.0..=1.0).contains(&self.api_use_probability) {
            return bad(format!("api_use_probability {}", self.api_use_probability));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return bad(format!("arrival_rate {}", self.arrival_rate));
        }
        if !(self.hold_mean.is_finite() && self.hold_mean >= 0.0) {
            return bad(format!("hold_mean {}", self.hold_mean));
        }
        if self.burst_max < 1 {
            return bad("burst_max must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseEvent {
    Arrival { tab: usize },
    Release { tab: usize, count: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseTab {
    pub ctx: ContextId,
    pub active: bool,
}

/// Running background tabs. Feed every [`NoiseEvent`] back to
/// [`NoiseProcess::handle`].
#[derive(Debug)]
pub struct NoiseProcess {
    pub tabs: Vec<NoiseTab>,
    profile: NoiseProfile,
    horizon: SimTime,
    rng: SimRng,
    acquisitions: u64,
}

/// Activates each of `profile.tab_count` tabs with the API-use
/// probability and schedules the first acquisition of every active tab.
/// No acquisition is scheduled at or after `horizon`.
pub fn spawn_noise<E: From<NoiseEvent>>(
    sched: &mut Scheduler<E>,
    profile: NoiseProfile,
    browser_profile: &str,
    mut rng: SimRng,
    horizon: SimTime,
) -> Result<NoiseProcess, SimError> {
    profile.validate()?;
    let mut tabs = Vec::with_capacity(profile.tab_count as usize);
    for i in 0..profile.tab_count {
        let active = sample(
            &mut rng,
            DistributionSpec::Bernoulli {
                p: profile.api_use_probability,
            },
        )? == 1.0;
        tabs.push(NoiseTab {
            ctx: ContextId::new(format!("background-{i}.example"), browser_profile),
            active,
        });
    }
    let mut process = NoiseProcess {
        tabs,
        profile,
        horizon,
        rng,
        acquisitions: 0,
    };
    for tab in 0..process.tabs.len() {
        if process.tabs[tab].active {
            process.schedule_arrival(sched, tab)?;
        }
    }
    Ok(process)
}

impl NoiseProcess {
    pub fn active_tabs(&self) -> usize {
        self.tabs.iter().filter(|t| t.active).count()
    }

    pub fn acquisitions(&self) -> u64 {
        self.acquisitions
    }

    fn schedule_arrival<E: From<NoiseEvent>>(&mut self, sched: &mut Scheduler<E>, tab: usize) -> Result<(), SimError> {
        if self.profile.arrival_rate <= 0.0 {
            return Ok(());
        }
        let gap = sample(
            &mut self.rng,
            DistributionSpec::Exponential {
                mean: 1.0 / self.profile.arrival_rate,
            },
        )?;
        let at = sched.now() + SimTime::from_secs_f64(gap);
        if at < self.horizon {
            sched.schedule(at, NoiseEvent::Arrival { tab }.into())?;
        }
        Ok(())
    }

    pub fn handle<E: From<NoiseEvent>>(
        &mut self,
        sched: &mut Scheduler<E>,
        pool: &mut ResourcePool,
        event: NoiseEvent,
    ) -> Result<(), SimError> {
        match event {
            NoiseEvent::Arrival { tab } => {
                let want = self.rng.random_range(1..=self.profile.burst_max);
                let granted = pool.consume(&self.tabs[tab].ctx, want);
                self.acquisitions += 1;
                if granted > 0 {
                    let hold = sample(
                        &mut self.rng,
                        DistributionSpec::Exponential {
                            mean: self.profile.hold_mean,
                        },
                    )?;
                    sched.schedule_in(
                        SimTime::from_secs_f64(hold),
                        NoiseEvent::Release { tab, count: granted }.into(),
                    );
                }
                self.schedule_arrival(sched, tab)
            }
            NoiseEvent::Release { tab, count } => {
                pool.release(&self.tabs[tab].ctx, count);
                Ok(())
            }
        }
    }
}
