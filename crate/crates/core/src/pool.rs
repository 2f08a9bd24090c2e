//! The covert medium: a limited resource pool shared according to a scope.
//!
//! Contexts can only consume and release. How many resources a consume
//! actually obtained is learned after a feedback delay; releases take
//! effect at once. The enforced limit may silently grow (drift).

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::PoolAccess;
use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("pool limit must be at least 1, got {0}")]
    InvalidLimit(u64),
    #[error("drift probability must be within [0, 1], got {0}")]
    InvalidDrift(f64),
    #[error("feedback delay must be finite and non-negative, got {0} ms")]
    InvalidFeedback(f64),
}

/// A browsing context: the site a script runs on inside a browser profile.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextId {
    pub site: String,
    pub profile: String,
}

impl ContextId {
    pub fn new(site: impl Into<String>, profile: impl Into<String>) -> Self {
        Self {
            site: site.into(),
            profile: profile.into(),
        }
    }
}

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.site, self.profile)
    }
}

/// Which contexts draw from the same pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolScope {
    /// One pool for the whole browser, across profiles.
    Application,
    /// One pool per profile, shared across sites.
    Profile,
    /// One pool per site.
    Site,
    /// One pool per (site, profile).
    SiteAndProfile,
}

impl PoolScope {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolScope::Application => "Application",
            PoolScope::Profile => "Profile",
            PoolScope::Site => "Site",
            PoolScope::SiteAndProfile => "SiteAndProfile",
        }
    }
}

impl fmt::Display for PoolScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PoolScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "application" | "app" => Ok(PoolScope::Application),
            "profile" => Ok(PoolScope::Profile),
            "site" => Ok(PoolScope::Site),
            "siteandprofile" | "siteprofile" => Ok(PoolScope::SiteAndProfile),
            _ => Err(format!("unknown pool scope {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PartitionKey {
    Global,
    Profile(String),
    Site(String),
    SiteAndProfile(String, String),
}

pub fn partition_key(scope: PoolScope, ctx: &ContextId) -> PartitionKey {
    match scope {
        PoolScope::Application => PartitionKey::Global,
        PoolScope::Profile => PartitionKey::Profile(ctx.profile.clone()),
        PoolScope::Site => PartitionKey::Site(ctx.site.clone()),
        PoolScope::SiteAndProfile => PartitionKey::SiteAndProfile(ctx.site.clone(), ctx.profile.clone()),
    }
}

/// Silent growth of the enforced limit: each consume attempt bumps the
/// limit of the caller's partition by one with `drift_probability`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriftModel {
    pub enabled: bool,
    pub drift_probability: f64,
}

impl DriftModel {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn with_probability(p: f64) -> Self {
        Self {
            enabled: p > 0.0,
            drift_probability: p,
        }
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        if !(0.0..=1.0).contains(&self.drift_probability) {
            return Err(PoolError::InvalidDrift(self.drift_probability));
        }
        Ok(())
    }
}

/// Latency between issuing a consume and learning its outcome. Every
/// request in a batch resolves after an independent uniform delay in
/// `[0, max_delay_ms]`; the requester hears back after the slowest one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeedbackModel {
    pub max_delay_ms: f64,
}

impl FeedbackModel {
    pub fn immediate() -> Self {
        Self { max_delay_ms: 0.0 }
    }

    pub fn uniform_ms(max_delay_ms: f64) -> Self {
        Self { max_delay_ms }
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        if !(self.max_delay_ms.is_finite() && self.max_delay_ms >= 0.0) {
            return Err(PoolError::InvalidFeedback(self.max_delay_ms));
        }
        Ok(())
    }

    /// Delay until the last of `n` requests resolves. The maximum of `n`
    /// iid uniforms on `[0, D]` is distributed as `D * U^(1/n)`.
    pub fn batch_delay<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> SimTime {
        let u: f64 = rng.random();
        if self.max_delay_ms <= 0.0 || n == 0 {
            return SimTime::ZERO;
        }
        SimTime::from_secs_f64(self.max_delay_ms / 1e3 * u.powf(1.0 / n as f64))
    }
}

/// Outcome of a consume: `granted` becomes known to the requester at
/// `ready_at`, although the resources are already held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingGrant {
    pub requested: u64,
    pub granted: u64,
    pub ready_at: SimTime,
}

#[derive(Debug, Clone)]
pub struct ResourcePool {
    base_limit: u64,
    scope: PoolScope,
    drift: DriftModel,
    feedback: FeedbackModel,
    site_cap: Option<u64>,
    limits: BTreeMap<PartitionKey, u64>,
    held_by: BTreeMap<ContextId, u64>,
    drift_rng: ChaCha8Rng,
    feedback_rng: ChaCha8Rng,
}

impl ResourcePool {
    pub fn new(
        base_limit: u64,
        scope: PoolScope,
        drift: DriftModel,
        feedback: FeedbackModel,
    ) -> Result<Self, PoolError> {
        if base_limit < 1 {
            return Err(PoolError::InvalidLimit(base_limit));
        }
        drift.validate()?;
        feedback.validate()?;
        Ok(Self {
            base_limit,
            scope,
            drift,
            feedback,
            site_cap: None,
            limits: BTreeMap::new(),
            held_by: BTreeMap::new(),
            drift_rng: ChaCha8Rng::seed_from_u64(0),
            feedback_rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    /// Reseeds the drift and feedback streams (independent of each other).
    pub fn seeded(mut self, seed: u64) -> Self {
        self.drift_rng = ChaCha8Rng::seed_from_u64(seed);
        self.drift_rng.set_stream(1);
        self.feedback_rng = ChaCha8Rng::seed_from_u64(seed);
        self.feedback_rng.set_stream(2);
        self
    }

    /// Caps how many resources any single site may hold at once.
    pub fn with_site_cap(mut self, cap: u64) -> Self {
        self.site_cap = Some(cap);
        self
    }

    pub fn base_limit(&self) -> u64 {
        self.base_limit
    }

    pub fn scope(&self) -> PoolScope {
        self.scope
    }

    pub fn drift(&self) -> DriftModel {
        self.drift
    }

    pub fn feedback(&self) -> FeedbackModel {
        self.feedback
    }

    pub fn site_cap(&self) -> Option<u64> {
        self.site_cap
    }

    pub fn key_of(&self, ctx: &ContextId) -> PartitionKey {
        partition_key(self.scope, ctx)
    }

    /// Enforced limit of the partition `ctx` belongs to.
    pub fn current_limit(&self, ctx: &ContextId) -> u64 {
        self.partition_limit(&self.key_of(ctx))
    }

    pub fn partition_limit(&self, key: &PartitionKey) -> u64 {
        self.limits.get(key).copied().unwrap_or(self.base_limit)
    }

    pub fn held(&self, ctx: &ContextId) -> u64 {
        self.held_by.get(ctx).copied().unwrap_or(0)
    }

    pub fn held_in_partition(&self, key: &PartitionKey) -> u64 {
        self.held_by
            .iter()
            .filter(|(c, _)| &self.key_of(c) == key)
            .map(|(_, n)| n)
            .sum()
    }

    fn held_by_site(&self, site: &str) -> u64 {
        self.held_by
            .iter()
            .filter(|(c, _)| c.site == site)
            .map(|(_, n)| n)
            .sum()
    }

    /// Free resources in the partition of `ctx`.
    pub fn available_in_partition(&self, ctx: &ContextId) -> u64 {
        let key = self.key_of(ctx);
        self.partition_limit(&key) - self.held_in_partition(&key)
    }

    /// How many more `ctx` could obtain right now, honoring any site cap.
    pub fn obtainable(&self, ctx: &ContextId) -> u64 {
        let free = self.available_in_partition(ctx);
        match self.site_cap {
            Some(cap) => free.min(cap.saturating_sub(self.held_by_site(&ctx.site))),
            None => free,
        }
    }

    /// Every partition that has been touched, with (limit, held).
    pub fn partitions(&self) -> Vec<(PartitionKey, u64, u64)> {
        let mut keys: Vec<PartitionKey> = self.held_by.keys().map(|c| self.key_of(c)).collect();
        keys.extend(self.limits.keys().cloned());
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|k| {
                let limit = self.partition_limit(&k);
                let held = self.held_in_partition(&k);
                (k, limit, held)
            })
            .collect()
    }

    fn roll_drift(&mut self, ctx: &ContextId) {
        if !self.drift.enabled {
            return;
        }
        let hit = self.drift_rng.random::<f64>() < self.drift.drift_probability;
        if hit {
            let key = self.key_of(ctx);
            let limit = self.partition_limit(&key);
            self.limits.insert(key, limit + 1);
        }
    }

    fn grant(&mut self, ctx: &ContextId, n: u64) -> u64 {
        let g = n.min(self.obtainable(ctx));
        if g > 0 {
            *self.held_by.entry(ctx.clone()).or_insert(0) += g;
        }
        g
    }

    /// Immediate consume: rolls drift once, then grants what is free.
    pub fn consume(&mut self, ctx: &ContextId, n: u64) -> u64 {
        self.roll_drift(ctx);
        self.grant(ctx, n)
    }

    /// Issues `n` requests at `at`. The grant is settled now; the
    /// requester may only act on it at `ready_at`.
    pub fn consume_batch(&mut self, ctx: &ContextId, n: u64, at: SimTime) -> PendingGrant {
        let granted = self.consume(ctx, n);
        let delay = self.feedback.batch_delay(n, &mut self.feedback_rng);
        PendingGrant {
            requested: n,
            granted,
            ready_at: at + delay,
        }
    }

    /// Batches issued at the same instant by different contexts. Their
    /// requests interleave one resource at a time in the given order, so
    /// two identical simultaneous batches split a pool evenly.
    pub fn consume_concurrent(&mut self, requests: &[(ContextId, u64)], at: SimTime) -> Vec<PendingGrant> {
        for (ctx, _) in requests {
            self.roll_drift(ctx);
        }
        let mut granted = vec![0u64; requests.len()];
        loop {
            let mut progressed = false;
            for (i, (ctx, n)) in requests.iter().enumerate() {
                if granted[i] < *n && self.grant(ctx, 1) == 1 {
                    granted[i] += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        requests
            .iter()
            .zip(granted)
            .map(|((_, n), g)| PendingGrant {
                requested: *n,
                granted: g,
                ready_at: at + self.feedback.batch_delay(*n, &mut self.feedback_rng),
            })
            .collect()
    }

    /// Releases up to `n` of the resources held by `ctx`. Immediate.
    pub fn release(&mut self, ctx: &ContextId, n: u64) -> u64 {
        let Some(held) = self.held_by.get_mut(ctx) else {
            return 0;
        };
        let r = n.min(*held);
        *held -= r;
        if *held == 0 {
            self.held_by.remove(ctx);
        }
        r
    }

    /// Consumes in batches until one returns nothing new. Returns the
    /// total granted and when the requester learns the last outcome.
    pub fn exhaust(&mut self, ctx: &ContextId, at: SimTime) -> (u64, SimTime) {
        let mut total = 0;
        let mut now = at;
        for _ in 0..MAX_EXHAUST_ROUNDS {
            let want = self.current_limit(ctx).saturating_sub(self.held(ctx)) + 1;
            let g = self.consume_batch(ctx, want, now);
            total += g.granted;
            now = g.ready_at;
            if g.granted == 0 {
                break;
            }
        }
        (total, now)
    }

    /// Conservation and limit checks; `Err` names the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (key, limit, held) in self.partitions() {
            if held > limit {
                return Err(format!("{key:?}: held {held} exceeds limit {limit}"));
            }
            if limit < self.base_limit {
                return Err(format!("{key:?}: limit {limit} below base {}", self.base_limit));
            }
        }
        if let Some(cap) = self.site_cap {
            for ctx in self.held_by.keys() {
                let s = self.held_by_site(&ctx.site);
                if s > cap {
                    return Err(format!("site {} holds {s} over cap {cap}", ctx.site));
                }
            }
        }
        Ok(())
    }

    pub fn handle<'a>(&'a mut self, ctx: &'a ContextId) -> PoolHandle<'a> {
        PoolHandle { pool: self, ctx }
    }
}

const MAX_EXHAUST_ROUNDS: usize = 64;

/// Immediate-mode access for one context.
pub struct PoolHandle<'a> {
    pool: &'a mut ResourcePool,
    ctx: &'a ContextId,
}

impl PoolAccess for PoolHandle<'_> {
    fn consume(&mut self, n: u64) -> u64 {
        self.pool.consume(self.ctx, n)
    }

    fn release(&mut self, n: u64) -> u64 {
        self.pool.release(self.ctx, n)
    }
}
