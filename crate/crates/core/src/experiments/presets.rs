//! Browser presets: measured pool sizes and scopes, plus the negotiation
//! and pulse intervals back-derived from the measured setup/send times
//! of a 35-bit transmission in 5-bit packets.

use serde::{Deserialize, Serialize};

use crate::pool::PoolScope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolKind {
    WebSocket,
    ServerSentEvents,
    WebWorker,
}

impl PoolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::WebSocket => "WebSocket",
            PoolKind::ServerSentEvents => "SSE",
            PoolKind::WebWorker => "WebWorker",
        }
    }

    /// Share of page loads that use the API, used as the per-tab
    /// activation probability of background noise.
    pub fn page_load_usage(self) -> f64 {
        match self {
            PoolKind::WebWorker => 0.1234,
            PoolKind::WebSocket => 0.0955,
            PoolKind::ServerSentEvents => 0.0079,
        }
    }
}

/// Timing and success rate observed in real browsers, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportedBandwidth {
    pub setup_s: f64,
    pub send_s: f64,
    pub total_s: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrowserPreset {
    pub name: &'static str,
    pub browser: &'static str,
    pub engine: &'static str,
    pub version: &'static str,
    pub pool_kind: PoolKind,
    pub pool_size: u64,
    pub scope: PoolScope,
    pub negotiate_interval: f64,
    pub pulse_interval: f64,
    pub pkt_size: u32,
    pub message_bits: usize,
    pub feedback_max_ms: f64,
    /// Whether the browser fixed the leak before these measurements were
    /// published.
    pub fixed: bool,
    pub reported: Option<ReportedBandwidth>,
}

impl BrowserPreset {
    /// Where the pool size and scope come from.
    pub fn provenance(&self) -> String {
        let mut s = format!(
            "{} {} {} pool limit",
            self.browser,
            self.version,
            self.pool_kind.as_str()
        );
        if self.scope == PoolScope::Application {
            s.push_str(", shared across profiles");
        }
        if self.fixed {
            s.push_str(", since fixed");
        }
        s
    }
}

const fn reported(setup_s: f64, send_s: f64, total_s: f64, success_rate: f64) -> Option<ReportedBandwidth> {
    Some(ReportedBandwidth {
        setup_s,
        send_s,
        total_s,
        success_rate,
    })
}

const WS_CHROMIUM_PULSE: f64 = 0.5 / 7.0;
const SEVEN_PULSES_IN_5S: f64 = 5.0 / 7.0;

pub const PRESETS: &[BrowserPreset] = &[
    BrowserPreset {
        name: "chrome-ws",
        browser: "Chrome",
        engine: "Chromium",
        version: "105.0.5195.125",
        pool_kind: PoolKind::WebSocket,
        pool_size: 255,
        scope: PoolScope::Profile,
        negotiate_interval: 0.1,
        pulse_interval: WS_CHROMIUM_PULSE,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 10.0,
        fixed: false,
        reported: reported(0.1, 0.5, 0.6, 1.0),
    },
    BrowserPreset {
        name: "edge-ws",
        browser: "Edge",
        engine: "Chromium",
        version: "106.0.1370.42",
        pool_kind: PoolKind::WebSocket,
        pool_size: 255,
        scope: PoolScope::Profile,
        negotiate_interval: 0.1,
        pulse_interval: WS_CHROMIUM_PULSE,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 10.0,
        fixed: false,
        reported: reported(0.1, 0.5, 0.6, 1.0),
    },
    BrowserPreset {
        name: "brave-ws",
        browser: "Brave",
        engine: "Chromium",
        version: "1.44.101",
        pool_kind: PoolKind::WebSocket,
        pool_size: 255,
        scope: PoolScope::Profile,
        negotiate_interval: 0.1,
        pulse_interval: WS_CHROMIUM_PULSE,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 10.0,
        fixed: true,
        reported: None,
    },
    BrowserPreset {
        name: "firefox-ws",
        browser: "Firefox",
        engine: "Gecko",
        version: "105.0.1",
        pool_kind: PoolKind::WebSocket,
        pool_size: 200,
        scope: PoolScope::Application,
        negotiate_interval: 2.0,
        pulse_interval: SEVEN_PULSES_IN_5S,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 30.0,
        fixed: false,
        reported: reported(2.0, 5.0, 7.0, 0.71),
    },
    BrowserPreset {
        name: "tor-ws",
        browser: "Tor Browser",
        engine: "Gecko",
        version: "11.5.2",
        pool_kind: PoolKind::WebSocket,
        pool_size: 200,
        scope: PoolScope::Application,
        negotiate_interval: 2.0,
        pulse_interval: SEVEN_PULSES_IN_5S,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 30.0,
        fixed: false,
        reported: reported(2.0, 5.0, 7.0, 0.73),
    },
    // Engine-level Gecko WebSocket pool with no drift quirk configured.
    BrowserPreset {
        name: "gecko-ws",
        browser: "Gecko",
        engine: "Gecko",
        version: "105",
        pool_kind: PoolKind::WebSocket,
        pool_size: 200,
        scope: PoolScope::Application,
        negotiate_interval: 2.0,
        pulse_interval: SEVEN_PULSES_IN_5S,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 30.0,
        fixed: false,
        reported: None,
    },
    BrowserPreset {
        name: "firefox-ww",
        browser: "Firefox",
        engine: "Gecko",
        version: "105.0.1",
        pool_kind: PoolKind::WebWorker,
        pool_size: 512,
        scope: PoolScope::Profile,
        negotiate_interval: 1.5,
        pulse_interval: 7.5 / 7.0,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 20.0,
        fixed: false,
        reported: reported(1.5, 7.5, 9.0, 0.95),
    },
    BrowserPreset {
        name: "brave-sse",
        browser: "Brave",
        engine: "Chromium",
        version: "1.44.101",
        pool_kind: PoolKind::ServerSentEvents,
        pool_size: 1350,
        scope: PoolScope::Profile,
        negotiate_interval: 3.0,
        pulse_interval: SEVEN_PULSES_IN_5S,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 20.0,
        fixed: false,
        reported: reported(3.0, 5.0, 8.0, 1.0),
    },
    BrowserPreset {
        name: "chrome-sse",
        browser: "Chrome",
        engine: "Chromium",
        version: "105.0.5195.125",
        pool_kind: PoolKind::ServerSentEvents,
        pool_size: 1350,
        scope: PoolScope::Profile,
        negotiate_interval: 2.0,
        pulse_interval: SEVEN_PULSES_IN_5S,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 20.0,
        fixed: false,
        reported: reported(2.0, 5.0, 7.0, 1.0),
    },
    BrowserPreset {
        name: "edge-sse",
        browser: "Edge",
        engine: "Chromium",
        version: "106.0.1370.42",
        pool_kind: PoolKind::ServerSentEvents,
        pool_size: 1350,
        scope: PoolScope::Profile,
        negotiate_interval: 2.0,
        pulse_interval: SEVEN_PULSES_IN_5S,
        pkt_size: 5,
        message_bits: 35,
        feedback_max_ms: 20.0,
        fixed: false,
        reported: reported(2.0, 5.0, 7.0, 1.0),
    },
    // Six connections only fit 2-bit packets (2^2 + 1 <= 6).
    BrowserPreset {
        name: "safari-sse",
        browser: "Safari",
        engine: "WebKit",
        version: "15.2",
        pool_kind: PoolKind::ServerSentEvents,
        pool_size: 6,
        scope: PoolScope::Profile,
        negotiate_interval: 2.0,
        pulse_interval: 0.5,
        pkt_size: 2,
        message_bits: 36,
        feedback_max_ms: 20.0,
        fixed: true,
        reported: None,
    },
];

pub fn presets() -> &'static [BrowserPreset] {
    PRESETS
}

pub fn find_preset(name: &str) -> Option<&'static BrowserPreset> {
    PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

/// Presets that have a measured bandwidth row.
pub fn measured_presets() -> impl Iterator<Item = &'static BrowserPreset> {
    PRESETS.iter().filter(|p| p.reported.is_some())
}

/// Fixed-width listing: name, pool kind, size, scope, provenance.
pub fn list_presets() -> String {
    let mut out = format!(
        "{:<12} {:<10} {:>6}  {:<12} {}\n",
        "name", "kind", "size", "scope", "source"
    );
    for p in PRESETS {
        out.push_str(&format!(
            "{:<12} {:<10} {:>6}  {:<12} {}\n",
            p.name,
            p.pool_kind.as_str(),
            p.pool_size,
            p.scope.as_str(),
            p.provenance()
        ));
    }
    out
}
