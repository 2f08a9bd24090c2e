use poolparty::experiments::{
    calibrate_drift_with, evaluate_defenses, run_trial, run_trial_traced, run_trials, sweep, Actor, CalibrationOptions,
    Defense, FailureKind, Scenario, ScriptedAction, TraceKind,
};
use poolparty::protocol::{BitString, PartyRole};
use poolparty::{ContextId, SimTime};

fn message(s: &str) -> BitString {
    s.parse().unwrap()
}

#[test]
fn firefox_trial_ends_at_start_plus_table_total() {
    let s = Scenario::preset("firefox-ws").unwrap();
    let (r, trace) = run_trial_traced(&s, 0).unwrap();
    assert!(r.success);
    // Start wait is the smallest multiple of ceil(2.0 + 7 * 5/7) = 7 s after 0.
    assert_eq!(r.start_wait, SimTime::from_millis(7000));
    let done = trace
        .iter()
        .filter(|e| matches!(e.kind, TraceKind::Terminated(_)))
        .map(|e| e.at)
        .max()
        .unwrap();
    assert_eq!(done, SimTime::from_millis(14_000));
}

#[test]
fn wire_counts_are_value_plus_one() {
    let mut s = Scenario::preset("chrome-ws").unwrap();
    s.message = Some(message("00000111111000110101010101111110000"));
    let (r, trace) = run_trial_traced(&s, 0).unwrap();
    assert!(r.success);
    let sender = r.sender.unwrap();
    let wire: Vec<u64> = trace
        .iter()
        .filter(|e| e.kind == TraceKind::WireRelease && e.actor == Actor::Party(sender))
        .map(|e| e.count)
        .collect();
    // 00000 11111 10001 10101 01010 11111 10000
    assert_eq!(wire, vec![1, 32, 18, 22, 11, 32, 17]);
    let reads: Vec<u64> = trace
        .iter()
        .filter(|e| e.kind == TraceKind::ReceiverRead)
        .map(|e| e.count)
        .collect();
    assert_eq!(reads, wire);
}

#[test]
fn the_majority_holder_sends() {
    let s = Scenario::preset("chrome-ws").unwrap();
    let (r, trace) = run_trial_traced(&s, 3).unwrap();
    let sender = r.sender.unwrap();
    assert_eq!(r.race_split[sender], 128);
    let role = trace
        .iter()
        .find(|e| e.kind == TraceKind::Role(PartyRole::Sender))
        .unwrap();
    assert_eq!((role.actor, role.count), (Actor::Party(sender), 128));
}

#[test]
fn one_noise_acquisition_between_release_and_read_corrupts_one_chunk() {
    let mut s = Scenario::preset("firefox-ws").unwrap();
    s.message = Some(message("10101110011100001111010110110011100"));
    let clean = run_trial(&s, 0).unwrap();
    assert!(clean.success);
    let params = s.protocol_params(s.message.clone().unwrap());
    let slot_start = params.slot_start(clean.start_wait, 3);
    let noisy_ctx = ContextId::new("background.example", "default");
    // Sender feedback is at most 30 ms; the read is at half-pulse (~357 ms).
    s.scripted = vec![
        ScriptedAction {
            at: slot_start + SimTime::from_millis(200),
            ctx: noisy_ctx.clone(),
            consume: 1,
            release: 0,
        },
        ScriptedAction {
            at: slot_start + SimTime::from_millis(500),
            ctx: noisy_ctx,
            consume: 0,
            release: 1,
        },
    ];
    let (r, trace) = run_trial_traced(&s, 0).unwrap();
    assert_eq!(r.failure_kind, FailureKind::CorruptedChunk);
    let sender = r.sender.unwrap();
    let per_slot = |kind: TraceKind| -> Vec<(usize, u64)> {
        trace
            .iter()
            .filter(|e| e.kind == kind && (kind != TraceKind::WireRelease || e.actor == Actor::Party(sender)))
            .map(|e| (e.slot.unwrap(), e.count))
            .collect()
    };
    let sent = per_slot(TraceKind::WireRelease);
    let read = per_slot(TraceKind::ReceiverRead);
    assert_eq!(sent.len(), 7);
    assert_eq!(read.len(), 7);
    let differing: Vec<usize> = sent
        .iter()
        .zip(&read)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0)
        .collect();
    assert_eq!(differing, vec![3]);
}

#[test]
fn partition_defense_kills_the_channel_at_the_race() {
    let s = Scenario::preset("chrome-ws")
        .unwrap()
        .with_defense(Defense::PartitionBySite);
    let (r, trace) = run_trial_traced(&s, 0).unwrap();
    assert_eq!(r.failure_kind, FailureKind::ChannelDead);
    // Each party owns a whole partition and becomes a sender.
    let senders = trace
        .iter()
        .filter(|e| e.kind == TraceKind::Role(PartyRole::Sender))
        .count();
    assert_eq!(senders, 2);
}

#[test]
fn bidirectional_runs_both_ways() {
    let mut s = Scenario::preset("chrome-ws").unwrap();
    s.bidirectional = true;
    for i in 0..10 {
        let (r, trace) = run_trial_traced(&s, i).unwrap();
        assert!(r.success, "{:?}", r.failure_kind);
        assert!(trace.iter().any(|e| e.kind == TraceKind::RoleSwap));
        let wire_actors: std::collections::BTreeSet<_> = trace
            .iter()
            .filter(|e| e.kind == TraceKind::WireRelease)
            .map(|e| e.actor)
            .collect();
        assert_eq!(wire_actors.len(), 2);
    }
}

#[test]
fn sweeps_behave_monotonically() {
    let s = Scenario::preset("chrome-ws").unwrap().with_trials(30);
    for (v, summary) in sweep(&s, "pulse_interval", &[0.1, 0.3, 0.714]).unwrap() {
        assert_eq!(summary.success_rate, 1.0, "pulse {v}");
    }
    let mut noisy = Scenario::preset("firefox-ws").unwrap().with_trials(200);
    noisy.noise.tab_count = 10;
    let rates: Vec<f64> = sweep(&noisy, "arrival_rate", &[0.0, 0.1, 1.0])
        .unwrap()
        .into_iter()
        .map(|(_, s)| s.success_rate)
        .collect();
    assert!(rates.windows(2).all(|w| w[0] >= w[1]), "{rates:?}");
    let drift: Vec<f64> = sweep(
        &Scenario::preset("firefox-ws").unwrap().with_trials(200),
        "drift_probability",
        &[0.0, 0.04, 1.0],
    )
    .unwrap()
    .into_iter()
    .map(|(_, s)| s.success_rate)
    .collect();
    assert_eq!(drift[0], 1.0);
    assert!(drift[1] < 1.0 && drift[1] > 0.5, "{drift:?}");
    assert!(drift[2] < 0.5, "{drift:?}");
}

#[test]
fn firefox_and_tor_calibrate_alike() {
    let opts = CalibrationOptions {
        tolerance: 0.01,
        ..CalibrationOptions::default()
    };
    let ff = calibrate_drift_with(&Scenario::preset("firefox-ws").unwrap().with_trials(1000), 0.71, opts).unwrap();
    let tor = calibrate_drift_with(&Scenario::preset("tor-ws").unwrap().with_trials(1000), 0.73, opts).unwrap();
    assert!(ff.drift_probability > 0.0 && ff.drift_probability < 1.0);
    assert!(
        (ff.drift_probability - tor.drift_probability).abs() <= 0.02,
        "{ff:?} {tor:?}"
    );
}

#[test]
fn calibration_fails_when_drift_cannot_reach_the_target() {
    // Noise alone keeps success below the target even without drift.
    let mut s = Scenario::preset("firefox-ws").unwrap().with_trials(50);
    s.noise.tab_count = 10;
    s.noise.arrival_rate = 5.0;
    let base = run_trials(&s).unwrap().success_rate;
    assert!(base < 0.9);
    assert!(calibrate_drift_with(&s, 0.95, CalibrationOptions::default()).is_err());
}

#[test]
fn defense_table_matches_expectations() {
    let mut base = Scenario::preset("firefox-ww").unwrap().with_trials(50);
    base.noise.tab_count = 10;
    let table = evaluate_defenses(&base).unwrap();
    let rate = |d: &str| table.iter().find(|(x, _)| x.name() == d).unwrap().1.success_rate;
    assert_eq!(rate("partition_site"), 0.0);
    assert_eq!(rate("hybrid_cap"), 0.0);
    assert!(rate("widen") <= rate("none"));
}

#[test]
fn late_race_is_channel_dead() {
    let mut s = Scenario::preset("chrome-ws").unwrap();
    // Second party arrives after negotiation has closed.
    s.start_jitter_ticks = 200_000;
    assert_eq!(run_trial(&s, 0).unwrap().failure_kind, FailureKind::ChannelDead);
}
