//! Browser bindings. Every export takes plain arguments and returns JSON
//! text; the page in `www/` draws it on a canvas.

use poolparty::experiments::{
    evaluate_defenses, presets, run_trial_traced, run_trials, sweep, Actor, Defense, ExperimentSummary, Scenario,
    TraceKind,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct PresetRow {
    name: &'static str,
    kind: &'static str,
    pool_size: u64,
    scope: &'static str,
    source: String,
}

#[derive(Serialize)]
struct Slot {
    slot: usize,
    at_s: f64,
    sent: u64,
    read: Option<u64>,
}

#[derive(Serialize)]
struct RunReport {
    summary: ExperimentSummary,
    /// Sender release and receiver read per slot, from trial 0.
    slots: Vec<Slot>,
    trial0_failure: String,
    race_split: [u64; 2],
}

#[derive(Serialize)]
struct Point {
    label: String,
    summary: ExperimentSummary,
}

fn scenario(preset: &str, trials: u32, seed: u32, noise_rate: f64) -> Result<Scenario, String> {
    let mut s = Scenario::preset(preset)
        .ok_or_else(|| format!("unknown preset {preset:?}"))?
        .with_trials(trials.max(1))
        .with_seed(u64::from(seed));
    if noise_rate > 0.0 {
        s.noise.tab_count = 10;
        s.noise.arrival_rate = noise_rate;
    }
    Ok(s)
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn presets_report() -> Result<String, String> {
    let rows: Vec<PresetRow> = presets()
        .iter()
        .map(|p| PresetRow {
            name: p.name,
            kind: p.pool_kind.as_str(),
            pool_size: p.pool_size,
            scope: p.scope.as_str(),
            source: p.provenance(),
        })
        .collect();
    json(&rows)
}

pub fn run_report(
    preset: &str,
    trials: u32,
    seed: u32,
    noise_rate: f64,
    defense: &str,
    drift: f64,
) -> Result<String, String> {
    let defense = Defense::from_parts(defense, None)?;
    let s = scenario(preset, trials, seed, noise_rate)?
        .with_defense(defense)
        .with_drift(drift);
    let summary = run_trials(&s).map_err(|e| e.to_string())?;
    let (first, trace) = run_trial_traced(&s, 0).map_err(|e| e.to_string())?;
    let mut slots: Vec<Slot> = Vec::new();
    for e in &trace {
        let Some(slot) = e.slot else { continue };
        match e.kind {
            TraceKind::WireRelease if Some(e.actor) == first.sender.map(Actor::Party) => slots.push(Slot {
                slot,
                at_s: e.at.as_secs_f64(),
                sent: e.count,
                read: None,
            }),
            TraceKind::ReceiverRead => {
                if let Some(s) = slots.iter_mut().find(|s| s.slot == slot) {
                    s.read = Some(e.count);
                }
            }
            _ => {}
        }
    }
    json(&RunReport {
        summary,
        slots,
        trial0_failure: first.failure_kind.to_string(),
        race_split: first.race_split,
    })
}

pub fn sweep_report(
    preset: &str,
    param: &str,
    values: &str,
    trials: u32,
    seed: u32,
    noise_rate: f64,
) -> Result<String, String> {
    let values: Vec<f64> = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("not a number: {v:?}")))
        .collect::<Result<_, _>>()?;
    let s = scenario(preset, trials, seed, noise_rate)?;
    let points: Vec<Point> = sweep(&s, param, &values)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(v, summary)| Point {
            label: v.to_string(),
            summary,
        })
        .collect();
    json(&points)
}

pub fn defenses_report(preset: &str, trials: u32, seed: u32, noise_rate: f64) -> Result<String, String> {
    let s = scenario(preset, trials, seed, noise_rate)?;
    let points: Vec<Point> = evaluate_defenses(&s)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(d, summary)| Point {
            label: d.to_string(),
            summary,
        })
        .collect();
    json(&points)
}

#[wasm_bindgen(js_name = presets)]
pub fn presets_js() -> Result<String, JsError> {
    presets_report().map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = runPreset)]
pub fn run_preset_js(
    preset: &str,
    trials: u32,
    seed: u32,
    noise_rate: f64,
    defense: &str,
    drift: f64,
) -> Result<String, JsError> {
    run_report(preset, trials, seed, noise_rate, defense, drift).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sweep)]
pub fn sweep_js(
    preset: &str,
    param: &str,
    values: &str,
    trials: u32,
    seed: u32,
    noise_rate: f64,
) -> Result<String, JsError> {
    sweep_report(preset, param, values, trials, seed, noise_rate).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = defenses)]
pub fn defenses_js(preset: &str, trials: u32, seed: u32, noise_rate: f64) -> Result<String, JsError> {
    defenses_report(preset, trials, seed, noise_rate).map_err(|e| JsError::new(&e))
}
