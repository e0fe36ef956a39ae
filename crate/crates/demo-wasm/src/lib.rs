//! Browser bindings. Each export takes plain numbers or strings and returns
//! JSON so the page needs no glue beyond `JSON.parse`.
//!
//! The `*_json` functions hold the logic and run natively in tests; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use famm_core::famm::{fire_rules, fuzzify, select_model as pick, MembershipConfig, MembershipDegrees, MotionModel, RuleBase};
use famm_core::metrics::{mean_std, position_errors, rms};
use famm_core::pipeline::{replay, FammConfig, FilterConfig, PipelineConfig, RunReport};
use famm_core::sim::{Dataset, Regime, SensorNoiseSpec};
use famm_core::vision::{build_transform, VisionDelta};
use famm_core::Vector3;
use serde_json::{json, Value};
use std::sync::OnceLock;
use wasm_bindgen::prelude::*;

/// Longest replay the page may request, in seconds of sensor time.
pub const MAX_SECONDS: f64 = 900.0;

fn rules() -> &'static RuleBase {
    static RULES: OnceLock<RuleBase> = OnceLock::new();
    RULES.get_or_init(RuleBase::default_rules)
}

fn degrees(d: &MembershipDegrees) -> Value {
    json!({ "low": d.low, "medium": d.medium, "high": d.high })
}

/// Memberships, the rules that fire and the chosen model for one step.
/// `yr_deg` is in degrees for the slider's sake.
pub fn select_model_json(yp: f64, yr_deg: f64, current: &str) -> Result<String, String> {
    let current: MotionModel = current.parse().map_err(|e| format!("{e}"))?;
    let m = MembershipConfig::default();
    let dp = fuzzify(yp, &m.positional).map_err(|e| e.to_string())?;
    let dr = fuzzify(yr_deg.to_radians(), &m.rotational).map_err(|e| e.to_string())?;
    let fired = fire_rules(&dp, &dr, current, rules());
    let next = pick(&fired).map_err(|e| e.to_string())?;
    let active: Vec<Value> = fired
        .iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(r, s)| json!({ "rule": r.to_string(), "strength": s }))
        .collect();
    Ok(json!({
        "yp": degrees(&dp),
        "yr": degrees(&dr),
        "fired": active,
        "next": next.to_string(),
        "breakpoints": {
            "positional": [m.positional.low_peak, m.positional.med_peak, m.positional.high_sat],
            "rotational_deg": [
                m.rotational.low_peak.to_degrees(),
                m.rotational.med_peak.to_degrees(),
                m.rotational.high_sat.to_degrees()
            ],
        },
    })
    .to_string())
}

fn track(report: &RunReport, ds: &Dataset) -> Result<Value, String> {
    let origin = report.frame_origin.ok_or("no GPS fix in the replay window")?;
    let errors = position_errors(&report.steps, &origin, ds).map_err(|e| e.to_string())?;
    let xy: Vec<[f64; 2]> = report.steps.iter().map(|s| [s.position.x, s.position.y]).collect();
    let models: Vec<u8> = report.steps.iter().map(|s| s.model.index() as u8).collect();
    let truth: Vec<[f64; 2]> = report
        .steps
        .iter()
        .map(|s| ds.truth_in_frame(&origin, s.t).map(|p| [p.x, p.y]))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let (mean, std) = mean_std(&report.steps.iter().map(|s| s.y_p).collect::<Vec<_>>());
    Ok(json!({
        "xy": xy,
        "truth": truth,
        "models": models,
        "mean_error": mean,
        "std_error": std,
        "rms": rms(&errors),
        "final_trace": report.summary.final_trace,
    }))
}

/// Replays the first `seconds` of a regime under FAMM and CMM.
pub fn simulate_json(regime: &str, seed: u64, seconds: f64) -> Result<String, String> {
    let regime: Regime = regime.parse().map_err(|e| format!("{e}"))?;
    if !(seconds > 1.0 && seconds <= MAX_SECONDS) {
        return Err(format!("seconds must be in (1, {MAX_SECONDS}]"));
    }
    let mut ds = Dataset::regime(regime, seed, &SensorNoiseSpec::default()).map_err(|e| e.to_string())?;
    ds.truncate(seconds);
    let pc = PipelineConfig::default();
    let filter = FilterConfig::default();
    let famm = replay(&ds, &pc, &filter, &FammConfig::default()).map_err(|e| e.to_string())?;
    let cmm = replay(&ds, &pc, &filter, &FammConfig::cmm()).map_err(|e| e.to_string())?;
    let names: Vec<String> = MotionModel::all().map(|m| m.to_string()).collect();
    Ok(json!({
        "regime": regime.name(),
        "seed": seed,
        "model_names": names,
        "famm": track(&famm, &ds)?,
        "cmm": track(&cmm, &ds)?,
    })
    .to_string())
}

/// Keyframe transform, row-major 4x4.
pub fn transform_values(rx: f64, ry: f64, rz: f64, tx: f64, ty: f64, tz: f64) -> Result<Vec<f64>, String> {
    let d = VisionDelta::new(0.0, Vector3::new(rx, ry, rz), Vector3::new(tx, ty, tz)).map_err(|e| e.to_string())?;
    let m = build_transform(&d);
    let m = m.matrix();
    Ok((0..4).flat_map(|i| (0..4).map(move |j| m[(i, j)])).collect())
}

#[wasm_bindgen]
pub fn select_model(yp: f64, yr_deg: f64, current: &str) -> Result<String, JsError> {
    select_model_json(yp, yr_deg, current).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(regime: &str, seed: u32, seconds: f64) -> Result<String, JsError> {
    simulate_json(regime, u64::from(seed), seconds).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn transform(rx: f64, ry: f64, rz: f64, tx: f64, ty: f64, tz: f64) -> Result<Vec<f64>, JsError> {
    transform_values(rx, ry, rz, tx, ty, tz).map_err(|e| JsError::new(&e))
}
