//! Browser bindings. Every entry point takes and returns JSON strings; the
//! plain `*_json` functions hold the logic so they can be tested natively.

use serde_json::{json, Value};
use trilevel::bounds::total_bound;
use trilevel::config::apply_overrides;
use trilevel::drift::embedding_drift;
use trilevel::report::{bounds_table, counterexample_report, format_bounds_table};
use trilevel::{run, Scenario, SystemConfig};
use wasm_bindgen::prelude::*;

/// Longest simulated horizon the page may request, in seconds.
pub const MAX_DURATION: f64 = 2000.0;

fn config_from(overrides: &str) -> Result<SystemConfig, String> {
    let sets: Vec<&str> = overrides.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let c = apply_overrides(&SystemConfig::default(), &sets).map_err(|e| e.to_string())?;
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn scenario(name: &str, duration: f64) -> Result<Scenario, String> {
    if !(duration.is_finite() && (0.0..=MAX_DURATION).contains(&duration)) {
        return Err(format!("duration must lie in [0, {MAX_DURATION}] s"));
    }
    Ok(Scenario::by_name(name).map_err(|e| e.to_string())?.with_duration(duration))
}

/// Bound table rows for a comma-separated list of swarm sizes.
pub fn bounds_json(overrides: &str, sizes: &str) -> Result<String, String> {
    let config = config_from(overrides)?;
    let ns = sizes
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("invalid swarm size `{s}`")))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = bounds_table(&config, &ns).map_err(|e| e.to_string())?;
    Ok(json!({ "text": format_bounds_table(&rows), "rows": rows }).to_string())
}

/// Per-window embedding drift and weight norms next to their bounds.
pub fn drift_json(overrides: &str, scenario_name: &str, duration: f64) -> Result<String, String> {
    let base = config_from(overrides)?;
    let sc = scenario(scenario_name, duration)?;
    let config = sc.configure(&base);
    let trace = run(&sc, &config, config.seed).map_err(|e| e.to_string())?;
    let bounds = total_bound(&config).map_err(|e| e.to_string())?;
    let t: Vec<f64> = trace.snapshots.iter().map(|s| s.t).collect();
    let mut d_phi = vec![0.0];
    for w in t.windows(2) {
        d_phi.push(embedding_drift(&trace, w[0], w[1]).map_err(|e| e.to_string())?);
    }
    let finite = |x: f64| if x.is_finite() { Value::from(x) } else { Value::Null };
    Ok(json!({
        "t": t,
        "d_phi": d_phi,
        "phi_max": finite(bounds.phi_max),
        "max_weight_norm": trace.snapshots.iter().map(|s| s.max_weight_norm).collect::<Vec<_>>(),
        "w_max": finite(bounds.w_max),
        "failures": trace.failures(),
        "alarms": trace.alarms(),
    })
    .to_string())
}

/// Counterexample replay: analytic rows, measurements and the verdict.
pub fn counterexample_json(overrides: &str, scenario_name: &str, duration: f64) -> Result<String, String> {
    let base = config_from(overrides)?;
    let sc = scenario(scenario_name, duration)?;
    let (report, trace) = counterexample_report(&sc, &base, base.seed).map_err(|e| e.to_string())?;
    let growth: Vec<[f64; 2]> = trace.snapshots.iter().map(|s| [s.t, s.max_weight_norm]).collect();
    Ok(json!({ "report": report, "growth": growth }).to_string())
}

#[wasm_bindgen]
pub fn bounds(overrides: &str, sizes: &str) -> Result<String, JsError> {
    bounds_json(overrides, sizes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn drift(overrides: &str, scenario_name: &str, duration: f64) -> Result<String, JsError> {
    drift_json(overrides, scenario_name, duration).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn counterexample(overrides: &str, scenario_name: &str, duration: f64) -> Result<String, JsError> {
    counterexample_json(overrides, scenario_name, duration).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn bounds_rows_and_text() {
        let v = parse(&bounds_json("", "10, 30").unwrap());
        assert_eq!(v["rows"].as_array().unwrap().len(), 2);
        assert!(v["text"].as_str().unwrap().contains("75.0267"));
        assert!(bounds_json("", "ten").is_err());
        assert!(bounds_json("no_such=1", "10").is_err());
    }

    #[test]
    fn drift_series_stays_under_bound() {
        let v = parse(&drift_json("n_agents=5", "baseline", 40.0).unwrap());
        let bound = v["phi_max"].as_f64().unwrap();
        assert_eq!(v["t"].as_array().unwrap().len(), 21);
        assert!(v["d_phi"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap() <= bound));
        assert!(drift_json("", "baseline", 1e9).is_err());
    }

    #[test]
    fn growth_follows_envelope() {
        let v = parse(&counterexample_json("n_agents=3", "delta_zero", 100.0).unwrap());
        assert_eq!(v["report"]["expected_violation_confirmed"], true);
        let last = v["growth"].as_array().unwrap().last().unwrap();
        assert!((last[1].as_f64().unwrap() - 3.5).abs() < 1e-9);
    }
}
