//! Browser entry points for the demo page in `www/`.
//!
//! Each export takes a distribution literal (`atoms=..;probs=..`) and returns
//! a JSON string; the `*_json` functions hold the logic so they can be tested
//! natively.

use cascade_core::analysis::window;
use cascade_core::{
    cascade_moments, find_critical_exponent, fit_growth, growth_series, reduction_pipeline,
    CriticalExponent, FitMode, Regime, StructureFunction, WeightDistribution,
};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Depth cap for the interactive moment table.
pub const MAX_DEMO_LEVELS: usize = 4096;
pub const MAX_DEMO_POINTS: usize = 2000;

fn dist(text: &str) -> Result<WeightDistribution, String> {
    WeightDistribution::parse(text).map_err(|e| e.to_string())
}

fn critical_json(found: CriticalExponent) -> Value {
    match found {
        CriticalExponent::TotallyCritical => json!({"kind": "totally-critical"}),
        CriticalExponent::Root(q) => json!({"kind": "root", "q": q}),
        CriticalExponent::SubcriticalThroughout { q_max } => json!({"kind": "subcritical-throughout", "q_max": q_max}),
        CriticalExponent::SupercriticalThroughout { q_max } => json!({"kind": "supercritical-throughout", "q_max": q_max}),
    }
}

/// `φ_W` sampled at `points` exponents in `[q_lo, q_hi]`.
pub fn phi_curve_json(text: &str, base: u32, q_lo: f64, q_hi: f64, points: usize) -> Result<String, String> {
    if !(q_lo > 0.0 && q_hi > q_lo) || !(2..=MAX_DEMO_POINTS).contains(&points) {
        return Err(format!("need 0 < q_lo < q_hi and 2..={MAX_DEMO_POINTS} points"));
    }
    let sf = StructureFunction::new(base, dist(text)?).map_err(|e| e.to_string())?;
    let mut curve = Vec::with_capacity(points);
    for i in 0..points {
        let q = q_lo + (q_hi - q_lo) * i as f64 / (points - 1) as f64;
        let phi = sf.phi(q).map_err(|e| e.to_string())?;
        curve.push(json!([q, phi, Regime::from_phi(phi).as_str()]));
    }
    let found = find_critical_exponent(&sf, q_hi.max(2.0)).map_err(|e| e.to_string())?;
    Ok(json!({"points": curve, "critical": critical_json(found)}).to_string())
}

/// `ln E[Y_n^k]` for `n ≤ levels`, with the log-log and log-linear slopes
/// over `[levels/16, levels]`.
pub fn moment_growth_json(text: &str, base: u32, k: usize, levels: usize) -> Result<String, String> {
    if levels > MAX_DEMO_LEVELS || levels < 16 {
        return Err(format!("levels must lie in 16..={MAX_DEMO_LEVELS}"));
    }
    let table = cascade_moments(base, &dist(text)?, k, levels).map_err(|e| e.to_string())?;
    let series = growth_series(&table, k).map_err(|e| e.to_string())?;
    let fitted = window(&series, (levels / 16).max(1), levels);
    let slope = |mode| fit_growth(&fitted, mode, 0.0).ok().map(|f| f.slope);
    Ok(json!({
        "n": series.iter().map(|p| p.0).collect::<Vec<_>>(),
        "log_moment": series.iter().map(|p| p.1).collect::<Vec<_>>(),
        "log_log_slope": slope(FitMode::LogLog),
        "log_linear_slope": slope(FitMode::LogLinear),
    })
    .to_string())
}

/// Stages of the iterated reduction from the depth-`n` cascade profile.
pub fn reduction_profile_json(text: &str, base: u32, n: usize, q: f64) -> Result<String, String> {
    if n > MAX_DEMO_LEVELS {
        return Err(format!("n must be at most {MAX_DEMO_LEVELS}"));
    }
    let outcome = reduction_pipeline(base, &dist(text)?, n, q).map_err(|e| e.to_string())?;
    Ok(outcome.to_json().to_string())
}

#[wasm_bindgen]
pub fn phi_curve(dist: &str, base: u32, q_lo: f64, q_hi: f64, points: usize) -> Result<String, JsError> {
    phi_curve_json(dist, base, q_lo, q_hi, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn moment_growth(dist: &str, base: u32, k: usize, levels: usize) -> Result<String, JsError> {
    moment_growth_json(dist, base, k, levels).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn reduction_profile(dist: &str, base: u32, n: usize, q: f64) -> Result<String, JsError> {
    reduction_profile_json(dist, base, n, q).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TC: &str = "atoms=0,2;probs=1/2,1/2";

    fn parse(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn phi_curve_of_the_totally_critical_law_is_flat() {
        let v = parse(phi_curve_json(TC, 2, 1.0, 5.0, 9).unwrap());
        assert_eq!(v["critical"]["kind"], "totally-critical");
        for p in v["points"].as_array().unwrap() {
            assert!(p[1].as_f64().unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn phi_curve_finds_a_root() {
        let s = 3f64.sqrt();
        let law = format!("atoms={},{};probs=1/4,3/4", 1.0 + s, 1.0 - 1.0 / s);
        let v = parse(phi_curve_json(&law, 2, 1.1, 4.0, 5).unwrap());
        assert_eq!(v["critical"]["kind"], "root");
        assert!((v["critical"]["q"].as_f64().unwrap() - 2.0).abs() < 1e-6);
        assert!(phi_curve_json(TC, 2, 3.0, 1.0, 5).is_err());
    }

    #[test]
    fn moment_growth_slopes() {
        let v = parse(moment_growth_json(TC, 2, 2, 1024).unwrap());
        assert_eq!(v["n"].as_array().unwrap().len(), 1025);
        assert!((v["log_log_slope"].as_f64().unwrap() - 1.0).abs() < 0.02);
        let v = parse(moment_growth_json("atoms=3,0;probs=1/3,2/3", 2, 2, 256).unwrap());
        assert!((v["log_linear_slope"].as_f64().unwrap() - 1.5f64.ln()).abs() < 1e-3);
        assert!(moment_growth_json(TC, 2, 2, 100_000).is_err());
        assert!(moment_growth_json("atoms=0,x", 2, 2, 64).is_err());
    }

    #[test]
    fn reduction_profile_stages() {
        let v = parse(reduction_profile_json("atoms=0.5,1.5;probs=1/2,1/2", 2, 8, 4.0).unwrap());
        let stages = v["stages"].as_array().unwrap();
        assert_eq!(stages[0]["exponent"], 4.0);
        assert_eq!(stages[1]["exponent"], 2.0);
        let v = parse(reduction_profile_json(TC, 2, 8, 4.0).unwrap());
        assert_eq!(v["halt"]["reason"], "totally-critical");
    }
}
