//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string; failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use instab_core::corsi::corsi_lambda_max;
use instab_core::params::{solve_heterogeneity, DerivedScalars};
use instab_core::spectral::{mc_lambda_max, McOptions, Method};
use instab_core::sweep::config::{Axis, SweepConfig};
use instab_core::sweep::run_phase_diagram;
use instab_core::{ModelParams, Result};

fn respond(r: Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn model(n_assets: usize, n_institutions: usize, q: f64) -> Result<ModelParams> {
    let p = ModelParams::default().with_dims(n_assets, n_institutions).with_q(q);
    p.validate()?;
    Ok(p)
}

/// Investment sizes `B`, `s` and second moment `b` for `(φ, p_B)`, with the
/// derived scalars of the default model at mean degree `q`.
#[wasm_bindgen]
pub fn heterogeneity(phi: f64, p_big: f64, q: f64) -> String {
    respond((|| {
        let h = solve_heterogeneity(phi, p_big)?;
        let p = model(200, 300, q)?;
        let d = DerivedScalars::compute(&p, &h)?;
        Ok(json!({
            "B": h.big,
            "s": h.small,
            "p_B": h.p_big,
            "p_s": h.p_small,
            "b": d.b,
            "eta": d.eta,
            "alpha": d.alpha,
            "kappa": d.kappa,
            "c": d.c,
            "corsi": corsi_lambda_max(&p, d.b)?,
        }))
    })())
}

/// `E[λmax](q)` on `q = q_min, q_min + step, …, q_max` by the closed form and
/// by sampling `samples` networks per point.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn q_curve(
    n_assets: usize,
    n_institutions: usize,
    phi: f64,
    p_big: f64,
    q_min: f64,
    q_max: f64,
    step: f64,
    samples: usize,
    seed: u64,
) -> String {
    respond((|| {
        let h = solve_heterogeneity(phi, p_big)?;
        if !(step > 0.0 && q_min > 0.0 && q_max >= q_min) {
            return Err(instab_core::Error::Config("need 0 < q_min ≤ q_max and step > 0".into()));
        }
        let opts = McOptions {
            workers: 1,
            ..McOptions::default()
        };
        let mut rows = Vec::new();
        let n = ((q_max - q_min) / step + 1e-9).floor() as usize + 1;
        for k in 0..n {
            let q = q_min + step * k as f64;
            let p = model(n_assets, n_institutions, q)?;
            let mc = mc_lambda_max(&p, &h, samples.max(1), seed.wrapping_add(k as u64), &opts)?;
            rows.push(json!({
                "q": q,
                "corsi": corsi_lambda_max(&p, h.second_moment())?,
                "diagonalization": mc.value,
                "stderr": mc.stderr,
            }));
        }
        Ok(json!({ "alpha": (n_assets as f64 / n_institutions as f64).sqrt(), "rows": rows }))
    })())
}

/// Small `(φ, p_B)` phase diagram with diagonalization and the closed form.
#[wasm_bindgen]
pub fn phase_grid(n_phi: usize, n_pb: usize, q: f64, gamma: f64, samples: usize, seed: u64) -> String {
    respond((|| {
        let cfg = SweepConfig {
            model: ModelParams { gamma, ..model(200, 300, q)? },
            phi_axis: Axis { min: 0.0, max: 0.99, n: n_phi },
            p_big_axis: Axis { min: 0.025, max: 0.975, n: n_pb },
            methods: vec![Method::Diagonalization, Method::Corsi],
            samples,
            seed,
            workers: 1,
            ..SweepConfig::default()
        };
        let d = run_phase_diagram(&cfg)?;
        let cells: Vec<Value> = d
            .cells
            .iter()
            .map(|c| {
                let get = |m| c.estimate(m).map(|e| e.value);
                json!({
                    "phi": c.phi,
                    "p_B": c.p_big,
                    "diagonalization": get(Method::Diagonalization),
                    "corsi": get(Method::Corsi),
                    "verdict": c.classification.as_ref().and_then(|k| k.verdict(Method::Corsi)).map(|v| v.name()),
                })
            })
            .collect();
        Ok(json!({ "phi": d.phi, "p_B": d.p_big, "cells": cells, "contours": d.contours }))
    })())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heterogeneity_json() {
        let v: Value = serde_json::from_str(&heterogeneity(0.9, 7.0 / 27.0, 8.0)).unwrap();
        assert!((v["B"].as_f64().unwrap() - 3.0).abs() < 1e-12);
        assert!((v["s"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn errors_are_json() {
        let v: Value = serde_json::from_str(&heterogeneity(0.5, 1.0, 8.0)).unwrap();
        assert!(v["error"].is_string());
    }

    #[test]
    fn small_grid_runs() {
        let v: Value = serde_json::from_str(&phase_grid(3, 2, 8.0, 50.0, 2, 7)).unwrap();
        assert_eq!(v["cells"].as_array().unwrap().len(), 6);
        let c: Value = serde_json::from_str(&q_curve(50, 75, 0.0, 0.5, 2.0, 6.0, 2.0, 2, 1)).unwrap();
        assert_eq!(c["rows"].as_array().unwrap().len(), 3);
    }
}
