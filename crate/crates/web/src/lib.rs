//! Browser bindings for the split-plot design tools.
//!
//! Each exported function takes plain values and returns a JSON string. The
//! logic lives in ordinary Rust functions so it can be tested on the host.

use robust_spd::annealer::search;
use robust_spd::criterion::evaluate;
use robust_spd::presets::{self, Example};
use robust_spd::{LossReport, Problem, SplitPlotDesign, VarianceSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on `M0 * N_T` so a search cannot freeze the page.
pub const MAX_SEARCH_STEPS: usize = 20_000;

fn example(k: u8) -> Result<Example, String> {
    presets::example(k).ok_or_else(|| format!("unknown example {k}; expected 1 or 2"))
}

fn problem(ex: &Example, alpha: f64, d: f64) -> Result<Problem, String> {
    let var = VarianceSpec::with_ratio(d).map_err(|e| e.to_string())?;
    ex.problem(var, alpha).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Evaluation {
    report: LossReport,
    runs: usize,
    plots: Vec<usize>,
}

/// Evaluates a design given as CSV (`plot,F1,...`) for one of the examples.
pub fn evaluate_csv(example_id: u8, csv: &str, alpha: f64, d: f64) -> Result<String, String> {
    let ex = example(example_id)?;
    let pr = problem(&ex, alpha, d)?;
    let design = SplitPlotDesign::from_csv(csv, &ex.layout).map_err(|e| e.to_string())?;
    let report = evaluate(&pr, &design).map_err(|e| e.to_string())?;
    to_json(&Evaluation {
        report,
        runs: design.n(),
        plots: design.plot_sizes(),
    })
}

#[derive(Serialize)]
struct Curve {
    alpha: Vec<f64>,
    loss_root_a: Vec<f64>,
    loss_root_b: Vec<f64>,
}

/// Loss roots of the two reference designs of an example over
/// `points` evenly spaced values of alpha in `[0, alpha_max]`.
pub fn reference_curve(example_id: u8, alpha_max: f64, points: usize, d: f64) -> Result<String, String> {
    if !(alpha_max >= 0.0 && alpha_max.is_finite()) {
        return Err(format!("alpha_max must be finite and nonnegative, got {alpha_max}"));
    }
    if !(2..=500).contains(&points) {
        return Err(format!("points must be in 2..=500, got {points}"));
    }
    let ex = example(example_id)?;
    let (a, b) = match example_id {
        1 => (presets::EXAMPLE1_A, presets::EXAMPLE1_B),
        _ => (presets::EXAMPLE2_A, presets::EXAMPLE2_B),
    };
    let da = presets::reference_design(&ex, a).map_err(|e| e.to_string())?;
    let db = presets::reference_design(&ex, b).map_err(|e| e.to_string())?;
    let mut curve = Curve {
        alpha: Vec::with_capacity(points),
        loss_root_a: Vec::with_capacity(points),
        loss_root_b: Vec::with_capacity(points),
    };
    for i in 0..points {
        let alpha = alpha_max * i as f64 / (points - 1) as f64;
        let pr = problem(&ex, alpha, d)?;
        curve.alpha.push(alpha);
        curve.loss_root_a.push(evaluate(&pr, &da).map_err(|e| e.to_string())?.loss_root);
        curve.loss_root_b.push(evaluate(&pr, &db).map_err(|e| e.to_string())?.loss_root);
    }
    to_json(&curve)
}

#[derive(Serialize)]
struct Found {
    design: String,
    report: LossReport,
    best_trace: Vec<f64>,
    accepted: u64,
    proposals: u64,
}

/// Short annealing search for an example with the preset settings except
/// for the schedule length.
pub fn search_example(example_id: u8, alpha: f64, d: f64, seed: u64, m0: usize, n_t: usize) -> Result<String, String> {
    if m0.saturating_mul(n_t) > MAX_SEARCH_STEPS {
        return Err(format!("M0 * N_T must be at most {MAX_SEARCH_STEPS}"));
    }
    let ex = example(example_id)?;
    let pr = problem(&ex, alpha, d)?;
    let mut params = ex.params.clone();
    params.m0 = m0;
    params.n_t = n_t;
    params.seed = seed;
    let out = search(&pr, &ex.sizes, &params, Some(1)).map_err(|e| e.to_string())?;
    to_json(&Found {
        design: out.best.to_csv(&ex.layout),
        report: out.report,
        best_trace: out.trace.iter().map(|t| t.best_loss_root).collect(),
        accepted: out.stats.accepted,
        proposals: out.stats.proposals,
    })
}

#[wasm_bindgen(js_name = evaluateDesign)]
pub fn evaluate_design(example_id: u8, csv: &str, alpha: f64, d: f64) -> Result<String, JsError> {
    evaluate_csv(example_id, csv, alpha, d).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = referenceCurve)]
pub fn reference_curve_js(example_id: u8, alpha_max: f64, points: usize, d: f64) -> Result<String, JsError> {
    reference_curve(example_id, alpha_max, points, d).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = searchExample)]
pub fn search_example_js(example_id: u8, alpha: f64, d: f64, seed: u32, m0: usize, n_t: usize) -> Result<String, JsError> {
    search_example(example_id, alpha, d, seed.into(), m0, n_t).map_err(|e| JsError::new(&e))
}

/// The reference design CSV text, for prefilling the editor.
#[wasm_bindgen(js_name = referenceDesign)]
pub fn reference_design_csv(example_id: u8, which: char) -> Option<String> {
    let text = match (example_id, which) {
        (1, 'A') => presets::EXAMPLE1_A,
        (1, 'B') => presets::EXAMPLE1_B,
        (2, 'A') => presets::EXAMPLE2_A,
        (2, 'B') => presets::EXAMPLE2_B,
        _ => return None,
    };
    Some(text.to_string())
}
