//! Browser bindings for the demo page. Every entry point returns a JSON
//! string so the page needs no generated TypeScript types.

use serde_json::{json, Value};
use slr_core::admm::{decompose, HyperParams};
use slr_core::compress::{compression_rate, CompressedLayer};
use slr_core::pipeline::{compare_nonlinear_linear, GridPoint};
use slr_core::prox::{prox_l21, svd, svt};
use slr_core::synthetic::{gaussian, rng, PlantedSpec};
use slr_core::tensor::Matrix;
use wasm_bindgen::prelude::*;

fn matrix_json(m: &Matrix) -> Value {
    json!({ "rows": m.rows(), "cols": m.cols(), "data": m.as_slice() })
}

fn js(e: slr_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Applies both proximal maps to a random matrix with a few loud columns and
/// reports column norms and singular values before and after.
pub fn shrink_json(seed: u64, rows: usize, cols: usize, threshold1: f64, threshold2: f64) -> slr_core::Result<String> {
    let mut r = rng(seed);
    let mut c = gaussian(&mut r, rows, cols, 1.0);
    for j in (0..cols).step_by(4) {
        let loud: Vec<f64> = c.column(j).iter().map(|v| v * 4.0).collect();
        c.set_column(j, &loud);
    }
    let a = prox_l21(&c, threshold1)?;
    let (b, factors) = svt(&c, threshold2)?;
    Ok(json!({
        "input": matrix_json(&c),
        "column_norms": c.column_norms(),
        "shrunk_column_norms": a.column_norms(),
        "sparse": matrix_json(&a),
        "singular_values": svd(&c)?.singular_values,
        "shrunk_singular_values": factors.singular_values,
        "lowrank": matrix_json(&b),
    })
    .to_string())
}

/// Decomposes a planted 16×32 layer and compares the result with the truth.
pub fn planted_json(seed: u64, lambda1: f64, lambda2: f64, t: f64, max_iter: usize) -> slr_core::Result<String> {
    let planted = PlantedSpec::default().generate(seed);
    let mut hp = HyperParams::new(lambda1, lambda2);
    hp.t = t;
    hp.max_iter = max_iter;
    hp.validate()?;
    let d = decompose(&planted.problem, &hp)?;
    let layer = CompressedLayer::from_decomposition("planted", &d, &hp, 0.0, 1e-10)?;
    let cr = compression_rate(&layer);
    let found = &layer.sparse.nz_col_indices;
    let common = found.iter().filter(|j| planted.support.contains(j)).count();
    let union = found.len() + planted.support.len() - common;
    let jaccard = if union == 0 { 1.0 } else { common as f64 / union as f64 };
    let w = &planted.problem.w;
    Ok(json!({
        "w": matrix_json(w),
        "a": matrix_json(&d.a),
        "b": matrix_json(&d.b),
        "true_a": matrix_json(&planted.a),
        "true_support": planted.support,
        "support": found,
        "jaccard": jaccard,
        "rank": layer.lowrank.rank(),
        "error": d.a.add(&d.b).sub(w).frobenius_sq() / w.frobenius_sq(),
        "cr": cr,
        "description": cr.describe(),
        "iterations": d.state.iter,
        "converged": d.state.converged,
        "objective": d.state.history.iter().map(|h| h.objective.total).collect::<Vec<_>>(),
        "residual": d.state.history.iter().map(|h| h.relative_residual).collect::<Vec<_>>(),
        "recommended_regime": hp.in_recommended_regime(),
    })
    .to_string())
}

/// Fits a noisy planted layer behind nonnegative inputs to its post-ReLU and
/// to its linear response over `points` geometric λ1 values in [lo, hi].
pub fn sweep_json(seed: u64, lo: f64, hi: f64, points: usize, max_iter: usize) -> slr_core::Result<String> {
    let spec = PlantedSpec {
        samples: 20,
        noise: 0.03,
        input_scale: 0.2,
        nonnegative_inputs: true,
        ..Default::default()
    };
    let planted = spec.generate(seed);
    let points = points.max(1);
    let grid: Vec<GridPoint> = (0..points)
        .map(|i| {
            let f = if points == 1 {
                0.0
            } else {
                i as f64 / (points - 1) as f64
            };
            let lambda1 = lo * (hi / lo).powf(f);
            GridPoint {
                lambda1,
                lambda2: 2.75 * lambda1,
            }
        })
        .collect();
    let mut hp = HyperParams::new(grid[0].lambda1, grid[0].lambda2);
    hp.t = 30.0;
    hp.max_iter = max_iter;
    let table = compare_nonlinear_linear(&planted.problem, &grid, &hp, seed, 0.0, 1e-10)?;
    Ok(serde_json::to_string(&table).expect("comparison serializes"))
}

#[wasm_bindgen]
pub fn shrink(seed: u32, rows: usize, cols: usize, threshold1: f64, threshold2: f64) -> Result<String, JsError> {
    shrink_json(seed.into(), rows, cols, threshold1, threshold2).map_err(js)
}

#[wasm_bindgen]
pub fn planted(seed: u32, lambda1: f64, lambda2: f64, t: f64, max_iter: usize) -> Result<String, JsError> {
    planted_json(seed.into(), lambda1, lambda2, t, max_iter).map_err(js)
}

#[wasm_bindgen]
pub fn sweep(seed: u32, lo: f64, hi: f64, points: usize, max_iter: usize) -> Result<String, JsError> {
    sweep_json(seed.into(), lo, hi, points, max_iter).map_err(js)
}
