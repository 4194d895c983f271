//! Browser bindings. Every export takes and returns JSON strings; errors come
//! back as a thrown string.

use freezeout::freezing::{ensemble_stats, Bins};
use freezeout::liouvillian::sector_spectrum;
use freezeout::models::ModelConfig;
use freezeout::trajectory::{run_ensemble, run_trajectory, UnravelingConfig};
use serde::Deserialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest ensemble the page may ask for; everything runs on the UI thread.
pub const MAX_TRAJ: u64 = 2000;

#[derive(Deserialize)]
struct Request {
    model: ModelConfig,
    #[serde(default)]
    unraveling: UnravelingConfig,
}

fn parse(request: &str) -> Result<Request, String> {
    serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))
}

fn err(e: freezeout::Error) -> String {
    e.to_string()
}

/// One trajectory's log weights and normalized weights against time.
pub fn trajectory_weights_json(request: &str) -> Result<String, String> {
    let req = parse(request)?;
    let model = req.model.build().map_err(err)?;
    let structure = model.structure().map_err(err)?;
    let rec = run_trajectory(&model, &req.unraveling, &mut []).map_err(err)?;
    let t: Vec<f64> = rec.samples.iter().map(|s| s.t).collect();
    // JSON has no infinities; unoccupied subspaces become null
    let log_w: Vec<Vec<Option<f64>>> =
        rec.samples.iter().map(|s| s.log_w.iter().map(|x| x.is_finite().then_some(*x)).collect()).collect();
    let p: Vec<Vec<f64>> = rec.samples.iter().map(|s| s.probabilities()).collect();
    let labels: Vec<&str> = structure.subspaces().iter().map(|s| s.label.as_str()).collect();
    Ok(json!({"labels": labels, "t": t, "log_w": log_w, "p": p, "freeze": rec.freeze, "jumps": rec.jump_count})
        .to_string())
}

/// Eigenvalues of one `(alpha, alpha')` sector of the Liouvillian.
pub fn sector_spectrum_json(request: &str, alpha: usize, alpha_prime: usize) -> Result<String, String> {
    let req = parse(request)?;
    let model = req.model.build().map_err(err)?;
    let structure = model.structure().map_err(err)?;
    let s = sector_spectrum(&structure, &model.h, &model.jumps, (alpha, alpha_prime), None).map_err(err)?;
    let eig: Vec<[f64; 2]> = s.eigenvalues.iter().map(|z| [z.re, z.im]).collect();
    Ok(json!({
        "pair": [alpha, alpha_prime],
        "eigenvalues": eig,
        "gap": s.gap,
        "spectral_radius": s.spectral_radius,
        "n_traceless": s.traceless_nondecaying.len(),
        "block_dims": structure.block_dims(),
    })
    .to_string())
}

/// Freeze-time histogram and destination fractions of a small ensemble.
pub fn freeze_histogram_json(request: &str, n_traj: u64, bins: usize) -> Result<String, String> {
    if n_traj == 0 || n_traj > MAX_TRAJ {
        return Err(format!("n_traj must be in 1..={MAX_TRAJ}"));
    }
    let req = parse(request)?;
    let model = req.model.build().map_err(err)?;
    let ens = run_ensemble(&model, &req.unraveling, n_traj).map_err(err)?;
    if ens.records.is_empty() {
        return Err("every trajectory failed".into());
    }
    let bins = if bins == 0 { Bins::FreedmanDiaconis } else { Bins::Uniform { count: bins } };
    let stats = ensemble_stats(&ens.records, &bins, &[]).map_err(err)?;
    let fractions: Vec<[f64; 2]> = stats.destination_fractions().into_iter().map(|(f, e)| [f, e]).collect();
    Ok(json!({
        "edges": stats.histogram.edges,
        "pdf": stats.histogram.pdf,
        "counts": stats.histogram.counts,
        "n_frozen": stats.n_frozen,
        "n_unfrozen": stats.n_unfrozen,
        "n_failed": ens.failures.len(),
        "mean_freeze_time": stats.mean_freeze_time,
        "destinations": fractions,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn trajectory_weights(request: &str) -> Result<String, JsValue> {
    trajectory_weights_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spectrum(request: &str, alpha: usize, alpha_prime: usize) -> Result<String, JsValue> {
    sector_spectrum_json(request, alpha, alpha_prime).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn freeze_histogram(request: &str, n_traj: u32, bins: u32) -> Result<String, JsValue> {
    freeze_histogram_json(request, n_traj.into(), bins as usize).map_err(|e| JsValue::from_str(&e))
}
