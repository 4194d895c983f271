use std::collections::BTreeSet;
use std::time::Instant;

use freezeout::freezing::{detect_freeze, ensemble_stats, freeze_time_vs_gap, FreezeReport, SweepOptions};
use freezeout::liouvillian::{detect_traceless_modes, sector_spectrum, steady_states, ModeKind};
use freezeout::models::{validate_model, InitialState, ModelSpec};
use freezeout::symmetry::{check_similar, BlockStructure};
use freezeout::trajectory::{run_ensemble, run_trajectory, TrajectoryFailure};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::emit::{indexed, num, Artifacts};
use crate::CliError;

fn labels(s: &BlockStructure) -> Vec<String> {
    s.subspaces().iter().map(|x| x.label.clone()).collect()
}

fn all_pairs(n: usize, diagonal: bool) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (if diagonal { a } else { a + 1 }..n).map(move |b| (a, b))).collect()
}

pub fn trajectory(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let model = cfg.model.build()?;
    let structure = model.structure()?;
    let mut u = cfg.unraveling.clone();
    u.track_products = cfg.emission.singulars;
    let rec = run_trajectory(&model, &u, &mut [])?;
    let d = structure.len();

    let mut header = vec!["t".to_string()];
    header.extend(indexed("p", d));
    header.extend(indexed("log_w", d));
    let rows: Vec<Vec<String>> = rec
        .samples
        .iter()
        .map(|s| {
            let mut r = vec![num(s.t)];
            r.extend(s.probabilities().into_iter().map(num));
            r.extend(s.log_w.iter().copied().map(num));
            r
        })
        .collect();
    out.csv("weights.csv", &header, &rows)?;

    if let Some(snaps) = &rec.singulars {
        let mut header = vec!["t".to_string()];
        header.extend(indexed("log_sv1", d));
        header.extend(indexed("log_sv2", d));
        let rows: Vec<Vec<String>> = snaps
            .iter()
            .map(|s| {
                let mut r = vec![num(s.t)];
                for k in 0..2 {
                    r.extend(s.log_sv.iter().map(|sv| num(sv.get(k).copied().unwrap_or(f64::NAN))));
                }
                r
            })
            .collect();
        out.csv("singulars.csv", &header, &rows)?;
    }

    let detected = detect_freeze(&rec.samples, u.freeze_epsilon, cfg.emission.band)?;
    out.json(
        "freeze_report.json",
        &json!({
            "model": model.name,
            "labels": labels(&structure),
            "frozen": detected.frozen,
            "destination": detected.destination,
            "freeze_time": detected.freeze_time,
            "non_freezing_pairs": detected.non_freezing_pairs,
            "final_probabilities": detected.final_probabilities,
            "band": detected.band,
            "epsilon": detected.epsilon,
            "freeze_event": rec.freeze,
            "jump_count": rec.jump_count,
            "steps": rec.steps,
            "t_end": rec.t_end,
            "stopped_early": rec.stopped_early,
            "max_cutoff_population": rec.max_cutoff_population,
        }),
    )
}

fn first_failure(failures: &[TrajectoryFailure]) -> CliError {
    match failures.first() {
        Some(f) => CliError::numerical(format!("every trajectory failed; first ({}): {}", f.index, f.message)),
        None => CliError::internal("empty ensemble"),
    }
}

pub fn ensemble(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let model = cfg.model.build()?;
    let structure = model.structure()?;
    let u = &cfg.unraveling;
    let ens = run_ensemble(&model, u, cfg.n_traj)?;
    if ens.records.is_empty() {
        return Err(first_failure(&ens.failures));
    }
    let snaps =
        if cfg.emission.snapshot_times.is_empty() { vec![u.t_max] } else { cfg.emission.snapshot_times.clone() };
    let stats = ensemble_stats(&ens.records, &cfg.emission.bins, &snaps)?;

    let h = &stats.histogram;
    let rows: Vec<Vec<String>> = (0..h.counts.len())
        .map(|k| vec![num(h.edges[k]), num(h.edges[k + 1]), h.counts[k].to_string(), num(h.pdf[k]), num(h.cdf[k])])
        .collect();
    let header = ["bin_left", "bin_right", "count", "pdf", "cdf"].map(String::from);
    out.csv("freeze_hist.csv", &header, &rows)?;

    let fractions = stats.destination_fractions();
    let started: BTreeSet<usize> = match &model.initial {
        InitialState::Subspaces(s) => s.iter().copied().collect(),
        InitialState::Vector(_) => BTreeSet::new(),
    };
    let names = labels(&structure);
    let rows: Vec<Vec<String>> = (0..structure.len())
        .filter(|&a| stats.destination_counts[a] > 0 || started.contains(&a))
        .map(|a| {
            vec![
                a.to_string(),
                names[a].clone(),
                stats.destination_counts[a].to_string(),
                num(fractions[a].0),
                num(fractions[a].1),
            ]
        })
        .collect();
    let header = ["alpha", "label", "count", "fraction", "stderr"].map(String::from);
    out.csv("destinations.csv", &header, &rows)?;

    let mut rows = Vec::new();
    for c in &stats.coherence {
        for (a, row) in c.matrix.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                rows.push(vec![num(c.t), a.to_string(), b.to_string(), num(*v)]);
            }
        }
    }
    let header = ["t", "alpha", "alpha_prime", "value"].map(String::from);
    out.csv("coherence_matrix.csv", &header, &rows)?;

    let destinations: Vec<_> = (0..structure.len())
        .map(|a| json!({"alpha": a, "label": names[a], "count": stats.destination_counts[a], "fraction": fractions[a].0, "stderr": fractions[a].1}))
        .collect();
    out.json(
        "summary.json",
        &json!({
            "model": model.name,
            "n_traj": cfg.n_traj,
            "n_completed": stats.n_traj,
            "n_frozen": stats.n_frozen,
            "n_unfrozen": stats.n_unfrozen,
            "n_failed": ens.failures.len(),
            "mean_freeze_time": stats.mean_freeze_time,
            "stderr_freeze_time": stats.stderr_freeze_time,
            "destinations": destinations,
            "failures": ens.failures,
        }),
    )?;
    if let Some(f) = ens.failures.first() {
        return Err(CliError::numerical(format!(
            "{} of {} trajectories failed; first ({}): {}",
            ens.failures.len(),
            cfg.n_traj,
            f.index,
            f.message
        )));
    }
    Ok(())
}

pub fn sweep_gamma(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| CliError::config("sweep-gamma needs a `sweep` section"))?;
    let opts = SweepOptions {
        gammas: sw.gammas.clone(),
        pair: sw.pair,
        gap_pair: sw.gap_pair,
        n_traj: cfg.n_traj,
        t_max_gap_multiple: sw.t_max_gap_multiple,
        fit_range: sw.fit_range,
        gap_tol: sw.gap_tol,
    };
    let result = freeze_time_vs_gap(&cfg.model.recipe, &cfg.unraveling, &opts)?;
    let rows: Vec<Vec<String>> = result.rows.iter().map(|r| vec![num(r.gamma), num(r.gap)]).collect();
    out.csv("gap_vs_gamma.csv", &["gamma".into(), "gap".into()], &rows)?;

    let header = [
        "gamma",
        "gap",
        "mean_freeze_time",
        "stderr_freeze_time",
        "n_traj",
        "n_unfrozen",
        "n_failed",
        "t_max",
        "divergent",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.gamma),
                num(r.gap),
                num(r.mean_freeze_time.unwrap_or(f64::NAN)),
                num(r.stderr_freeze_time.unwrap_or(f64::NAN)),
                r.n_traj.to_string(),
                r.n_unfrozen.to_string(),
                r.n_failed.to_string(),
                num(r.t_max),
                u8::from(r.divergent).to_string(),
            ]
        })
        .collect();
    out.csv("freezetime_vs_gamma.csv", &header, &rows)?;

    let divergent: Vec<f64> = result.rows.iter().filter(|r| r.divergent).map(|r| r.gamma).collect();
    let comparison = match (&result.fit, sw.reference_c) {
        (Some(f), Some(c0)) => Some(json!({"reference_c": c0, "ratio": f.c / c0})),
        _ => None,
    };
    out.json(
        "fit.json",
        &json!({
            "applicable": result.fit.is_some(),
            "reason": if result.fit.is_none() { Some("fewer than two non-divergent points with distinct gaps inside the fit range") } else { None },
            "fit": result.fit,
            "comparison": comparison,
            "divergent_gammas": divergent,
            "rows": result.rows,
        }),
    )
}

pub fn spectrum(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let model = cfg.model.build()?;
    let structure = model.structure()?;
    let pairs = cfg.spectral.pairs.clone().unwrap_or_else(|| all_pairs(structure.len(), true));
    let mut rows = Vec::new();
    let mut sectors = Vec::new();
    for &pair in &pairs {
        let s = sector_spectrum(&structure, &model.h, &model.jumps, pair, cfg.spectral.rel_tol)?;
        for z in &s.eigenvalues {
            rows.push(vec![pair.0.to_string(), pair.1.to_string(), num(z.re), num(z.im)]);
        }
        sectors.push(json!({
            "pair": pair,
            "dim": s.eigenvalues.len(),
            "gap": s.gap,
            "spectral_radius": s.spectral_radius,
            "tol": s.tol,
            "n_traceless_nondecaying": s.traceless_nondecaying.len(),
        }));
    }
    let header = ["alpha", "alpha_prime", "re", "im"].map(String::from);
    out.csv("spectrum.csv", &header, &rows)?;
    out.json("spectrum.json", &json!({"model": model.name, "labels": labels(&structure), "sectors": sectors}))
}

pub fn steady(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let model = cfg.model.build()?;
    let structure = model.structure()?;
    let tol = cfg.spectral.steady_tol;
    let sectors = steady_states(&structure, &model.h, &model.jumps, tol)?;
    let names = labels(&structure);
    let header = ["row", "col", "re", "im"].map(String::from);
    let mut listing = Vec::new();
    for sec in &sectors {
        let mut states = Vec::new();
        for (k, st) in sec.states.iter().enumerate() {
            let file = format!("steady_state_{}_{k}.csv", sec.alpha);
            let n = st.rho.rows();
            let rows: Vec<Vec<String>> = (0..n)
                .flat_map(|r| (0..n).map(move |c| (r, c)))
                .map(|(r, c)| {
                    let z = st.rho[(r, c)];
                    vec![r.to_string(), c.to_string(), num(z.re), num(z.im)]
                })
                .collect();
            out.csv(&file, &header, &rows)?;
            let tr = st.rho.trace();
            states.push(json!({"file": file, "residual": st.residual, "trace": [tr.re, tr.im]}));
        }
        listing.push(
            json!({"alpha": sec.alpha, "label": names[sec.alpha], "degeneracy": sec.degeneracy, "states": states}),
        );
    }
    out.json(
        "steady_states.json",
        &json!({
            "model": model.name,
            "convention": "rho[row, col] in the model's original basis; the generator acts on column-stacked vec(rho)",
            "degenerate_sectors": "a sector with degeneracy > 1 lists an orthonormal Hermitian basis of its stationary operators, not density matrices",
            "null_space_rel_tol": tol,
            "sectors": listing,
        }),
    )
}

#[derive(Serialize)]
struct PairVerdict {
    pair: (usize, usize),
    labels: (String, String),
    heuristic_non_freezing: bool,
    /// `None` when the oracle was skipped.
    spectral_traceless: Option<bool>,
    mode_kinds: Vec<ModeKind>,
    similar: bool,
    sector_gap: Option<f64>,
    classification: &'static str,
    agrees: bool,
}

fn classify(heuristic: bool, spectral: Option<bool>, similar: bool) -> (&'static str, bool) {
    match (spectral, similar) {
        (Some(true), _) => ("traceless", heuristic),
        (_, true) => ("similar", heuristic),
        (None, false) => ("unresolved", true),
        (Some(false), false) => ("unexplained", !heuristic),
    }
}

pub fn detect_traceless(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let model: ModelSpec = cfg.model.build()?;
    let structure = model.structure()?;
    let names = labels(&structure);

    let mut u = cfg.unraveling.clone();
    u.early_stop = false;
    u.track_products = false;
    let clock = Instant::now();
    let rec = run_trajectory(&model, &u, &mut [])?;
    let report: FreezeReport = detect_freeze(&rec.samples, u.freeze_epsilon, cfg.emission.band)?;
    let heuristic_seconds = clock.elapsed().as_secs_f64();

    let dims = structure.block_dims();
    let largest = all_pairs(dims.len(), false).iter().map(|&(a, b)| dims[a] * dims[b]).max().unwrap_or(0);
    let clock = Instant::now();
    let (spectral, skipped) = if largest <= cfg.spectral.max_sector_dim {
        (Some(detect_traceless_modes(&structure, &model.h, &model.jumps, cfg.spectral.rel_tol)?), None)
    } else {
        (None, Some(format!("largest sector has dimension {largest} > max_sector_dim {}", cfg.spectral.max_sector_dim)))
    };
    let spectral_seconds = clock.elapsed().as_secs_f64();

    let hb = model.block_hamiltonian(&structure)?;
    let lb = model.block_jumps(&structure)?;
    let mut pairs: BTreeSet<(usize, usize)> = report.non_freezing_pairs.iter().copied().collect();
    if let Some(s) = &spectral {
        pairs.extend(s.iter().map(|m| m.pair));
    }
    let mut verdicts = Vec::new();
    for &pair in &pairs {
        let heuristic = report.non_freezing_pairs.contains(&pair);
        let modes = spectral.as_ref().and_then(|s| s.iter().find(|m| m.pair == pair));
        let spectral_hit = spectral.as_ref().map(|_| modes.is_some());
        let similar = check_similar(&hb, &lb, pair, cfg.spectral.similarity_tol)?.similar;
        let sector_gap = if spectral.is_some() {
            Some(sector_spectrum(&structure, &model.h, &model.jumps, pair, cfg.spectral.rel_tol)?.gap)
        } else {
            None
        };
        let (classification, agrees) = classify(heuristic, spectral_hit, similar);
        verdicts.push(PairVerdict {
            pair,
            labels: (names[pair.0].clone(), names[pair.1].clone()),
            heuristic_non_freezing: heuristic,
            spectral_traceless: spectral_hit,
            mode_kinds: modes.map(|m| m.kinds.clone()).unwrap_or_default(),
            similar,
            sector_gap,
            classification,
            agrees,
        });
    }
    let disagreements: Vec<(usize, usize)> = verdicts.iter().filter(|v| !v.agrees).map(|v| v.pair).collect();
    out.json(
        "traceless_report.json",
        &json!({
            "model": model.name,
            "labels": names,
            "heuristic": {
                "t_max": u.t_max,
                "frozen": report.frozen,
                "destination": report.destination,
                "non_freezing_pairs": report.non_freezing_pairs,
                "band": report.band,
                "seconds": heuristic_seconds,
                "note": "pairs without weight in the trajectory's initial state cannot be seen by the heuristic",
            },
            "spectral": {
                "ran": spectral.is_some(),
                "skipped_reason": skipped,
                "traceless_pairs": spectral.as_ref().map(|s| s.iter().map(|m| m.pair).collect::<Vec<_>>()),
                "seconds": spectral.as_ref().map(|_| spectral_seconds),
            },
            "pairs": verdicts,
            "disagreements": disagreements,
        }),
    )
}

pub fn validate(cfg: &RunConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let model = cfg.model.build()?;
    let v = validate_model(&model)?;
    out.json("validation.json", &v)?;
    if !v.strong_symmetry {
        return Err(CliError::consistency(format!(
            "{}: declared symmetry is not a strong symmetry (max leakage {:e})",
            v.name, v.max_leakage
        )));
    }
    Ok(())
}

pub fn models_list() -> serde_json::Value {
    json!([
        {
            "family": "random_block",
            "parameters": ["n_blocks", "block_dim", "gamma", "seed", "omega"],
            "description": "Ginibre H and single jump in each of n_blocks blocks of size block_dim",
            "example": {"family": "random_block", "n_blocks": 4, "block_dim": 4, "gamma": 4.0, "seed": 1, "omega": 1.0},
        },
        {
            "family": "coupled_qudit",
            "parameters": ["gamma", "omega"],
            "description": "two spin-3/2 qudits, dephasing by total S_z; subspaces indexed by m = -3..3",
            "example": {"family": "coupled_qudit", "gamma": 1.0, "omega": 1.0},
        },
        {
            "family": "lossy_boson_chain",
            "parameters": ["sites", "gamma", "g", "j", "n_max", "omega"],
            "description": "bosons on a ring coupled to a lossy cavity mode; subspaces are momentum-pair numbers",
            "example": {"family": "lossy_boson_chain", "sites": 4, "gamma": 5.0, "g": 2.0, "j": 2.0, "n_max": 5, "omega": 1.0},
        },
        {
            "family": "qubit_toy",
            "parameters": ["variant", "gamma"],
            "description": "single qubit, jump sigma_z (variant sigma_z) or |1><1| (variant number)",
            "example": {"family": "qubit_toy", "variant": "number", "gamma": 1.0},
        },
    ])
}
