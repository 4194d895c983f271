//! Per-trajectory and per-ensemble measures of dissipative freezing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64};
use crate::liouvillian;
use crate::models::{ModelConfig, ModelRecipe};
use crate::trajectory::{self, Branch, Engine, Sample, TrajectoryRecord, TrajectoryState, UnravelingConfig};

/// Default non-freezing band: weights within a factor `10^2` of each other.
pub const DEFAULT_BAND: f64 = 2.0 * std::f64::consts::LN_10;

/// Normalized probabilities from log weights; `-inf` maps to 0.
pub fn softmax(log_w: &[f64]) -> Vec<f64> {
    let norm = linalg::logsumexp(log_w);
    log_w.iter().map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - norm).exp() }).collect()
}

/// Log un-normalized weights `log w(alpha, t)` with the derived normalized
/// probabilities. `-inf` marks a subspace with exactly zero weight; it stays
/// there because every branch operator is block diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightLedger {
    log_w: Vec<f64>,
    p: Vec<f64>,
    log_norm: f64,
    /// Subspaces with finite weight, ascending.
    active: Vec<usize>,
}

impl WeightLedger {
    pub fn new(log_w: Vec<f64>) -> Self {
        let active = (0..log_w.len()).filter(|&a| log_w[a] > f64::NEG_INFINITY).collect();
        let mut l = Self { p: vec![0.0; log_w.len()], log_w, log_norm: 0.0, active };
        l.refresh();
        l
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    pub fn is_active(&self, alpha: usize) -> bool {
        self.log_w[alpha] > f64::NEG_INFINITY
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Adds `delta` (the log squared norm the branch block gave this
    /// subspace) to `log w(alpha)`. Call [`refresh`](Self::refresh) after a
    /// full step.
    #[inline]
    pub fn advance(&mut self, alpha: usize, delta: f64) {
        self.log_w[alpha] += delta;
    }

    pub fn annihilate(&mut self, alpha: usize) {
        self.log_w[alpha] = f64::NEG_INFINITY;
        self.p[alpha] = 0.0;
        self.active.retain(|&a| a != alpha);
    }

    pub fn refresh(&mut self) {
        let m = self.active.iter().map(|&a| self.log_w[a]).fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            self.log_norm = m;
            return;
        }
        let mut sum = 0.0;
        for &a in &self.active {
            let e = (self.log_w[a] - m).exp();
            self.p[a] = e;
            sum += e;
        }
        for &a in &self.active {
            self.p[a] /= sum;
        }
        self.log_norm = m + sum.ln();
    }

    pub fn log_w(&self) -> &[f64] {
        &self.log_w
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// `log sum_alpha w(alpha)`: the accumulated global normalization.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Most probable subspace and its probability.
    pub fn max(&self) -> (usize, f64) {
        self.p.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSnapshot {
    pub step: u64,
    pub t: f64,
    /// `log sigma_k(A_alpha)` in non-increasing order; empty for subspaces
    /// that are not tracked.
    pub log_sv: Vec<Vec<f64>>,
    /// `log <psi_alpha(0)| A_alpha^dagger A_alpha |psi_alpha(0)>`.
    pub log_w_from_product: Vec<f64>,
}

/// Running products `A_alpha(t)` of branch blocks, stored as a unit-norm
/// matrix `B_alpha` and a log scale so that `A_alpha = exp(s_alpha) B_alpha`.
///
/// Runs of consecutive no-jump steps are applied lazily through cached,
/// rescaled binary powers of `1 - i H_eff dt`, so the cost per jump is a few
/// block products rather than one per step.
#[derive(Debug, Clone)]
pub struct ProductTracker {
    tracked: Vec<bool>,
    b: Vec<CMatrix>,
    log_scale: Vec<f64>,
    pending: u64,
    powers: Vec<Vec<(CMatrix, f64)>>,
    no_jump: Vec<CMatrix>,
    initial: Vec<Vec<C64>>,
    snapshots: Vec<SingularSnapshot>,
}

impl ProductTracker {
    /// Starts from identity blocks for every subspace the state occupies.
    pub fn new(engine: &Engine, state: &TrajectoryState) -> Self {
        let dims = engine.structure().block_dims();
        let tracked: Vec<bool> = (0..dims.len()).map(|a| state.ledger.is_active(a)).collect();
        let p = state.ledger.probabilities();
        let initial =
            state.blocks.iter().zip(p).map(|(phi, &pa)| phi.iter().map(|z| z * pa.sqrt()).collect()).collect();
        Self {
            b: dims.iter().map(|&d| CMatrix::identity(d)).collect(),
            log_scale: vec![0.0; dims.len()],
            pending: 0,
            powers: vec![Vec::new(); dims.len()],
            no_jump: engine.branch_blocks(Branch::NoJump),
            initial,
            snapshots: Vec::new(),
            tracked,
        }
    }

    pub fn push(&mut self, engine: &Engine, branch: Branch) -> Result<()> {
        match branch {
            Branch::NoJump => self.pending += 1,
            Branch::Jump(_) => {
                self.flush();
                let blocks = engine.branch_blocks(branch);
                for (alpha, x) in blocks.iter().enumerate() {
                    if self.tracked[alpha] {
                        self.b[alpha] = x.matmul(&self.b[alpha]);
                        self.rescale(alpha);
                    }
                }
            }
        }
        Ok(())
    }

    fn rescale(&mut self, alpha: usize) {
        let f = self.b[alpha].frobenius_norm();
        if f > 0.0 {
            self.b[alpha] = self.b[alpha].scale_real(1.0 / f);
            self.log_scale[alpha] += f.ln();
        } else {
            self.log_scale[alpha] = f64::NEG_INFINITY;
        }
    }

    /// Applies all pending no-jump steps.
    pub fn flush(&mut self) {
        let k = std::mem::take(&mut self.pending);
        if k == 0 {
            return;
        }
        for alpha in 0..self.b.len() {
            if !self.tracked[alpha] {
                continue;
            }
            let bits = 64 - k.leading_zeros() as usize;
            while self.powers[alpha].len() < bits {
                let next = match self.powers[alpha].last() {
                    None => {
                        let x = &self.no_jump[alpha];
                        let f = x.frobenius_norm();
                        (x.scale_real(1.0 / f), f.ln())
                    }
                    Some((m, s)) => {
                        let sq = m.matmul(m);
                        let f = sq.frobenius_norm();
                        (sq.scale_real(1.0 / f), 2.0 * s + f.ln())
                    }
                };
                self.powers[alpha].push(next);
            }
            for j in 0..bits {
                if k >> j & 1 == 1 {
                    let (m, s) = &self.powers[alpha][j];
                    self.b[alpha] = m.matmul(&self.b[alpha]);
                    self.log_scale[alpha] += s;
                    self.rescale(alpha);
                }
            }
        }
    }

    /// `(B_alpha, s_alpha)` with `A_alpha = exp(s_alpha) B_alpha`; pending
    /// steps are applied first.
    pub fn product(&mut self, alpha: usize) -> (&CMatrix, f64) {
        self.flush();
        (&self.b[alpha], self.log_scale[alpha])
    }

    pub fn is_tracked(&self, alpha: usize) -> bool {
        self.tracked[alpha]
    }

    pub fn snapshot(&mut self, _engine: &Engine, state: &TrajectoryState) -> Result<()> {
        self.flush();
        let mut log_sv = Vec::with_capacity(self.b.len());
        let mut log_w = Vec::with_capacity(self.b.len());
        for alpha in 0..self.b.len() {
            if !self.tracked[alpha] {
                log_sv.push(Vec::new());
                log_w.push(f64::NEG_INFINITY);
                continue;
            }
            let s = linalg::singular_values(&self.b[alpha])?;
            log_sv.push(s.iter().map(|x| x.ln() + self.log_scale[alpha]).collect());
            let v = self.b[alpha].matvec(&self.initial[alpha]);
            log_w.push(linalg::norm_sqr(&v).ln() + 2.0 * self.log_scale[alpha]);
        }
        self.snapshots.push(SingularSnapshot { step: state.step, t: state.t, log_sv, log_w_from_product: log_w });
        Ok(())
    }

    pub fn snapshots(&self) -> &[SingularSnapshot] {
        &self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<SingularSnapshot> {
        self.snapshots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub frozen: bool,
    pub destination: Option<usize>,
    pub freeze_time: Option<f64>,
    pub final_probabilities: Vec<f64>,
    /// Pairs whose log weights stayed within the band over the final third
    /// of the run.
    pub non_freezing_pairs: Vec<(usize, usize)>,
    pub band: f64,
    pub epsilon: f64,
}

/// Freeze detection on a recorded history: the first sample where some
/// `p(alpha) >= 1 - epsilon`. Non-freezing pairs are the occupied pairs
/// whose `|log w(alpha) - log w(alpha')|` stayed at or below `band` at every
/// sample in the final third of the run.
pub fn detect_freeze(samples: &[Sample], epsilon: f64, band: f64) -> Result<FreezeReport> {
    let last = samples.last().ok_or_else(|| Error::Argument("empty trajectory history".into()))?;
    let threshold = 1.0 - epsilon;
    let mut frozen = None;
    for s in samples {
        let p = s.probabilities();
        let (alpha, pm) =
            p.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if pm >= threshold {
            frozen = Some((alpha, s.t));
            break;
        }
    }
    let t0 = samples[0].t;
    let cut = t0 + (last.t - t0) * 2.0 / 3.0;
    let tail: Vec<&Sample> = samples.iter().filter(|s| s.t >= cut).collect();
    let d = last.log_w.len();
    let mut pairs = Vec::new();
    for a in 0..d {
        for b in a + 1..d {
            let ok = tail.iter().all(|s| {
                let (x, y) = (s.log_w[a], s.log_w[b]);
                x.is_finite() && y.is_finite() && (x - y).abs() <= band
            });
            if ok {
                pairs.push((a, b));
            }
        }
    }
    Ok(FreezeReport {
        frozen: frozen.is_some(),
        destination: frozen.map(|f| f.0),
        freeze_time: frozen.map(|f| f.1),
        final_probabilities: last.probabilities(),
        non_freezing_pairs: pairs,
        band,
        epsilon,
    })
}

/// Histogram binning rule for freeze times.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bins {
    #[default]
    FreedmanDiaconis,
    Uniform {
        count: usize,
    },
    Edges(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Density normalized over all trajectories, so it integrates to the
    /// frozen fraction.
    pub pdf: Vec<f64>,
    /// Fraction of all trajectories frozen by each bin's right edge.
    pub cdf: Vec<f64>,
    /// Unfrozen trajectories.
    pub overflow: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSnapshot {
    pub t: f64,
    /// `mean_i p_i(alpha, t) p_i(alpha', t)`.
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFreezeStats {
    pub n_traj: usize,
    pub n_frozen: usize,
    pub n_unfrozen: usize,
    pub mean_freeze_time: Option<f64>,
    pub stderr_freeze_time: Option<f64>,
    pub histogram: Histogram,
    pub destination_counts: Vec<u64>,
    pub coherence: Vec<CoherenceSnapshot>,
}

impl EnsembleFreezeStats {
    /// Destination fractions among frozen trajectories with binomial errors.
    pub fn destination_fractions(&self) -> Vec<(f64, f64)> {
        let n = self.n_frozen.max(1) as f64;
        self.destination_counts
            .iter()
            .map(|&c| {
                let f = c as f64 / n;
                (f, (f * (1.0 - f) / n).sqrt())
            })
            .collect()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn histogram(times: &[f64], n_total: usize, bins: &Bins) -> Histogram {
    let overflow = (n_total - times.len()) as u64;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges = match bins {
        Bins::Edges(e) => e.clone(),
        _ if sorted.is_empty() => vec![0.0, 1.0],
        Bins::Uniform { count } => {
            let (lo, hi) = (sorted[0], *sorted.last().unwrap());
            let count = (*count).max(1);
            let w = if hi > lo { (hi - lo) / count as f64 } else { 1.0 };
            (0..=count).map(|k| lo + w * k as f64).collect()
        }
        Bins::FreedmanDiaconis => {
            let (lo, hi) = (sorted[0], *sorted.last().unwrap());
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            let w = 2.0 * iqr / (sorted.len() as f64).cbrt();
            if !(w > 0.0) || hi <= lo {
                vec![lo, if hi > lo { hi } else { lo + 1.0 }]
            } else {
                let count = (((hi - lo) / w).ceil() as usize).clamp(1, 10_000);
                let w = (hi - lo) / count as f64;
                (0..=count).map(|k| lo + w * k as f64).collect()
            }
        }
    };
    let nb = edges.len().saturating_sub(1);
    let mut counts = vec![0u64; nb];
    for &t in &sorted {
        // right-closed last bin
        let k = match edges.partition_point(|&e| e <= t) {
            0 => continue,
            k if k > nb => {
                if t == edges[nb] {
                    nb - 1
                } else {
                    continue;
                }
            }
            k => k - 1,
        };
        counts[k] += 1;
    }
    let n = n_total.max(1) as f64;
    let pdf = counts.iter().enumerate().map(|(k, &c)| c as f64 / (n * (edges[k + 1] - edges[k]))).collect();
    let mut acc = 0u64;
    let cdf = counts
        .iter()
        .map(|&c| {
            acc += c;
            acc as f64 / n
        })
        .collect();
    Histogram { edges, counts, pdf, cdf, overflow }
}

/// Sample of a record at time `t`: the last one not after `t`, or the final
/// sample when the run stopped earlier (a frozen trajectory stays frozen).
fn sample_at(record: &TrajectoryRecord, t: f64) -> &Sample {
    let k = record.samples.partition_point(|s| s.t <= t + 1e-9 * t.abs().max(1.0));
    &record.samples[k.saturating_sub(1)]
}

pub fn ensemble_stats(records: &[TrajectoryRecord], bins: &Bins, t_snapshots: &[f64]) -> Result<EnsembleFreezeStats> {
    if records.is_empty() {
        return Err(Error::Argument("no trajectory records".into()));
    }
    let d = records[0].samples.first().map_or(0, |s| s.log_w.len());
    let mut times = Vec::new();
    let mut destinations = vec![0u64; d];
    for r in records {
        if let Some(f) = r.freeze {
            times.push(f.t);
            destinations[f.destination] += 1;
        }
    }
    let n_frozen = times.len();
    let (mean, stderr) = if n_frozen > 0 {
        let m = times.iter().sum::<f64>() / n_frozen as f64;
        let se = if n_frozen > 1 {
            let var = times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (n_frozen - 1) as f64;
            (var / n_frozen as f64).sqrt()
        } else {
            0.0
        };
        (Some(m), Some(se))
    } else {
        (None, None)
    };
    let coherence = t_snapshots
        .iter()
        .map(|&t| {
            let mut c = vec![vec![0.0; d]; d];
            for r in records {
                let p = sample_at(r, t).probabilities();
                for a in 0..d {
                    for b in 0..d {
                        c[a][b] += p[a] * p[b];
                    }
                }
            }
            let n = records.len() as f64;
            c.iter_mut().flatten().for_each(|x| *x /= n);
            CoherenceSnapshot { t, matrix: c }
        })
        .collect();
    Ok(EnsembleFreezeStats {
        n_traj: records.len(),
        n_frozen,
        n_unfrozen: records.len() - n_frozen,
        mean_freeze_time: mean,
        stderr_freeze_time: stderr,
        histogram: histogram(&times, records.len(), bins),
        destination_counts: destinations,
        coherence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub gammas: Vec<f64>,
    /// Subspaces the ensembles start across.
    pub pair: (usize, usize),
    /// Sector whose gap is reported, when it differs from `pair`.
    #[serde(default)]
    pub gap_pair: Option<(usize, usize)>,
    pub n_traj: u64,
    /// Run length is at least this multiple of `1/|gap|`.
    pub t_max_gap_multiple: f64,
    /// Gamma range used for the proportionality fit.
    pub fit_range: (f64, f64),
    /// Gaps at or below this are treated as closed.
    pub gap_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub gamma: f64,
    pub gap: f64,
    pub mean_freeze_time: Option<f64>,
    pub stderr_freeze_time: Option<f64>,
    pub n_traj: usize,
    pub n_unfrozen: usize,
    pub n_failed: usize,
    pub t_max: f64,
    /// Gap closed, or too many trajectories failed to freeze for a mean.
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapFit {
    /// `c` in `t_freeze ~ c / |gap|` (slope fixed to 1).
    pub c: f64,
    /// Free slope of `log t_freeze` against `log(1/|gap|)`.
    pub slope: f64,
    pub intercept: f64,
    pub gamma_range: (f64, f64),
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSweep {
    pub rows: Vec<GapRow>,
    /// Absent when fewer than two usable points fall in the fit range.
    pub fit: Option<GapFit>,
}

/// Mean freeze time against the inter-sector gap over a grid of rates, for
/// ensembles started across the two subspaces of `opts.pair`.
pub fn freeze_time_vs_gap(recipe: &ModelRecipe, cfg: &UnravelingConfig, opts: &SweepOptions) -> Result<GapSweep> {
    if opts.gammas.is_empty() {
        return Err(Error::Argument("empty gamma grid".into()));
    }
    let mut rows = Vec::with_capacity(opts.gammas.len());
    for &gamma in &opts.gammas {
        let config = ModelConfig { recipe: recipe.with_gamma(gamma), init: Some(vec![opts.pair.0, opts.pair.1]) };
        let model = config.build()?;
        let structure = model.structure()?;
        let gap =
            liouvillian::inter_sector_gap(&structure, &model.h, &model.jumps, opts.gap_pair.unwrap_or(opts.pair))?;
        let closed = gap <= opts.gap_tol;
        let mut run_cfg = cfg.clone();
        if !closed {
            run_cfg.t_max = run_cfg.t_max.max(opts.t_max_gap_multiple / gap);
        }
        let ens = trajectory::run_ensemble(&model, &run_cfg, opts.n_traj)?;
        let n_failed = ens.failures.len();
        let n = ens.records.len();
        let (mean, se, unfrozen) = if n > 0 {
            let s = ensemble_stats(&ens.records, &Bins::default(), &[])?;
            (s.mean_freeze_time, s.stderr_freeze_time, s.n_unfrozen)
        } else {
            (None, None, 0)
        };
        let divergent = closed || mean.is_none() || unfrozen * 2 > n;
        rows.push(GapRow {
            gamma,
            gap,
            mean_freeze_time: mean,
            stderr_freeze_time: se,
            n_traj: n,
            n_unfrozen: unfrozen,
            n_failed,
            t_max: run_cfg.t_max,
            divergent,
        });
    }
    let fit = fit_gap_law(&rows, opts.fit_range);
    Ok(GapSweep { rows, fit })
}

/// Least-squares fits over the non-divergent rows inside `range`.
pub fn fit_gap_law(rows: &[GapRow], range: (f64, f64)) -> Option<GapFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.divergent && r.gamma >= range.0 && r.gamma <= range.1)
        .filter_map(|r| r.mean_freeze_time.map(|t| ((1.0 / r.gap).ln(), t.ln())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some(GapFit { c: (my - mx).exp(), slope, intercept: my - slope * mx, gamma_range: range, n_points: pts.len() })
}
