//! First-order Monte Carlo unraveling.
//!
//! Each step draws one branch from `{sqrt(gamma_m dt) L_m, 1 - i H_eff dt}`.
//! Because every branch operator is block diagonal, the state is stored per
//! symmetry subspace as a unit vector `phi_alpha` together with the log of
//! its un-normalized weight; the normalized state is
//! `psi = sum_alpha sqrt(p(alpha)) phi_alpha`. Renormalization is explicit on
//! every step and never touches the log weights, so `log w(alpha, t)` is the
//! log of `|A_alpha(t) psi_alpha(0)|^2` for the product `A_alpha` of branch
//! blocks applied so far.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freezing::{ProductTracker, SingularSnapshot, WeightLedger};
use crate::linalg::{self, CMatrix, C64, ZERO};
use crate::models::ModelSpec;
use crate::rng::{self, TrajectoryRng};
use crate::symmetry::{BlockOperator, BlockStructure};

/// Blocks whose fraction of nonzero entries falls below this are stored sparse.
const SPARSE_DENSITY: f64 = 0.3;
/// Relative threshold below which a jump is considered to annihilate a block.
const ANNIHILATION_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnravelingConfig {
    /// Time step in units of `1/omega`.
    pub dt: f64,
    pub t_max: f64,
    /// Steps between recorded samples.
    pub record_stride: u64,
    pub seed: u64,
    pub freeze_epsilon: f64,
    /// Stop this fraction of `t_max` after freezing.
    pub grace_fraction: f64,
    pub early_stop: bool,
    /// Keep per-subspace evolution products and snapshot their singular values
    /// at every record.
    pub track_products: bool,
}

impl Default for UnravelingConfig {
    fn default() -> Self {
        Self {
            dt: 0.001,
            t_max: 10.0,
            record_stride: 100,
            seed: 0,
            freeze_epsilon: 1e-10,
            grace_fraction: 0.1,
            early_stop: true,
            track_products: false,
        }
    }
}

impl UnravelingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Argument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(Error::Argument(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.record_stride == 0 {
            return Err(Error::Argument("record_stride must be at least 1".into()));
        }
        if !(self.freeze_epsilon > 0.0 && self.freeze_epsilon < 1.0) {
            return Err(Error::Argument(format!("freeze_epsilon must lie in (0, 1), got {}", self.freeze_epsilon)));
        }
        if !(self.grace_fraction >= 0.0) {
            return Err(Error::Argument(format!("grace_fraction must be non-negative, got {}", self.grace_fraction)));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_max / self.dt).round() as u64
    }
}

/// `H - (i/2) sum_j gamma_j L_j^dagger L_j`.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    pub matrix: CMatrix,
}

impl EffectiveHamiltonian {
    pub fn new(h: &CMatrix, jumps: &[(CMatrix, f64)]) -> Result<Self> {
        let n = h.rows();
        let mut m = h.clone();
        for (l, rate) in jumps {
            if l.rows() != n || l.cols() != n {
                return Err(Error::Dimension(format!("jump operator is {}x{}, expected {n}x{n}", l.rows(), l.cols())));
            }
            if !(*rate >= 0.0) {
                return Err(Error::Argument(format!("negative jump rate {rate}")));
            }
            m = &m - &l.dagger().matmul(l).scale(C64::new(0.0, 0.5 * rate));
        }
        Ok(Self { matrix: m })
    }

    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        let jumps: Vec<(CMatrix, f64)> = model.jumps.iter().map(|j| (j.op.clone(), j.rate)).collect();
        Self::new(&model.h, &jumps)
    }

    /// Smallest eigenvalue of `i (H_eff - H_eff^dagger)`; non-negative up to
    /// round-off for any valid model.
    pub fn min_decay_rate(&self) -> Result<f64> {
        let g = (&self.matrix - &self.matrix.dagger()).scale(linalg::I);
        let (vals, _) = linalg::hermitian_eigen(&g)?;
        Ok(vals.first().copied().unwrap_or(0.0))
    }
}

/// A block stored dense or, when mostly empty, as compressed rows.
#[derive(Debug, Clone)]
enum OpBlock {
    Dense { n: usize, data: Vec<C64> },
    Sparse { ptr: Vec<usize>, col: Vec<usize>, val: Vec<C64> },
}

impl OpBlock {
    fn new(m: &CMatrix) -> Self {
        let n = m.rows();
        let nnz = m.as_slice().iter().filter(|z| **z != ZERO).count();
        if (nnz as f64) < SPARSE_DENSITY * (n * n) as f64 {
            let mut ptr = vec![0];
            let mut col = Vec::with_capacity(nnz);
            let mut val = Vec::with_capacity(nnz);
            for r in 0..n {
                for (c, z) in m.row(r).iter().enumerate() {
                    if *z != ZERO {
                        col.push(c);
                        val.push(*z);
                    }
                }
                ptr.push(col.len());
            }
            OpBlock::Sparse { ptr, col, val }
        } else {
            OpBlock::Dense { n, data: m.as_slice().to_vec() }
        }
    }

    #[inline]
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        match self {
            OpBlock::Dense { n, data } => linalg::matvec_into(data, *n, x, out),
            OpBlock::Sparse { ptr, col, val } => {
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for k in ptr[r]..ptr[r + 1] {
                        acc += val[k] * x[col[k]];
                    }
                    *o = acc;
                }
            }
        }
    }
}

/// Which branch a step took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    NoJump,
    Jump(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Step count after the jump, so the jump happened at `t = step * dt`.
    pub step: u64,
    pub jump: usize,
}

/// Live state of one trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub step: u64,
    pub t: f64,
    /// Unit vector per subspace in the block basis (all zeros when the
    /// subspace carries no weight).
    pub blocks: Vec<Vec<C64>>,
    pub ledger: WeightLedger,
    pub jump_count: u64,
    pub jump_log: Vec<JumpEvent>,
}

impl TrajectoryState {
    /// Normalized state in the block (working) basis, as one flat vector.
    pub fn working_vector(&self, structure: &BlockStructure) -> Vec<C64> {
        let mut w = vec![ZERO; structure.dim()];
        let p = self.ledger.probabilities();
        for ((sub, phi), &pa) in structure.subspaces().iter().zip(&self.blocks).zip(p) {
            if pa == 0.0 {
                continue;
            }
            let s = pa.sqrt();
            for (&i, z) in sub.indices.iter().zip(phi) {
                w[i] = z * s;
            }
        }
        w
    }

    /// Normalized state in the original basis.
    pub fn psi(&self, structure: &BlockStructure) -> Vec<C64> {
        structure.vector_from_working(&self.working_vector(structure))
    }
}

/// Per-trajectory hooks. Each trajectory owns its observers.
pub trait Observer {
    fn on_step(&mut self, _state: &TrajectoryState, _branch: Branch) {}

    /// Called at every recorded sample; returning `false` stops the run.
    fn on_record(&mut self, _state: &TrajectoryState) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: u64,
    pub t: f64,
    pub log_w: Vec<f64>,
}

impl Sample {
    pub fn probabilities(&self) -> Vec<f64> {
        crate::freezing::softmax(&self.log_w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreezeEvent {
    pub step: u64,
    pub t: f64,
    pub destination: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub seed: u64,
    pub dt: f64,
    pub t_max: f64,
    pub samples: Vec<Sample>,
    pub jump_log: Vec<JumpEvent>,
    pub jump_count: u64,
    pub steps: u64,
    pub t_end: f64,
    /// First step at which some subspace held probability at least `1 - eps`.
    pub freeze: Option<FreezeEvent>,
    pub stopped_early: bool,
    pub final_psi: Vec<C64>,
    /// Largest population seen on the photon cutoff level over all samples.
    pub max_cutoff_population: Option<f64>,
    pub singulars: Option<Vec<SingularSnapshot>>,
}

impl TrajectoryRecord {
    pub fn final_probabilities(&self) -> Vec<f64> {
        self.samples.last().map(Sample::probabilities).unwrap_or_default()
    }
}

/// A model compiled for repeated trajectory runs. Immutable and shareable
/// across worker threads.
#[derive(Debug, Clone)]
pub struct Engine {
    model: ModelSpec,
    cfg: UnravelingConfig,
    structure: BlockStructure,
    heff: Vec<OpBlock>,
    /// `jumps[m][alpha]`.
    jumps: Vec<Vec<OpBlock>>,
    jump_norms: Vec<Vec<f64>>,
    rates: Vec<f64>,
    heff_dense: BlockOperator,
    jump_dense: Vec<BlockOperator>,
}

impl Engine {
    pub fn new(model: &ModelSpec, cfg: &UnravelingConfig) -> Result<Self> {
        cfg.validate()?;
        let structure = model.structure()?;
        let heff = EffectiveHamiltonian::from_model(model)?;
        let heff_dense = BlockOperator::from_operator(&heff.matrix, &structure, 1e-12)?;
        let jump_dense = model.block_jumps(&structure)?;
        for j in &model.jumps {
            if !(j.rate >= 0.0) {
                return Err(Error::Argument(format!("negative jump rate {}", j.rate)));
            }
        }
        Ok(Self {
            heff: heff_dense.blocks.iter().map(OpBlock::new).collect(),
            jumps: jump_dense.iter().map(|b| b.blocks.iter().map(OpBlock::new).collect()).collect(),
            jump_norms: jump_dense.iter().map(|b| b.blocks.iter().map(CMatrix::frobenius_norm).collect()).collect(),
            rates: model.jumps.iter().map(|j| j.rate).collect(),
            model: model.clone(),
            cfg: cfg.clone(),
            structure,
            heff_dense,
            jump_dense,
        })
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn config(&self) -> &UnravelingConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Initial state from a normalized vector in the original basis.
    pub fn state_from_vector(&self, psi: &[C64]) -> Result<TrajectoryState> {
        if psi.len() != self.structure.dim() {
            return Err(Error::Dimension(format!("state has length {}, expected {}", psi.len(), self.structure.dim())));
        }
        let w = self.structure.vector_to_working(psi);
        let total = linalg::norm_sqr(&w);
        if !(total > 0.0) {
            return Err(Error::Argument("initial state is zero".into()));
        }
        let mut blocks = Vec::with_capacity(self.structure.len());
        let mut log_w = Vec::with_capacity(self.structure.len());
        for sub in self.structure.subspaces() {
            let mut phi: Vec<C64> = sub.indices.iter().map(|&i| w[i]).collect();
            let n = linalg::norm_sqr(&phi) / total;
            if n > 0.0 {
                let s = 1.0 / (n * total).sqrt();
                phi.iter_mut().for_each(|z| *z *= s);
                log_w.push(n.ln());
            } else {
                phi.iter_mut().for_each(|z| *z = ZERO);
                log_w.push(f64::NEG_INFINITY);
            }
            blocks.push(phi);
        }
        Ok(TrajectoryState {
            step: 0,
            t: 0.0,
            blocks,
            ledger: WeightLedger::new(log_w),
            jump_count: 0,
            jump_log: Vec::new(),
        })
    }

    /// Fresh initial state for trajectory `index`; Haar draws come from the
    /// trajectory's own stream.
    pub fn initial_state(&self, rng: &mut TrajectoryRng) -> Result<TrajectoryState> {
        let psi = self.model.initial_state(&self.structure, rng)?;
        self.state_from_vector(&psi)
    }

    /// One first-order step. On error the state is left unchanged.
    pub fn step<R: Rng>(&self, state: &mut TrajectoryState, rng: &mut R, scratch: &mut Scratch) -> Result<Branch> {
        let dt = self.cfg.dt;
        let mut total = 0.0;
        scratch.active.clear();
        scratch.active.extend_from_slice(state.ledger.active());
        scratch.p.copy_from_slice(state.ledger.probabilities());
        let p = &scratch.p;
        for &alpha in &scratch.active {
            let phi = &state.blocks[alpha];
            let y = &mut scratch.y[alpha];
            self.heff[alpha].apply(phi, y);
            let decay = -2.0 * linalg::inner(phi, y).im;
            total += p[alpha] * decay;
        }
        let total = total * dt;
        if !(total <= 1.0) {
            let probs = self.jump_probabilities(state, scratch);
            return Err(Error::TimestepTooLarge {
                step: state.step,
                total: probs.iter().sum(),
                jump_probabilities: probs,
            });
        }
        let u: f64 = rng.random();
        let branch = if u >= total {
            for &alpha in &scratch.active {
                let phi = &mut state.blocks[alpha];
                let y = &scratch.y[alpha];
                for (z, yz) in phi.iter_mut().zip(y) {
                    *z += C64::new(yz.im, -yz.re) * dt;
                }
                let n = linalg::norm_sqr(phi);
                let s = 1.0 / n.sqrt();
                phi.iter_mut().for_each(|z| *z *= s);
                state.ledger.advance(alpha, n.ln());
            }
            Branch::NoJump
        } else {
            let probs = self.jump_probabilities(state, scratch);
            if probs.iter().any(|&x| x < 0.0) {
                return Err(Error::TimestepTooLarge {
                    step: state.step,
                    total: probs.iter().sum(),
                    jump_probabilities: probs,
                });
            }
            let mut m = probs.len() - 1;
            let mut acc = 0.0;
            for (k, &pk) in probs.iter().enumerate() {
                acc += pk;
                if u < acc {
                    m = k;
                    break;
                }
            }
            if probs[m] < (ANNIHILATION_TOL * ANNIHILATION_TOL) * dt * self.rates[m].max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidJump { step: state.step, jump: m });
            }
            let scale = self.rates[m] * dt;
            for &alpha in &scratch.active {
                let phi = &mut state.blocks[alpha];
                let z = &scratch.z[m][alpha];
                let n = linalg::norm_sqr(z);
                if n.sqrt() < ANNIHILATION_TOL * self.jump_norms[m][alpha] || n == 0.0 {
                    phi.iter_mut().for_each(|x| *x = ZERO);
                    state.ledger.annihilate(alpha);
                } else {
                    let s = 1.0 / n.sqrt();
                    for (x, zz) in phi.iter_mut().zip(z) {
                        *x = zz * s;
                    }
                    state.ledger.advance(alpha, (scale * n).ln());
                }
            }
            state.jump_count += 1;
            state.jump_log.push(JumpEvent { step: state.step + 1, jump: m });
            Branch::Jump(m)
        };
        state.ledger.refresh();
        state.step += 1;
        state.t = state.step as f64 * dt;
        Ok(branch)
    }

    /// `p_m = gamma_m dt <psi|L_m^dagger L_m|psi>`; fills `scratch.z` with
    /// `L_m phi_alpha`.
    fn jump_probabilities(&self, state: &TrajectoryState, scratch: &mut Scratch) -> Vec<f64> {
        let dt = self.cfg.dt;
        let p = state.ledger.probabilities();
        (0..self.jumps.len())
            .map(|m| {
                let mut acc = 0.0;
                for &alpha in state.ledger.active() {
                    let z = &mut scratch.z[m][alpha];
                    self.jumps[m][alpha].apply(&state.blocks[alpha], z);
                    acc += p[alpha] * linalg::norm_sqr(z);
                }
                self.rates[m] * dt * acc
            })
            .collect()
    }

    pub fn scratch(&self) -> Scratch {
        let dims = self.structure.block_dims();
        Scratch {
            active: Vec::with_capacity(dims.len()),
            p: vec![0.0; dims.len()],
            y: dims.iter().map(|&d| vec![ZERO; d]).collect(),
            z: (0..self.jumps.len()).map(|_| dims.iter().map(|&d| vec![ZERO; d]).collect()).collect(),
        }
    }

    /// Branch operator blocks `X_alpha` for a branch, dense.
    pub fn branch_blocks(&self, branch: Branch) -> Vec<CMatrix> {
        let dt = self.cfg.dt;
        match branch {
            Branch::NoJump => self
                .heff_dense
                .blocks
                .iter()
                .map(|h| &CMatrix::identity(h.rows()) - &h.scale(C64::new(0.0, dt)))
                .collect(),
            Branch::Jump(m) => {
                let s = (self.rates[m] * dt).sqrt();
                self.jump_dense[m].blocks.iter().map(|l| l.scale_real(s)).collect()
            }
        }
    }

    fn cutoff_population(&self, state: &TrajectoryState) -> Option<f64> {
        let levels = self.model.cutoff_levels.as_ref()?;
        let psi = state.psi(&self.structure);
        Some(levels.iter().map(|&i| psi[i].norm_sqr()).sum())
    }

    fn sample(state: &TrajectoryState) -> Sample {
        Sample { step: state.step, t: state.t, log_w: state.ledger.log_w().to_vec() }
    }

    /// Runs trajectory `index` from a freshly drawn initial state.
    pub fn run(&self, index: u64, observers: &mut [&mut dyn Observer]) -> Result<TrajectoryRecord> {
        let mut rng = rng::split(self.cfg.seed, index);
        let state = self.initial_state(&mut rng)?;
        self.run_from(state, index, &mut rng, observers)
    }

    /// Runs from a given state with a given random stream.
    pub fn run_from(
        &self,
        mut state: TrajectoryState,
        index: u64,
        rng: &mut TrajectoryRng,
        observers: &mut [&mut dyn Observer],
    ) -> Result<TrajectoryRecord> {
        let cfg = &self.cfg;
        let n_steps = cfg.n_steps();
        let grace_steps = (cfg.grace_fraction * n_steps as f64).ceil() as u64;
        let mut scratch = self.scratch();
        let mut tracker = if cfg.track_products { Some(ProductTracker::new(self, &state)) } else { None };
        let mut samples = Vec::new();
        let mut freeze: Option<FreezeEvent> = None;
        let mut stopped_early = false;
        let mut max_cutoff: Option<f64> = None;
        let threshold = 1.0 - cfg.freeze_epsilon;

        let mut record = |state: &TrajectoryState,
                          samples: &mut Vec<Sample>,
                          tracker: &mut Option<ProductTracker>,
                          observers: &mut [&mut dyn Observer]|
         -> Result<bool> {
            if samples.last().is_some_and(|s: &Sample| s.step == state.step) {
                return Ok(true);
            }
            samples.push(Self::sample(state));
            if let Some(c) = self.cutoff_population(state) {
                max_cutoff = Some(max_cutoff.map_or(c, |m: f64| m.max(c)));
            }
            if let Some(tr) = tracker {
                tr.snapshot(self, state)?;
            }
            let mut go = true;
            for o in observers.iter_mut() {
                go &= o.on_record(state);
            }
            Ok(go)
        };

        let check_freeze = |state: &TrajectoryState| -> Option<FreezeEvent> {
            let (alpha, p) = state.ledger.max();
            (p >= threshold).then_some(FreezeEvent { step: state.step, t: state.t, destination: alpha })
        };

        freeze = freeze.or_else(|| check_freeze(&state));
        let mut go = record(&state, &mut samples, &mut tracker, observers)?;
        while go && state.step < n_steps {
            let branch = self.step(&mut state, rng, &mut scratch).map_err(|e| e.at_step(state.step))?;
            if let Some(tr) = tracker.as_mut() {
                tr.push(self, branch)?;
            }
            for o in observers.iter_mut() {
                o.on_step(&state, branch);
            }
            let mut must_record = state.step.is_multiple_of(cfg.record_stride) || state.step == n_steps;
            if freeze.is_none() {
                if let Some(f) = check_freeze(&state) {
                    freeze = Some(f);
                    must_record = true;
                }
            }
            if must_record {
                go = record(&state, &mut samples, &mut tracker, observers)?;
            }
            if cfg.early_stop {
                if let Some(f) = freeze {
                    if state.step >= f.step + grace_steps && state.step < n_steps {
                        record(&state, &mut samples, &mut tracker, observers)?;
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        if !go {
            stopped_early = state.step < n_steps;
        }
        Ok(TrajectoryRecord {
            index,
            seed: cfg.seed,
            dt: cfg.dt,
            t_max: cfg.t_max,
            samples,
            jump_count: state.jump_count,
            steps: state.step,
            t_end: state.t,
            freeze,
            stopped_early,
            final_psi: state.psi(&self.structure),
            max_cutoff_population: max_cutoff,
            singulars: tracker.map(ProductTracker::into_snapshots),
            jump_log: state.jump_log,
        })
    }
}

/// Per-trajectory work buffers.
#[derive(Debug, Clone)]
pub struct Scratch {
    active: Vec<usize>,
    p: Vec<f64>,
    y: Vec<Vec<C64>>,
    z: Vec<Vec<Vec<C64>>>,
}

/// Trajectory 0 of a run seeded with `cfg.seed`.
pub fn run_trajectory(
    model: &ModelSpec,
    cfg: &UnravelingConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<TrajectoryRecord> {
    Engine::new(model, cfg)?.run(0, observers)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryFailure {
    pub index: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    /// Successful trajectories in index order.
    pub records: Vec<TrajectoryRecord>,
    pub failures: Vec<TrajectoryFailure>,
}

/// Runs `n_traj` trajectories on stream indices `0..n_traj`. Failures are
/// collected without aborting the rest. Uses the global rayon pool when the
/// `parallel` feature is on; results do not depend on scheduling.
pub fn run_ensemble(model: &ModelSpec, cfg: &UnravelingConfig, n_traj: u64) -> Result<EnsembleResult> {
    let engine = Engine::new(model, cfg)?;
    run_ensemble_with(&engine, n_traj)
}

pub fn run_ensemble_with(engine: &Engine, n_traj: u64) -> Result<EnsembleResult> {
    if n_traj == 0 {
        return Err(Error::Argument("n_traj must be at least 1".into()));
    }
    let run_one = |i: u64| engine.run(i, &mut []);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<TrajectoryRecord>> = {
        use rayon::prelude::*;
        (0..n_traj).into_par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<TrajectoryRecord>> = (0..n_traj).map(run_one).collect();

    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                failures.push(TrajectoryFailure { index: i as u64, kind: e.kind().into(), message: e.to_string() })
            }
        }
    }
    Ok(EnsembleResult { records, failures })
}

/// Ensemble density matrix `(1/N) sum_i |psi_i><psi_i|` from final states.
pub fn ensemble_density(records: &[TrajectoryRecord]) -> CMatrix {
    let n = records.first().map_or(0, |r| r.final_psi.len());
    let mut rho = CMatrix::zeros(n, n);
    for r in records {
        let psi = &r.final_psi;
        for i in 0..n {
            for j in 0..n {
                rho[(i, j)] += psi[i] * psi[j].conj();
            }
        }
    }
    rho.scale_real(1.0 / records.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{coupled_qudit_model, qubit_dephasing_toy, InitialState, QubitVariant};

    fn plus_state() -> InitialState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        InitialState::Vector(vec![C64::new(s, 0.0), C64::new(s, 0.0)])
    }

    #[test]
    fn annihilated_jump_has_zero_probability() {
        let mut m = qubit_dephasing_toy(QubitVariant::Number, 1.0).unwrap();
        m.initial = InitialState::Vector(vec![C64::new(1.0, 0.0), ZERO]);
        let cfg = UnravelingConfig { t_max: 1.0, ..Default::default() };
        let rec = run_trajectory(&m, &cfg, &mut []).unwrap();
        assert_eq!(rec.jump_count, 0);
        assert_eq!(rec.freeze.unwrap().t, 0.0);
    }

    #[test]
    fn half_population_gives_half_jump_probability() {
        let mut m = qubit_dephasing_toy(QubitVariant::Number, 1.0).unwrap();
        m.initial = plus_state();
        let cfg = UnravelingConfig::default();
        let e = Engine::new(&m, &cfg).unwrap();
        let mut rng = rng::split(0, 0);
        let st = e.initial_state(&mut rng).unwrap();
        let mut scratch = e.scratch();
        let p = e.jump_probabilities(&st, &mut scratch);
        assert!((p[0] - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn large_step_is_rejected_with_probabilities() {
        let m = qubit_dephasing_toy(QubitVariant::SigmaZ, 2000.0).unwrap();
        let cfg = UnravelingConfig { t_max: 1.0, ..Default::default() };
        match run_trajectory(&m, &cfg, &mut []) {
            Err(Error::TimestepTooLarge { step, jump_probabilities, .. }) => {
                assert_eq!(step, 0);
                assert!((jump_probabilities[0] - 2.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_jump_freezes_number_toy() {
        let mut m = qubit_dephasing_toy(QubitVariant::Number, 1.0).unwrap();
        m.initial = plus_state();
        let cfg = UnravelingConfig { t_max: 20.0, early_stop: false, ..Default::default() };
        for i in 0..20 {
            let rec = Engine::new(&m, &cfg).unwrap().run(i, &mut []).unwrap();
            if let Some(first) = rec.jump_log.first() {
                let f = rec.freeze.unwrap();
                assert!(f.step <= first.step + 1);
                assert_eq!(f.destination, 0, "lambda=-1 subspace holds |1>");
                assert_eq!(rec.final_psi[0], ZERO);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let m = coupled_qudit_model(3.0, 1.0).unwrap();
        let cfg = UnravelingConfig { t_max: 5.0, seed: 9, ..Default::default() };
        let a = run_trajectory(&m, &cfg, &mut []).unwrap();
        let b = run_trajectory(&m, &cfg, &mut []).unwrap();
        assert_eq!(a.jump_log, b.jump_log);
        assert_eq!(a.final_psi, b.final_psi);
        assert!(!a.jump_log.is_empty());
    }

    #[test]
    fn effective_hamiltonian_only_decays() {
        let m = coupled_qudit_model(3.0, 1.0).unwrap();
        let h = EffectiveHamiltonian::from_model(&m).unwrap();
        assert!(h.min_decay_rate().unwrap() >= -1e-12);
    }
}
