//! Vectorized Lindblad generators, their symmetry-sector restrictions, and a
//! direct master-equation integrator used as an oracle.
//!
//! Vectorization stacks columns: `vec(X rho Y) = (Y^T kron X) vec(rho)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64, I};
use crate::models::JumpOperator;
use crate::symmetry::{BlockOperator, BlockStructure};

/// Full `n^2 x n^2` diagonalization is refused above this Hilbert dimension.
pub const MAX_FULL_DIM: usize = 24;
/// Relative tolerance for zero modes, scaled by the sector's spectral radius.
pub const DEFAULT_TRACELESS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vectorization {
    ColumnStacking,
}

#[derive(Debug, Clone)]
pub struct VectorizedLiouvillian {
    pub matrix: CMatrix,
    pub convention: Vectorization,
    /// Hilbert dimensions `(rows, cols)` of the operators it acts on.
    pub shape: (usize, usize),
}

impl VectorizedLiouvillian {
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let v = self.matrix.matvec(&rho.vec_columns());
        CMatrix::unvec_columns(&v, self.shape.0, self.shape.1)
    }
}

fn check_ops(h: &CMatrix, jumps: &[JumpOperator]) -> Result<usize> {
    let n = h.rows();
    if h.cols() != n {
        return Err(Error::Dimension(format!("Hamiltonian is {}x{}", h.rows(), h.cols())));
    }
    for j in jumps {
        if j.op.rows() != n || j.op.cols() != n {
            return Err(Error::Dimension(format!(
                "jump operator is {}x{}, expected {n}x{n}",
                j.op.rows(),
                j.op.cols()
            )));
        }
        if !(j.rate >= 0.0) {
            return Err(Error::Argument(format!("negative jump rate {}", j.rate)));
        }
    }
    Ok(n)
}

/// Generator restricted to operators `|a><b|` with `a` in the space of
/// `(h_l, l_l)` and `b` in that of `(h_r, l_r)`:
/// `-i(I kron H_l - H_r^T kron I) + sum gamma [conj(L_r) kron L_l
///  - 1/2 I kron G_l - 1/2 G_r^T kron I]` with `G = L^dagger L`.
fn restricted_generator(h_l: &CMatrix, h_r: &CMatrix, l_l: &[&CMatrix], l_r: &[&CMatrix], rates: &[f64]) -> CMatrix {
    let (dl, dr) = (h_l.rows(), h_r.rows());
    let id_l = CMatrix::identity(dl);
    let id_r = CMatrix::identity(dr);
    let mut m = (&id_r.kron(h_l) - &h_r.transpose().kron(&id_l)).scale(-I);
    for ((ll, lr), &g) in l_l.iter().zip(l_r).zip(rates) {
        let gl = ll.dagger().matmul(ll);
        let gr = lr.dagger().matmul(lr);
        let d = &(&lr.conj().kron(ll) - &id_r.kron(&gl).scale_real(0.5)) - &gr.transpose().kron(&id_l).scale_real(0.5);
        m = &m + &d.scale_real(g);
    }
    m
}

pub fn build_liouvillian(h: &CMatrix, jumps: &[JumpOperator]) -> Result<VectorizedLiouvillian> {
    let n = check_ops(h, jumps)?;
    let ls: Vec<&CMatrix> = jumps.iter().map(|j| &j.op).collect();
    let rates: Vec<f64> = jumps.iter().map(|j| j.rate).collect();
    Ok(VectorizedLiouvillian {
        matrix: restricted_generator(h, h, &ls, &ls, &rates),
        convention: Vectorization::ColumnStacking,
        shape: (n, n),
    })
}

/// Generator on the `(alpha, alpha')` coherence block, in the block basis.
pub fn sector_generator(
    structure: &BlockStructure,
    h: &CMatrix,
    jumps: &[JumpOperator],
    pair: (usize, usize),
) -> Result<VectorizedLiouvillian> {
    check_ops(h, jumps)?;
    let (a, b) = pair;
    let da = structure.subspace(a)?.dim();
    let db = structure.subspace(b)?.dim();
    if da == 0 || db == 0 {
        return Err(Error::Dimension(format!("sector {pair:?} is empty")));
    }
    let hb = BlockOperator::from_operator(h, structure, 1e-12)?;
    let lb = jumps.iter().map(|j| BlockOperator::from_operator(&j.op, structure, 1e-12)).collect::<Result<Vec<_>>>()?;
    let l_l: Vec<&CMatrix> = lb.iter().map(|x| &x.blocks[a]).collect();
    let l_r: Vec<&CMatrix> = lb.iter().map(|x| &x.blocks[b]).collect();
    let rates: Vec<f64> = jumps.iter().map(|j| j.rate).collect();
    Ok(VectorizedLiouvillian {
        matrix: restricted_generator(&hb.blocks[a], &hb.blocks[b], &l_l, &l_r, &rates),
        convention: Vectorization::ColumnStacking,
        shape: (da, db),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectorSpectrum {
    pub pair: (usize, usize),
    pub eigenvalues: Vec<C64>,
    /// `min |Re lambda|` over the sector.
    pub gap: f64,
    /// Eigenvalues with `|Re lambda| <= tol`.
    pub traceless_nondecaying: Vec<C64>,
    pub spectral_radius: f64,
    /// Absolute tolerance actually used.
    pub tol: f64,
}

/// Diagonalizes the `(alpha, alpha')` sector. `rel_tol` is relative to the
/// sector's spectral radius (default [`DEFAULT_TRACELESS_TOL`]).
pub fn sector_spectrum(
    structure: &BlockStructure,
    h: &CMatrix,
    jumps: &[JumpOperator],
    pair: (usize, usize),
    rel_tol: Option<f64>,
) -> Result<SectorSpectrum> {
    let gen = sector_generator(structure, h, jumps, pair)?;
    let mut eigenvalues = linalg::eigenvalues(&gen.matrix)?;
    eigenvalues.sort_by(|x, y| y.re.total_cmp(&x.re).then(x.im.total_cmp(&y.im)));
    let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = rel_tol.unwrap_or(DEFAULT_TRACELESS_TOL) * spectral_radius.max(f64::MIN_POSITIVE);
    let gap = eigenvalues.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
    let traceless_nondecaying = eigenvalues.iter().copied().filter(|z| z.re.abs() <= tol).collect();
    Ok(SectorSpectrum { pair, eigenvalues, gap, traceless_nondecaying, spectral_radius, tol })
}

/// Smallest `|Re lambda|` in the sector; at or below the sector tolerance
/// the gap is closed.
pub fn inter_sector_gap(
    structure: &BlockStructure,
    h: &CMatrix,
    jumps: &[JumpOperator],
    pair: (usize, usize),
) -> Result<f64> {
    Ok(sector_spectrum(structure, h, jumps, pair, None)?.gap)
}

/// Eigenvalues of the full generator. Refused above [`MAX_FULL_DIM`].
pub fn full_spectrum(h: &CMatrix, jumps: &[JumpOperator]) -> Result<Vec<C64>> {
    let n = check_ops(h, jumps)?;
    if n > MAX_FULL_DIM {
        return Err(Error::Argument(format!(
            "full Liouvillian diagonalization refused for dimension {n} > {MAX_FULL_DIM}; use sector spectra"
        )));
    }
    linalg::eigenvalues(&build_liouvillian(h, jumps)?.matrix)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyState {
    pub alpha: usize,
    /// Density matrix in the original basis (unit trace, Hermitian) or, for a
    /// degenerate sector, one element of an orthonormal Hermitian basis of
    /// the stationary operators.
    pub rho: CMatrix,
    /// `|L rho|_F`.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectorSteadyStates {
    pub alpha: usize,
    pub degeneracy: usize,
    pub states: Vec<SteadyState>,
}

fn embed(structure: &BlockStructure, alpha: usize, block: &CMatrix) -> CMatrix {
    let n = structure.dim();
    let idx = &structure.subspaces()[alpha].indices;
    let mut w = CMatrix::zeros(n, n);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            w[(i, j)] = block[(r, c)];
        }
    }
    structure.from_working(&w)
}

/// Null space of every diagonal sector. A one-dimensional null space gives a
/// density matrix (validated Hermitian, unit trace, PSD); a larger one gives
/// an orthonormal Hermitian basis of the stationary operators.
pub fn steady_states(
    structure: &BlockStructure,
    h: &CMatrix,
    jumps: &[JumpOperator],
    rel_tol: f64,
) -> Result<Vec<SectorSteadyStates>> {
    let full = build_liouvillian_norm(h, jumps)?;
    let mut out = Vec::with_capacity(structure.len());
    for alpha in 0..structure.len() {
        let gen = sector_generator(structure, h, jumps, (alpha, alpha))?;
        let d = gen.shape.0;
        let null = linalg::null_space(&gen.matrix, rel_tol)?;
        if null.is_empty() {
            return Err(Error::InternalConsistency(format!("diagonal sector {alpha} has no stationary state")));
        }
        let mut states = Vec::new();
        if null.len() == 1 {
            let mut rho = CMatrix::unvec_columns(&null[0], d, d);
            let tr = rho.trace();
            if tr.norm() < 1e-12 {
                return Err(Error::InternalConsistency(format!("stationary operator of sector {alpha} is traceless")));
            }
            rho = rho.scale(tr.inv());
            rho = (&rho + &rho.dagger()).scale_real(0.5);
            let (vals, _) = linalg::hermitian_eigen(&rho)?;
            if vals[0] < -1e-10 {
                return Err(Error::InternalConsistency(format!(
                    "steady state of sector {alpha} has negative eigenvalue {:e}",
                    vals[0]
                )));
            }
            let residual = CMatrix::from_vec(d * d, 1, gen.matrix.matvec(&rho.vec_columns())).frobenius_norm();
            if residual > 1e-8 * full.max(1.0) {
                return Err(Error::InternalConsistency(format!(
                    "steady state residual {residual:e} in sector {alpha}"
                )));
            }
            states.push(SteadyState { alpha, rho: embed(structure, alpha, &rho), residual });
        } else {
            // the null space is closed under X -> X^dagger; span it by Hermitian parts
            let mut herm = Vec::new();
            for v in &null {
                let x = CMatrix::unvec_columns(v, d, d);
                herm.push((&x + &x.dagger()).scale_real(0.5).vec_columns());
                herm.push((&x - &x.dagger()).scale(C64::new(0.0, -0.5)).vec_columns());
            }
            // a real orthonormal basis over the Hermitian matrices
            let mut basis: Vec<Vec<C64>> = Vec::new();
            for v in herm {
                let mut w = v;
                for _ in 0..2 {
                    for b in &basis {
                        let c = linalg::inner(b, &w).re;
                        for (wi, bi) in w.iter_mut().zip(b) {
                            *wi -= bi * c;
                        }
                    }
                }
                let n = linalg::norm_sqr(&w).sqrt();
                if n > 1e-8 {
                    basis.push(w.into_iter().map(|z| z / n).collect());
                }
                if basis.len() == null.len() {
                    break;
                }
            }
            for v in basis {
                let x = CMatrix::unvec_columns(&v, d, d);
                let residual = CMatrix::from_vec(d * d, 1, gen.matrix.matvec(&v)).frobenius_norm();
                states.push(SteadyState { alpha, rho: embed(structure, alpha, &x), residual });
            }
        }
        out.push(SectorSteadyStates { alpha, degeneracy: null.len(), states });
    }
    Ok(out)
}

/// Frobenius norm of the full generator, computed block-free from the
/// operator norms (an upper bound good enough for relative tolerances).
fn build_liouvillian_norm(h: &CMatrix, jumps: &[JumpOperator]) -> Result<f64> {
    let n = check_ops(h, jumps)? as f64;
    let mut s = 2.0 * n.sqrt() * h.frobenius_norm();
    for j in jumps {
        let f = j.op.frobenius_norm();
        s += j.rate * (f * f + n.sqrt() * f * f);
    }
    Ok(s)
}

/// `d rho / dt` in matrix form.
fn lindblad_rhs(h: &CMatrix, jumps: &[(CMatrix, CMatrix, f64)], rho: &CMatrix) -> CMatrix {
    let mut out = (&h.matmul(rho) - &rho.matmul(h)).scale(-I);
    for (l, g, rate) in jumps {
        let d = &(&l.matmul(rho).matmul(&l.dagger()) - &g.matmul(rho).scale_real(0.5)) - &rho.matmul(g).scale_real(0.5);
        out = &out + &d.scale_real(*rate);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasterEquationSolution {
    pub rho: CMatrix,
    pub t: f64,
    pub steps: u64,
    pub trace_drift: f64,
}

/// Classical fourth-order Runge-Kutta on the master equation. Fails if the
/// trace drifts by more than `1e-6` or the Frobenius norm grows by more than
/// that.
pub fn integrate_master_equation(
    rho0: &CMatrix,
    h: &CMatrix,
    jumps: &[JumpOperator],
    t: f64,
    dt: f64,
) -> Result<MasterEquationSolution> {
    let n = check_ops(h, jumps)?;
    if rho0.rows() != n || rho0.cols() != n {
        return Err(Error::Dimension(format!("rho0 is {}x{}, expected {n}x{n}", rho0.rows(), rho0.cols())));
    }
    if !rho0.is_hermitian(1e-10) {
        return Err(Error::Validation("rho0 is not Hermitian".into()));
    }
    if !(dt > 0.0) || !(t >= 0.0) {
        return Err(Error::Argument(format!("need dt > 0 and t >= 0, got dt={dt}, t={t}")));
    }
    let prepared: Vec<(CMatrix, CMatrix, f64)> =
        jumps.iter().map(|j| (j.op.clone(), j.op.dagger().matmul(&j.op), j.rate)).collect();
    let steps = (t / dt).ceil().max(if t > 0.0 { 1.0 } else { 0.0 }) as u64;
    let h_step = if steps > 0 { t / steps as f64 } else { 0.0 };
    let tr0 = rho0.trace();
    let mut rho = rho0.clone();
    for _ in 0..steps {
        let k1 = lindblad_rhs(h, &prepared, &rho);
        let k2 = lindblad_rhs(h, &prepared, &(&rho + &k1.scale_real(0.5 * h_step)));
        let k3 = lindblad_rhs(h, &prepared, &(&rho + &k2.scale_real(0.5 * h_step)));
        let k4 = lindblad_rhs(h, &prepared, &(&rho + &k3.scale_real(h_step)));
        let incr = &(&k1 + &k2.scale_real(2.0)) + &(&k3.scale_real(2.0) + &k4);
        rho = &rho + &incr.scale_real(h_step / 6.0);
    }
    let trace_drift = (rho.trace() - tr0).norm();
    if !(trace_drift <= 1e-6) {
        return Err(Error::StepSize { drift: trace_drift, limit: 1e-6 });
    }
    // RK4 keeps the trace exactly, so an unstable step shows up as growth of
    // |rho|_F instead, which the true evolution never allows for a state
    let growth = rho.frobenius_norm() - rho0.frobenius_norm();
    if !(growth <= 1e-6) {
        return Err(Error::StepSize { drift: growth, limit: 1e-6 });
    }
    Ok(MasterEquationSolution { rho, t, steps, trace_drift })
}

/// `exp(L t) rho0` through a dense matrix exponential of the generator.
pub fn propagate_exact(l: &VectorizedLiouvillian, rho0: &CMatrix, t: f64) -> CMatrix {
    let e = linalg::expm(&l.matrix.scale_real(t));
    CMatrix::unvec_columns(&e.matvec(&rho0.vec_columns()), l.shape.0, l.shape.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    /// `lambda = 0`: a stationary coherence.
    Stationary,
    /// `lambda = i nu`, `nu != 0`: a persistently oscillating coherence.
    Oscillating,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracelessModes {
    pub pair: (usize, usize),
    pub eigenvalues: Vec<C64>,
    pub kinds: Vec<ModeKind>,
    pub tol: f64,
}

/// Off-diagonal sectors `(alpha < alpha')` carrying eigenvalues on the
/// imaginary axis. The `(alpha', alpha)` sector is the complex conjugate and
/// is not listed separately.
pub fn detect_traceless_modes(
    structure: &BlockStructure,
    h: &CMatrix,
    jumps: &[JumpOperator],
    rel_tol: Option<f64>,
) -> Result<Vec<TracelessModes>> {
    let d = structure.len();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).collect();
    let one = |&pair: &(usize, usize)| -> Result<Option<TracelessModes>> {
        let s = sector_spectrum(structure, h, jumps, pair, rel_tol)?;
        if s.traceless_nondecaying.is_empty() {
            return Ok(None);
        }
        let kinds = s
            .traceless_nondecaying
            .iter()
            .map(|z| if z.im.abs() <= s.tol { ModeKind::Stationary } else { ModeKind::Oscillating })
            .collect();
        Ok(Some(TracelessModes { pair, eigenvalues: s.traceless_nondecaying, kinds, tol: s.tol }))
    };
    #[cfg(feature = "parallel")]
    let found: Vec<Result<Option<TracelessModes>>> = {
        use rayon::prelude::*;
        pairs.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let found: Vec<Result<Option<TracelessModes>>> = pairs.iter().map(one).collect();
    let mut out = Vec::new();
    for r in found {
        if let Some(m) = r? {
            out.push(m);
        }
    }
    Ok(out)
}

/// Eigenvector of the `(alpha, alpha')` sector for its eigenvalue closest to
/// `target`, as an operator in the original basis.
pub fn sector_mode(
    structure: &BlockStructure,
    h: &CMatrix,
    jumps: &[JumpOperator],
    pair: (usize, usize),
    target: C64,
) -> Result<(C64, CMatrix)> {
    let gen = sector_generator(structure, h, jumps, pair)?;
    let (vals, vecs) = linalg::eigen(&gen.matrix)?;
    let k = (0..vals.len())
        .min_by(|&x, &y| (vals[x] - target).norm().total_cmp(&(vals[y] - target).norm()))
        .ok_or_else(|| Error::Numerical("empty sector".into()))?;
    let block = CMatrix::unvec_columns(&vecs.column(k), gen.shape.0, gen.shape.1);
    let n = structure.dim();
    let (ia, ib) = (&structure.subspaces()[pair.0].indices, &structure.subspaces()[pair.1].indices);
    let mut w = CMatrix::zeros(n, n);
    for (r, &i) in ia.iter().enumerate() {
        for (c, &j) in ib.iter().enumerate() {
            w[(i, j)] = block[(r, c)];
        }
    }
    Ok((vals[k], structure.from_working(&w)))
}

/// Frobenius norm of the `(alpha, alpha')` block of `rho` (original basis).
pub fn block_norm(structure: &BlockStructure, rho: &CMatrix, pair: (usize, usize)) -> f64 {
    let w = structure.to_working(rho);
    let (ia, ib) = (&structure.subspaces()[pair.0].indices, &structure.subspaces()[pair.1].indices);
    let mut s = 0.0;
    for &i in ia {
        for &j in ib {
            s += w[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Trace distance `1/2 |a - b|_1` between Hermitian matrices.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    let d = a - b;
    let d = (&d + &d.dagger()).scale_real(0.5);
    let (vals, _) = linalg::hermitian_eigen(&d)?;
    Ok(0.5 * vals.iter().map(|x| x.abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ZERO;
    use crate::models::{qubit_dephasing_toy, QubitVariant};

    fn jump(op: CMatrix, rate: f64) -> JumpOperator {
        JumpOperator { op, rate }
    }

    #[test]
    fn maximally_mixed_is_stationary_for_unitary_jump() {
        let h = CMatrix::zeros(3, 3);
        // cyclic shift: L^dagger L = 1
        let l = CMatrix::from_fn(3, 3, |r, c| if (c + 1) % 3 == r { C64::new(1.0, 0.0) } else { ZERO });
        let lv = build_liouvillian(&h, &[jump(l, 0.7)]).unwrap();
        let out = lv.apply(&CMatrix::identity(3).scale_real(1.0 / 3.0));
        assert!(out.frobenius_norm() < 1e-14);
    }

    #[test]
    fn qubit_dephasing_spectrum() {
        let gamma = 0.3;
        let m = qubit_dephasing_toy(QubitVariant::SigmaZ, gamma).unwrap();
        let mut ev = full_spectrum(&m.h, &m.jumps).unwrap();
        ev.sort_by(|a, b| a.re.total_cmp(&b.re));
        let expect = [-2.0 * gamma, -2.0 * gamma, 0.0, 0.0];
        for (z, e) in ev.iter().zip(expect) {
            assert!((z.re - e).abs() < 1e-12 && z.im.abs() < 1e-12, "{ev:?}");
        }
        let s = m.structure().unwrap();
        assert!((inter_sector_gap(&s, &m.h, &m.jumps, (0, 1)).unwrap() - 2.0 * gamma).abs() < 1e-12);
    }

    #[test]
    fn trace_is_preserved() {
        let m = qubit_dephasing_toy(QubitVariant::Number, 1.3).unwrap();
        let lv = build_liouvillian(&m.h, &m.jumps).unwrap();
        let id = CMatrix::identity(2).vec_columns();
        let left: Vec<C64> = (0..4).map(|c| (0..4).map(|r| id[r].conj() * lv.matrix[(r, c)]).sum()).collect();
        assert!(left.iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn zero_generator_leaves_state_alone() {
        let rho = CMatrix::from_real_rows(&[&[0.7, 0.1], &[0.1, 0.3]]);
        let sol = integrate_master_equation(&rho, &CMatrix::zeros(2, 2), &[], 3.0, 0.01).unwrap();
        assert!((&sol.rho - &rho).frobenius_norm() < 1e-15);
    }

    #[test]
    fn qubit_steady_states_are_populations() {
        let m = qubit_dephasing_toy(QubitVariant::SigmaZ, 1.0).unwrap();
        let s = m.structure().unwrap();
        let ss = steady_states(&s, &m.h, &m.jumps, 1e-9).unwrap();
        assert_eq!(ss.len(), 2);
        // ascending lambda: subspace 0 is |1>
        assert!((ss[0].states[0].rho[(1, 1)].re - 1.0).abs() < 1e-12);
        assert!((ss[1].states[0].rho[(0, 0)].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_full_spectrum_is_refused() {
        let h = CMatrix::zeros(25, 25);
        assert!(matches!(full_spectrum(&h, &[]), Err(Error::Argument(_))));
    }
}
