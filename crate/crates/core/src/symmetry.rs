//! Strong-symmetry block structure: detection, projection and the
//! similar-subspace test.
//!
//! A [`BlockStructure`] partitions the indices of a *working basis* into
//! symmetry subspaces. When the working basis is the original basis (the
//! usual case for diagonal symmetry operators and declared block bases) the
//! structure carries no change-of-basis matrix; otherwise `basis` holds the
//! working basis vectors as columns expressed in the original basis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64, ZERO};

/// Default relative tolerance for grouping eigenvalues of a symmetry operator.
pub const DEFAULT_GROUPING_TOL: f64 = 1e-9;

/// Largest subspace dimension for which [`check_similar`] searches basis
/// permutations; larger blocks are compared in their given ordering only.
pub const MAX_PERMUTATION_SEARCH_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    /// Eigenvalue of the symmetry operator labelling this subspace.
    pub lambda: f64,
    /// Working-basis indices spanning the subspace, in block order.
    pub indices: Vec<usize>,
    pub label: String,
}

impl Subspace {
    pub fn dim(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStructure {
    subspaces: Vec<Subspace>,
    dim: usize,
    basis: Option<CMatrix>,
}

impl BlockStructure {
    pub fn new(subspaces: Vec<Subspace>, dim: usize, basis: Option<CMatrix>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("block structure over an empty space".into()));
        }
        let mut seen = vec![false; dim];
        for s in &subspaces {
            if s.indices.is_empty() {
                return Err(Error::Validation(format!("subspace {} is empty", s.label)));
            }
            for &i in &s.indices {
                if i >= dim {
                    return Err(Error::Index(format!("basis index {i} >= dimension {dim}")));
                }
                if seen[i] {
                    return Err(Error::Validation(format!("basis index {i} appears in two subspaces")));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Validation(format!("basis index {missing} is in no subspace")));
        }
        for (a, sa) in subspaces.iter().enumerate() {
            for sb in &subspaces[a + 1..] {
                if sa.lambda == sb.lambda {
                    return Err(Error::Validation(format!(
                        "subspaces {} and {} share eigenvalue {}",
                        sa.label, sb.label, sa.lambda
                    )));
                }
            }
        }
        if let Some(b) = &basis {
            if b.rows() != dim || b.cols() != dim {
                return Err(Error::Dimension(format!(
                    "change of basis is {}x{}, expected {dim}x{dim}",
                    b.rows(),
                    b.cols()
                )));
            }
        }
        Ok(Self { subspaces, dim, basis })
    }

    /// The trivial structure: one subspace holding everything.
    pub fn trivial(dim: usize) -> Self {
        Self {
            subspaces: vec![Subspace { lambda: 0.0, indices: (0..dim).collect(), label: "all".into() }],
            dim,
            basis: None,
        }
    }

    pub fn len(&self) -> usize {
        self.subspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subspaces.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subspaces(&self) -> &[Subspace] {
        &self.subspaces
    }

    pub fn basis(&self) -> Option<&CMatrix> {
        self.basis.as_ref()
    }

    pub fn subspace(&self, alpha: usize) -> Result<&Subspace> {
        self.subspaces.get(alpha).ok_or_else(|| Error::Index(format!("subspace {alpha} of {}", self.subspaces.len())))
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.subspaces.iter().map(Subspace::dim).collect()
    }

    /// Subspace containing a working-basis index.
    pub fn subspace_of(&self, index: usize) -> Option<usize> {
        self.subspaces.iter().position(|s| s.indices.contains(&index))
    }

    /// Expresses an operator given in the original basis in the working basis.
    pub fn to_working(&self, op: &CMatrix) -> CMatrix {
        match &self.basis {
            None => op.clone(),
            Some(u) => u.dagger().matmul(op).matmul(u),
        }
    }

    /// Maps a working-basis operator back to the original basis.
    pub fn from_working(&self, op: &CMatrix) -> CMatrix {
        match &self.basis {
            None => op.clone(),
            Some(u) => u.matmul(op).matmul(&u.dagger()),
        }
    }

    /// Maps a working-basis vector to the original basis.
    pub fn vector_from_working(&self, v: &[C64]) -> Vec<C64> {
        match &self.basis {
            None => v.to_vec(),
            Some(u) => u.matvec(v),
        }
    }

    pub fn vector_to_working(&self, v: &[C64]) -> Vec<C64> {
        match &self.basis {
            None => v.to_vec(),
            Some(u) => u.dagger().matvec(v),
        }
    }

    /// The projector `P_alpha` as a full matrix in the original basis.
    pub fn projector(&self, alpha: usize) -> Result<CMatrix> {
        let s = self.subspace(alpha)?;
        let mut p = CMatrix::zeros(self.dim, self.dim);
        for &i in &s.indices {
            p[(i, i)] = linalg::ONE;
        }
        Ok(self.from_working(&p))
    }

    /// Same partition as `other`, up to relabelling of subspaces.
    pub fn same_partition(&self, other: &BlockStructure) -> bool {
        if self.dim != other.dim || self.len() != other.len() || self.basis != other.basis {
            return false;
        }
        let canon = |s: &BlockStructure| {
            let mut sets: Vec<Vec<usize>> = s
                .subspaces
                .iter()
                .map(|x| {
                    let mut v = x.indices.clone();
                    v.sort_unstable();
                    v
                })
                .collect();
            sets.sort();
            sets
        };
        canon(self) == canon(other)
    }
}

/// An operator known to be block diagonal, stored as its diagonal blocks.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    pub structure: BlockStructure,
    pub blocks: Vec<CMatrix>,
}

impl BlockOperator {
    /// Splits `op` (original basis) into blocks; fails if it has weight
    /// outside the diagonal blocks beyond `tol` relative to its norm.
    pub fn from_operator(op: &CMatrix, structure: &BlockStructure, tol: f64) -> Result<Self> {
        check_square(op, structure.dim(), "operator")?;
        let blocks = (0..structure.len()).map(|a| project(op, structure, a)).collect::<Result<Vec<_>>>()?;
        let out = Self { structure: structure.clone(), blocks };
        let residual = (&out.reassemble() - op).frobenius_norm();
        let scale = op.frobenius_norm();
        if residual > tol * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Validation(format!(
                "operator is not block diagonal: off-block weight {residual:e} vs norm {scale:e}"
            )));
        }
        Ok(out)
    }

    /// Rebuilds the full operator in the original basis.
    pub fn reassemble(&self) -> CMatrix {
        let n = self.structure.dim();
        let mut w = CMatrix::zeros(n, n);
        for (s, b) in self.structure.subspaces().iter().zip(&self.blocks) {
            for (r, &i) in s.indices.iter().enumerate() {
                for (c, &j) in s.indices.iter().enumerate() {
                    w[(i, j)] = b[(r, c)];
                }
            }
        }
        self.structure.from_working(&w)
    }
}

fn check_square(m: &CMatrix, n: usize, what: &str) -> Result<()> {
    if m.rows() != n || m.cols() != n {
        return Err(Error::Dimension(format!("{what} is {}x{}, expected {n}x{n}", m.rows(), m.cols())));
    }
    Ok(())
}

/// Whether `a` is a strong symmetry of `(h, jumps)`: it commutes with the
/// Hamiltonian, every jump operator and every adjoint, relative to the
/// largest operator norm involved.
pub fn verify_strong_symmetry(h: &CMatrix, jumps: &[CMatrix], a: &CMatrix, tol: f64) -> Result<bool> {
    let n = h.rows();
    check_square(h, n, "hamiltonian")?;
    check_square(a, n, "symmetry operator")?;
    for (j, l) in jumps.iter().enumerate() {
        check_square(l, n, &format!("jump operator {j}"))?;
    }
    let a_norm = a.frobenius_norm();
    if !a.is_hermitian(tol * a_norm.max(1.0)) {
        return Err(Error::Validation("symmetry operator is not Hermitian".into()));
    }
    let scale = jumps.iter().map(CMatrix::frobenius_norm).fold(h.frobenius_norm().max(a_norm), f64::max);
    let bound = tol * scale;
    if linalg::commutator(h, a).frobenius_norm() > bound {
        return Ok(false);
    }
    for l in jumps {
        if linalg::commutator(l, a).frobenius_norm() > bound {
            return Ok(false);
        }
        if linalg::commutator(&l.dagger(), a).frobenius_norm() > bound {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Diagonalizes a Hermitian symmetry operator and groups its eigenvalues
/// into subspaces, sorted by ascending eigenvalue.
///
/// Eigenvalues closer than `tol * |A|` are merged; a chain of such merges
/// whose total spread exceeds that bound is rejected rather than split.
/// Diagonal operators keep the original basis; otherwise each subspace gets a
/// canonical basis obtained by Gram-Schmidt on the columns of its projector
/// taken in original-index order, so the result does not depend on the
/// eigensolver's arbitrary rotation inside degenerate eigenspaces.
pub fn block_structure_from_symmetry(a: &CMatrix, tol: f64) -> Result<BlockStructure> {
    let n = a.rows();
    check_square(a, n, "symmetry operator")?;
    if n == 0 {
        return Err(Error::Argument("empty symmetry operator".into()));
    }
    let fro = a.frobenius_norm();
    if !a.is_hermitian(tol * fro.max(1.0)) {
        return Err(Error::Validation("symmetry operator is not Hermitian".into()));
    }
    let off_diag = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .filter(|(r, c)| r != c)
        .map(|rc| a[rc].norm())
        .fold(0.0, f64::max);
    let diagonal = off_diag <= f64::EPSILON * fro;

    let (values, vectors) = if diagonal {
        ((0..n).map(|i| a[(i, i)].re).collect::<Vec<_>>(), None)
    } else {
        let (vals, vecs) = linalg::hermitian_eigen(a)?;
        (vals, Some(vecs))
    };
    let spectral = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let bound = tol * if spectral > 0.0 { spectral } else { 1.0 };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| values[x].total_cmp(&values[y]).then(x.cmp(&y)));

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if values[i] - values[*g.last().unwrap()] <= bound => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    for g in &groups {
        let spread = values[*g.last().unwrap()] - values[g[0]];
        if spread > bound {
            return Err(Error::DegeneracyResolution(format!(
                "eigenvalues {} .. {} chain within tolerance {bound:e} but spread {spread:e}",
                values[g[0]],
                values[*g.last().unwrap()]
            )));
        }
    }

    let mean = |g: &[usize]| g.iter().map(|&i| values[i]).sum::<f64>() / g.len() as f64;
    match vectors {
        None => {
            let subspaces = groups
                .iter()
                .map(|g| {
                    let lambda = mean(g);
                    Subspace { lambda, indices: g.clone(), label: format!("lambda={lambda}") }
                })
                .collect();
            BlockStructure::new(subspaces, n, None)
        }
        Some(vecs) => {
            let mut columns: Vec<Vec<C64>> = Vec::with_capacity(n);
            let mut subspaces = Vec::with_capacity(groups.len());
            for g in &groups {
                // projector onto the eigenspace, applied to unit vectors in index order
                let cols: Vec<Vec<C64>> = g.iter().map(|&k| vecs.column(k)).collect();
                let candidates: Vec<Vec<C64>> = (0..n)
                    .map(|e| {
                        cols.iter().fold(vec![ZERO; n], |mut acc, v| {
                            let c = v[e].conj();
                            for (x, vi) in acc.iter_mut().zip(v) {
                                *x += c * vi;
                            }
                            acc
                        })
                    })
                    .collect();
                let mut basis = linalg::orthonormalize(&candidates, 1e-8);
                if basis.len() != g.len() {
                    return Err(Error::Numerical(format!(
                        "canonical basis for eigenspace has {} vectors, expected {}",
                        basis.len(),
                        g.len()
                    )));
                }
                let start = columns.len();
                columns.append(&mut basis);
                let lambda = mean(g);
                subspaces.push(Subspace {
                    lambda,
                    indices: (start..start + g.len()).collect(),
                    label: format!("lambda={lambda}"),
                });
            }
            let u = CMatrix::from_fn(n, n, |r, c| columns[c][r]);
            BlockStructure::new(subspaces, n, Some(u))
        }
    }
}

/// Finest simultaneous block decomposition visible in the given basis: the
/// connected components of the graph linking `p` and `q` whenever any of
/// `H`, `L_j`, `L_j^dagger` has a matrix element above `tol` between them.
pub fn infer_block_structure(h: &CMatrix, jumps: &[CMatrix], tol: f64) -> Result<BlockStructure> {
    let n = h.rows();
    check_square(h, n, "hamiltonian")?;
    for (j, l) in jumps.iter().enumerate() {
        check_square(l, n, &format!("jump operator {j}"))?;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut link = |p: usize, q: usize| {
        let (rp, rq) = (find(&mut parent, p), find(&mut parent, q));
        if rp != rq {
            parent[rp.max(rq)] = rp.min(rq);
        }
    };
    for p in 0..n {
        for q in 0..n {
            // L^dagger_{pq} = conj(L_{qp}), so checking both orientations of
            // every operator covers the adjoints too.
            if p != q && (h[(p, q)].norm() > tol || jumps.iter().any(|l| l[(p, q)].norm() > tol)) {
                link(p, q);
            }
        }
    }
    let mut comps: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match comps.iter_mut().find(|(root, _)| *root == r) {
            Some((_, v)) => v.push(i),
            None => comps.push((r, vec![i])),
        }
    }
    let subspaces = comps
        .into_iter()
        .enumerate()
        .map(|(k, (_, indices))| Subspace { lambda: k as f64, indices, label: format!("component {k}") })
        .collect();
    BlockStructure::new(subspaces, n, None)
}

/// The `d_alpha x d_alpha` block `P_alpha O P_alpha` in the working basis.
pub fn project(op: &CMatrix, structure: &BlockStructure, alpha: usize) -> Result<CMatrix> {
    check_square(op, structure.dim(), "operator")?;
    let s = structure.subspace(alpha)?;
    Ok(match structure.basis() {
        None => op.select(&s.indices, &s.indices),
        Some(u) => {
            let cols = u.select(&(0..structure.dim()).collect::<Vec<_>>(), &s.indices);
            cols.dagger().matmul(op).matmul(&cols)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVerdict {
    pub pair: (usize, usize),
    pub similar: bool,
    /// One phase per jump operator, present iff `similar`.
    pub phases: Option<Vec<f64>>,
    /// `permutation[i]` is the basis position in the second subspace matched
    /// with position `i` of the first; present iff `similar`.
    pub permutation: Option<Vec<usize>>,
    /// Largest elementwise deviation relative to the largest block element;
    /// infinite when a jump block vanishes on one side only.
    pub residual: f64,
}

struct Blocks<'a> {
    h1: &'a CMatrix,
    h2: &'a CMatrix,
    l1: Vec<&'a CMatrix>,
    l2: Vec<&'a CMatrix>,
}

impl Blocks<'_> {
    /// Residual of the similarity relation under permutation `perm`, with the
    /// phases estimated from the largest-magnitude element of each jump block.
    fn evaluate(&self, perm: &[usize], thr: f64, scale: f64) -> (f64, Vec<f64>) {
        let d = perm.len();
        let mut dev: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                dev = dev.max((self.h1[(r, c)] - self.h2[(perm[r], perm[c])]).norm());
            }
        }
        let mut phases = Vec::with_capacity(self.l1.len());
        for (a, b) in self.l1.iter().zip(&self.l2) {
            let (amax, bmax) = (a.max_abs(), b.max_abs());
            if amax <= thr && bmax <= thr {
                phases.push(0.0);
                dev = dev.max(amax.max(bmax));
                continue;
            }
            if amax <= thr || bmax <= thr {
                return (f64::INFINITY, Vec::new());
            }
            let (mut kr, mut kc, mut best) = (0, 0, -1.0);
            for r in 0..d {
                for c in 0..d {
                    let m = a[(r, c)].norm();
                    if m > best {
                        best = m;
                        kr = r;
                        kc = c;
                    }
                }
            }
            let target = b[(perm[kr], perm[kc])];
            if target.norm() <= thr {
                return (f64::INFINITY, Vec::new());
            }
            let mut theta = (a[(kr, kc)] / target).arg();
            if theta <= -PI + 1e-12 {
                theta = PI;
            }
            let phase = C64::from_polar(1.0, theta);
            for r in 0..d {
                for c in 0..d {
                    dev = dev.max((a[(r, c)] - phase * b[(perm[r], perm[c])]).norm());
                }
            }
            phases.push(theta);
        }
        (dev / scale, phases)
    }

    /// Element tests that do not depend on the unknown phases.
    fn consistent(&self, i: usize, ci: usize, k: usize, ck: usize, thr: f64) -> bool {
        if (self.h1[(i, k)] - self.h2[(ci, ck)]).norm() > thr || (self.h1[(k, i)] - self.h2[(ck, ci)]).norm() > thr {
            return false;
        }
        self.l1.iter().zip(&self.l2).all(|(a, b)| {
            (a[(i, k)].norm() - b[(ci, ck)].norm()).abs() <= thr && (a[(k, i)].norm() - b[(ck, ci)].norm()).abs() <= thr
        })
    }
}

/// Tests whether two subspaces are similar: equal Hamiltonian blocks and
/// jump blocks equal up to one phase per jump operator.
///
/// The relation is only meaningful once basis vectors of the two subspaces
/// are paired up. The given ordering is tried first; for blocks up to
/// [`MAX_PERMUTATION_SEARCH_DIM`] a backtracking search over basis
/// permutations follows. `tol` bounds the elementwise deviation relative to
/// the largest block element involved.
pub fn check_similar(
    h: &BlockOperator,
    jumps: &[BlockOperator],
    pair: (usize, usize),
    tol: f64,
) -> Result<SimilarityVerdict> {
    let (a1, a2) = pair;
    let structure = &h.structure;
    let d1 = structure.subspace(a1)?.dim();
    let d2 = structure.subspace(a2)?.dim();
    let not_similar = |residual| SimilarityVerdict { pair, similar: false, phases: None, permutation: None, residual };
    if d1 != d2 {
        return Ok(not_similar(f64::INFINITY));
    }
    let blocks = Blocks {
        h1: &h.blocks[a1],
        h2: &h.blocks[a2],
        l1: jumps.iter().map(|j| &j.blocks[a1]).collect(),
        l2: jumps.iter().map(|j| &j.blocks[a2]).collect(),
    };
    let scale = std::iter::once(blocks.h1.max_abs().max(blocks.h2.max_abs()))
        .chain(blocks.l1.iter().zip(&blocks.l2).map(|(a, b)| a.max_abs().max(b.max_abs())))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let thr = tol * scale;

    let identity: Vec<usize> = (0..d1).collect();
    let (res0, phases0) = blocks.evaluate(&identity, thr, scale);
    if res0 <= tol {
        return Ok(SimilarityVerdict {
            pair,
            similar: true,
            phases: Some(phases0),
            permutation: Some(identity),
            residual: res0,
        });
    }
    if d1 > MAX_PERMUTATION_SEARCH_DIM {
        return Ok(not_similar(res0));
    }

    let mut perm = vec![usize::MAX; d1];
    let mut used = vec![false; d1];
    let mut best = res0;
    let mut found: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    let mut budget: u64 = 2_000_000;
    search(&blocks, 0, &mut perm, &mut used, thr, scale, tol, &mut best, &mut found, &mut budget);

    Ok(match found {
        Some((p, phases, residual)) => {
            SimilarityVerdict { pair, similar: true, phases: Some(phases), permutation: Some(p), residual }
        }
        None => not_similar(best),
    })
}

#[allow(clippy::too_many_arguments)]
fn search(
    blocks: &Blocks<'_>,
    i: usize,
    perm: &mut [usize],
    used: &mut [bool],
    thr: f64,
    scale: f64,
    tol: f64,
    best: &mut f64,
    found: &mut Option<(Vec<usize>, Vec<f64>, f64)>,
    budget: &mut u64,
) {
    if found.is_some() || *budget == 0 {
        return;
    }
    *budget -= 1;
    let d = perm.len();
    if i == d {
        let (res, phases) = blocks.evaluate(perm, thr, scale);
        if res < *best {
            *best = res;
        }
        if res <= tol {
            *found = Some((perm.to_vec(), phases, res));
        }
        return;
    }
    for c in 0..d {
        if used[c] || !blocks.consistent(i, c, i, c, thr) {
            continue;
        }
        if !(0..i).all(|k| blocks.consistent(i, c, k, perm[k], thr)) {
            continue;
        }
        perm[i] = c;
        used[c] = true;
        search(blocks, i + 1, perm, used, thr, scale, tol, best, found, budget);
        used[c] = false;
        perm[i] = usize::MAX;
        if found.is_some() {
            return;
        }
    }
}
