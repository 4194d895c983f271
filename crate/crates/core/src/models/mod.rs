//! Model families and the declarative description consumed by the engine.
//!
//! A [`ModelRecipe`] is the serializable description (family + parameters +
//! seed); [`ModelSpec`] is the built model with its operators. Matrices are
//! never serialized: a recipe rebuilds the same operators bit for bit.

pub mod boson;
pub mod spin;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64, ZERO};
use crate::rng;
use crate::symmetry::{self, BlockOperator, BlockStructure, SimilarityVerdict, Subspace};

pub use boson::MomentumTupleIndex;

/// Tolerance at which declared symmetries must commute with the dynamics.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct JumpOperator {
    pub op: CMatrix,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub enum SymmetryDecl {
    /// A Hermitian operator commuting with `H`, every `L_j` and `L_j^dagger`.
    Explicit(CMatrix),
    /// A block basis given directly.
    BlockBasis(BlockStructure),
    /// Infer the finest block decomposition visible in the given basis.
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Equal-weight superposition of Haar-random vectors, one per listed
    /// subspace, drawn from each trajectory's own random stream.
    Subspaces(Vec<usize>),
    /// A fixed state vector in the original basis (normalized on use).
    Vector(Vec<C64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitVariant {
    /// `L = sigma_z`: two similar subspaces, no freezing.
    SigmaZ,
    /// `L = |1><1|`: freezing with closed-form weights.
    Number,
}

/// Serializable model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelRecipe {
    RandomBlock {
        n_blocks: usize,
        block_dim: usize,
        gamma: f64,
        seed: u64,
        #[serde(default = "one")]
        omega: f64,
    },
    CoupledQudit {
        gamma: f64,
        #[serde(default = "one")]
        omega: f64,
    },
    LossyBosonChain {
        sites: usize,
        gamma: f64,
        g: f64,
        j: f64,
        n_max: usize,
        #[serde(default = "one")]
        omega: f64,
    },
    QubitToy {
        variant: QubitVariant,
        gamma: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ModelRecipe {
    pub fn build(&self) -> Result<ModelSpec> {
        match *self {
            ModelRecipe::RandomBlock { n_blocks, block_dim, gamma, seed, omega } => {
                random_block_model(n_blocks, block_dim, gamma, seed, omega)
            }
            ModelRecipe::CoupledQudit { gamma, omega } => coupled_qudit_model(gamma, omega),
            ModelRecipe::LossyBosonChain { sites, gamma, g, j, n_max, omega } => {
                lossy_boson_chain_model(sites, gamma, g, j, n_max, omega)
            }
            ModelRecipe::QubitToy { variant, gamma } => qubit_dephasing_toy(variant, gamma),
        }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            ModelRecipe::RandomBlock { gamma, .. }
            | ModelRecipe::CoupledQudit { gamma, .. }
            | ModelRecipe::LossyBosonChain { gamma, .. }
            | ModelRecipe::QubitToy { gamma, .. } => gamma,
        }
    }

    /// Same recipe with a different dissipation rate.
    pub fn with_gamma(&self, new_gamma: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ModelRecipe::RandomBlock { gamma, .. }
            | ModelRecipe::CoupledQudit { gamma, .. }
            | ModelRecipe::LossyBosonChain { gamma, .. }
            | ModelRecipe::QubitToy { gamma, .. } => *gamma = new_gamma,
        }
        out
    }

    pub fn family(&self) -> &'static str {
        match self {
            ModelRecipe::RandomBlock { .. } => "random_block",
            ModelRecipe::CoupledQudit { .. } => "coupled_qudit",
            ModelRecipe::LossyBosonChain { .. } => "lossy_boson_chain",
            ModelRecipe::QubitToy { .. } => "qubit_toy",
        }
    }
}

/// A recipe plus the choice of initial subspaces; what configs carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub recipe: ModelRecipe,
    /// Subspaces the initial state is spread over; all of them if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<usize>>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let mut spec = self.recipe.build()?;
        if let Some(init) = &self.init {
            spec.initial = InitialState::Subspaces(init.clone());
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub h: CMatrix,
    pub jumps: Vec<JumpOperator>,
    pub symmetry: SymmetryDecl,
    pub initial: InitialState,
    /// Reference energy scale; times and rates are in units of it.
    pub omega: f64,
    /// Original-basis indices of states on the photon cutoff level, when the
    /// model truncates a bosonic mode.
    pub cutoff_levels: Option<Vec<usize>>,
    pub recipe: Option<ModelRecipe>,
}

impl ModelSpec {
    pub fn jump_ops(&self) -> Vec<CMatrix> {
        self.jumps.iter().map(|j| j.op.clone()).collect()
    }

    /// Resolves the declared symmetry into a block structure.
    pub fn structure(&self) -> Result<BlockStructure> {
        match &self.symmetry {
            SymmetryDecl::Explicit(a) => symmetry::block_structure_from_symmetry(a, symmetry::DEFAULT_GROUPING_TOL),
            SymmetryDecl::BlockBasis(s) => Ok(s.clone()),
            SymmetryDecl::Infer => symmetry::infer_block_structure(&self.h, &self.jump_ops(), 1e-12),
        }
    }

    /// The symmetry operator: the declared one, or `sum_alpha lambda_alpha P_alpha`
    /// rebuilt from a block basis.
    pub fn symmetry_operator(&self) -> Result<CMatrix> {
        match &self.symmetry {
            SymmetryDecl::Explicit(a) => Ok(a.clone()),
            _ => {
                let s = self.structure()?;
                let mut w = CMatrix::zeros(self.dim, self.dim);
                for sub in s.subspaces() {
                    for &i in &sub.indices {
                        w[(i, i)] = C64::new(sub.lambda, 0.0);
                    }
                }
                Ok(s.from_working(&w))
            }
        }
    }

    pub fn block_hamiltonian(&self, structure: &BlockStructure) -> Result<BlockOperator> {
        BlockOperator::from_operator(&self.h, structure, 1e-12)
    }

    pub fn block_jumps(&self, structure: &BlockStructure) -> Result<Vec<BlockOperator>> {
        self.jumps.iter().map(|j| BlockOperator::from_operator(&j.op, structure, 1e-12)).collect()
    }

    /// Draws an initial state (original basis) from `rng`.
    pub fn initial_state<R: Rng>(&self, structure: &BlockStructure, rng: &mut R) -> Result<Vec<C64>> {
        match &self.initial {
            InitialState::Vector(v) => {
                if v.len() != self.dim {
                    return Err(Error::Dimension(format!(
                        "initial vector has length {}, expected {}",
                        v.len(),
                        self.dim
                    )));
                }
                let n = linalg::norm_sqr(v).sqrt();
                if !(n > 0.0) {
                    return Err(Error::Argument("initial vector is zero".into()));
                }
                Ok(v.iter().map(|z| z / n).collect())
            }
            InitialState::Subspaces(ids) => {
                if ids.is_empty() {
                    return Err(Error::Argument("no initial subspaces selected".into()));
                }
                let mut sorted = ids.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != ids.len() {
                    return Err(Error::Argument(format!("initial subspaces repeat: {ids:?}")));
                }
                let weight = 1.0 / (ids.len() as f64).sqrt();
                let mut w = vec![ZERO; self.dim];
                for &alpha in ids {
                    let sub = structure.subspace(alpha)?;
                    let v = haar_vector(sub.dim(), rng);
                    for (&i, z) in sub.indices.iter().zip(v) {
                        w[i] = z * weight;
                    }
                }
                Ok(structure.vector_from_working(&w))
            }
        }
    }

    pub fn validate(&self) -> Result<ModelValidation> {
        validate_model(self)
    }
}

/// Haar-random unit vector in `C^d`.
pub fn haar_vector<R: Rng>(d: usize, rng: &mut R) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..d).map(|_| complex_gaussian(rng)).collect();
        let n = linalg::norm_sqr(&v).sqrt();
        if n > 1e-300 {
            return v.into_iter().map(|z| z / n).collect();
        }
    }
}

/// Complex Gaussian with `E|z|^2 = 1`.
fn complex_gaussian<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Block-diagonal random Liouvillian: per block a random Hermitian
/// Hamiltonian `omega (G + G^dagger) / 2` and a Ginibre jump block, both from
/// entries with unit variance.
pub fn random_block_model(n_blocks: usize, block_dim: usize, gamma: f64, seed: u64, omega: f64) -> Result<ModelSpec> {
    if n_blocks == 0 || block_dim == 0 {
        return Err(Error::Argument("random block model needs at least one block of dimension >= 1".into()));
    }
    check_rate(gamma)?;
    let n = n_blocks * block_dim;
    let mut rng = rng::model_stream(seed);
    let mut h = CMatrix::zeros(n, n);
    let mut l = CMatrix::zeros(n, n);
    let mut subspaces = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let off = b * block_dim;
        let g = CMatrix::from_fn(block_dim, block_dim, |_, _| complex_gaussian(&mut rng));
        let hb = (&g + &g.dagger()).scale_real(0.5 * omega);
        let lb = CMatrix::from_fn(block_dim, block_dim, |_, _| complex_gaussian(&mut rng));
        for r in 0..block_dim {
            for c in 0..block_dim {
                h[(off + r, off + c)] = hb[(r, c)];
                l[(off + r, off + c)] = lb[(r, c)];
            }
        }
        subspaces.push(Subspace {
            lambda: b as f64,
            indices: (off..off + block_dim).collect(),
            label: format!("block {}", b + 1),
        });
    }
    let structure = BlockStructure::new(subspaces, n, None)?;
    Ok(ModelSpec {
        name: format!("random_block_{n_blocks}x{block_dim}"),
        dim: n,
        h,
        jumps: vec![JumpOperator { op: l, rate: gamma }],
        symmetry: SymmetryDecl::BlockBasis(structure),
        initial: InitialState::Subspaces((0..n_blocks).collect()),
        omega,
        cutoff_levels: None,
        recipe: Some(ModelRecipe::RandomBlock { n_blocks, block_dim, gamma, seed, omega }),
    })
}

/// Two spin-3/2 qudits with Heisenberg coupling; qudit `a` dephases along z.
/// Symmetry: total magnetisation `s^z_a + s^z_b`.
pub fn coupled_qudit_model(gamma: f64, omega: f64) -> Result<ModelSpec> {
    check_rate(gamma)?;
    let (sx, sy, sz) = spin::spin_matrices(3);
    let id = CMatrix::identity(4);
    let h = (&(&sx.kron(&sx) + &sy.kron(&sy)) + &sz.kron(&sz)).scale_real(omega);
    let l = sz.kron(&id);
    let a = &sz.kron(&id) + &id.kron(&sz);
    Ok(ModelSpec {
        name: "coupled_qudit".into(),
        dim: 16,
        h,
        jumps: vec![JumpOperator { op: l, rate: gamma }],
        symmetry: SymmetryDecl::Explicit(a),
        initial: InitialState::Subspaces((0..7).collect()),
        omega,
        cutoff_levels: None,
        recipe: Some(ModelRecipe::CoupledQudit { gamma, omega }),
    })
}

/// Operators of the lossy boson chain, exposed for algebra checks.
pub struct BosonChainOperators {
    pub basis: boson::FockBasis,
    pub tuples: MomentumTupleIndex,
    /// `S_i = n_i + n_{i+L/2}` on the full (photon x boson) space.
    pub pair_numbers: Vec<CMatrix>,
    pub photon_annihilation: CMatrix,
}

fn boson_chain_parts(sites: usize, n_max: usize) -> Result<BosonChainOperators> {
    let tuples = MomentumTupleIndex::new(sites, sites / 2)?;
    let basis = boson::FockBasis::new(sites, sites / 2);
    let id_ph = CMatrix::identity(n_max + 1);
    let half = sites / 2;
    let pair_numbers = (0..half).map(|i| id_ph.kron(&(&basis.number(i) + &basis.number(i + half)))).collect();
    let photon_annihilation = boson::annihilation(n_max).kron(&CMatrix::identity(basis.len()));
    Ok(BosonChainOperators { basis, tuples, pair_numbers, photon_annihilation })
}

pub fn boson_chain_operators(sites: usize, n_max: usize) -> Result<BosonChainOperators> {
    boson_chain_parts(sites, n_max)
}

/// Half-filled ring of non-interacting bosons in momentum space coupled to a
/// lossy cavity mode truncated at `n_max` photons.
///
/// Basis: photon number is the slow index, boson occupations over momentum
/// modes `k_i = 2 pi i / L` (`i = 1..L`) the fast one. Symmetry subspaces are
/// labelled by momentum tuples in lexicographic order.
pub fn lossy_boson_chain_model(
    sites: usize,
    gamma: f64,
    g: f64,
    j: f64,
    n_max: usize,
    omega: f64,
) -> Result<ModelSpec> {
    if sites == 0 || !sites.is_multiple_of(2) {
        return Err(Error::Argument(format!("chain length must be even and positive, got {sites}")));
    }
    if n_max == 0 {
        return Err(Error::Argument("photon cutoff must be at least 1".into()));
    }
    check_rate(gamma)?;
    let parts = boson_chain_parts(sites, n_max)?;
    let basis = &parts.basis;
    let nb = basis.len();
    let half = sites / 2;

    let mut pair_hop = CMatrix::zeros(nb, nb);
    let mut kinetic = CMatrix::zeros(nb, nb);
    for m in 0..sites {
        let k = 2.0 * std::f64::consts::PI * (m + 1) as f64 / sites as f64;
        let partner = (m + half) % sites;
        pair_hop = &pair_hop + &basis.hopping(m, partner);
        kinetic = &kinetic + &basis.number(m).scale_real(k.cos());
    }
    let a = boson::annihilation(n_max);
    let id_b = CMatrix::identity(nb);
    let id_ph = CMatrix::identity(n_max + 1);
    let h_cav = a.dagger().matmul(&a).scale_real(omega).kron(&id_b);
    let h_coup = (&a + &a.dagger()).kron(&pair_hop).scale_real(-g);
    let h_kin = id_ph.kron(&kinetic).scale_real(-2.0 * j);
    let h = &(&h_cav + &h_coup) + &h_kin;
    let l = parts.photon_annihilation.clone();

    let dim = (n_max + 1) * nb;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); parts.tuples.len()];
    for ph in 0..=n_max {
        for (bi, occ) in basis.states.iter().enumerate() {
            let t = parts.tuples.tuple_of_occupation(occ);
            let alpha = parts.tuples.alpha_of_tuple(&t).expect("tuple of a valid occupation");
            members[alpha].push(ph * nb + bi);
        }
    }
    for m in &mut members {
        m.sort_unstable();
    }
    // lambda = sum_i s_i (N+1)^{L/2-i}, N = L/2
    let radix = (half + 1) as u64;
    let subspaces = members
        .into_iter()
        .enumerate()
        .map(|(alpha, indices)| {
            let t = parts.tuples.tuple_of_alpha(alpha).unwrap();
            let lambda = t.iter().fold(0u64, |acc, &s| acc * radix + s as u64) as f64;
            Subspace { lambda, indices, label: parts.tuples.label(alpha) }
        })
        .collect();
    let structure = BlockStructure::new(subspaces, dim, None)?;
    let cutoff = (0..nb).map(|bi| n_max * nb + bi).collect();
    let d = parts.tuples.len();
    Ok(ModelSpec {
        name: format!("lossy_boson_chain_L{sites}"),
        dim,
        h,
        jumps: vec![JumpOperator { op: l, rate: gamma }],
        symmetry: SymmetryDecl::BlockBasis(structure),
        initial: InitialState::Subspaces((0..d).collect()),
        omega,
        cutoff_levels: Some(cutoff),
        recipe: Some(ModelRecipe::LossyBosonChain { sites, gamma, g, j, n_max, omega }),
    })
}

/// Two-level fixtures with closed-form behaviour; `H = 0`, symmetry `sigma_z`.
pub fn qubit_dephasing_toy(variant: QubitVariant, gamma: f64) -> Result<ModelSpec> {
    check_rate(gamma)?;
    let l = match variant {
        QubitVariant::SigmaZ => CMatrix::real_diagonal(&[1.0, -1.0]),
        QubitVariant::Number => CMatrix::real_diagonal(&[0.0, 1.0]),
    };
    Ok(ModelSpec {
        name: format!(
            "qubit_{}",
            match variant {
                QubitVariant::SigmaZ => "sigma_z",
                QubitVariant::Number => "number",
            }
        ),
        dim: 2,
        h: CMatrix::zeros(2, 2),
        jumps: vec![JumpOperator { op: l, rate: gamma }],
        // ascending eigenvalue order puts |1> (lambda = -1) first
        symmetry: SymmetryDecl::Explicit(CMatrix::real_diagonal(&[1.0, -1.0])),
        initial: InitialState::Vector(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]),
        omega: 1.0,
        cutoff_levels: None,
        recipe: Some(ModelRecipe::QubitToy { variant, gamma }),
    })
}

fn check_rate(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Argument(format!("dissipation rate must be finite and non-negative, got {gamma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelValidation {
    pub name: String,
    pub dim: usize,
    pub strong_symmetry: bool,
    pub block_dims: Vec<usize>,
    pub labels: Vec<String>,
    /// Declared block structure equals the inferred one up to relabelling.
    pub matches_inferred: bool,
    pub inferred_block_dims: Vec<usize>,
    /// Largest `|(1 - P_a) O P_a|` over subspaces and `O in {H, L_j, L_j^dagger}`.
    pub max_leakage: f64,
    pub similar_pairs: Vec<SimilarityVerdict>,
}

/// Checks the declared symmetry against the dynamics and against inference,
/// and lists similar subspace pairs.
pub fn validate_model(spec: &ModelSpec) -> Result<ModelValidation> {
    let structure = spec.structure()?;
    let a = spec.symmetry_operator()?;
    let jumps = spec.jump_ops();
    let strong = symmetry::verify_strong_symmetry(&spec.h, &jumps, &a, SYMMETRY_TOL)?;
    let inferred = symmetry::infer_block_structure(&spec.h, &jumps, 1e-12)?;
    let matches_inferred = match structure.basis() {
        None => structure.same_partition(&inferred),
        // inference works in the original basis; compare there
        Some(_) => {
            let hw = structure.to_working(&spec.h);
            let jw: Vec<CMatrix> = jumps.iter().map(|l| structure.to_working(l)).collect();
            let inf_w = symmetry::infer_block_structure(&hw, &jw, 1e-9 * hw.frobenius_norm().max(1.0))?;
            let plain = BlockStructure::new(structure.subspaces().to_vec(), structure.dim(), None)?;
            plain.same_partition(&inf_w)
        }
    };

    let mut ops = vec![spec.h.clone()];
    for l in &jumps {
        ops.push(l.clone());
        ops.push(l.dagger());
    }
    let id = CMatrix::identity(spec.dim);
    let mut max_leakage: f64 = 0.0;
    for alpha in 0..structure.len() {
        let p = structure.projector(alpha)?;
        let q = &id - &p;
        for o in &ops {
            max_leakage = max_leakage.max(q.matmul(o).matmul(&p).frobenius_norm());
        }
    }

    let hb = spec.block_hamiltonian(&structure)?;
    let lb = spec.block_jumps(&structure)?;
    let mut similar_pairs = Vec::new();
    for x in 0..structure.len() {
        for y in x + 1..structure.len() {
            let v = symmetry::check_similar(&hb, &lb, (x, y), 1e-10)?;
            if v.similar {
                similar_pairs.push(v);
            }
        }
    }
    Ok(ModelValidation {
        name: spec.name.clone(),
        dim: spec.dim,
        strong_symmetry: strong,
        block_dims: structure.block_dims(),
        labels: structure.subspaces().iter().map(|s| s.label.clone()).collect(),
        matches_inferred,
        inferred_block_dims: inferred.block_dims(),
        max_leakage,
        similar_pairs,
    })
}

/// Magnetisation label for the coupled-qudit subspaces.
pub fn qudit_labels(structure: &BlockStructure) -> Vec<String> {
    structure.subspaces().iter().map(|s| format!("m={}", s.lambda)).collect()
}
