//! Fixed-particle-number bosonic Fock spaces and the momentum-tuple labelling
//! of the lossy chain's symmetry subspaces.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

/// Occupation vectors of `n` bosons over `modes` modes in ascending
/// lexicographic order.
pub fn fock_states(modes: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(modes: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == modes {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(modes, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if modes == 0 {
        if n == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(modes, n, &mut Vec::with_capacity(modes), &mut out);
    out
}

/// A fixed-`N` bosonic Fock basis with index lookup.
#[derive(Debug, Clone)]
pub struct FockBasis {
    pub modes: usize,
    pub particles: usize,
    pub states: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

impl FockBasis {
    pub fn new(modes: usize, particles: usize) -> Self {
        let states = fock_states(modes, particles);
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { modes, particles, states, index }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, occupation: &[usize]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    /// `b_i^dagger b_j` restricted to this basis.
    pub fn hopping(&self, i: usize, j: usize) -> CMatrix {
        let n = self.len();
        let mut m = CMatrix::zeros(n, n);
        for (col, s) in self.states.iter().enumerate() {
            if s[j] == 0 {
                continue;
            }
            let mut t = s.clone();
            let mut amp = (t[j] as f64).sqrt();
            t[j] -= 1;
            amp *= (t[i] as f64 + 1.0).sqrt();
            t[i] += 1;
            let row = self.index_of(&t).expect("hopping conserves particle number");
            m[(row, col)] += C64::new(amp, 0.0);
        }
        m
    }

    pub fn number(&self, i: usize) -> CMatrix {
        CMatrix::real_diagonal(&self.states.iter().map(|s| s[i] as f64).collect::<Vec<_>>())
    }
}

/// Annihilation operator on the truncated Fock space `|0>, ..., |n_max>`.
pub fn annihilation(n_max: usize) -> CMatrix {
    let n = n_max + 1;
    let mut a = CMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    a
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Bijection between subspace ids and momentum tuples `(s_1, ..., s_{L/2})`
/// with `sum s_i = N`, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumTupleIndex {
    pub sites: usize,
    pub particles: usize,
    pub tuples: Vec<Vec<usize>>,
}

impl MomentumTupleIndex {
    pub fn new(sites: usize, particles: usize) -> Result<Self> {
        if sites == 0 || !sites.is_multiple_of(2) {
            return Err(Error::Argument(format!("chain length must be even and positive, got {sites}")));
        }
        Ok(Self { sites, particles, tuples: fock_states(sites / 2, particles) })
    }

    /// Number of tuples from the stars-and-bars formula
    /// `(N + L/2 - 1)! / (N! (L/2 - 1)!)`.
    pub fn count_formula(sites: usize, particles: usize) -> u64 {
        let pairs = (sites / 2) as u64;
        binomial(particles as u64 + pairs - 1, particles as u64)
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn alpha_of_tuple(&self, tuple: &[usize]) -> Option<usize> {
        self.tuples.iter().position(|t| t == tuple)
    }

    pub fn tuple_of_alpha(&self, alpha: usize) -> Option<&[usize]> {
        self.tuples.get(alpha).map(Vec::as_slice)
    }

    /// Tuple of a momentum-mode occupation vector: `s_i = n_i + n_{i + L/2}`.
    pub fn tuple_of_occupation(&self, occupation: &[usize]) -> Vec<usize> {
        let half = self.sites / 2;
        (0..half).map(|i| occupation[i] + occupation[i + half]).collect()
    }

    pub fn label(&self, alpha: usize) -> String {
        let t = &self.tuples[alpha];
        format!("({})", t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::commutator;

    #[test]
    fn table_ordering_for_six_sites() {
        let idx = MomentumTupleIndex::new(6, 3).unwrap();
        let expected: Vec<Vec<usize>> = vec![
            vec![0, 0, 3],
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![0, 3, 0],
            vec![1, 0, 2],
            vec![1, 1, 1],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
            vec![3, 0, 0],
        ];
        assert_eq!(idx.tuples, expected);
        assert_eq!(idx.alpha_of_tuple(&[1, 1, 1]), Some(5));
        assert_eq!(idx.label(0), "(0,0,3)");
    }

    #[test]
    fn eight_sites_half_filled_has_35_tuples() {
        // (4 + 3)! / (4! 3!) = 5040 / 144 = 35
        assert_eq!(MomentumTupleIndex::count_formula(8, 4), 35);
        assert_eq!(MomentumTupleIndex::new(8, 4).unwrap().len(), 35);
    }

    #[test]
    fn odd_chain_is_rejected() {
        assert!(MomentumTupleIndex::new(5, 2).is_err());
    }

    #[test]
    fn truncated_ladder_commutator() {
        let a = annihilation(4);
        let c = commutator(&a, &a.dagger());
        for k in 0..4 {
            assert!((c[(k, k)].re - 1.0).abs() < 1e-12);
        }
        // truncation artifact confined to the top level
        assert!((c[(4, 4)].re + 4.0).abs() < 1e-12);
        let mut off = c.clone();
        for k in 0..5 {
            off[(k, k)] = C64::new(0.0, 0.0);
        }
        assert!(off.frobenius_norm() < 1e-12);
    }

    #[test]
    fn hopping_is_adjoint_pair() {
        let b = FockBasis::new(4, 2);
        assert_eq!(b.len(), 10);
        let h01 = b.hopping(0, 1);
        let h10 = b.hopping(1, 0);
        assert!((&h01.dagger() - &h10).frobenius_norm() < 1e-14);
        // b_0^dagger b_0 is the number operator
        assert!((&b.hopping(0, 0) - &b.number(0)).frobenius_norm() < 1e-14);
    }
}
