#![allow(dead_code)]

use freezeout::linalg::{self, CMatrix, C64};
use freezeout::models::{JumpOperator, ModelSpec, SymmetryDecl};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn ginibre(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    })
}

/// Haar-ish unitary from Gram-Schmidt on Ginibre columns.
pub fn random_unitary(n: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = ginibre(n, &mut rng);
    let cols: Vec<Vec<C64>> = (0..n).map(|c| g.column(c)).collect();
    let q = linalg::orthonormalize(&cols, 1e-12);
    assert_eq!(q.len(), n);
    CMatrix::from_fn(n, n, |r, c| q[c][r])
}

/// Same dynamics in the basis `U`: every operator conjugated, symmetry
/// declared as the rotated `A`.
pub fn rotated(model: &ModelSpec, u: &CMatrix) -> ModelSpec {
    let conj = |m: &CMatrix| u.matmul(m).matmul(&u.dagger());
    let a = model.symmetry_operator().unwrap();
    ModelSpec {
        name: format!("{} (rotated)", model.name),
        dim: model.dim,
        h: conj(&model.h),
        jumps: model.jumps.iter().map(|j| JumpOperator { op: conj(&j.op), rate: j.rate }).collect(),
        symmetry: SymmetryDecl::Explicit(conj(&a)),
        initial: model.initial.clone(),
        omega: model.omega,
        cutoff_levels: None,
        recipe: None,
    }
}

/// Lindblad right-hand side written out term by term.
pub fn lindblad(h: &CMatrix, jumps: &[JumpOperator], rho: &CMatrix) -> CMatrix {
    let mi = C64::new(0.0, -1.0);
    let mut out = (&h.matmul(rho) - &rho.matmul(h)).scale(mi);
    for j in jumps {
        let l = &j.op;
        let ld = l.dagger();
        let ll = ld.matmul(l);
        let d = &l.matmul(rho).matmul(&ld) - &(&ll.matmul(rho) + &rho.matmul(&ll)).scale_real(0.5);
        out = &out + &d.scale_real(j.rate);
    }
    out
}

/// Density matrix `|psi><psi|`.
pub fn pure(psi: &[C64]) -> CMatrix {
    CMatrix::outer(psi, psi)
}

pub fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).max_abs()
}

/// Greedy multiset match of two complex lists; returns the worst distance.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

/// Means of `xs` over `windows` consecutive equal chunks are non-decreasing.
/// The pointwise series of a jump process is never monotone; the windowed
/// trend is what "grows over time" can mean for it.
pub fn windowed_nondecreasing(xs: &[f64], windows: usize) -> bool {
    if xs.len() < windows || windows == 0 {
        return false;
    }
    let chunk = xs.len() / windows;
    let means: Vec<f64> = (0..windows)
        .map(|k| {
            let part = &xs[k * chunk..(k + 1) * chunk];
            part.iter().sum::<f64>() / part.len() as f64
        })
        .collect();
    means.windows(2).all(|w| w[1] >= w[0])
}

/// Samples in the final third of a run.
pub fn final_third(samples: &[freezeout::trajectory::Sample]) -> &[freezeout::trajectory::Sample] {
    let (t0, t1) = (samples[0].t, samples.last().unwrap().t);
    let cut = t0 + (t1 - t0) * 2.0 / 3.0;
    let k = samples.partition_point(|s| s.t < cut);
    &samples[k..]
}

/// Positive least-squares slope against `ts`, and a net rise end to end.
pub fn rising_trend(ts: &[f64], xs: &[f64]) -> bool {
    let n = xs.len();
    if n < 2 || ts.len() != n {
        return false;
    }
    let mt = ts.iter().sum::<f64>() / n as f64;
    let mx = xs.iter().sum::<f64>() / n as f64;
    let sxy: f64 = ts.iter().zip(xs).map(|(t, x)| (t - mt) * (x - mx)).sum();
    sxy > 0.0 && xs[n - 1] > xs[0]
}
