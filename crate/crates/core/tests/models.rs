use freezeout::linalg::{commutator, CMatrix, C64};
use freezeout::models::boson::{annihilation, binomial, fock_states, FockBasis, MomentumTupleIndex};
use freezeout::models::spin::spin_matrices;
use freezeout::models::*;
use freezeout::rng;
use freezeout::Error;
use proptest::prelude::*;

const I: C64 = C64::new(0.0, 1.0);

#[test]
fn spin_three_halves_commutators() {
    let (sx, sy, sz) = spin_matrices(3);
    assert!((&commutator(&sx, &sy) - &sz.scale(I)).max_abs() < 1e-12);
    assert!((&commutator(&sy, &sz) - &sx.scale(I)).max_abs() < 1e-12);
    assert!((&commutator(&sz, &sx) - &sy.scale(I)).max_abs() < 1e-12);
}

#[test]
fn truncated_photon_commutator_differs_only_on_top_level() {
    for n_max in 1..7 {
        let a = annihilation(n_max);
        let c = commutator(&a, &a.dagger());
        let mut want = vec![1.0; n_max + 1];
        want[n_max] = -(n_max as f64);
        assert!((&c - &CMatrix::real_diagonal(&want)).max_abs() < 1e-12);
    }
}

#[test]
fn boson_bilinears_close_under_commutation() {
    // [b_i^+ b_j, b_k^+ b_l] = d_jk b_i^+ b_l - d_il b_k^+ b_j on a fixed-N space
    let basis = FockBasis::new(4, 2);
    let e = |i, j| basis.hopping(i, j);
    let zero = CMatrix::zeros(basis.len(), basis.len());
    for i in 0..4 {
        assert!((&e(i, i) - &basis.number(i)).max_abs() < 1e-12);
        for j in 0..4 {
            for k in 0..4 {
                for l in 0..4 {
                    let lhs = commutator(&e(i, j), &e(k, l));
                    let mut rhs = zero.clone();
                    if j == k {
                        rhs = &rhs + &e(i, l);
                    }
                    if i == l {
                        rhs = &rhs - &e(k, j);
                    }
                    assert!((&lhs - &rhs).max_abs() < 1e-12, "({i},{j}),({k},{l})");
                }
            }
        }
    }
}

#[test]
fn pair_numbers_are_commuting_strong_symmetries() {
    for sites in [4, 6] {
        let m = lossy_boson_chain_model(sites, 5.0, 2.0, 2.0, 3, 1.0).unwrap();
        let ops = boson_chain_operators(sites, 3).unwrap();
        let l = &m.jumps[0].op;
        for s in &ops.pair_numbers {
            assert!(commutator(s, &m.h).max_abs() < 1e-10);
            assert!(commutator(s, l).max_abs() < 1e-10);
            assert!(commutator(s, &l.dagger()).max_abs() < 1e-10);
            for t in &ops.pair_numbers {
                assert!(commutator(s, t).max_abs() < 1e-10);
            }
        }
    }
}

#[test]
fn tuple_table_ordering() {
    let l4 = MomentumTupleIndex::new(4, 2).unwrap();
    assert_eq!(l4.tuples, vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
    let l6 = MomentumTupleIndex::new(6, 3).unwrap();
    let want: Vec<Vec<usize>> = vec![
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
    assert_eq!(l6.tuples, want);
    for (alpha, t) in want.iter().enumerate() {
        assert_eq!(l6.alpha_of_tuple(t), Some(alpha));
        assert_eq!(l6.tuple_of_alpha(alpha), Some(t.as_slice()));
    }
}

#[test]
fn tuple_count_formula_up_to_ten_sites() {
    // brute-force count of compositions, independent of the enumerator
    fn brute(parts: usize, n: usize) -> u64 {
        if parts == 1 {
            return 1;
        }
        (0..=n).map(|k| brute(parts - 1, n - k)).sum()
    }
    for sites in (2..=10).step_by(2) {
        for n in 0..=5 {
            let idx = MomentumTupleIndex::new(sites, n).unwrap();
            let formula = MomentumTupleIndex::count_formula(sites, n);
            assert_eq!(idx.len() as u64, formula, "L={sites} N={n}");
            assert_eq!(formula, brute(sites / 2, n));
            assert!(idx.tuples.windows(2).all(|w| w[0] < w[1]), "not lexicographic");
            assert!(idx.tuples.iter().all(|t| t.iter().sum::<usize>() == n));
        }
    }
    assert!(MomentumTupleIndex::new(5, 2).is_err());
}

#[test]
fn fock_basis_size() {
    for modes in 1..7 {
        for n in 0..5 {
            assert_eq!(fock_states(modes, n).len() as u64, binomial((n + modes - 1) as u64, n as u64));
        }
    }
}

#[test]
fn boson_chain_blocks() {
    let m = lossy_boson_chain_model(4, 5.0, 2.0, 2.0, 5, 1.0).unwrap();
    assert_eq!(m.dim, 6 * 10);
    let s = m.structure().unwrap();
    assert_eq!(s.block_dims(), vec![18, 24, 18]);
    let labels: Vec<&str> = s.subspaces().iter().map(|x| x.label.as_str()).collect();
    assert_eq!(labels, vec!["(0,2)", "(1,1)", "(2,0)"]);
    let cut = m.cutoff_levels.as_ref().unwrap();
    assert_eq!(cut.len(), 10);
    assert!(cut.iter().all(|&i| i >= 50));

    let m6 = lossy_boson_chain_model(6, 5.0, 2.0, 2.0, 5, 1.0).unwrap();
    assert_eq!(m6.structure().unwrap().len(), 10);
    assert!(matches!(lossy_boson_chain_model(3, 5.0, 2.0, 2.0, 5, 1.0), Err(Error::Argument(_))));
}

#[test]
fn qubit_toys() {
    let z = qubit_dephasing_toy(QubitVariant::SigmaZ, 0.5).unwrap();
    let n = qubit_dephasing_toy(QubitVariant::Number, 0.5).unwrap();
    assert_eq!(z.jumps[0].op, CMatrix::real_diagonal(&[1.0, -1.0]));
    assert_eq!(n.jumps[0].op, CMatrix::real_diagonal(&[0.0, 1.0]));
    for m in [&z, &n] {
        assert_eq!(m.h.max_abs(), 0.0);
        let s = m.structure().unwrap();
        assert_eq!(s.block_dims(), vec![1, 1]);
        // id 0 is the lambda = -1 state |1>
        assert_eq!(s.subspaces()[0].lambda, -1.0);
        assert_eq!(s.subspaces()[0].indices, vec![1]);
    }
}

#[test]
fn negative_rates_are_rejected() {
    assert!(coupled_qudit_model(-1.0, 1.0).is_err());
    assert!(random_block_model(2, 2, f64::NAN, 0, 1.0).is_err());
    assert!(qubit_dephasing_toy(QubitVariant::Number, -0.1).is_err());
}

#[test]
fn recipes_round_trip_through_json() {
    let recipes = vec![
        ModelRecipe::RandomBlock { n_blocks: 4, block_dim: 4, gamma: 4.0, seed: 11, omega: 1.0 },
        ModelRecipe::CoupledQudit { gamma: 3.0, omega: 1.0 },
        ModelRecipe::LossyBosonChain { sites: 4, gamma: 5.0, g: 2.0, j: 2.0, n_max: 5, omega: 1.0 },
        ModelRecipe::QubitToy { variant: QubitVariant::Number, gamma: 0.25 },
    ];
    for r in recipes {
        let cfg = ModelConfig { recipe: r.clone(), init: Some(vec![0, 1]) };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let m = back.build().unwrap();
        assert_eq!(m.recipe.as_ref().map(|x| x.family()), Some(r.family()));
    }
}

#[test]
fn random_block_model_is_reproducible_from_seed() {
    let a = random_block_model(3, 3, 1.0, 42, 1.0).unwrap();
    let b = random_block_model(3, 3, 1.0, 42, 1.0).unwrap();
    let c = random_block_model(3, 3, 1.0, 43, 1.0).unwrap();
    assert_eq!(a.h, b.h);
    assert_eq!(a.jumps[0].op, b.jumps[0].op);
    assert_ne!(a.h, c.h);
    assert!(a.h.is_hermitian(1e-14));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn haar_vectors_are_unit(d in 1usize..20, seed in any::<u64>()) {
        let mut r = rng::split(seed, 0);
        let v = haar_vector(d, &mut r);
        let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn initial_state_splits_weight_evenly(ids in proptest::sample::subsequence((0usize..7).collect::<Vec<_>>(), 1..7), seed in any::<u64>()) {
        let mut m = coupled_qudit_model(1.0, 1.0).unwrap();
        m.initial = InitialState::Subspaces(ids.clone());
        let s = m.structure().unwrap();
        let mut r = rng::split(seed, 3);
        let psi = m.initial_state(&s, &mut r).unwrap();
        let w = s.vector_to_working(&psi);
        for (alpha, sub) in s.subspaces().iter().enumerate() {
            let p: f64 = sub.indices.iter().map(|&i| w[i].norm_sqr()).sum();
            let want = if ids.contains(&alpha) { 1.0 / ids.len() as f64 } else { 0.0 };
            prop_assert!((p - want).abs() < 1e-12);
        }
    }
}
