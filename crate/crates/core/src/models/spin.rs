use crate::linalg::{CMatrix, C64};

/// Spin-`s` operators `(s^x, s^y, s^z)` in the basis `m = s, s-1, ..., -s`,
/// built from the ladder operators.
pub fn spin_matrices(twice_s: usize) -> (CMatrix, CMatrix, CMatrix) {
    let s = twice_s as f64 / 2.0;
    let n = twice_s + 1;
    let m = |i: usize| s - i as f64;
    let sz = CMatrix::real_diagonal(&(0..n).map(m).collect::<Vec<_>>());
    // s^+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>; |m+1> sits one row above |m>
    let mut sp = CMatrix::zeros(n, n);
    for c in 1..n {
        let mc = m(c);
        sp[(c - 1, c)] = C64::new((s * (s + 1.0) - mc * (mc + 1.0)).sqrt(), 0.0);
    }
    let sm = sp.dagger();
    let sx = (&sp + &sm).scale_real(0.5);
    let sy = (&sp - &sm).scale(C64::new(0.0, -0.5));
    (sx, sy, sz)
}
