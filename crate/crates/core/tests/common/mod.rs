//! Brute-force oracles shared by the integration tests. They enumerate hidden
//! paths directly and never call the recursions under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use spectral_hmm::HmmParams;

/// Every length-`t` tuple over `0..base`, lexicographic.
pub fn tuples(base: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..base).map(move |s| {
                    let mut v = prefix.clone();
                    v.push(s);
                    v
                })
            })
            .collect();
    }
    out
}

/// `Pr(h_1..h_t, x_1..x_t)`.
pub fn path_joint(p: &HmmParams, hidden: &[usize], obs: &[usize]) -> f64 {
    let (pi, t, o) = (p.pi(), p.transition(), p.emission());
    let mut prob = pi[hidden[0]] * o[(obs[0], hidden[0])];
    for k in 1..obs.len() {
        prob *= t[(hidden[k], hidden[k - 1])] * o[(obs[k], hidden[k])];
    }
    prob
}

pub fn enumerate_joint(p: &HmmParams, obs: &[usize]) -> f64 {
    if obs.is_empty() {
        return 1.0;
    }
    tuples(p.m(), obs.len()).iter().map(|h| path_joint(p, h, obs)).sum()
}

/// `(P1, P21, P3x1)` by summing over `(h1, h2, h3)` and `(x1, x2, x3)`.
pub fn enumerate_moments(p: &HmmParams) -> (DVector<f64>, DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = p.n();
    let mut p1 = DVector::zeros(n);
    let mut p21 = DMatrix::zeros(n, n);
    let mut p3 = vec![DMatrix::zeros(n, n); n];
    for obs in tuples(n, 3) {
        let pr = enumerate_joint(p, &obs);
        p1[obs[0]] += pr;
        p21[(obs[1], obs[0])] += pr;
        p3[obs[1]][(obs[2], obs[0])] += pr;
    }
    (p1, p21, p3)
}

/// State and pairwise posteriors by enumeration, oriented like the library.
pub fn enumerate_posteriors(p: &HmmParams, obs: &[usize]) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let m = p.m();
    let t = obs.len();
    let z = enumerate_joint(p, obs);
    let mut state = vec![DVector::zeros(m); t];
    let mut pair = vec![DMatrix::zeros(m, m); t.saturating_sub(1)];
    for h in tuples(m, t) {
        let w = path_joint(p, &h, obs) / z;
        for k in 0..t {
            state[k][h[k]] += w;
            if k + 1 < t {
                pair[k][(h[k + 1], h[k])] += w;
            }
        }
    }
    (state, pair)
}
