//! Spectral learning of observable-operator representations.
//!
//! Empirical low-order moments `P1`, `P21`, `P3x1` are projected onto the top
//! `k` left singular vectors `U` of `P21`, giving
//!
//! ```text
//! b1      = U^T P1
//! b_inf^T = P1^T (U^T P21)^+
//! B_x     = U^T P3x1[x] (U^T P21)^+
//! ```
//!
//! and `Pr(x_1..x_t) ~= b_inf^T B_{x_t} ... B_{x_1} b1`. Nothing constrains the
//! operator products to be non-negative, so predictions are raw reals.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hmm::{check_symbols, Dataset, ExactMoments};
use crate::linalg::{self, numerical_rank};

/// How observation triples are extracted from training sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripleMode {
    /// Only `(x1, x2, x3)` of each sequence; triples are i.i.d. across sequences.
    #[default]
    FirstTriple,
    /// Every window `(x_k, x_{k+1}, x_{k+2})`. Only unbiased for the `P` moments
    /// if the chain is started from its stationary distribution.
    SlidingWindow,
}

/// Empirical moment matrices. Same layout as [`ExactMoments`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub p1: DVector<f64>,
    pub p21: DMatrix<f64>,
    pub p3x1: Vec<DMatrix<f64>>,
    /// Number of triples the estimates were computed from.
    pub sample_count: usize,
}

impl MomentEstimates {
    pub fn n(&self) -> usize {
        self.p1.len()
    }
}

impl From<ExactMoments> for MomentEstimates {
    fn from(m: ExactMoments) -> Self {
        MomentEstimates {
            p1: m.p1,
            p21: m.p21,
            p3x1: m.p3x1,
            sample_count: usize::MAX,
        }
    }
}

pub fn estimate_moments(dataset: &Dataset, mode: TripleMode) -> Result<MomentEstimates> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot estimate moments from an empty dataset"));
    }
    let n = dataset.n;
    let mut p1 = DVector::zeros(n);
    let mut p21 = DMatrix::zeros(n, n);
    let mut p3x1 = vec![DMatrix::zeros(n, n); n];
    let mut count = 0usize;

    for (idx, seq) in dataset.sequences.iter().enumerate() {
        if seq.len() < 3 {
            return Err(Error::invalid(format!(
                "sequence {} has length {}, moment estimation needs at least 3",
                idx + 1,
                seq.len()
            )));
        }
        check_symbols(seq, n)?;
        let windows = match mode {
            TripleMode::FirstTriple => 1,
            TripleMode::SlidingWindow => seq.len() - 2,
        };
        for w in seq.windows(3).take(windows) {
            let (x1, x2, x3) = (w[0], w[1], w[2]);
            p1[x1] += 1.0;
            p21[(x2, x1)] += 1.0;
            p3x1[x2][(x3, x1)] += 1.0;
            count += 1;
        }
    }

    let scale = 1.0 / count as f64;
    p1 *= scale;
    p21 *= scale;
    for p in &mut p3x1 {
        *p *= scale;
    }
    Ok(MomentEstimates {
        p1,
        p21,
        p3x1,
        sample_count: count,
    })
}

/// Top-`rank` left singular subspace of `P21`.
#[derive(Debug, Clone)]
pub struct Subspace {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// Set when `P21` has fewer than `rank` numerically non-zero singular values.
    pub rank_deficient: bool,
}

pub fn compute_subspace(p21: &DMatrix<f64>, rank: usize) -> Result<Subspace> {
    let n = p21.nrows();
    if rank == 0 || rank > n {
        return Err(Error::invalid(format!("rank hyperparameter must be in 1..={n}, got {rank}")));
    }
    let (u, singular_values) = linalg::top_left_singular_vectors(p21, rank);
    let rank_deficient = numerical_rank(&singular_values) < rank;
    if rank_deficient {
        warn!(
            "P21 numerical rank is below the requested rank {rank}; singular values {:?}",
            singular_values.as_slice()
        );
    }
    Ok(Subspace {
        u,
        singular_values,
        rank_deficient,
    })
}

/// Learned observable operators.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableOperators {
    /// `n x k`, orthonormal columns.
    pub u: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub b_inf: DVector<f64>,
    /// One `k x k` operator per symbol.
    pub b: Vec<DMatrix<f64>>,
    /// Retained singular values of `P21`.
    pub singular_values: DVector<f64>,
    /// `U^T P21` had numerical rank below `k`; the pseudoinverse dropped directions.
    pub rank_deficient: bool,
}

impl ObservableOperators {
    /// The rank hyperparameter `k`.
    pub fn rank(&self) -> usize {
        self.b1.len()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }
}

pub fn learn_spectral(moments: &MomentEstimates, rank: usize) -> Result<ObservableOperators> {
    let subspace = compute_subspace(&moments.p21, rank)?;
    let mut ops = operators_from_subspace(moments, subspace.u)?;
    ops.singular_values = subspace.singular_values;
    ops.rank_deficient |= subspace.rank_deficient;
    Ok(ops)
}

/// Builds the operators for a caller-supplied projection `u` (`n x k`).
/// `singular_values` is left empty.
pub fn operators_from_subspace(moments: &MomentEstimates, u: DMatrix<f64>) -> Result<ObservableOperators> {
    let n = moments.n();
    if u.nrows() != n || u.ncols() == 0 || u.ncols() > n {
        return Err(Error::DimensionMismatch(format!(
            "projection is {}x{}, expected {n}xk with 1 <= k <= {n}",
            u.nrows(),
            u.ncols()
        )));
    }
    if moments.p21.shape() != (n, n) || moments.p3x1.len() != n {
        return Err(Error::DimensionMismatch("moment matrices disagree on alphabet size".into()));
    }
    let k = u.ncols();
    let ut = u.transpose();
    let projected = &ut * &moments.p21;
    let pinv = linalg::pseudo_inverse(&projected);
    let rank_deficient = pinv.rank < k;
    if rank_deficient {
        warn!("U^T P21 has numerical rank {} below {k}", pinv.rank);
    }

    let b1 = &ut * &moments.p1;
    let b_inf = pinv.matrix.transpose() * &moments.p1;
    let b = moments.p3x1.iter().map(|p| &ut * p * &pinv.matrix).collect();
    Ok(ObservableOperators {
        u,
        b1,
        b_inf,
        b,
        singular_values: DVector::zeros(0),
        rank_deficient,
    })
}

/// `b_inf^T B_{x_t} ... B_{x_1} b1`. May be negative or exceed 1.
pub fn predict_joint(ops: &ObservableOperators, sequence: &[usize]) -> Result<f64> {
    check_symbols(sequence, ops.n())?;
    let mut state = ops.b1.clone();
    for &x in sequence {
        state = &ops.b[x] * state;
    }
    Ok(ops.b_inf.dot(&state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{exact_moments, HmmParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_sequence_bookkeeping() {
        // (2, 1, 2) in 1-based symbols.
        let d = Dataset::new(2, vec![vec![1, 0, 1]]).unwrap();
        let m = estimate_moments(&d, TripleMode::FirstTriple).unwrap();
        assert_eq!(m.p1.as_slice(), &[0.0, 1.0]);
        assert_eq!(m.p21, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(m.p3x1[0], DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(m.p3x1[1], DMatrix::zeros(2, 2));
        assert_eq!(m.sample_count, 1);
    }

    #[test]
    fn sliding_window_counts_every_triple() {
        let d = Dataset::new(2, vec![vec![0, 1, 0, 1, 1]]).unwrap();
        let m = estimate_moments(&d, TripleMode::SlidingWindow).unwrap();
        assert_eq!(m.sample_count, 3);
        assert_abs_diff_eq!(m.p1.sum(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.p1[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_short_and_empty() {
        let d = Dataset::new(2, vec![vec![0, 1]]).unwrap();
        assert!(estimate_moments(&d, TripleMode::FirstTriple).is_err());
        let d = Dataset::new(2, vec![]).unwrap();
        assert!(estimate_moments(&d, TripleMode::FirstTriple).is_err());
    }

    #[test]
    fn diagonal_subspace() {
        let p21 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.3, 0.2]));
        let s = compute_subspace(&p21, 2).unwrap();
        assert_abs_diff_eq!(s.singular_values, DVector::from_vec(vec![0.5, 0.3]), epsilon = 1e-15);
        for k in 0..2 {
            assert_abs_diff_eq!(s.u[(k, k)].abs(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.u[(2, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.u[(2, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_one_subspace() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]) / 3.0;
        let s = compute_subspace(&(&v * v.transpose()), 1).unwrap();
        let dot = s.u.column(0).dot(&v);
        assert_abs_diff_eq!(dot.abs(), 1.0, epsilon = 1e-12);
        assert!(!s.rank_deficient);
        assert!(compute_subspace(&(&v * v.transpose()), 2).unwrap().rank_deficient);
    }

    #[test]
    fn rank_bounds() {
        let p21 = DMatrix::identity(3, 3) / 3.0;
        assert!(compute_subspace(&p21, 0).is_err());
        assert!(compute_subspace(&p21, 4).is_err());
    }

    #[test]
    fn iid_case_predicts_products() {
        let p = HmmParams::from_rows(&[1.0], &[&[1.0]], &[&[0.2], &[0.5], &[0.3]]).unwrap();
        let ops = learn_spectral(&exact_moments(&p).into(), 1).unwrap();
        let pr = predict_joint(&ops, &[1, 2, 0]).unwrap();
        assert_abs_diff_eq!(pr, 0.5 * 0.3 * 0.2, epsilon = 1e-14);
        assert_abs_diff_eq!(predict_joint(&ops, &[]).unwrap(), 1.0, epsilon = 1e-14);
        assert!(learn_spectral(&exact_moments(&p).into(), 4).is_err());
    }
}
