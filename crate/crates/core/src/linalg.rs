//! Dense SVD helpers: truncated left singular subspace and a Moore-Penrose
//! pseudoinverse with a relative singular-value cutoff.

use nalgebra::{DMatrix, DVector, SVD};

/// Singular values at or below `PINV_RELATIVE_CUTOFF * sigma_max` are treated
/// as zero when inverting.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Pseudoinverse of `a` plus the numerical rank used to build it.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

pub fn pseudo_inverse(a: &DMatrix<f64>) -> PseudoInverse {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return PseudoInverse {
            matrix: DMatrix::zeros(cols, rows),
            rank: 0,
        };
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = PINV_RELATIVE_CUTOFF * sigma_max;

    let mut matrix = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            // += v_k u_k^T / s_k
            matrix.ger(1.0 / s, &v_t.row(k).transpose(), &u.column(k), 1.0);
        }
    }
    PseudoInverse { matrix, rank }
}

/// Left singular vectors for the `k` largest singular values, ordered by
/// decreasing singular value, with those singular values.
pub fn top_left_singular_vectors(a: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    // SVD::new returns factors sorted by decreasing singular value.
    let svd = SVD::new(a.clone(), true, false);
    let u = svd.u.expect("u requested");
    let k = k.min(u.ncols());
    (u.columns(0, k).into_owned(), svd.singular_values.rows(0, k).into_owned())
}

/// Count of singular values above the relative cutoff.
pub fn numerical_rank(singular_values: &DVector<f64>) -> usize {
    let max = singular_values.iter().copied().fold(0.0, f64::max);
    singular_values
        .iter()
        .filter(|&&s| s > PINV_RELATIVE_CUTOFF * max && s > 0.0)
        .count()
}
