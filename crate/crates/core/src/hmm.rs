//! Discrete hidden Markov models: validated parameters, sampling, and exact
//! inference.
//!
//! Matrices are **column-stochastic**: `T[(i, j)] = Pr(h_{t+1} = i | h_t = j)`
//! and `O[(i, j)] = Pr(x_t = i | h_t = j)`. Symbols are 0-based inside the
//! library; the text formats in [`crate::format`] use 1-based symbols.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::seed;

/// Tolerance for the sum-to-one checks on validated parameters.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// Parameters `(pi, T, O)` of a discrete HMM with `m` hidden states and an
/// alphabet of `n` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    pi: DVector<f64>,
    transition: DMatrix<f64>,
    emission: DMatrix<f64>,
}

impl HmmParams {
    /// Validates dimensions, entry ranges and stochasticity. Nothing is
    /// renormalized here.
    pub fn new(pi: DVector<f64>, transition: DMatrix<f64>, emission: DMatrix<f64>) -> Result<Self> {
        let m = pi.len();
        if m == 0 {
            return Err(Error::DimensionMismatch("pi must be non-empty".into()));
        }
        if transition.nrows() != m || transition.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "T is {}x{}, expected {m}x{m}",
                transition.nrows(),
                transition.ncols()
            )));
        }
        if emission.ncols() != m || emission.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "O is {}x{}, expected nx{m} with n >= 1",
                emission.nrows(),
                emission.ncols()
            )));
        }

        check_distribution("pi", pi.iter().copied())?;
        for j in 0..m {
            check_distribution(&format!("T column {}", j + 1), transition.column(j).iter().copied())?;
            check_distribution(&format!("O column {}", j + 1), emission.column(j).iter().copied())?;
        }

        Ok(HmmParams {
            pi,
            transition,
            emission,
        })
    }

    /// Convenience constructor from nested row-major slices.
    pub fn from_rows(pi: &[f64], transition: &[&[f64]], emission: &[&[f64]]) -> Result<Self> {
        let m = pi.len();
        let n = emission.len();
        if transition.len() != m || transition.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(format!("T must be {m}x{m}")));
        }
        if emission.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(format!("O must be {n}x{m}")));
        }
        Self::new(
            DVector::from_column_slice(pi),
            DMatrix::from_fn(m, m, |i, j| transition[i][j]),
            DMatrix::from_fn(n, m, |i, j| emission[i][j]),
        )
    }

    /// Number of hidden states.
    pub fn m(&self) -> usize {
        self.pi.len()
    }

    /// Alphabet size.
    pub fn n(&self) -> usize {
        self.emission.nrows()
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn emission(&self) -> &DMatrix<f64> {
        &self.emission
    }

    pub(crate) fn check_sequence(&self, sequence: &[usize]) -> Result<()> {
        check_symbols(sequence, self.n())
    }
}

fn check_distribution(what: &str, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidProbability {
                what: what.to_string(),
                value: v,
            });
        }
        sum += v;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
        return Err(Error::NotStochastic {
            what: what.to_string(),
            sum,
            tolerance: STOCHASTIC_TOLERANCE,
        });
    }
    Ok(())
}

pub(crate) fn check_symbols(sequence: &[usize], n: usize) -> Result<()> {
    match sequence.iter().find(|&&x| x >= n) {
        Some(&x) => Err(Error::SymbolOutOfRange { symbol: x + 1, n }),
        None => Ok(()),
    }
}

/// Draws `pi` and every column of `T` and `O` from a symmetric Dirichlet with
/// the given concentration.
pub fn random_hmm(m: usize, n: usize, seed: u64, concentration: f64) -> Result<HmmParams> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("m and n must be at least 1"));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::invalid(format!(
            "Dirichlet concentration must be positive, got {concentration}"
        )));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut draw = |len: usize| -> Vec<f64> { dirichlet(&gamma, len, &mut rng) };

    let pi = DVector::from_vec(draw(m));
    let mut transition = DMatrix::zeros(m, m);
    for j in 0..m {
        transition.set_column(j, &DVector::from_vec(draw(m)));
    }
    let mut emission = DMatrix::zeros(n, m);
    for j in 0..m {
        emission.set_column(j, &DVector::from_vec(draw(n)));
    }
    HmmParams::new(pi, transition, emission)
}

fn dirichlet<R: Rng>(gamma: &Gamma<f64>, len: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let total: f64 = v.iter().sum();
        // Tiny concentrations can underflow every component to zero.
        if total > 0.0 && total.is_finite() {
            v.iter_mut().for_each(|x| *x /= total);
            return v;
        }
    }
}

/// A set of observation sequences over the alphabet `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub n: usize,
    pub sequences: Vec<Vec<usize>>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(n: usize, sequences: Vec<Vec<usize>>) -> Result<Self> {
        for s in &sequences {
            check_symbols(s, n)?;
        }
        Ok(Dataset {
            n,
            sequences,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_symbols(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }
}

fn sample_index<R: Rng>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = i;
        }
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum a hair below 1.
    last
}

/// Samples `count` independent sequences of length `length`.
pub fn sample_sequences(params: &HmmParams, count: usize, length: usize, seed: u64) -> Result<Dataset> {
    if count == 0 || length == 0 {
        return Err(Error::invalid("sample count and sequence length must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let mut sequences = Vec::with_capacity(count);
    for _ in 0..count {
        let mut seq = Vec::with_capacity(length);
        let mut h = sample_index(params.pi.iter().copied(), &mut rng);
        for step in 0..length {
            if step > 0 {
                h = sample_index(params.transition.column(h).iter().copied(), &mut rng);
            }
            seq.push(sample_index(params.emission.column(h).iter().copied(), &mut rng));
        }
        sequences.push(seq);
    }
    Ok(Dataset {
        n: params.n(),
        sequences,
        seed: Some(seed),
    })
}

/// `Pr(x_1..x_t)` by the forward recursion
/// `alpha_1 = diag(O_{x_1,.}) pi`, `alpha_{k+1} = diag(O_{x_{k+1},.}) T alpha_k`.
pub fn joint_probability_forward(params: &HmmParams, sequence: &[usize]) -> Result<f64> {
    params.check_sequence(sequence)?;
    let Some((&first, rest)) = sequence.split_first() else {
        return Ok(1.0);
    };
    let mut alpha = params.pi.component_mul(&params.emission.row(first).transpose());
    for &x in rest {
        alpha = (&params.transition * &alpha).component_mul(&params.emission.row(x).transpose());
    }
    Ok(alpha.sum())
}

/// The observable operator `A_x = T diag(O_{x,1}, ..., O_{x,m})`.
pub fn observable_operator(params: &HmmParams, x: usize) -> Result<DMatrix<f64>> {
    check_symbols(&[x], params.n())?;
    let mut op = params.transition.clone();
    for (j, mut col) in op.column_iter_mut().enumerate() {
        col *= params.emission[(x, j)];
    }
    Ok(op)
}

/// `Pr(x_1..x_t) = 1^T A_{x_t} ... A_{x_1} pi`, applied right to left on the
/// state vector.
pub fn joint_probability_operators(params: &HmmParams, sequence: &[usize]) -> Result<f64> {
    params.check_sequence(sequence)?;
    let mut state = params.pi.clone();
    for &x in sequence {
        state = observable_operator(params, x)? * state;
    }
    Ok(state.sum())
}

/// Population low-order moments of the observation process.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    /// `[P1]_i = Pr(x_1 = i)`.
    pub p1: DVector<f64>,
    /// `[P21]_ij = Pr(x_2 = i, x_1 = j)`.
    pub p21: DMatrix<f64>,
    /// `[P3x1[x]]_ij = Pr(x_3 = i, x_2 = x, x_1 = j)`.
    pub p3x1: Vec<DMatrix<f64>>,
}

/// Closed forms: `P1 = O pi`, `P21 = O T diag(pi) O^T`,
/// `P3x1[x] = O A_x T diag(pi) O^T`.
pub fn exact_moments(params: &HmmParams) -> ExactMoments {
    let o = &params.emission;
    let t = &params.transition;
    let p1 = o * &params.pi;
    let joint_h1_x1 = DMatrix::from_diagonal(&params.pi) * o.transpose();
    let t_joint = t * &joint_h1_x1;
    let p21 = o * &t_joint;
    let p3x1 = (0..params.n())
        .map(|x| {
            let a = observable_operator(params, x).expect("x < n");
            o * (a * &t_joint)
        })
        .collect();
    ExactMoments { p1, p21, p3x1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn deterministic_chain() -> HmmParams {
        HmmParams::from_rows(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 0.0], &[0.0, 1.0]]).unwrap()
    }

    fn two_state() -> HmmParams {
        HmmParams::from_rows(&[0.5, 0.5], &[&[0.6, 0.4], &[0.4, 0.6]], &[&[0.7, 0.3], &[0.3, 0.7]]).unwrap()
    }

    #[test]
    fn uniform_params_validate() {
        let p = HmmParams::from_rows(&[0.5, 0.5], &[&[0.5, 0.5], &[0.5, 0.5]], &[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(p.is_ok());
    }

    #[test]
    fn rejects_non_stochastic_column() {
        let p = HmmParams::from_rows(&[0.5, 0.5], &[&[0.5, 0.5], &[0.4, 0.5]], &[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(p, Err(Error::NotStochastic { .. })), "{p:?}");
    }

    #[test]
    fn rejects_negative_entry() {
        let p = HmmParams::from_rows(&[0.5, 0.5], &[&[0.5, 0.5], &[0.5, 0.5]], &[&[-0.1, 0.5], &[1.1, 0.5]]);
        assert!(matches!(p, Err(Error::InvalidProbability { .. })), "{p:?}");
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let p = HmmParams::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::identity(2, 2),
            DMatrix::from_element(2, 1, 0.5),
        );
        assert!(matches!(p, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn random_hmm_is_deterministic_and_valid() {
        let a = random_hmm(4, 8, 7, 1.0).unwrap();
        let b = random_hmm(4, 8, 7, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_hmm(4, 8, 8, 1.0).unwrap());
        assert!(HmmParams::new(a.pi.clone(), a.transition.clone(), a.emission.clone()).is_ok());
    }

    #[test]
    fn random_hmm_single_state() {
        let p = random_hmm(1, 3, 1, 1.0).unwrap();
        assert_eq!(p.pi()[0], 1.0);
        assert_eq!(p.transition()[(0, 0)], 1.0);
    }

    #[test]
    fn random_hmm_rejects_bad_concentration() {
        assert!(random_hmm(2, 2, 0, 0.0).is_err());
        assert!(random_hmm(2, 2, 0, -1.0).is_err());
    }

    #[test]
    fn deterministic_chain_samples_constant_sequences() {
        let d = sample_sequences(&deterministic_chain(), 20, 3, 5).unwrap();
        assert!(d.sequences.iter().all(|s| s == &vec![0, 0, 0]));
    }

    #[test]
    fn sampling_matches_emission_frequency() {
        // Binomial sd at N=1e5, p=0.7 is ~0.00145; 0.01 is ~7 sd.
        let p = HmmParams::from_rows(&[1.0], &[&[1.0]], &[&[0.7], &[0.3]]).unwrap();
        let d = sample_sequences(&p, 100_000, 1, 11).unwrap();
        let ones = d.sequences.iter().filter(|s| s[0] == 0).count() as f64 / 100_000.0;
        assert!((ones - 0.7).abs() < 0.01, "{ones}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = random_hmm(3, 4, 2, 1.0).unwrap();
        assert_eq!(sample_sequences(&p, 50, 6, 9).unwrap(), sample_sequences(&p, 50, 6, 9).unwrap());
    }

    #[test]
    fn forward_single_state_product() {
        let p = HmmParams::from_rows(&[1.0], &[&[1.0]], &[&[0.7], &[0.3]]).unwrap();
        assert_abs_diff_eq!(joint_probability_forward(&p, &[0, 1]).unwrap(), 0.21, epsilon = 1e-15);
    }

    #[test]
    fn forward_rejects_out_of_range() {
        let err = joint_probability_forward(&two_state(), &[0, 2]).unwrap_err();
        assert!(matches!(err, Error::SymbolOutOfRange { symbol: 3, n: 2 }));
        assert!(observable_operator(&two_state(), 2).is_err());
        assert!(joint_probability_operators(&two_state(), &[5]).is_err());
    }

    #[test]
    fn observable_operator_worked_example() {
        let a = observable_operator(&two_state(), 0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.42, 0.12, 0.28, 0.18]);
        assert_abs_diff_eq!(a, expected, epsilon = 1e-15);
    }

    #[test]
    fn observable_operator_single_state() {
        let p = HmmParams::from_rows(&[1.0], &[&[1.0]], &[&[0.7], &[0.3]]).unwrap();
        assert_abs_diff_eq!(observable_operator(&p, 1).unwrap()[(0, 0)], 0.3);
    }

    #[test]
    fn operators_on_deterministic_chain() {
        let p = deterministic_chain();
        assert_eq!(joint_probability_operators(&p, &[0, 0]).unwrap(), 1.0);
        assert_eq!(joint_probability_operators(&p, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn single_state_moments_are_products() {
        let p = HmmParams::from_rows(&[1.0], &[&[1.0]], &[&[0.2], &[0.5], &[0.3]]).unwrap();
        let mo = exact_moments(&p);
        let col = p.emission().column(0).into_owned();
        assert_abs_diff_eq!(mo.p1, col, epsilon = 1e-15);
        assert_abs_diff_eq!(mo.p21, &col * col.transpose(), epsilon = 1e-15);
    }
}
