//! Test-set error metrics and the negative-probability correction heuristics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sum_s |p(s) - q(s)|^(1/t)` over aligned test-set probabilities. Each
/// absolute difference is raised to `1/t` before summing.
pub fn normalized_l1(true_probs: &[f64], est_probs: &[f64], t: usize) -> Result<f64> {
    check_aligned(true_probs, est_probs)?;
    if t == 0 {
        return Err(Error::invalid("sequence length must be at least 1"));
    }
    let exponent = 1.0 / t as f64;
    Ok(true_probs
        .iter()
        .zip(est_probs)
        .map(|(p, q)| (p - q).abs().powf(exponent))
        .sum())
}

/// Plain `sum_s |p(s) - q(s)|`. Reported alongside [`normalized_l1`] for
/// diagnostics only.
pub fn total_l1(true_probs: &[f64], est_probs: &[f64]) -> Result<f64> {
    check_aligned(true_probs, est_probs)?;
    Ok(true_probs.iter().zip(est_probs).map(|(p, q)| (p - q).abs()).sum())
}

fn check_aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "probability lists have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Fraction of strictly negative estimates.
pub fn neg_prop(est_probs: &[f64]) -> Result<f64> {
    if est_probs.is_empty() {
        return Err(Error::invalid("neg_prop of an empty list"));
    }
    let negative = est_probs.iter().filter(|&&p| p < 0.0).count();
    Ok(negative as f64 / est_probs.len() as f64)
}

/// Raises everything below `epsilon` to `epsilon`, then divides by the sum.
pub fn clamp_normalize(est_probs: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if est_probs.is_empty() {
        return Err(Error::invalid("clamp_normalize of an empty list"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let clamped: Vec<f64> = est_probs.iter().map(|&p| if p < epsilon { epsilon } else { p }).collect();
    let total: f64 = clamped.iter().sum();
    if !total.is_finite() {
        return Err(Error::invalid("estimates sum to a non-finite value"));
    }
    Ok(clamped.into_iter().map(|p| p / total).collect())
}

/// Negates every value when the values sum to a negative number. A zero sum
/// is left alone.
pub fn sign_flip_heuristic(est_probs: &[f64]) -> Vec<f64> {
    let total: f64 = est_probs.iter().sum();
    if total < 0.0 {
        est_probs.iter().map(|p| -p).collect()
    } else {
        est_probs.to_vec()
    }
}

/// Correction applied to spectral outputs before L1 and log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CorrectionMode {
    #[default]
    None,
    Clamp,
    SignFlipClamp,
}

impl CorrectionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(CorrectionMode::None),
            "clamp" => Ok(CorrectionMode::Clamp),
            "signflip+clamp" => Ok(CorrectionMode::SignFlipClamp),
            other => Err(Error::invalid(format!(
                "unknown correction mode {other:?} (expected none, clamp, signflip+clamp)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionMode::None => "none",
            CorrectionMode::Clamp => "clamp",
            CorrectionMode::SignFlipClamp => "signflip+clamp",
        }
    }

    /// Default clamp floor: `1e-6` of uniform mass over the test set.
    pub fn default_epsilon(test_size: usize) -> f64 {
        1e-6 / test_size.max(1) as f64
    }

    pub fn apply(self, est_probs: &[f64], epsilon: f64) -> Result<Vec<f64>> {
        match self {
            CorrectionMode::None => Ok(est_probs.to_vec()),
            CorrectionMode::Clamp => clamp_normalize(est_probs, epsilon),
            CorrectionMode::SignFlipClamp => clamp_normalize(&sign_flip_heuristic(est_probs), epsilon),
        }
    }
}

/// One row of an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub experiment_id: String,
    /// `spectral`, `em`, `true-model`, or `spectral+<correction>`.
    pub learner: String,
    #[serde(rename = "N")]
    pub n_train: usize,
    pub m_hyper: usize,
    pub trial: usize,
    pub seed: u64,
    pub l1: f64,
    pub neg_prop: f64,
    /// Total test-set log-likelihood; `-inf` marks an estimate that gave some
    /// test sequence zero or negative probability.
    pub loglik: f64,
    pub wall_time_ms: f64,
}

/// CSV column order of [`MetricsRecord`].
pub const METRICS_COLUMNS: [&str; 10] = [
    "experiment_id",
    "learner",
    "N",
    "m_hyper",
    "trial",
    "seed",
    "l1",
    "neg_prop",
    "loglik",
    "wall_time_ms",
];

/// Sum of `ln p`, or `-inf` if any `p <= 0`.
pub fn log_likelihood_of(probs: &[f64]) -> f64 {
    if probs.iter().any(|&p| !(p > 0.0)) {
        return f64::NEG_INFINITY;
    }
    probs.iter().map(|p| p.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn l1_examples() {
        assert_eq!(normalized_l1(&[0.1, 0.2], &[0.1, 0.2], 3).unwrap(), 0.0);
        assert_abs_diff_eq!(normalized_l1(&[0.30], &[0.26], 1).unwrap(), 0.04, epsilon = 1e-15);
        // sqrt(0.09) + sqrt(0.11)
        let v = normalized_l1(&[0.5, 0.5], &[0.41, 0.61], 2).unwrap();
        assert_abs_diff_eq!(v, 0.3 + 0.331_662_479_035_539_98, epsilon = 1e-9);
        assert!(normalized_l1(&[0.1], &[0.1, 0.2], 1).is_err());
    }

    #[test]
    fn neg_prop_examples() {
        assert_eq!(neg_prop(&[0.1, 0.2, 0.7]).unwrap(), 0.0);
        assert_eq!(neg_prop(&[-0.1, 0.2, 0.3, -0.05]).unwrap(), 0.5);
        assert!(neg_prop(&[]).is_err());
    }

    #[test]
    fn clamp_examples() {
        let out = clamp_normalize(&[-0.1, 0.5, 0.6], 1e-6).unwrap();
        let expected = [1e-6 / 1.100001, 0.5 / 1.100001, 0.6 / 1.100001];
        for (a, b) in out.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let out = clamp_normalize(&[0.25, 0.75], 1e-6).unwrap();
        assert_abs_diff_eq!(out[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.75, epsilon = 1e-12);
        assert_eq!(clamp_normalize(&[-1.0, -1.0], 1e-6).unwrap(), vec![0.5, 0.5]);
        assert!(clamp_normalize(&[], 1e-6).is_err());
        assert!(clamp_normalize(&[0.5], 0.0).is_err());
    }

    #[test]
    fn sign_flip_examples() {
        assert_eq!(sign_flip_heuristic(&[-0.4, -0.3, 0.1]), vec![0.4, 0.3, -0.1]);
        assert_eq!(sign_flip_heuristic(&[0.4, 0.3, -0.1]), vec![0.4, 0.3, -0.1]);
        assert_eq!(sign_flip_heuristic(&[-0.2, 0.2]), vec![-0.2, 0.2]);
    }

    #[test]
    fn correction_mode_roundtrip() {
        for mode in [CorrectionMode::None, CorrectionMode::Clamp, CorrectionMode::SignFlipClamp] {
            assert_eq!(CorrectionMode::parse(mode.as_str()).unwrap(), mode);
        }
        assert!(CorrectionMode::parse("flip").is_err());
    }

    proptest! {
        #[test]
        fn clamp_yields_distribution(v in proptest::collection::vec(-1.0f64..1.0, 1..50), eps in 1e-9f64..1e-2) {
            let out = clamp_normalize(&v, eps).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(out.iter().all(|&p| p > 0.0));
            prop_assert_eq!(neg_prop(&out).unwrap(), 0.0);
        }

        #[test]
        fn sign_flip_idempotent(v in proptest::collection::vec(-1.0f64..1.0, 1..50)) {
            let once = sign_flip_heuristic(&v);
            prop_assert_eq!(sign_flip_heuristic(&once), once);
        }

        #[test]
        fn l1_symmetric_and_zero_iff_equal(
            a in proptest::collection::vec(0.0f64..1.0, 1..20),
            t in 1usize..6,
        ) {
            let b: Vec<f64> = a.iter().map(|x| x * 0.5).collect();
            prop_assert_eq!(normalized_l1(&a, &b, t).unwrap(), normalized_l1(&b, &a, t).unwrap());
            prop_assert_eq!(normalized_l1(&a, &a, t).unwrap(), 0.0);
            let differs = a.iter().any(|&x| x > 0.0);
            prop_assert_eq!(normalized_l1(&a, &b, t).unwrap() > 0.0, differs);
        }
    }
}
