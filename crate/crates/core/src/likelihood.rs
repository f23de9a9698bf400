//! Likelihood surfaces for the one-parameter symmetric two-state HMM and the
//! EM-versus-truth training likelihood experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{dataset_log_likelihood, em_fit, EmConfig};
use crate::error::{Error, Result};
use crate::hmm::{check_symbols, joint_probability_forward, sample_sequences, HmmParams};
use crate::seed;

/// Two states, two symbols, self-transition probability `theta`, and each
/// state emitting "its" symbol with probability `emission_correct`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricHmmSpec {
    pub theta: f64,
    pub emission_correct: f64,
    pub initial: [f64; 2],
}

impl Default for SymmetricHmmSpec {
    fn default() -> Self {
        SymmetricHmmSpec {
            theta: 0.5,
            emission_correct: 0.7,
            initial: [0.5, 0.5],
        }
    }
}

impl SymmetricHmmSpec {
    pub fn with_theta(self, theta: f64) -> Self {
        SymmetricHmmSpec { theta, ..self }
    }

    pub fn to_params(&self) -> Result<HmmParams> {
        let (t, e) = (self.theta, self.emission_correct);
        HmmParams::from_rows(&self.initial, &[&[t, 1.0 - t], &[1.0 - t, t]], &[&[e, 1.0 - e], &[1.0 - e, e]])
    }
}

/// `Pr(x_1..x_t | theta)`.
pub fn likelihood_at(spec: &SymmetricHmmSpec, sequence: &[usize]) -> Result<f64> {
    check_symbols(sequence, 2)?;
    joint_probability_forward(&spec.to_params()?, sequence)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodCurve {
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    pub sequence_length: usize,
}

impl LikelihoodCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,likelihood,t\n");
        for (th, v) in self.thetas.iter().zip(&self.values) {
            out.push_str(&format!("{th},{v:e},{}\n", self.sequence_length));
        }
        out
    }
}

/// Evaluates [`likelihood_at`] on `grid_size` evenly spaced values of theta
/// in `[0, 1]`, endpoints included.
pub fn likelihood_curve(template: &SymmetricHmmSpec, sequence: &[usize], grid_size: usize) -> Result<LikelihoodCurve> {
    if grid_size < 2 {
        return Err(Error::invalid("grid_size must be at least 2"));
    }
    check_symbols(sequence, 2)?;
    let step = 1.0 / (grid_size - 1) as f64;
    let thetas: Vec<f64> = (0..grid_size)
        .map(|i| if i + 1 == grid_size { 1.0 } else { i as f64 * step })
        .collect();
    let values = thetas
        .par_iter()
        .map(|&th| likelihood_at(&template.with_theta(th), sequence))
        .collect::<Result<Vec<_>>>()?;
    Ok(LikelihoodCurve {
        thetas,
        values,
        sequence_length: sequence.len(),
    })
}

/// Number of local maxima of the sampled curve. A plateau counts once, and an
/// endpoint counts when the curve falls away from it.
pub fn count_unimodal_modes(values: &[f64]) -> Result<usize> {
    if values.len() < 3 {
        return Err(Error::invalid("mode counting needs at least 3 points"));
    }
    // Run-length encode equal values, then count runs higher than both neighbours.
    let mut runs: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        if runs.last() != Some(&v) {
            runs.push(v);
        }
    }
    let modes = (0..runs.len())
        .filter(|&i| {
            let left_ok = i == 0 || runs[i - 1] < runs[i];
            let right_ok = i + 1 == runs.len() || runs[i + 1] < runs[i];
            left_ok && right_ok
        })
        .count();
    Ok(modes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    #[serde(rename = "N")]
    pub n_train: usize,
    pub trial: usize,
    pub seed: u64,
    pub em_loglik: f64,
    pub true_loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConfig {
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub sequence_length: usize,
    pub base_seed: u64,
    pub em: EmConfig,
}

/// For each `(N, trial)`: sample `N` training sequences from `true_params`, fit
/// EM, and record the training log-likelihood of the fit and of the truth.
/// Rows come back in `(N, trial)` order.
pub fn em_consistency_experiment(true_params: &HmmParams, config: &ConsistencyConfig) -> Result<Vec<ConsistencyRow>> {
    if true_params.m() != 2 || true_params.n() != 2 {
        return Err(Error::invalid("the consistency experiment expects a 2-state, 2-symbol HMM"));
    }
    if config.sample_sizes.is_empty() || config.sample_sizes.contains(&0) {
        return Err(Error::invalid("sample_sizes must be non-empty and positive"));
    }
    if config.trials == 0 || config.sequence_length == 0 {
        return Err(Error::invalid("trials and sequence_length must be positive"));
    }
    config.em.validate()?;

    let cells: Vec<(usize, usize, usize)> = config
        .sample_sizes
        .iter()
        .enumerate()
        .flat_map(|(ni, &n)| (0..config.trials).map(move |trial| (ni, n, trial)))
        .collect();
    cells
        .into_par_iter()
        .map(|(ni, n_train, trial)| {
            let cell_seed = seed::derive(config.base_seed, ((ni as u64) << 32) | trial as u64);
            let data = sample_sequences(true_params, n_train, config.sequence_length, cell_seed)?;
            let em_config = EmConfig {
                rank: 2,
                seed: seed::derive(cell_seed, 1),
                ..config.em.clone()
            };
            let fit = em_fit(&data, &em_config)?;
            Ok(ConsistencyRow {
                n_train,
                trial,
                seed: cell_seed,
                em_loglik: *fit.loglik_trace.last().expect("non-empty trace"),
                true_loglik: dataset_log_likelihood(true_params, &data)?,
            })
        })
        .collect()
}

pub fn consistency_csv(rows: &[ConsistencyRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_observation_is_half() {
        for th in [0.0, 0.3, 1.0] {
            let spec = SymmetricHmmSpec::default().with_theta(th);
            assert_abs_diff_eq!(likelihood_at(&spec, &[0]).unwrap(), 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(likelihood_at(&spec, &[1]).unwrap(), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn frozen_chain() {
        let spec = SymmetricHmmSpec::default().with_theta(1.0);
        assert_abs_diff_eq!(likelihood_at(&spec, &[0, 0]).unwrap(), 0.29, epsilon = 1e-15);
    }

    #[test]
    fn rejects_third_symbol() {
        assert!(likelihood_at(&SymmetricHmmSpec::default(), &[0, 2]).is_err());
    }

    #[test]
    fn mode_counting() {
        assert_eq!(count_unimodal_modes(&[0.2, 0.2, 0.2]).unwrap(), 1);
        assert_eq!(count_unimodal_modes(&[0.0, 1.0, 0.0]).unwrap(), 1);
        assert_eq!(count_unimodal_modes(&[0.0, 1.0, 0.0, 1.0, 0.0]).unwrap(), 2);
        assert_eq!(count_unimodal_modes(&[0.0, 1.0, 1.0, 0.5]).unwrap(), 1);
        assert_eq!(count_unimodal_modes(&[3.0, 2.0, 1.0]).unwrap(), 1);
        assert_eq!(count_unimodal_modes(&[1.0, 0.0, 1.0]).unwrap(), 2);
        assert!(count_unimodal_modes(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn curve_grid_is_inclusive() {
        let c = likelihood_curve(&SymmetricHmmSpec::default(), &[0, 1, 1], 5).unwrap();
        assert_eq!(c.thetas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(likelihood_curve(&SymmetricHmmSpec::default(), &[0], 1).is_err());
    }

    #[test]
    fn consistency_rejects_wrong_shape() {
        let p = crate::hmm::random_hmm(3, 2, 1, 1.0).unwrap();
        let cfg = ConsistencyConfig {
            sample_sizes: vec![10],
            trials: 1,
            sequence_length: 5,
            base_seed: 0,
            em: EmConfig::default(),
        };
        assert!(em_consistency_experiment(&p, &cfg).is_err());
    }
}
