//! Baum-Welch EM for discrete HMMs with random restarts.
//!
//! The forward-backward pass uses per-step scaling: `alpha_hat_k` is the
//! filtered state distribution and `c_k = Pr(x_k | x_1..x_{k-1})`, so the
//! log-likelihood is `sum_k ln c_k` and no value leaves a sane floating range.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hmm::{random_hmm, Dataset, HmmParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Number of hidden states to fit.
    pub rank: usize,
    pub max_iterations: usize,
    /// Stop once `(ll_k - ll_{k-1}) / |ll_{k-1}|` falls below this.
    pub rel_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            rank: 2,
            max_iterations: 200,
            rel_tolerance: 1e-6,
            restarts: 5,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("EM rank must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.rel_tolerance > 0.0) {
            return Err(Error::invalid("rel_tolerance must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        Ok(())
    }
}

/// Posterior quantities for one sequence.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `state[k][i] = Pr(h_k = i | x)`.
    pub state: Vec<DVector<f64>>,
    /// `pairwise[k][(i, j)] = Pr(h_{k+1} = i, h_k = j | x)`, same orientation as `T`.
    pub pairwise: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

struct ScaledForward {
    alpha: Vec<DVector<f64>>,
    scale: Vec<f64>,
}

/// Scaled forward pass. `Err(position)` if the prefix up to `position` is
/// impossible.
fn scaled_forward(params: &HmmParams, sequence: &[usize]) -> std::result::Result<ScaledForward, usize> {
    let emission = params.emission();
    let mut alpha = Vec::with_capacity(sequence.len());
    let mut scale = Vec::with_capacity(sequence.len());
    for (k, &x) in sequence.iter().enumerate() {
        let predicted = match alpha.last() {
            None => params.pi().clone(),
            Some(prev) => params.transition() * prev,
        };
        let mut a = predicted.component_mul(&emission.row(x).transpose());
        let c = a.sum();
        if !(c > 0.0) {
            return Err(k);
        }
        a /= c;
        alpha.push(a);
        scale.push(c);
    }
    Ok(ScaledForward { alpha, scale })
}

fn scaled_backward(params: &HmmParams, sequence: &[usize], scale: &[f64]) -> Vec<DVector<f64>> {
    let t = sequence.len();
    let m = params.m();
    let mut beta = vec![DVector::from_element(m, 1.0); t];
    for k in (0..t.saturating_sub(1)).rev() {
        let weighted = beta[k + 1].component_mul(&params.emission().row(sequence[k + 1]).transpose());
        beta[k] = params.transition().tr_mul(&weighted) / scale[k + 1];
    }
    beta
}

fn sum_ln(scale: &[f64]) -> f64 {
    scale.iter().map(|c| c.ln()).sum()
}

pub fn forward_backward(params: &HmmParams, sequence: &[usize]) -> Result<Posteriors> {
    params.check_sequence(sequence)?;
    let fwd = scaled_forward(params, sequence).map_err(|position| Error::ImpossibleSequence { position: position + 1 })?;
    let beta = scaled_backward(params, sequence, &fwd.scale);
    let state = fwd.alpha.iter().zip(&beta).map(|(a, b)| a.component_mul(b)).collect();
    let pairwise = (0..sequence.len().saturating_sub(1))
        .map(|k| pairwise_posterior(params, &fwd.alpha[k], &beta[k + 1], sequence[k + 1], fwd.scale[k + 1]))
        .collect();
    Ok(Posteriors {
        state,
        pairwise,
        log_likelihood: sum_ln(&fwd.scale),
    })
}

fn pairwise_posterior(
    params: &HmmParams,
    alpha_prev: &DVector<f64>,
    beta_next: &DVector<f64>,
    x_next: usize,
    scale_next: f64,
) -> DMatrix<f64> {
    let m = params.m();
    let emission = params.emission();
    let transition = params.transition();
    DMatrix::from_fn(m, m, |i, j| {
        alpha_prev[j] * transition[(i, j)] * emission[(x_next, i)] * beta_next[i] / scale_next
    })
}

/// `ln Pr(x_1..x_t)`, `-inf` for a sequence the model cannot produce.
pub fn log_likelihood(params: &HmmParams, sequence: &[usize]) -> Result<f64> {
    params.check_sequence(sequence)?;
    Ok(match scaled_forward(params, sequence) {
        Ok(fwd) => sum_ln(&fwd.scale),
        Err(_) => f64::NEG_INFINITY,
    })
}

/// Total log-likelihood of every sequence in `dataset`.
pub fn dataset_log_likelihood(params: &HmmParams, dataset: &Dataset) -> Result<f64> {
    let mut total = NeumaierSum::default();
    for (seq, count) in group_sequences(dataset) {
        total.add(count as f64 * log_likelihood(params, seq)?);
    }
    Ok(total.value())
}

/// Compensated summation so that the monotone EM trace is not swamped by
/// accumulated rounding on large datasets.
#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Collapses repeated sequences; iteration order is lexicographic.
fn group_sequences(dataset: &Dataset) -> Vec<(&[usize], usize)> {
    let mut counts: BTreeMap<&[usize], usize> = BTreeMap::new();
    for s in &dataset.sequences {
        *counts.entry(s.as_slice()).or_default() += 1;
    }
    counts.into_iter().collect()
}

struct ExpectedCounts {
    initial: DVector<f64>,
    transition: DMatrix<f64>,
    transition_from: DVector<f64>,
    emission: DMatrix<f64>,
    occupancy: DVector<f64>,
    log_likelihood: NeumaierSum,
}

impl ExpectedCounts {
    fn new(m: usize, n: usize) -> Self {
        ExpectedCounts {
            initial: DVector::zeros(m),
            transition: DMatrix::zeros(m, m),
            transition_from: DVector::zeros(m),
            emission: DMatrix::zeros(n, m),
            occupancy: DVector::zeros(m),
            log_likelihood: NeumaierSum::default(),
        }
    }

    /// Adds the weighted posteriors of one sequence. Works on flat
    /// column-major slices with reusable buffers; this is the EM hot loop.
    fn accumulate(&mut self, params: &HmmParams, sequence: &[usize], weight: f64, buf: &mut Workspace) -> Result<()> {
        let t = sequence.len();
        if t == 0 {
            return Ok(());
        }
        let m = params.m();
        let n = params.n();
        let tr = params.transition().as_slice();
        let em = params.emission().as_slice();
        let pi = params.pi().as_slice();
        buf.resize(t, m);
        let (alpha, beta, scale, tmp) = (&mut buf.alpha, &mut buf.beta, &mut buf.scale, &mut buf.tmp);

        for k in 0..t {
            let x = sequence[k];
            let (done, rest) = alpha.split_at_mut(k * m);
            let cur = &mut rest[..m];
            if k == 0 {
                for i in 0..m {
                    cur[i] = pi[i] * em[x + i * n];
                }
            } else {
                let prev = &done[(k - 1) * m..];
                cur.iter_mut().for_each(|v| *v = 0.0);
                for (j, &a) in prev.iter().enumerate() {
                    let col = &tr[j * m..(j + 1) * m];
                    for i in 0..m {
                        cur[i] += col[i] * a;
                    }
                }
                for i in 0..m {
                    cur[i] *= em[x + i * n];
                }
            }
            let c: f64 = cur.iter().sum();
            if !(c > 0.0) {
                return Err(Error::ImpossibleSequence { position: k + 1 });
            }
            cur.iter_mut().for_each(|v| *v /= c);
            scale[k] = c;
        }

        beta[(t - 1) * m..].iter_mut().for_each(|v| *v = 1.0);
        for k in (0..t - 1).rev() {
            let x_next = sequence[k + 1];
            let (head, tail) = beta.split_at_mut((k + 1) * m);
            let next = &tail[..m];
            for i in 0..m {
                tmp[i] = next[i] * em[x_next + i * n] / scale[k + 1];
            }
            let cur = &mut head[k * m..];
            for j in 0..m {
                let col = &tr[j * m..(j + 1) * m];
                cur[j] = col.iter().zip(tmp.iter()).map(|(a, b)| a * b).sum();
            }
        }

        let ll: f64 = scale[..t].iter().map(|c| c.ln()).sum();
        self.log_likelihood.add(weight * ll);

        let counts_tr = self.transition.as_mut_slice();
        for k in 0..t {
            let x = sequence[k];
            let a = &alpha[k * m..(k + 1) * m];
            let b = &beta[k * m..(k + 1) * m];
            for j in 0..m {
                let g = weight * a[j] * b[j];
                if k == 0 {
                    self.initial[j] += g;
                }
                self.emission[(x, j)] += g;
                self.occupancy[j] += g;
                if k + 1 < t {
                    self.transition_from[j] += g;
                }
            }
            if k + 1 < t {
                let x_next = sequence[k + 1];
                let b_next = &beta[(k + 1) * m..(k + 2) * m];
                for i in 0..m {
                    tmp[i] = em[x_next + i * n] * b_next[i] * weight / scale[k + 1];
                }
                for j in 0..m {
                    let aj = a[j];
                    let col = &tr[j * m..(j + 1) * m];
                    let out = &mut counts_tr[j * m..(j + 1) * m];
                    for i in 0..m {
                        out[i] += aj * col[i] * tmp[i];
                    }
                }
            }
        }
        Ok(())
    }

    /// M-step. Columns whose expected count is zero keep their previous value.
    fn maximize(&self, previous: &HmmParams) -> Result<HmmParams> {
        let m = previous.m();
        let pi = normalized_or(&self.initial, previous.pi());
        let mut transition = previous.transition().clone();
        let mut emission = previous.emission().clone();
        for j in 0..m {
            if self.transition_from[j] > 0.0 {
                let col = normalized_or(&self.transition.column(j).into_owned(), &previous.transition().column(j).into_owned());
                transition.set_column(j, &col);
            }
            if self.occupancy[j] > 0.0 {
                let col = normalized_or(&self.emission.column(j).into_owned(), &previous.emission().column(j).into_owned());
                emission.set_column(j, &col);
            }
        }
        HmmParams::new(pi, transition, emission)
    }
}

#[derive(Default)]
struct Workspace {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    scale: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn resize(&mut self, t: usize, m: usize) {
        self.alpha.resize(t * m, 0.0);
        self.beta.resize(t * m, 0.0);
        self.scale.resize(t, 0.0);
        self.tmp.resize(m, 0.0);
    }
}

fn normalized_or(counts: &DVector<f64>, fallback: &DVector<f64>) -> DVector<f64> {
    let total = counts.sum();
    if total > 0.0 {
        counts.map(|c| (c / total).clamp(0.0, 1.0))
    } else {
        fallback.clone()
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: HmmParams,
    /// Log-likelihood after each M-step; entry 0 scores the initialization.
    pub loglik_trace: Vec<f64>,
    /// Final log-likelihood of each restart, in restart order.
    pub restart_logliks: Vec<f64>,
    pub converged: bool,
}

struct RestartOutcome {
    params: HmmParams,
    trace: Vec<f64>,
    converged: bool,
}

fn run_restart(
    groups: &[(&[usize], usize)],
    init: HmmParams,
    config: &EmConfig,
) -> Result<RestartOutcome> {
    let n = init.n();
    let m = init.m();
    let mut params = init;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut workspace = Workspace::default();
    loop {
        let mut counts = ExpectedCounts::new(m, n);
        for &(seq, count) in groups {
            counts.accumulate(&params, seq, count as f64, &mut workspace)?;
        }
        let ll = counts.log_likelihood.value();
        if let Some(&prev) = trace.last() {
            let improvement = (ll - prev) / prev.abs().max(f64::MIN_POSITIVE);
            if improvement < config.rel_tolerance {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if trace.len() > config.max_iterations {
            break;
        }
        params = counts.maximize(&params)?;
    }
    Ok(RestartOutcome {
        params,
        trace,
        converged,
    })
}

/// Fits an HMM with `config.rank` states by Baum-Welch from `config.restarts`
/// Dirichlet(1) initializations and keeps the restart with the highest final
/// log-likelihood (lowest restart index on ties). No regularization.
pub fn em_fit(dataset: &Dataset, config: &EmConfig) -> Result<EmResult> {
    config.validate()?;
    if dataset.is_empty() || dataset.sequences.iter().all(Vec::is_empty) {
        return Err(Error::invalid("EM needs a non-empty dataset"));
    }
    for s in &dataset.sequences {
        crate::hmm::check_symbols(s, dataset.n)?;
    }
    let groups = group_sequences(dataset);

    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let init = random_hmm(config.rank, dataset.n, seed::derive(config.seed, r as u64), 1.0)?;
            run_restart(&groups, init, config)
        })
        .collect::<Result<_>>()?;

    let restart_logliks: Vec<f64> = outcomes.iter().map(|o| *o.trace.last().expect("non-empty trace")).collect();
    let mut best = 0;
    for (i, &ll) in restart_logliks.iter().enumerate() {
        if ll > restart_logliks[best] {
            best = i;
        }
    }
    let winner = outcomes.into_iter().nth(best).expect("best index in range");
    Ok(EmResult {
        params: winner.params,
        loglik_trace: winner.trace,
        restart_logliks,
        converged: winner.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::joint_probability_forward;
    use approx::assert_abs_diff_eq;

    fn two_state() -> HmmParams {
        HmmParams::from_rows(&[0.3, 0.7], &[&[0.8, 0.25], &[0.2, 0.75]], &[&[0.9, 0.35], &[0.1, 0.65]]).unwrap()
    }

    #[test]
    fn single_state_posteriors_are_one() {
        let p = HmmParams::from_rows(&[1.0], &[&[1.0]], &[&[0.4], &[0.6]]).unwrap();
        let post = forward_backward(&p, &[0, 1, 1]).unwrap();
        for g in &post.state {
            assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-15);
        }
        for x in &post.pairwise {
            assert_abs_diff_eq!(x[(0, 0)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn loglik_matches_forward() {
        let p = two_state();
        let seq = [0, 1, 1, 0, 0, 1, 0, 1, 1, 1];
        let ll = log_likelihood(&p, &seq).unwrap();
        let direct = joint_probability_forward(&p, &seq).unwrap();
        assert!((ll.exp() - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn impossible_sequence_signalled() {
        let p = HmmParams::from_rows(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(log_likelihood(&p, &[0, 1]).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(forward_backward(&p, &[0, 1]), Err(Error::ImpossibleSequence { position: 2 })));
    }

    #[test]
    fn config_validation() {
        let d = Dataset::new(2, vec![vec![0, 1]]).unwrap();
        let bad = EmConfig { rank: 0, ..EmConfig::default() };
        assert!(em_fit(&d, &bad).is_err());
        let empty = Dataset::new(2, vec![]).unwrap();
        assert!(em_fit(&empty, &EmConfig::default()).is_err());
    }

    #[test]
    fn restarts_are_reported_in_order() {
        let d = crate::hmm::sample_sequences(&two_state(), 200, 6, 3).unwrap();
        let r = em_fit(&d, &EmConfig { restarts: 4, seed: 9, ..EmConfig::default() }).unwrap();
        assert_eq!(r.restart_logliks.len(), 4);
        let best = r.restart_logliks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(*r.loglik_trace.last().unwrap(), best);
    }
}
