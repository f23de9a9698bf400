//! Sweeps over training-set size and rank: sample, learn, evaluate, tabulate.
//!
//! Configuration is a flat `key = value` text file; lists are comma-separated
//! and `#` starts a comment. Recognised keys (defaults in brackets):
//!
//! | key | meaning |
//! |---|---|
//! | `experiment_id` | label for rows and chart file names [`experiment`] |
//! | `hmm_file` | path to a model file; overrides the `hmm_*` generator keys |
//! | `hmm_m`, `hmm_n`, `hmm_seed`, `hmm_concentration` | random ground truth [4, 8, 1, 1] |
//! | `train_sizes` | list of N [100,1000,10000,100000] |
//! | `train_length` | length of each training sequence [test length] |
//! | `triple_mode` | `first` or `sliding` [first] |
//! | `rank_values` | spectral ranks to sweep [hmm_m] |
//! | `test` | `exhaustive <t>` or `sampled <count> <t> <seed>` [exhaustive 4] |
//! | `trials` | repetitions per cell [10] |
//! | `base_seed` | root of every per-cell seed [0] |
//! | `correction_mode` | `none`, `clamp` or `signflip+clamp` [none] |
//! | `clamp_epsilon` | clamp floor [1e-6 / test size] |
//! | `em_ranks` | state counts for the EM baseline, empty to skip [hmm_m] |
//! | `em_max_iterations`, `em_rel_tolerance`, `em_restarts` | [200, 1e-6, 5] |
//! | `record_timing` | write measured wall times instead of 0 [false] |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::em::{em_fit, log_likelihood, EmConfig};
use crate::error::{Error, Result};
use crate::evaluation::{log_likelihood_of, neg_prop, normalized_l1, CorrectionMode, MetricsRecord};
use crate::format;
use crate::hmm::{joint_probability_forward, random_hmm, sample_sequences, HmmParams};
use crate::seed;
use crate::spectral::{estimate_moments, learn_spectral, predict_joint, TripleMode};

/// Largest exhaustive test set accepted.
pub const MAX_EXHAUSTIVE: usize = 10_000_000;

pub const CONFIG_KEYS: [&str; 19] = [
    "experiment_id",
    "hmm_file",
    "hmm_m",
    "hmm_n",
    "hmm_seed",
    "hmm_concentration",
    "train_sizes",
    "train_length",
    "triple_mode",
    "rank_values",
    "test",
    "trials",
    "base_seed",
    "correction_mode",
    "clamp_epsilon",
    "em_ranks",
    "em_max_iterations",
    "em_rel_tolerance",
    "em_restarts",
];

/// Keys that are accepted but not part of [`CONFIG_KEYS`] ordering.
const EXTRA_KEYS: [&str; 1] = ["record_timing"];

#[derive(Debug, Clone, PartialEq)]
pub enum HmmSource {
    File(PathBuf),
    Random {
        m: usize,
        n: usize,
        seed: u64,
        concentration: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestSpec {
    /// Every one of the `n^t` sequences of length `t`.
    Exhaustive { t: usize },
    /// `count` sequences of length `t` drawn from the true model.
    Sampled { count: usize, t: usize, seed: u64 },
}

impl TestSpec {
    pub fn length(&self) -> usize {
        match *self {
            TestSpec::Exhaustive { t } | TestSpec::Sampled { t, .. } => t,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let int = |t: &str| t.parse::<u64>().map_err(|_| Error::invalid(format!("bad integer {t:?} in test spec")));
        match toks.as_slice() {
            ["exhaustive", t] => Ok(TestSpec::Exhaustive { t: int(t)? as usize }),
            ["sampled", c, t, s] => Ok(TestSpec::Sampled {
                count: int(c)? as usize,
                t: int(t)? as usize,
                seed: int(s)?,
            }),
            _ => Err(Error::invalid(format!(
                "test must be `exhaustive <t>` or `sampled <count> <t> <seed>`, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub hmm: HmmSource,
    pub train_sizes: Vec<usize>,
    pub train_length: usize,
    pub triple_mode: TripleMode,
    pub rank_values: Vec<usize>,
    pub test: TestSpec,
    pub trials: usize,
    pub base_seed: u64,
    pub correction_mode: CorrectionMode,
    pub clamp_epsilon: Option<f64>,
    pub em_ranks: Vec<usize>,
    pub em_max_iterations: usize,
    pub em_rel_tolerance: f64,
    pub em_restarts: usize,
    pub record_timing: bool,
}

/// Parses `key = value` lines into a map. Later keys win.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        map.insert(normalize_key(key), value.trim().to_string());
    }
    Ok(map)
}

/// `train-sizes` and `train_sizes` name the same key.
pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar::<usize>(key, s))
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    let v = value.trim();
    // Accept 1e5-style integers.
    v.parse::<T>()
        .or_else(|_| match v.parse::<f64>() {
            Ok(f) if f.fract() == 0.0 => format!("{f:.0}").parse::<T>().map_err(|_| ()),
            _ => Err(()),
        })
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

impl ExperimentConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        for key in map.keys() {
            if !CONFIG_KEYS.contains(&key.as_str()) && !EXTRA_KEYS.contains(&key.as_str()) {
                return Err(Error::invalid(format!("unknown config key {key:?}")));
            }
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let scalar = |k: &str, default: &str| -> Result<String> { Ok(get(k).unwrap_or(default).to_string()) };

        let hmm_m: usize = parse_scalar("hmm_m", &scalar("hmm_m", "4")?)?;
        let hmm = match get("hmm_file") {
            Some(path) if !path.is_empty() => HmmSource::File(PathBuf::from(path)),
            _ => HmmSource::Random {
                m: hmm_m,
                n: parse_scalar("hmm_n", &scalar("hmm_n", "8")?)?,
                seed: parse_scalar("hmm_seed", &scalar("hmm_seed", "1")?)?,
                concentration: parse_scalar("hmm_concentration", &scalar("hmm_concentration", "1")?)?,
            },
        };
        let test = TestSpec::parse(get("test").unwrap_or("exhaustive 4"))?;
        let default_ranks = hmm_m.to_string();
        let triple_mode = match get("triple_mode").unwrap_or("first") {
            "first" => TripleMode::FirstTriple,
            "sliding" => TripleMode::SlidingWindow,
            other => return Err(Error::invalid(format!("triple_mode must be first or sliding, got {other:?}"))),
        };
        let record_timing = match get("record_timing").unwrap_or("false") {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(Error::invalid(format!("record_timing must be a boolean, got {other:?}"))),
        };
        let config = ExperimentConfig {
            experiment_id: get("experiment_id").unwrap_or("experiment").to_string(),
            hmm,
            train_sizes: list("train_sizes", get("train_sizes").unwrap_or("100,1000,10000,100000"))?,
            train_length: match get("train_length") {
                Some(v) => parse_scalar("train_length", v)?,
                None => test.length(),
            },
            triple_mode,
            rank_values: list("rank_values", get("rank_values").unwrap_or(&default_ranks))?,
            test,
            trials: parse_scalar("trials", &scalar("trials", "10")?)?,
            base_seed: parse_scalar("base_seed", &scalar("base_seed", "0")?)?,
            correction_mode: CorrectionMode::parse(get("correction_mode").unwrap_or("none"))?,
            clamp_epsilon: get("clamp_epsilon").map(|v| parse_scalar("clamp_epsilon", v)).transpose()?,
            em_ranks: list("em_ranks", get("em_ranks").unwrap_or(&default_ranks))?,
            em_max_iterations: parse_scalar("em_max_iterations", &scalar("em_max_iterations", "200")?)?,
            em_rel_tolerance: parse_scalar("em_rel_tolerance", &scalar("em_rel_tolerance", "1e-6")?)?,
            em_restarts: parse_scalar("em_restarts", &scalar("em_restarts", "5")?)?,
            record_timing,
        };
        config.validate_shape()?;
        Ok(config)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(&parse_config_text(text)?)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.experiment_id.is_empty() || self.experiment_id.contains(['/', '\\', ',']) {
            return Err(Error::invalid("experiment_id must be non-empty without '/', '\\' or ','"));
        }
        if self.train_sizes.is_empty() || self.train_sizes.contains(&0) {
            return Err(Error::invalid("train_sizes must be a non-empty list of positive integers"));
        }
        if self.rank_values.is_empty() || self.rank_values.contains(&0) {
            return Err(Error::invalid("rank_values must be a non-empty list of positive integers"));
        }
        if self.em_ranks.contains(&0) {
            return Err(Error::invalid("em_ranks must be positive"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be positive"));
        }
        if self.train_length < 3 {
            return Err(Error::invalid("train_length must be at least 3 for moment estimation"));
        }
        if self.test.length() == 0 {
            return Err(Error::invalid("test sequence length must be positive"));
        }
        if let TestSpec::Sampled { count: 0, .. } = self.test {
            return Err(Error::invalid("sampled test set must be non-empty"));
        }
        if let Some(eps) = self.clamp_epsilon {
            if !(eps > 0.0) {
                return Err(Error::invalid("clamp_epsilon must be positive"));
            }
        }
        if let HmmSource::Random { m, n, concentration, .. } = self.hmm {
            if m == 0 || n == 0 || !(concentration > 0.0) {
                return Err(Error::invalid("hmm_m, hmm_n and hmm_concentration must be positive"));
            }
        }
        self.em_config(1, 0).validate()
    }

    fn em_config(&self, rank: usize, seed: u64) -> EmConfig {
        EmConfig {
            rank,
            max_iterations: self.em_max_iterations,
            rel_tolerance: self.em_rel_tolerance,
            restarts: self.em_restarts,
            seed,
        }
    }

    /// The ground-truth model. Relative `hmm_file` paths resolve against `base_dir`.
    pub fn load_hmm(&self, base_dir: Option<&Path>) -> Result<HmmParams> {
        match &self.hmm {
            HmmSource::File(p) => {
                let path = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                format::load_model(&path)
            }
            HmmSource::Random {
                m,
                n,
                seed,
                concentration,
            } => random_hmm(*m, *n, *seed, *concentration),
        }
    }
}

/// All `n^t` sequences of length `t` in lexicographic order.
pub fn enumerate_sequences(n: usize, t: usize) -> Result<Vec<Vec<usize>>> {
    let total = (n as u128).checked_pow(t as u32).filter(|&c| c <= MAX_EXHAUSTIVE as u128);
    let Some(total) = total else {
        return Err(Error::invalid(format!("{n}^{t} sequences exceeds the exhaustive limit {MAX_EXHAUSTIVE}")));
    };
    let mut out = Vec::with_capacity(total as usize);
    let mut current = vec![0usize; t];
    for _ in 0..total {
        out.push(current.clone());
        for pos in (0..t).rev() {
            current[pos] += 1;
            if current[pos] < n {
                break;
            }
            current[pos] = 0;
        }
    }
    Ok(out)
}

/// Learner slots used to keep seeds of spectral, EM and reference cells apart.
const EM_SLOT_OFFSET: u64 = 1 << 19;

/// Per-cell seed from `(N index, rank slot, trial)`. Injective for indices
/// below `2^16`, `2^20`, `2^24` respectively, so distinct cells get distinct
/// seeds and adding ranks or sizes leaves existing cells untouched.
pub fn cell_seed(base_seed: u64, n_index: usize, rank_slot: u64, trial: usize) -> u64 {
    let packed = ((n_index as u64) << 48) | ((rank_slot & 0xF_FFFF) << 24) | (trial as u64 & 0xFF_FFFF);
    seed::derive(base_seed, packed)
}

struct TestSet {
    sequences: Vec<Vec<usize>>,
    true_probs: Vec<f64>,
    t: usize,
}

fn build_test_set(params: &HmmParams, spec: TestSpec) -> Result<TestSet> {
    let sequences = match spec {
        TestSpec::Exhaustive { t } => enumerate_sequences(params.n(), t)?,
        TestSpec::Sampled { count, t, seed } => sample_sequences(params, count, t, seed)?.sequences,
    };
    let true_probs = sequences
        .par_iter()
        .map(|s| joint_probability_forward(params, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(TestSet {
        sequences,
        true_probs,
        t: spec.length(),
    })
}

#[derive(Debug, Clone, Copy)]
enum Job {
    Spectral { n_index: usize, rank: usize, rank_index: usize, trial: usize },
    Em { n_index: usize, rank: usize, rank_index: usize, trial: usize },
    Reference { n_index: usize, trial: usize },
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<MetricsRecord>,
    pub csv: String,
}

/// Runs every cell of the sweep and returns the records in canonical
/// `(N, m_hyper, trial, learner)` order with their CSV rendering.
pub fn run_sweep(config: &ExperimentConfig, base_dir: Option<&Path>) -> Result<SweepOutput> {
    let truth = config.load_hmm(base_dir)?;
    for &r in &config.rank_values {
        if r > truth.n() {
            return Err(Error::invalid(format!("rank {r} exceeds alphabet size {}", truth.n())));
        }
    }
    let test = build_test_set(&truth, config.test)?;
    let epsilon = config
        .clamp_epsilon
        .unwrap_or_else(|| CorrectionMode::default_epsilon(test.sequences.len()));
    let test_loglik = log_likelihood_of(&test.true_probs);

    let mut jobs = Vec::new();
    for n_index in 0..config.train_sizes.len() {
        for trial in 0..config.trials {
            for (rank_index, &rank) in config.rank_values.iter().enumerate() {
                jobs.push(Job::Spectral { n_index, rank, rank_index, trial });
            }
            for (rank_index, &rank) in config.em_ranks.iter().enumerate() {
                jobs.push(Job::Em { n_index, rank, rank_index, trial });
            }
            jobs.push(Job::Reference { n_index, trial });
        }
    }

    let timing = |start: Instant| {
        if config.record_timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let m_true = truth.m();

    let nested = jobs
        .par_iter()
        .map(|job| -> Result<Vec<MetricsRecord>> {
            let record = |learner: &str, n_index: usize, m_hyper: usize, trial: usize, seed: u64| MetricsRecord {
                experiment_id: config.experiment_id.clone(),
                learner: learner.to_string(),
                n_train: config.train_sizes[n_index],
                m_hyper,
                trial,
                seed,
                l1: 0.0,
                neg_prop: 0.0,
                loglik: 0.0,
                wall_time_ms: 0.0,
            };
            match *job {
                Job::Spectral { n_index, rank, rank_index, trial } => {
                    let seed = cell_seed(config.base_seed, n_index, rank_index as u64, trial);
                    let start = Instant::now();
                    let data = sample_sequences(&truth, config.train_sizes[n_index], config.train_length, seed)?;
                    let moments = estimate_moments(&data, config.triple_mode)?;
                    let ops = learn_spectral(&moments, rank)?;
                    let raw = test
                        .sequences
                        .iter()
                        .map(|s| predict_joint(&ops, s))
                        .collect::<Result<Vec<_>>>()?;
                    let elapsed = timing(start);
                    let raw_neg = neg_prop(&raw)?;

                    let mut rows = vec![MetricsRecord {
                        l1: normalized_l1(&test.true_probs, &raw, test.t)?,
                        neg_prop: raw_neg,
                        loglik: log_likelihood_of(&raw),
                        wall_time_ms: elapsed,
                        ..record("spectral", n_index, rank, trial, seed)
                    }];
                    if config.correction_mode != CorrectionMode::None {
                        let corrected = config.correction_mode.apply(&raw, epsilon)?;
                        let learner = format!("spectral+{}", config.correction_mode.as_str());
                        rows.push(MetricsRecord {
                            l1: normalized_l1(&test.true_probs, &corrected, test.t)?,
                            neg_prop: raw_neg,
                            loglik: log_likelihood_of(&corrected),
                            wall_time_ms: elapsed,
                            ..record(&learner, n_index, rank, trial, seed)
                        });
                    }
                    Ok(rows)
                }
                Job::Em { n_index, rank, rank_index, trial } => {
                    let seed = cell_seed(config.base_seed, n_index, EM_SLOT_OFFSET + rank_index as u64, trial);
                    let start = Instant::now();
                    let data = sample_sequences(&truth, config.train_sizes[n_index], config.train_length, seed)?;
                    let fit = em_fit(&data, &config.em_config(rank, seed::derive(seed, 1)))?;
                    let elapsed = timing(start);
                    let probs = test
                        .sequences
                        .iter()
                        .map(|s| joint_probability_forward(&fit.params, s))
                        .collect::<Result<Vec<_>>>()?;
                    let loglik = test
                        .sequences
                        .iter()
                        .map(|s| log_likelihood(&fit.params, s))
                        .sum::<Result<f64>>()?;
                    Ok(vec![MetricsRecord {
                        l1: normalized_l1(&test.true_probs, &probs, test.t)?,
                        neg_prop: neg_prop(&probs)?,
                        loglik,
                        wall_time_ms: elapsed,
                        ..record("em", n_index, rank, trial, seed)
                    }])
                }
                Job::Reference { n_index, trial } => {
                    let seed = cell_seed(config.base_seed, n_index, EM_SLOT_OFFSET - 1, trial);
                    Ok(vec![MetricsRecord {
                        loglik: test_loglik,
                        ..record("true-model", n_index, m_true, trial, seed)
                    }])
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records: Vec<MetricsRecord> = nested.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        (a.n_train, a.m_hyper, a.trial, &a.learner).cmp(&(b.n_train, b.m_hyper, b.trial, &b.learner))
    });
    let csv = metrics_csv(&records)?;
    Ok(SweepOutput { records, csv })
}

pub fn metrics_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(crate::evaluation::METRICS_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = format::read_to_string(path)?;
    parse_metrics_csv(&text)
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let expected = crate::evaluation::METRICS_COLUMNS;
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::invalid(format!(
            "CSV header {:?} does not match {:?}",
            headers.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn enumeration_order_and_size() {
        let all = enumerate_sequences(2, 3).unwrap();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[1], vec![0, 0, 1]);
        assert_eq!(all[7], vec![1, 1, 1]);
        assert!(enumerate_sequences(100, 50).is_err());
    }

    #[test]
    fn config_defaults_and_overrides() {
        let c = ExperimentConfig::from_text("experiment_id = small\ntrain-sizes = 1e2, 1000 # comment\n").unwrap();
        assert_eq!(c.experiment_id, "small");
        assert_eq!(c.train_sizes, vec![100, 1000]);
        assert_eq!(c.rank_values, vec![4]);
        assert_eq!(c.train_length, 4);
        assert_eq!(c.test, TestSpec::Exhaustive { t: 4 });
        assert_eq!(c.correction_mode, CorrectionMode::None);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ExperimentConfig::from_text("bogus = 1").is_err());
        assert!(ExperimentConfig::from_text("trials = 0").is_err());
        assert!(ExperimentConfig::from_text("test = exhaustive").is_err());
        assert!(ExperimentConfig::from_text("correction_mode = maybe").is_err());
        assert!(ExperimentConfig::from_text("no equals sign").is_err());
        assert!(ExperimentConfig::from_text("train_length = 2").is_err());
    }

    #[test]
    fn sampled_test_spec() {
        let c = ExperimentConfig::from_text("test = sampled 10000 50 99").unwrap();
        assert_eq!(c.test, TestSpec::Sampled { count: 10000, t: 50, seed: 99 });
        assert_eq!(c.train_length, 50);
    }

    #[test]
    fn cell_seeds_distinct() {
        let mut seen = HashSet::new();
        for n in 0..10 {
            for r in 0..10u64 {
                for t in 0..100 {
                    assert!(seen.insert(cell_seed(5, n, r, t)));
                }
            }
        }
    }

    #[test]
    fn tiny_sweep_layout() {
        let c = ExperimentConfig::from_text(
            "experiment_id = tiny\nhmm_m = 2\nhmm_n = 3\ntrain_sizes = 50, 200\nrank_values = 1, 2\n\
             test = exhaustive 3\ntrials = 2\ncorrection_mode = clamp\nem_restarts = 1\n",
        )
        .unwrap();
        let out = run_sweep(&c, None).unwrap();
        // per (N, trial): 2 ranks x 2 spectral rows + 1 em + 1 reference
        assert_eq!(out.records.len(), 2 * 2 * 6);
        assert!(out.csv.starts_with("experiment_id,learner,N,m_hyper,trial,seed,l1,neg_prop,loglik,wall_time_ms\n"));
        assert_eq!(parse_metrics_csv(&out.csv).unwrap(), out.records);
        for r in &out.records {
            assert!((0.0..=1.0).contains(&r.neg_prop) && r.l1 >= 0.0);
        }
    }
}
