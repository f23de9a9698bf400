use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use spectral_hmm::charts::render_charts;
use spectral_hmm::em::{em_fit, EmConfig};
use spectral_hmm::evaluation::{log_likelihood_of, neg_prop, normalized_l1, total_l1, CorrectionMode};
use spectral_hmm::experiment::{enumerate_sequences, normalize_key, parse_config_text, run_sweep, ExperimentConfig};
use spectral_hmm::format::{self, write_file};
use spectral_hmm::hmm::{joint_probability_forward, random_hmm, sample_sequences};
use spectral_hmm::likelihood::{
    consistency_csv, count_unimodal_modes, em_consistency_experiment, likelihood_curve, ConsistencyConfig,
    SymmetricHmmSpec,
};
use spectral_hmm::spectral::{estimate_moments, learn_spectral, predict_joint, TripleMode};
use spectral_hmm::{Error, Result};

#[derive(Parser)]
#[command(name = "shmm", version, about = "Spectral learning vs EM for discrete HMMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random HMM with Dirichlet columns.
    GenerateHmm {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Sample observation sequences from a model file.
    SampleData {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Learn observable operators from a dataset.
    LearnSpectral {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rank: usize,
        /// `first` or `sliding`.
        #[arg(long, default_value = "first")]
        triple_mode: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Fit an HMM by Baum-Welch.
    LearnEm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rank: usize,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Also write the log-likelihood trace as CSV (iteration, loglik).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a learned model against the true model on a test set.
    Evaluate {
        /// Ground-truth model file.
        #[arg(long)]
        truth: PathBuf,
        /// Learned operator file.
        #[arg(long, conflicts_with = "model")]
        operators: Option<PathBuf>,
        /// Learned HMM file.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Test dataset file; omit to use every sequence of `--length`.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        length: Option<usize>,
        /// `none`, `clamp` or `signflip+clamp`.
        #[arg(long, default_value = "none")]
        correction_mode: String,
        #[arg(long)]
        clamp_epsilon: Option<f64>,
    },
    /// Run a sweep over training sizes and ranks. Flags override config keys.
    Sweep(SweepArgs),
    /// Likelihood of theta for the symmetric two-state model.
    LikelihoodCurve {
        /// Dataset of 2-symbol sequences; one curve per sequence.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Without `--data`, sample this many sequences of `--length`.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        length: usize,
        #[arg(long, default_value_t = 0.6)]
        theta_true: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.7)]
        emission: f64,
        #[arg(long, default_value_t = 1001)]
        grid: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// EM vs true-parameter training log-likelihood on a 2x2 HMM.
    EmConsistency {
        /// 2-state, 2-symbol model file; random if omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 31)]
        model_seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 10000, 100000])]
        sample_sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Render SVG charts from a sweep CSV.
    Render {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
}

#[derive(Args)]
struct EmArgs {
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_tolerance: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
}

impl EmArgs {
    fn config(&self, rank: usize, seed: u64) -> EmConfig {
        EmConfig {
            rank,
            max_iterations: self.max_iterations,
            rel_tolerance: self.rel_tolerance,
            restarts: self.restarts,
            seed,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; defaults to `<experiment_id>.csv`.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also render charts into this directory.
    #[arg(long)]
    charts: Option<PathBuf>,
    /// Extra overrides as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    experiment_id: Option<String>,
    #[arg(long)]
    hmm_file: Option<String>,
    #[arg(long)]
    hmm_m: Option<String>,
    #[arg(long)]
    hmm_n: Option<String>,
    #[arg(long)]
    hmm_seed: Option<String>,
    #[arg(long)]
    hmm_concentration: Option<String>,
    #[arg(long)]
    train_sizes: Option<String>,
    #[arg(long)]
    train_length: Option<String>,
    #[arg(long)]
    triple_mode: Option<String>,
    #[arg(long)]
    rank_values: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    base_seed: Option<String>,
    #[arg(long)]
    correction_mode: Option<String>,
    #[arg(long)]
    clamp_epsilon: Option<String>,
    #[arg(long)]
    em_ranks: Option<String>,
    #[arg(long)]
    em_max_iterations: Option<String>,
    #[arg(long)]
    em_rel_tolerance: Option<String>,
    #[arg(long)]
    em_restarts: Option<String>,
    #[arg(long)]
    record_timing: Option<String>,
}

impl SweepArgs {
    fn overrides(&self) -> Result<BTreeMap<String, String>> {
        let named = [
            ("experiment_id", &self.experiment_id),
            ("hmm_file", &self.hmm_file),
            ("hmm_m", &self.hmm_m),
            ("hmm_n", &self.hmm_n),
            ("hmm_seed", &self.hmm_seed),
            ("hmm_concentration", &self.hmm_concentration),
            ("train_sizes", &self.train_sizes),
            ("train_length", &self.train_length),
            ("triple_mode", &self.triple_mode),
            ("rank_values", &self.rank_values),
            ("test", &self.test),
            ("trials", &self.trials),
            ("base_seed", &self.base_seed),
            ("correction_mode", &self.correction_mode),
            ("clamp_epsilon", &self.clamp_epsilon),
            ("em_ranks", &self.em_ranks),
            ("em_max_iterations", &self.em_max_iterations),
            ("em_rel_tolerance", &self.em_rel_tolerance),
            ("em_restarts", &self.em_restarts),
            ("record_timing", &self.record_timing),
        ];
        let mut map = BTreeMap::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            map.insert(normalize_key(k), v.trim().to_string());
        }
        for (key, value) in named {
            if let Some(v) = value {
                map.insert(key.to_string(), v.clone());
            }
        }
        Ok(map)
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => {
            write_file(path, text)?;
            info!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_triple_mode(s: &str) -> Result<TripleMode> {
    match s {
        "first" => Ok(TripleMode::FirstTriple),
        "sliding" => Ok(TripleMode::SlidingWindow),
        other => Err(Error::InvalidArgument(format!("triple mode must be first or sliding, got {other:?}"))),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenerateHmm {
            m,
            n,
            seed,
            concentration,
            output,
        } => emit(output.as_deref(), &format::write_model(&random_hmm(m, n, seed, concentration)?)),

        Command::SampleData {
            model,
            count,
            length,
            seed,
            output,
        } => {
            let params = format::load_model(&model)?;
            emit(output.as_deref(), &format::write_dataset(&sample_sequences(&params, count, length, seed)?))
        }

        Command::LearnSpectral {
            data,
            rank,
            triple_mode,
            output,
        } => {
            let dataset = format::load_dataset(&data)?;
            let moments = estimate_moments(&dataset, parse_triple_mode(&triple_mode)?)?;
            let ops = learn_spectral(&moments, rank)?;
            if ops.rank_deficient {
                eprintln!("warning: moment matrices are numerically rank-deficient at rank {rank}");
            }
            emit(output.as_deref(), &format::write_operators(&ops))
        }

        Command::LearnEm {
            data,
            rank,
            em,
            seed,
            output,
            trace,
        } => {
            let dataset = format::load_dataset(&data)?;
            let fit = em_fit(&dataset, &em.config(rank, seed))?;
            if let Some(path) = trace {
                let mut csv = String::from("iteration,loglik\n");
                for (i, ll) in fit.loglik_trace.iter().enumerate() {
                    csv.push_str(&format!("{i},{ll}\n"));
                }
                write_file(&path, &csv)?;
            }
            eprintln!(
                "final log-likelihood {} after {} iterations (converged: {})",
                fit.loglik_trace.last().copied().unwrap_or(f64::NAN),
                fit.loglik_trace.len() - 1,
                fit.converged
            );
            emit(output.as_deref(), &format::write_model(&fit.params))
        }

        Command::Evaluate {
            truth,
            operators,
            model,
            test,
            length,
            correction_mode,
            clamp_epsilon,
        } => {
            let truth = format::load_model(&truth)?;
            let sequences = match (test, length) {
                (Some(path), _) => format::load_dataset(&path)?.sequences,
                (None, Some(t)) => enumerate_sequences(truth.n(), t)?,
                (None, None) => return Err(Error::InvalidArgument("give --test or --length".into())),
            };
            let t = sequences.first().map_or(0, Vec::len);
            if t == 0 || sequences.iter().any(|s| s.len() != t) {
                return Err(Error::InvalidArgument("test sequences must share one positive length".into()));
            }
            let true_probs = sequences
                .iter()
                .map(|s| joint_probability_forward(&truth, s))
                .collect::<Result<Vec<_>>>()?;
            let raw = match (operators, model) {
                (Some(path), _) => {
                    let ops = format::load_operators(&path)?;
                    sequences.iter().map(|s| predict_joint(&ops, s)).collect::<Result<Vec<_>>>()?
                }
                (None, Some(path)) => {
                    let learned = format::load_model(&path)?;
                    sequences.iter().map(|s| joint_probability_forward(&learned, s)).collect::<Result<Vec<_>>>()?
                }
                (None, None) => return Err(Error::InvalidArgument("give --operators or --model".into())),
            };
            let mode = CorrectionMode::parse(&correction_mode)?;
            let eps = clamp_epsilon.unwrap_or_else(|| CorrectionMode::default_epsilon(raw.len()));
            let corrected = mode.apply(&raw, eps)?;
            println!("test_sequences = {}", raw.len());
            println!("neg_prop = {}", neg_prop(&raw)?);
            println!("l1 = {}", normalized_l1(&true_probs, &raw, t)?);
            println!("total_l1 = {}", total_l1(&true_probs, &raw)?);
            println!("loglik = {}", log_likelihood_of(&raw));
            if mode != CorrectionMode::None {
                println!("correction = {}", mode.as_str());
                println!("l1_corrected = {}", normalized_l1(&true_probs, &corrected, t)?);
                println!("loglik_corrected = {}", log_likelihood_of(&corrected));
            }
            Ok(())
        }

        Command::Sweep(args) => {
            let (mut map, base_dir) = match &args.config {
                Some(path) => (
                    parse_config_text(&format::read_to_string(path)?)?,
                    path.parent().map(Path::to_path_buf),
                ),
                None => (BTreeMap::new(), None),
            };
            map.extend(args.overrides()?);
            let config = ExperimentConfig::from_map(&map)?;
            info!("running sweep {}", config.experiment_id);
            let out = run_sweep(&config, base_dir.as_deref())?;
            let csv_path = args
                .output
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}.csv", config.experiment_id)));
            write_file(&csv_path, &out.csv)?;
            eprintln!("wrote {} rows to {}", out.records.len(), csv_path.display());
            if let Some(dir) = &args.charts {
                for path in render_charts(&csv_path, dir)? {
                    eprintln!("wrote {}", path.display());
                }
            }
            Ok(())
        }

        Command::LikelihoodCurve {
            data,
            count,
            length,
            theta_true,
            seed,
            emission,
            grid,
            output,
        } => {
            let template = SymmetricHmmSpec {
                emission_correct: emission,
                ..SymmetricHmmSpec::default()
            };
            let sequences = match data {
                Some(path) => format::load_dataset(&path)?.sequences,
                None => sample_sequences(&template.with_theta(theta_true).to_params()?, count, length, seed)?.sequences,
            };
            let mut csv = String::from("theta,likelihood,t\n");
            for seq in &sequences {
                let curve = likelihood_curve(&template, seq, grid)?;
                let body = curve.to_csv();
                csv.push_str(body.split_once('\n').map_or("", |(_, rest)| rest));
                if grid >= 3 {
                    eprintln!("t = {}: {} mode(s)", seq.len(), count_unimodal_modes(&curve.values)?);
                }
            }
            emit(output.as_deref(), &csv)
        }

        Command::EmConsistency {
            model,
            model_seed,
            sample_sizes,
            trials,
            length,
            base_seed,
            em,
            output,
        } => {
            let truth = match model {
                Some(path) => format::load_model(&path)?,
                None => random_hmm(2, 2, model_seed, 1.0)?,
            };
            let config = ConsistencyConfig {
                sample_sizes,
                trials,
                sequence_length: length,
                base_seed,
                em: em.config(2, 0),
            };
            let rows = em_consistency_experiment(&truth, &config)?;
            emit(output.as_deref(), &consistency_csv(&rows)?)
        }

        Command::Render { csv, output_dir } => {
            for path in render_charts(&csv, &output_dir)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
