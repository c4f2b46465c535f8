//! `dpeval`: differentially private Monte Carlo policy evaluation on chain
//! benchmarks.
//!
//! Subcommands:
//! * `run` — execute an experiment sweep from a config file and emit CSV.
//! * `verify` — run the brute-force oracle suite and report each check.
//! * `exact` — print the exact state values of a chain.
//! * `estimate` — run one private mechanism and serialize the release.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dpeval_core::experiments::{emit_csv, gnuplot_script, run_experiment, ExperimentConfig};
use dpeval_core::mdp::{build_chain, exact_values, TrajectorySampler};
use dpeval_core::mechanism::{dp_lsl_from_summary, dp_lsw_from_summary, PrivateEstimate};
use dpeval_core::returns::{parse_trajectory_file, SummaryBuilder, Trajectory};
use dpeval_core::rng::SeedStream;
use dpeval_core::sensitivity::{privacy_constants, privacy_constants_conservative};
use dpeval_core::{estimators, experiments, Error};

mod verify;

#[derive(Parser)]
#[command(name = "dpeval", about = "Differentially private first-visit Monte Carlo policy evaluation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep from a config file.
    Run(RunArgs),
    /// Run the oracle verification suite.
    Verify(verify::VerifyArgs),
    /// Print exact chain values from dynamic programming.
    Exact(ExactArgs),
    /// Run a single private mechanism and print or write the release.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Replay trajectories from a batch file instead of sampling.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Also write per-row private-estimate files for the DP algorithms.
    #[arg(long)]
    emit_estimates: bool,
    /// Include the [private] diagnostics section in estimate files.
    #[arg(long)]
    unsafe_diagnostics: bool,
    /// Use the conservative calibration constants (overrides the config).
    #[arg(long)]
    conservative_constants: bool,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct ExactArgs {
    /// Number of chain states (absorbing terminal included).
    #[arg(long, default_value_t = 40)]
    n: usize,
    /// Stay probability.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Discount factor.
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
}

#[derive(Args)]
struct EstimateArgs {
    /// Mechanism: dp-lsw or dp-lsl.
    #[arg(long)]
    mechanism: String,
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Batch size to sample (ignored with --replay).
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Ridge regularization (dp-lsl only).
    #[arg(long)]
    lambda: Option<f64>,
    /// Public return bound; defaults to r_max/(1-gamma).
    #[arg(long)]
    f_max: Option<f64>,
    /// State-aggregation group size.
    #[arg(long, default_value_t = 1)]
    aggregation: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Replay trajectories from a batch file instead of sampling.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Write the serialized estimate here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include the [private] diagnostics section.
    #[arg(long)]
    unsafe_diagnostics: bool,
    /// Use the conservative calibration constants.
    #[arg(long)]
    conservative_constants: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => verify::cmd_verify(args),
        Command::Exact(args) => cmd_exact(args),
        Command::Estimate(args) => cmd_estimate(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn threads_from_env() -> Result<Option<usize>, Error> {
    match std::env::var("DPEVAL_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("DPEVAL_THREADS = `{v}` is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn read_to_string(path: &PathBuf) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn load_replay(path: &PathBuf) -> Result<Vec<Trajectory>, Error> {
    let text = read_to_string(path)?;
    parse_trajectory_file(&text).map_err(|e| Error::Replay {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn check_replay(
    trajectories: &[Trajectory],
    path: &PathBuf,
    n_transient: usize,
    r_max: f64,
) -> Result<(), Error> {
    for x in trajectories {
        if x.max_state() >= n_transient {
            return Err(Error::Replay {
                path: path.display().to_string(),
                msg: format!(
                    "trajectory visits state {} outside the transient range 0..{n_transient}",
                    x.max_state()
                ),
            });
        }
        if x.max_reward() > r_max {
            return Err(Error::Replay {
                path: path.display().to_string(),
                msg: format!("reward {} exceeds r_max {r_max}", x.max_reward()),
            });
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Error> {
    let mut config = ExperimentConfig::parse(&read_to_string(&args.config)?)?;
    if args.conservative_constants {
        config.conservative_constants = true;
    }
    let replay = match &args.replay {
        Some(path) => {
            let trajs = load_replay(path)?;
            check_replay(&trajs, path, config.n_states - 1, config.r_max)?;
            Some(trajs)
        }
        None => None,
    };
    let threads = threads_from_env()?;
    let started = Instant::now();
    let rows = run_experiment(&config, replay.as_deref(), threads)?;
    // Timings stay out of the CSV so its bytes depend only on the config.
    eprintln!(
        "computed {} rows in {} ms",
        rows.len(),
        started.elapsed().as_millis()
    );
    let csv_path = config.output_dir.join("results.csv");
    emit_csv(&rows, &csv_path)?;
    println!("{}", csv_path.display());
    if args.gnuplot {
        let gp_path = config.output_dir.join("results.gp");
        std::fs::write(&gp_path, gnuplot_script(&config)).map_err(|e| Error::Io {
            path: gp_path.display().to_string(),
            source: e,
        })?;
        println!("{}", gp_path.display());
    }
    if args.emit_estimates {
        emit_estimates(&args, &config, replay.as_deref())?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Re-runs the DP rows to serialize their releases. Estimates land under
/// `<output_dir>/estimates/`, one file per (algorithm, m, run); private
/// diagnostics only with --unsafe-diagnostics.
fn emit_estimates(
    args: &RunArgs,
    config: &ExperimentConfig,
    replay: Option<&[Trajectory]>,
) -> Result<(), Error> {
    use dpeval_core::experiments::Algorithm;
    use dpeval_core::rng::derive_seed;

    let dir = config.output_dir.join("estimates");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mdp = build_chain(config.n_states, config.stay_prob, config.gamma)?;
    let n_tr = mdp.n_transient();
    let features = experiments::aggregate_features(n_tr, config.aggregation);
    let budget = config.budget(features.dim())?;
    let w = estimators::EvalWeights::fixed(vec![1.0; n_tr])?;
    let rho = estimators::EvalWeights::regression(vec![1.0; n_tr])?;
    let sampler = TrajectorySampler::new(&mdp);
    let m_values: Vec<usize> = match replay {
        Some(t) => vec![t.len()],
        None => config.m_values.clone(),
    };
    for &alg in &config.algorithms {
        if !alg.is_private() {
            continue;
        }
        for &m in &m_values {
            for run in 0..config.runs {
                let child =
                    derive_seed(config.master_seed, &[alg.seed_id(), m as u64, run as u64]);
                let mut traj_rng = SeedStream::derived(child, &[0]);
                let mut noise_rng = SeedStream::derived(child, &[1]);
                let mut builder = SummaryBuilder::new(n_tr, config.gamma);
                match replay {
                    Some(trajs) => {
                        for x in trajs {
                            builder.add(x);
                        }
                    }
                    None => {
                        for _ in 0..m {
                            builder.add(&sampler.sample(&mut traj_rng)?);
                        }
                    }
                }
                let summary = builder.build()?;
                let est: PrivateEstimate = match alg {
                    Algorithm::DpLsw => dp_lsw_from_summary(
                        &summary,
                        &features,
                        &w,
                        config.gamma,
                        config.r_max,
                        config.f_max,
                        &budget,
                        &mut noise_rng,
                    )?,
                    Algorithm::DpLsl => dp_lsl_from_summary(
                        &summary,
                        &features,
                        &rho,
                        config.lambda_rule.eval(m),
                        config.gamma,
                        config.r_max,
                        config.f_max,
                        &budget,
                        &mut noise_rng,
                    )?,
                    _ => unreachable!(),
                };
                let path = dir.join(format!("{}_m{}_run{}.est", alg.name(), m, run));
                std::fs::write(&path, est.to_text(args.unsafe_diagnostics)).map_err(|e| {
                    Error::Io { path: path.display().to_string(), source: e }
                })?;
            }
        }
    }
    Ok(())
}

fn cmd_exact(args: ExactArgs) -> Result<ExitCode, Error> {
    let mdp = build_chain(args.n, args.p, args.gamma)?;
    let v = exact_values(&mdp)?;
    for (s, value) in v.values.iter().enumerate() {
        println!("{s}\t{value}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_estimate(args: EstimateArgs) -> Result<ExitCode, Error> {
    let mdp = build_chain(args.n, args.p, args.gamma)?;
    let n_tr = mdp.n_transient();
    let features = experiments::aggregate_features(n_tr, args.aggregation);
    let budget = if args.conservative_constants {
        privacy_constants_conservative(args.epsilon, args.delta, features.dim())?
    } else {
        privacy_constants(args.epsilon, args.delta, features.dim())?
    };
    let mut traj_rng = SeedStream::derived(args.seed, &[0]);
    let mut noise_rng = SeedStream::derived(args.seed, &[1]);
    let mut builder = SummaryBuilder::new(n_tr, args.gamma);
    match &args.replay {
        Some(path) => {
            let trajs = load_replay(path)?;
            check_replay(&trajs, path, n_tr, mdp.r_max())?;
            for x in &trajs {
                builder.add(x);
            }
        }
        None => {
            let sampler = TrajectorySampler::new(&mdp);
            for _ in 0..args.m {
                builder.add(&sampler.sample(&mut traj_rng)?);
            }
        }
    }
    let summary = builder.build()?;
    let est = match args.mechanism.as_str() {
        "dp-lsw" => {
            let w = estimators::EvalWeights::fixed(vec![1.0; n_tr])?;
            dp_lsw_from_summary(
                &summary,
                &features,
                &w,
                args.gamma,
                mdp.r_max(),
                args.f_max,
                &budget,
                &mut noise_rng,
            )?
        }
        "dp-lsl" => {
            let rho = estimators::EvalWeights::regression(vec![1.0; n_tr])?;
            let lambda = args
                .lambda
                .ok_or_else(|| Error::InvalidParameter("dp-lsl needs --lambda".into()))?;
            dp_lsl_from_summary(
                &summary,
                &features,
                &rho,
                lambda,
                args.gamma,
                mdp.r_max(),
                args.f_max,
                &budget,
                &mut noise_rng,
            )?
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown mechanism `{other}` (expected dp-lsw or dp-lsl)"
            )))
        }
    };
    let text = est.to_text(args.unsafe_diagnostics);
    match &args.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            println!("{}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
