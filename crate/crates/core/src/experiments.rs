//! Reproducible experiment harness for the chain benchmark.
//!
//! A config names the environment, the privacy parameters, the algorithms,
//! the batch sizes, and a master seed. Each `(algorithm, m, run)` row gets a
//! child seed derived from the master by a fixed mixing scheme, samples its
//! own batch, fits, and reports RMSE against the exact values plus the
//! excess empirical risk of the private release under its own objective.
//! Rows are computed independently (optionally in parallel) and sorted
//! before emission, so the CSV is a pure function of the config: identical
//! bytes for any thread count. For the same reason the `wall_ms` column is
//! pinned to zero; actual timings go to stderr, not into the artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    empirical_risk_lambda, empirical_risk_w, solve_lsl, solve_lsw, EvalWeights, FeatureMap,
};
use crate::mdp::{build_chain, exact_values, visit_probabilities, Mdp, TrajectorySampler};
use crate::mechanism::{dp_lsl_from_summary, dp_lsw_from_summary};
use crate::returns::{DatasetSummary, SummaryBuilder, Trajectory};
use crate::rng::{derive_seed, SeedStream};
use crate::sensitivity::{privacy_constants, privacy_constants_conservative, PrivacyBudget};

/// Algorithms the harness can run. The numeric ids feed seed derivation and
/// never change, so adding algorithms cannot shift existing rows'
/// randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algorithm {
    Lsw,
    DpLsw,
    Lsl,
    DpLsl,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Lsw => "lsw",
            Algorithm::DpLsw => "dp-lsw",
            Algorithm::Lsl => "lsl",
            Algorithm::DpLsl => "dp-lsl",
        }
    }

    pub fn seed_id(&self) -> u64 {
        match self {
            Algorithm::Lsw => 1,
            Algorithm::DpLsw => 2,
            Algorithm::Lsl => 3,
            Algorithm::DpLsl => 4,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "lsw" => Ok(Algorithm::Lsw),
            "dp-lsw" => Ok(Algorithm::DpLsw),
            "lsl" => Ok(Algorithm::Lsl),
            "dp-lsl" => Ok(Algorithm::DpLsl),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }

    pub fn is_private(&self) -> bool {
        matches!(self, Algorithm::DpLsw | Algorithm::DpLsl)
    }

    pub fn is_ridge(&self) -> bool {
        matches!(self, Algorithm::Lsl | Algorithm::DpLsl)
    }
}

/// Regularization schedule as a function of the batch size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaRule {
    Constant(f64),
    Sqrt(f64),
    Linear(f64),
}

impl LambdaRule {
    pub fn eval(&self, m: usize) -> f64 {
        match *self {
            LambdaRule::Constant(c) => c,
            LambdaRule::Sqrt(c) => c * (m as f64).sqrt(),
            LambdaRule::Linear(c) => c * m as f64,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = text.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let coeff: f64 = match parts.next() {
            Some(tok) => tok
                .parse()
                .map_err(|_| Error::Config(format!("bad lambda coefficient `{tok}`")))?,
            None => 1.0,
        };
        match kind {
            "constant" => Ok(LambdaRule::Constant(coeff)),
            "sqrt" => Ok(LambdaRule::Sqrt(coeff)),
            "linear" => Ok(LambdaRule::Linear(coeff)),
            other => Err(Error::Config(format!("unknown lambda rule `{other}`"))),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            LambdaRule::Constant(c) => format!("constant {c}"),
            LambdaRule::Sqrt(c) => format!("sqrt {c}"),
            LambdaRule::Linear(c) => format!("linear {c}"),
        }
    }
}

/// Fixed-weight rule: all ones, or the chain's true visit probabilities
/// `w_s = rho_s p_s` (which needs no private data — the chain is public).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WRule {
    Ones,
    TrueVisit,
}

impl WRule {
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "ones" => Ok(WRule::Ones),
            "true_visit" => Ok(WRule::TrueVisit),
            other => Err(Error::Config(format!("unknown w rule `{other}`"))),
        }
    }

    pub fn to_text(&self) -> &'static str {
        match self {
            WRule::Ones => "ones",
            WRule::TrueVisit => "true_visit",
        }
    }
}

/// Regression-weight rule; only all-ones is in scope.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhoRule {
    Ones,
}

impl RhoRule {
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "ones" => Ok(RhoRule::Ones),
            other => Err(Error::Config(format!("unknown rho rule `{other}`"))),
        }
    }
}

/// Full description of one experiment sweep.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub n_states: usize,
    pub stay_prob: f64,
    pub gamma: f64,
    pub r_max: f64,
    pub f_max: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub algorithms: Vec<Algorithm>,
    pub m_values: Vec<usize>,
    pub lambda_rule: LambdaRule,
    pub w_rule: WRule,
    pub rho_rule: RhoRule,
    pub aggregation: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub conservative_constants: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_states: 40,
            stay_prob: 0.5,
            gamma: 0.99,
            r_max: 1.0,
            f_max: Some(1.0),
            epsilon: 0.1,
            delta: 0.1,
            algorithms: vec![Algorithm::Lsw, Algorithm::DpLsw, Algorithm::Lsl, Algorithm::DpLsl],
            m_values: vec![100, 1000, 10_000, 100_000],
            lambda_rule: LambdaRule::Sqrt(1.0),
            w_rule: WRule::Ones,
            rho_rule: RhoRule::Ones,
            aggregation: 1,
            runs: 20,
            master_seed: 1,
            output_dir: PathBuf::from("out"),
            conservative_constants: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.m_values.is_empty() {
            return Err(Error::Config("m_values must be nonempty".into()));
        }
        if !self.m_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("m_values must be strictly increasing".into()));
        }
        if self.aggregation < 1 {
            return Err(Error::Config("aggregation group size must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("algorithms must be nonempty".into()));
        }
        Ok(())
    }

    /// Parses the key-value config format: `key = value` lines, `#`
    /// comments, keys mirroring the struct fields.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: bad {what} `{value}`", lineno + 1));
            match key {
                "n_states" => cfg.n_states = value.parse().map_err(|_| bad("n_states"))?,
                "stay_prob" => cfg.stay_prob = value.parse().map_err(|_| bad("stay_prob"))?,
                "gamma" => cfg.gamma = value.parse().map_err(|_| bad("gamma"))?,
                "r_max" => cfg.r_max = value.parse().map_err(|_| bad("r_max"))?,
                "f_max" => {
                    cfg.f_max = if value == "default" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad("f_max"))?)
                    }
                }
                "epsilon" => cfg.epsilon = value.parse().map_err(|_| bad("epsilon"))?,
                "delta" => cfg.delta = value.parse().map_err(|_| bad("delta"))?,
                "algorithms" => {
                    cfg.algorithms = value
                        .split(',')
                        .map(Algorithm::parse)
                        .collect::<Result<Vec<_>>>()?;
                }
                "m_values" => {
                    cfg.m_values = value
                        .split(',')
                        .map(|tok| tok.trim().parse::<usize>().map_err(|_| bad("m value")))
                        .collect::<Result<Vec<_>>>()?;
                }
                "lambda_rule" => cfg.lambda_rule = LambdaRule::parse(value)?,
                "w_rule" => cfg.w_rule = WRule::parse(value)?,
                "rho_rule" => cfg.rho_rule = RhoRule::parse(value)?,
                "aggregation" => cfg.aggregation = value.parse().map_err(|_| bad("aggregation"))?,
                "runs" => cfg.runs = value.parse().map_err(|_| bad("runs"))?,
                "master_seed" => cfg.master_seed = value.parse().map_err(|_| bad("master_seed"))?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "conservative_constants" => {
                    cfg.conservative_constants = value.parse().map_err(|_| bad("flag"))?
                }
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn budget(&self, d: usize) -> Result<PrivacyBudget> {
        if self.conservative_constants {
            privacy_constants_conservative(self.epsilon, self.delta, d)
        } else {
            privacy_constants(self.epsilon, self.delta, d)
        }
    }
}

/// State-aggregation features over the transient states: row `s` has a
/// single 1 in column `s / group`, giving `ceil(n_transient/group)` columns;
/// `group = 1` is the tabular identity. The last group may be smaller when
/// `group` does not divide the state count.
pub fn aggregate_features(n_transient: usize, group: usize) -> FeatureMap {
    assert!(group >= 1, "group size must be at least 1");
    let d = n_transient.div_ceil(group);
    let mut phi = DMatrix::zeros(n_transient, d);
    for s in 0..n_transient {
        phi[(s, s / group)] = 1.0;
    }
    FeatureMap::new(phi).expect("indicator features are always valid")
}

/// Root mean squared error of `Phi theta` against the exact values over the
/// transient states.
pub fn rmse(theta: &DVector<f64>, features: &FeatureMap, exact_transient: &[f64]) -> f64 {
    assert_eq!(features.n_states(), exact_transient.len());
    let pred = features.predict(theta);
    let sq: f64 = exact_transient
        .iter()
        .zip(pred.iter())
        .map(|(&v, &p)| (p - v) * (p - v))
        .sum();
    (sq / exact_transient.len() as f64).sqrt()
}

/// Row identity within one `(algorithm, m)` cell: a run index or one of the
/// two appended summary statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunField {
    Index(u32),
    Mean,
    StdErr,
}

impl RunField {
    fn to_text(self) -> String {
        match self {
            RunField::Index(i) => i.to_string(),
            RunField::Mean => "mean".into(),
            RunField::StdErr => "se".into(),
        }
    }

    fn parse(text: &str) -> Result<Self> {
        match text {
            "mean" => Ok(RunField::Mean),
            "se" => Ok(RunField::StdErr),
            other => other
                .parse::<u32>()
                .map(RunField::Index)
                .map_err(|_| Error::Config(format!("bad run field `{other}`"))),
        }
    }
}

/// One emitted result line.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub algorithm: String,
    pub m: usize,
    pub lambda: Option<f64>,
    pub run: RunField,
    pub seed: Option<u64>,
    pub rmse: Option<f64>,
    pub excess_risk: Option<f64>,
    pub sigma: Option<f64>,
    pub wall_ms: u64,
    pub error: Option<String>,
}

pub const CSV_HEADER: &str = "algorithm,m,lambda,run,seed,rmse,excess_risk,sigma,wall_ms,error";

fn fmt_float(x: f64) -> String {
    // 12 significant digits.
    format!("{x:.11e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn parse_opt(tok: &str) -> Result<Option<f64>> {
    if tok.is_empty() {
        return Ok(None);
    }
    tok.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Config(format!("bad float `{tok}`")))
}

/// Renders rows as CSV (LF line endings, floats at 12 significant digits).
pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.algorithm,
            r.m,
            fmt_opt(r.lambda),
            r.run.to_text(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            fmt_opt(r.rmse),
            fmt_opt(r.excess_risk),
            fmt_opt(r.sigma),
            r.wall_ms,
            r.error.as_deref().unwrap_or(""),
        );
    }
    out
}

/// Writes the CSV to `path`, creating parent directories.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    std::fs::write(path, csv_string(rows)).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Parses a CSV produced by [`csv_string`] back into rows.
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::Config(format!("bad csv header: {other:?}"))),
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.splitn(10, ',').collect();
        if f.len() != 10 {
            return Err(Error::Config(format!("bad csv row `{line}`")));
        }
        rows.push(ResultRow {
            algorithm: f[0].to_string(),
            m: f[1].parse().map_err(|_| Error::Config(format!("bad m `{}`", f[1])))?,
            lambda: parse_opt(f[2])?,
            run: RunField::parse(f[3])?,
            seed: if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().map_err(|_| Error::Config(format!("bad seed `{}`", f[4])))?)
            },
            rmse: parse_opt(f[5])?,
            excess_risk: parse_opt(f[6])?,
            sigma: parse_opt(f[7])?,
            wall_ms: f[8].parse().map_err(|_| Error::Config(format!("bad wall_ms `{}`", f[8])))?,
            error: if f[9].is_empty() { None } else { Some(f[9].to_string()) },
        });
    }
    Ok(rows)
}

struct Workspace {
    mdp: Mdp,
    features: FeatureMap,
    exact_transient: Vec<f64>,
    w: EvalWeights,
    rho: EvalWeights,
    budget: PrivacyBudget,
}

fn prepare(config: &ExperimentConfig) -> Result<Workspace> {
    config.validate()?;
    let mdp = build_chain(config.n_states, config.stay_prob, config.gamma)?;
    if config.r_max < mdp.r_max() {
        // A declared bound below the real rewards would invalidate the
        // noise calibration.
        return Err(Error::Config(format!(
            "r_max = {} is below the chain's reward bound {}",
            config.r_max,
            mdp.r_max()
        )));
    }
    let n_tr = mdp.n_transient();
    let features = aggregate_features(n_tr, config.aggregation);
    let exact = exact_values(&mdp)?;
    let exact_transient = exact.values[..n_tr].to_vec();
    let w = match config.w_rule {
        WRule::Ones => EvalWeights::fixed(vec![1.0; n_tr])?,
        WRule::TrueVisit => {
            let stats = visit_probabilities(&mdp)?;
            EvalWeights::fixed(stats.p)?
        }
    };
    let rho = match config.rho_rule {
        RhoRule::Ones => EvalWeights::regression(vec![1.0; n_tr])?,
    };
    let budget = config.budget(features.dim())?;
    Ok(Workspace { mdp, features, exact_transient, w, rho, budget })
}

fn summarize_batch(
    ws: &Workspace,
    m: usize,
    replay: Option<&[Trajectory]>,
    rng: &mut SeedStream,
) -> Result<DatasetSummary> {
    let n_tr = ws.features.n_states();
    let mut builder = SummaryBuilder::new(n_tr, ws.mdp.gamma());
    match replay {
        Some(trajectories) => {
            for x in trajectories {
                if x.max_state() >= n_tr {
                    return Err(Error::InvalidParameter(format!(
                        "replay trajectory visits state {} outside the transient range 0..{n_tr}",
                        x.max_state()
                    )));
                }
                if x.max_reward() > ws.mdp.r_max() {
                    return Err(Error::InvalidParameter(format!(
                        "replay reward {} exceeds r_max {}",
                        x.max_reward(),
                        ws.mdp.r_max()
                    )));
                }
                builder.add(x);
            }
        }
        None => {
            let sampler = TrajectorySampler::new(&ws.mdp);
            for _ in 0..m {
                builder.add(&sampler.sample(rng)?);
            }
        }
    }
    builder.build()
}

fn run_row(
    config: &ExperimentConfig,
    ws: &Workspace,
    algorithm: Algorithm,
    m: usize,
    run: u32,
    replay: Option<&[Trajectory]>,
) -> ResultRow {
    let child = derive_seed(config.master_seed, &[algorithm.seed_id(), m as u64, run as u64]);
    let lambda = algorithm.is_ridge().then(|| config.lambda_rule.eval(m));
    let mut row = ResultRow {
        algorithm: algorithm.name().to_string(),
        m,
        lambda,
        run: RunField::Index(run),
        seed: Some(child),
        rmse: None,
        excess_risk: None,
        sigma: None,
        wall_ms: 0,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let mut traj_rng = SeedStream::derived(child, &[0]);
        let mut noise_rng = SeedStream::derived(child, &[1]);
        let summary = summarize_batch(ws, m, replay, &mut traj_rng)?;
        match algorithm {
            Algorithm::Lsw => {
                let theta = solve_lsw(&summary, &ws.features, &ws.w)?;
                row.rmse = Some(rmse(&theta, &ws.features, &ws.exact_transient));
                row.excess_risk = Some(0.0);
            }
            Algorithm::Lsl => {
                let lambda = lambda.unwrap();
                let theta = solve_lsl(&summary, &ws.features, &ws.rho, lambda)?;
                row.rmse = Some(rmse(&theta, &ws.features, &ws.exact_transient));
                row.excess_risk = Some(0.0);
            }
            Algorithm::DpLsw => {
                let est = dp_lsw_from_summary(
                    &summary,
                    &ws.features,
                    &ws.w,
                    ws.mdp.gamma(),
                    config.r_max,
                    config.f_max,
                    &ws.budget,
                    &mut noise_rng,
                )?;
                row.rmse = Some(rmse(&est.theta_hat, &ws.features, &ws.exact_transient));
                let j_hat = empirical_risk_w(&est.theta_hat, &summary, &ws.features, &ws.w)?;
                let j_opt = empirical_risk_w(&est.theta, &summary, &ws.features, &ws.w)?;
                row.excess_risk = Some(j_hat - j_opt);
                row.sigma = Some(est.sigma);
            }
            Algorithm::DpLsl => {
                let lambda = lambda.unwrap();
                let est = dp_lsl_from_summary(
                    &summary,
                    &ws.features,
                    &ws.rho,
                    lambda,
                    ws.mdp.gamma(),
                    config.r_max,
                    config.f_max,
                    &ws.budget,
                    &mut noise_rng,
                )?;
                row.rmse = Some(rmse(&est.theta_hat, &ws.features, &ws.exact_transient));
                let j_hat =
                    empirical_risk_lambda(&est.theta_hat, &summary, &ws.features, &ws.rho, lambda)?;
                let j_opt =
                    empirical_risk_lambda(&est.theta, &summary, &ws.features, &ws.rho, lambda)?;
                row.excess_risk = Some(j_hat - j_opt);
                row.sigma = Some(est.sigma);
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        // Error text joins the CSV row; keep it comma-free.
        row.error = Some(e.to_string().replace(',', ";"));
    }
    row
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the sweep described by `config`. With `replay` the sampled batch is
/// replaced by the given trajectories for every row (and `m` is pinned to
/// the replay size). `threads` caps the worker pool; `None` uses the global
/// default. Rows are returned sorted by `(algorithm, m, run)` with the
/// per-cell mean and standard-error summary rows appended after the runs.
pub fn run_experiment(
    config: &ExperimentConfig,
    replay: Option<&[Trajectory]>,
    threads: Option<usize>,
) -> Result<Vec<ResultRow>> {
    let ws = prepare(config)?;
    let m_values: Vec<usize> = match replay {
        Some(trajs) => {
            if trajs.is_empty() {
                return Err(Error::InvalidParameter("replay dataset is empty".into()));
            }
            vec![trajs.len()]
        }
        None => config.m_values.clone(),
    };
    let mut cells: Vec<(Algorithm, usize, u32)> = Vec::new();
    for &alg in &config.algorithms {
        for &m in &m_values {
            for run in 0..config.runs {
                cells.push((alg, m, run as u32));
            }
        }
    }
    let compute = |cell: &(Algorithm, usize, u32)| run_row(config, &ws, cell.0, cell.1, cell.2, replay);
    let mut rows: Vec<ResultRow> = match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| cells.par_iter().map(compute).collect())
        }
        None => cells.par_iter().map(compute).collect(),
    };

    // Summary rows per (algorithm, m) over the non-error runs.
    let mut summaries = Vec::new();
    for &alg in &config.algorithms {
        for &m in &m_values {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.algorithm == alg.name() && r.m == m && r.error.is_none())
                .collect();
            let rmses: Vec<f64> = cell.iter().filter_map(|r| r.rmse).collect();
            let excesses: Vec<f64> = cell.iter().filter_map(|r| r.excess_risk).collect();
            let (rm, rs) = mean_and_se(&rmses);
            let (em, es) = mean_and_se(&excesses);
            let lambda = alg.is_ridge().then(|| config.lambda_rule.eval(m));
            for (field, r, e) in [(RunField::Mean, rm, em), (RunField::StdErr, rs, es)] {
                summaries.push(ResultRow {
                    algorithm: alg.name().to_string(),
                    m,
                    lambda,
                    run: field,
                    seed: None,
                    rmse: Some(r),
                    excess_risk: Some(e),
                    sigma: None,
                    wall_ms: 0,
                    error: None,
                });
            }
        }
    }
    rows.extend(summaries);
    rows.sort_by(|a, b| {
        (a.algorithm.as_str(), a.m, a.run).cmp(&(b.algorithm.as_str(), b.m, b.run))
    });
    Ok(rows)
}

/// Gnuplot script plotting mean RMSE against batch size from the emitted
/// CSV; companion to `results.csv`, entirely optional.
pub fn gnuplot_script(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    out.push_str("set datafile separator ','\n");
    out.push_str("set logscale xy\n");
    out.push_str("set xlabel 'batch size m'\n");
    out.push_str("set ylabel 'mean RMSE'\n");
    out.push_str("set key left bottom\n");
    out.push_str("plot \\\n");
    let mut first = true;
    for alg in &config.algorithms {
        if !first {
            out.push_str(", \\\n");
        }
        first = false;
        let _ = write!(
            out,
            "  '< grep \",mean,\" results.csv | grep \"^{0},\"' using 2:6 with linespoints title '{0}'",
            alg.name()
        );
    }
    out.push('\n');
    out
}
