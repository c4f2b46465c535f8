//! First-visit Monte Carlo returns and dataset aggregation.
//!
//! A [`Trajectory`] is an ordered list of `(state, reward)` steps. A dataset
//! of `m` trajectories is summarized by the per-state averaged first-visit
//! returns `F_X`, the visit-count [`Signature`], and the retained
//! per-trajectory first-visit maps (the ridge objective is evaluated per
//! trajectory, not from the averages). Neighboring datasets differ only in
//! their last trajectory.

use crate::error::{Error, Result};

/// Ordered `(state, reward)` steps of one episode. Rewards are nonnegative;
/// the caller enforces any upper bound `r_max` it knows about.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    steps: Vec<(usize, f64)>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidParameter("trajectory must be nonempty".into()));
        }
        for &(_, r) in &steps {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "trajectory reward {r} must be finite and nonnegative"
                )));
            }
        }
        Ok(Trajectory { steps })
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: nonempty
    }

    pub fn max_state(&self) -> usize {
        self.steps.iter().map(|&(s, _)| s).max().unwrap()
    }

    pub fn max_reward(&self) -> f64 {
        self.steps.iter().map(|&(_, r)| r).fold(0.0, f64::max)
    }
}

/// Sparse map from visited state to its first-visit return, in first-visit
/// order.
pub type FirstVisitMap = Vec<(usize, f64)>;

/// Discounted return from the first visit of each state in `x`.
///
/// `F_{x,s} = sum_{t >= tau(s)} r_t gamma^{t - tau(s)}` where `tau(s)` is the
/// first time `x` visits `s`. States never visited are absent.
pub fn first_visit_returns(x: &Trajectory, gamma: f64) -> FirstVisitMap {
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
    let steps = x.steps();
    // Suffix sums: g[t] = r_t + gamma * g[t+1].
    let mut g = vec![0.0; steps.len()];
    let mut acc = 0.0;
    for (t, &(_, r)) in steps.iter().enumerate().rev() {
        acc = r + gamma * acc;
        g[t] = acc;
    }
    let mut out: FirstVisitMap = Vec::new();
    for (t, &(s, _)) in steps.iter().enumerate() {
        if !out.iter().any(|&(seen, _)| seen == s) {
            out.push((s, g[t]));
        }
    }
    out
}

/// Ordered collection of `m >= 1` trajectories. The neighbor relation
/// replaces the last element only.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InvalidParameter("dataset must contain at least one trajectory".into()));
        }
        Ok(TrajectoryDataset { trajectories })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Neighbor under the replace-last relation: same size, last trajectory
    /// swapped for `replacement`.
    pub fn neighbor_replace_last(&self, replacement: Trajectory) -> TrajectoryDataset {
        let mut trajectories = self.trajectories.clone();
        *trajectories.last_mut().unwrap() = replacement;
        TrajectoryDataset { trajectories }
    }
}

/// Per-state count of trajectories that visit the state, `|X_s|`, plus the
/// dataset size `m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub counts: Vec<usize>,
    pub m: usize,
}

impl Signature {
    /// Largest per-state count `K_X`; 0 for an all-unvisited signature.
    pub fn k_max(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Infinity-norm distance between two signatures over the same states.
    pub fn linf_distance(&self, other: &Signature) -> usize {
        assert_eq!(self.counts.len(), other.counts.len());
        self.counts
            .iter()
            .zip(&other.counts)
            .map(|(&a, &b)| a.abs_diff(b))
            .max()
            .unwrap_or(0)
    }
}

/// Sufficient statistics of a dataset: averaged first-visit returns `F_X`,
/// signature, and the retained per-trajectory first-visit maps.
#[derive(Clone, Debug)]
pub struct DatasetSummary {
    pub f_x: Vec<f64>,
    pub signature: Signature,
    pub per_trajectory: Vec<FirstVisitMap>,
}

impl DatasetSummary {
    pub fn n_states(&self) -> usize {
        self.f_x.len()
    }

    pub fn m(&self) -> usize {
        self.signature.m
    }
}

/// Incremental aggregation; the experiment harness folds trajectories into
/// this as they are sampled so the raw dataset never has to be materialized.
pub struct SummaryBuilder {
    gamma: f64,
    sums: Vec<f64>,
    counts: Vec<usize>,
    per_trajectory: Vec<FirstVisitMap>,
}

impl SummaryBuilder {
    pub fn new(n_states: usize, gamma: f64) -> Self {
        assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
        SummaryBuilder {
            gamma,
            sums: vec![0.0; n_states],
            counts: vec![0; n_states],
            per_trajectory: Vec::new(),
        }
    }

    pub fn add(&mut self, x: &Trajectory) {
        let fv = first_visit_returns(x, self.gamma);
        for &(s, f) in &fv {
            assert!(s < self.sums.len(), "state {s} out of range");
            self.sums[s] += f;
            self.counts[s] += 1;
        }
        self.per_trajectory.push(fv);
    }

    pub fn build(self) -> Result<DatasetSummary> {
        let m = self.per_trajectory.len();
        if m == 0 {
            return Err(Error::InvalidParameter("summary needs at least one trajectory".into()));
        }
        let f_x = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        Ok(DatasetSummary {
            f_x,
            signature: Signature { counts: self.counts, m },
            per_trajectory: self.per_trajectory,
        })
    }
}

/// Aggregates a dataset into its summary over states `0..n_states`.
///
/// `f_x(s)` is the mean first-visit return over trajectories visiting `s`
/// (0 when none does), and `signature.counts(s)` the number of visiting
/// trajectories.
pub fn aggregate(dataset: &TrajectoryDataset, gamma: f64, n_states: usize) -> Result<DatasetSummary> {
    let mut builder = SummaryBuilder::new(n_states, gamma);
    for x in dataset.trajectories() {
        if x.max_state() >= n_states {
            return Err(Error::InvalidParameter(format!(
                "trajectory visits state {} outside 0..{n_states}",
                x.max_state()
            )));
        }
        builder.add(x);
    }
    builder.build()
}

/// Parses the line-oriented trajectory batch format: one trajectory per
/// line, `state:reward` pairs separated by whitespace, `#` starts a comment
/// line, blank lines are skipped. States are 0-indexed.
pub fn parse_trajectory_file(text: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut steps = Vec::new();
        for tok in line.split_whitespace() {
            let (s, r) = tok.split_once(':').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: token `{tok}` is not state:reward", lineno + 1))
            })?;
            let state: usize = s.parse().map_err(|_| {
                Error::InvalidParameter(format!("line {}: bad state `{s}`", lineno + 1))
            })?;
            let reward: f64 = r.parse().map_err(|_| {
                Error::InvalidParameter(format!("line {}: bad reward `{r}`", lineno + 1))
            })?;
            steps.push((state, reward));
        }
        out.push(Trajectory::new(steps).map_err(|e| {
            Error::InvalidParameter(format!("line {}: {e}", lineno + 1))
        })?);
    }
    Ok(out)
}

/// Writes trajectories in the batch file format parsed by
/// [`parse_trajectory_file`].
pub fn write_trajectory_file(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for x in trajectories {
        let line: Vec<String> = x.steps().iter().map(|(s, r)| format!("{s}:{r}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
