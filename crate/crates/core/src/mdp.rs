//! Tabular Markov reward process under a fixed policy.
//!
//! Holds the transition and reward matrices, the discount, and the start
//! distribution; provides the chain benchmark generator, an exact value
//! solver, a seeded trajectory sampler, and closed-form visit probabilities
//! for forward chains.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::returns::Trajectory;
use crate::rng::SeedStream;

/// Steps after which sampling aborts; hitting it means the chain does not
/// absorb (e.g. stay probability effectively 1).
pub const STEP_CAP: u64 = 10_000_000;

const ROW_SUM_TOL: f64 = 1e-12;

/// Tabular Markov reward process: `N` states including absorbing terminals,
/// row-stochastic transitions, per-transition rewards in `[0, r_max]`,
/// discount in `(0, 1)`, and a start distribution supported on transient
/// states.
#[derive(Clone, Debug)]
pub struct Mdp {
    n_states: usize,
    transitions: DMatrix<f64>,
    rewards: DMatrix<f64>,
    gamma: f64,
    r_max: f64,
    absorbing: Vec<bool>,
    start_dist: Vec<f64>,
}

impl Mdp {
    pub fn new(
        transitions: DMatrix<f64>,
        rewards: DMatrix<f64>,
        gamma: f64,
        r_max: f64,
        absorbing: Vec<bool>,
        start_dist: Vec<f64>,
    ) -> Result<Self> {
        let n = transitions.nrows();
        if n == 0 || transitions.ncols() != n {
            return Err(Error::InvalidMdp("transition matrix must be square and nonempty".into()));
        }
        if rewards.nrows() != n || rewards.ncols() != n {
            return Err(Error::InvalidMdp("reward matrix shape must match transitions".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma = {gamma} must lie strictly inside (0,1)")));
        }
        if !(r_max >= 0.0) {
            return Err(Error::InvalidMdp(format!("r_max = {r_max} must be nonnegative")));
        }
        if absorbing.len() != n || start_dist.len() != n {
            return Err(Error::InvalidMdp("absorbing/start_dist length must equal n_states".into()));
        }
        for s in 0..n {
            let row_sum: f64 = transitions.row(s).iter().sum();
            if (row_sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidMdp(format!(
                    "transition row {s} sums to {row_sum}, expected 1"
                )));
            }
            for t in 0..n {
                let p = transitions[(s, t)];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidMdp(format!("P({s},{t}) = {p} outside [0,1]")));
                }
                let r = rewards[(s, t)];
                if !(0.0..=r_max).contains(&r) {
                    return Err(Error::InvalidMdp(format!(
                        "reward({s},{t}) = {r} outside [0, {r_max}]"
                    )));
                }
            }
            if absorbing[s] {
                if (transitions[(s, s)] - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "absorbing state {s} must self-loop with probability 1"
                    )));
                }
                if rewards[(s, s)] != 0.0 {
                    return Err(Error::InvalidMdp(format!(
                        "absorbing state {s} must have zero self-reward"
                    )));
                }
            }
        }
        let start_sum: f64 = start_dist.iter().sum();
        if (start_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMdp(format!("start distribution sums to {start_sum}")));
        }
        for s in 0..n {
            if start_dist[s] < 0.0 {
                return Err(Error::InvalidMdp(format!("start_dist[{s}] negative")));
            }
            if absorbing[s] && start_dist[s] != 0.0 {
                return Err(Error::InvalidMdp(format!(
                    "start_dist assigns mass to absorbing state {s}"
                )));
            }
        }
        Ok(Mdp { n_states: n, transitions, rewards, gamma, r_max, absorbing, start_dist })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Number of non-absorbing states.
    pub fn n_transient(&self) -> usize {
        self.absorbing.iter().filter(|&&a| !a).count()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing[s]
    }

    /// Same process with a different start distribution (must respect the
    /// start-distribution invariants).
    pub fn with_start_dist(self, start_dist: Vec<f64>) -> Result<Self> {
        Mdp::new(
            self.transitions,
            self.rewards,
            self.gamma,
            self.r_max,
            self.absorbing,
            start_dist,
        )
    }

    /// Point-mass start on `state`.
    pub fn with_start_state(self, state: usize) -> Result<Self> {
        let mut d = vec![0.0; self.n_states];
        if state >= self.n_states {
            return Err(Error::InvalidMdp(format!("start state {state} out of range")));
        }
        d[state] = 1.0;
        self.with_start_dist(d)
    }
}

/// Chain of `n_states` states: every transient state stays put with
/// probability `stay_prob` and otherwise advances one step right; the last
/// state is absorbing. The single unit reward sits on the transition into
/// the absorbing state, so every return lies in `[0, 1]`. Start distribution
/// defaults to uniform over the transient states.
pub fn build_chain(n_states: usize, stay_prob: f64, gamma: f64) -> Result<Mdp> {
    if n_states < 2 {
        return Err(Error::InvalidParameter(format!("chain needs at least 2 states, got {n_states}")));
    }
    if !(0.0..1.0).contains(&stay_prob) {
        return Err(Error::InvalidParameter(format!(
            "stay_prob = {stay_prob} must lie in [0,1); 1 would never absorb"
        )));
    }
    let n = n_states;
    let mut p = DMatrix::zeros(n, n);
    let mut r = DMatrix::zeros(n, n);
    for s in 0..n - 1 {
        p[(s, s)] = stay_prob;
        p[(s, s + 1)] = 1.0 - stay_prob;
    }
    p[(n - 1, n - 1)] = 1.0;
    r[(n - 2, n - 1)] = 1.0;
    let mut absorbing = vec![false; n];
    absorbing[n - 1] = true;
    let start = vec![1.0 / (n - 1) as f64; n - 1]
        .into_iter()
        .chain(std::iter::once(0.0))
        .collect();
    Mdp::new(p, r, gamma, 1.0, absorbing, start)
}

/// State values, one entry per state; absorbing states carry 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueVector {
    pub values: Vec<f64>,
}

/// Solves `V = r_bar + gamma P V` with absorbing states pinned to zero.
pub fn exact_values(mdp: &Mdp) -> Result<ValueVector> {
    let n = mdp.n_states;
    // a = I - gamma P with absorbing rows replaced by V(s) = 0.
    let mut a = DMatrix::identity(n, n) - mdp.gamma * &mdp.transitions;
    let mut b = DVector::zeros(n);
    for s in 0..n {
        if mdp.absorbing[s] {
            for t in 0..n {
                a[(s, t)] = if s == t { 1.0 } else { 0.0 };
            }
            b[s] = 0.0;
        } else {
            b[s] = (0..n).map(|t| mdp.transitions[(s, t)] * mdp.rewards[(s, t)]).sum();
        }
    }
    let lu = a.lu();
    let v = lu
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("(I - gamma P) is not invertible".into()))?;
    Ok(ValueVector { values: v.iter().copied().collect() })
}

/// Precomputed sparse row distributions for fast repeated sampling from one
/// process. Construction is `O(N^2)`; each step touches only the row's
/// nonzero transitions.
pub struct TrajectorySampler<'a> {
    mdp: &'a Mdp,
    // (cumulative probability, next state, reward) per transition row
    rows: Vec<Vec<(f64, usize, f64)>>,
    start_cdf: Vec<(f64, usize)>,
}

impl<'a> TrajectorySampler<'a> {
    pub fn new(mdp: &'a Mdp) -> Self {
        let n = mdp.n_states;
        let mut rows = Vec::with_capacity(n);
        for s in 0..n {
            let mut cum = 0.0;
            let mut row = Vec::new();
            for t in 0..n {
                let p = mdp.transitions[(s, t)];
                if p > 0.0 {
                    cum += p;
                    row.push((cum, t, mdp.rewards[(s, t)]));
                }
            }
            if let Some(last) = row.last_mut() {
                last.0 = 1.0; // absorb rounding in the final bucket
            }
            rows.push(row);
        }
        let mut start_cdf = Vec::new();
        let mut cum = 0.0;
        for (s, &p) in mdp.start_dist.iter().enumerate() {
            if p > 0.0 {
                cum += p;
                start_cdf.push((cum, s));
            }
        }
        if let Some(last) = start_cdf.last_mut() {
            last.0 = 1.0;
        }
        TrajectorySampler { mdp, rows, start_cdf }
    }

    fn pick<T: Copy>(cdf: &[(f64, T)], u: f64) -> T {
        for &(c, v) in cdf {
            if u <= c {
                return v;
            }
        }
        cdf.last().unwrap().1
    }

    /// Draws one episode: start from the start distribution, step until an
    /// absorbing state is entered. The absorbing state itself is not
    /// recorded; the step that enters it is, with its reward.
    pub fn sample(&self, rng: &mut SeedStream) -> Result<Trajectory> {
        let mut state = Self::pick(&self.start_cdf, rng.uniform());
        let mut steps = Vec::new();
        let mut count: u64 = 0;
        while !self.mdp.absorbing[state] {
            count += 1;
            if count > STEP_CAP {
                return Err(Error::StepCapExceeded { cap: STEP_CAP });
            }
            let (next, reward) = {
                let u = rng.uniform();
                let (_, t, r) = Self::pick_row(&self.rows[state], u);
                (t, r)
            };
            steps.push((state, reward));
            state = next;
        }
        Trajectory::new(steps)
    }

    fn pick_row(cdf: &[(f64, usize, f64)], u: f64) -> (f64, usize, f64) {
        for &entry in cdf {
            if u <= entry.0 {
                return entry;
            }
        }
        *cdf.last().unwrap()
    }
}

/// One-off episode draw; builds a throwaway sampler. Batch callers should
/// hold a [`TrajectorySampler`] instead.
pub fn sample_trajectory(mdp: &Mdp, rng: &mut SeedStream) -> Result<Trajectory> {
    TrajectorySampler::new(mdp).sample(rng)
}

/// Closed-form visit statistics for a forward chain: `p[s]` is the
/// probability a trajectory visits transient state `s`, `p_pair[(s,s')]` the
/// co-visit probability and `p_excl[(s,s')]` the probability of visiting `s`
/// but not `s'`. Vectors and matrices range over transient states only.
#[derive(Clone, Debug)]
pub struct VisitStats {
    pub p: Vec<f64>,
    pub p_pair: DMatrix<f64>,
    pub p_excl: DMatrix<f64>,
}

/// Visit probabilities for a forward-only chain under its start
/// distribution. Rejects any other transition structure; general processes
/// are estimated by Monte Carlo in the oracle module instead.
pub fn visit_probabilities(mdp: &Mdp) -> Result<VisitStats> {
    let n = mdp.n_states;
    let n_tr = n - 1;
    // Structure check: last state absorbing, the rest forward-only.
    if !mdp.absorbing[n - 1] || mdp.absorbing[..n - 1].iter().any(|&a| a) {
        return Err(Error::NotAChain("expected exactly the last state absorbing".into()));
    }
    for s in 0..n_tr {
        for t in 0..n {
            let p = mdp.transitions[(s, t)];
            if p > 0.0 && t != s && t != s + 1 {
                return Err(Error::NotAChain(format!(
                    "state {s} has transition mass on {t}, not a forward chain"
                )));
            }
        }
        if mdp.transitions[(s, s + 1)] <= 0.0 {
            return Err(Error::NotAChain(format!("state {s} never advances")));
        }
    }
    // Visiting s means starting at or before s.
    let mut p = vec![0.0; n_tr];
    let mut cum = 0.0;
    for s in 0..n_tr {
        cum += mdp.start_dist[s];
        p[s] = cum;
    }
    let mut p_pair = DMatrix::zeros(n_tr, n_tr);
    let mut p_excl = DMatrix::zeros(n_tr, n_tr);
    for s in 0..n_tr {
        for t in 0..n_tr {
            p_pair[(s, t)] = p[s].min(p[t]);
            p_excl[(s, t)] = (p[s] - p[t]).max(0.0);
        }
    }
    Ok(VisitStats { p, p_pair, p_excl })
}
