//! Brute-force verification oracles.
//!
//! Nothing here is used by the mechanisms themselves. These functions check
//! the analytic claims the noise calibration rests on, numerically and
//! independently: local sensitivity against its closed-form bounds by
//! enumerating whole neighbor pools, beta-smoothness of the noise scales,
//! the exact noise-expectation identities, the utility bounds, and the
//! technical binomial/maximization lemmas. Oracle assertion failures are
//! test failures, not recoverable states.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimators::{
    empirical_risk_lambda, empirical_risk_w, feature_norms, solve_lsl, solve_lsw, EvalWeights,
    FeatureMap,
};
use crate::mdp::{Mdp, TrajectorySampler, VisitStats};
use crate::returns::{aggregate, DatasetSummary, Signature, Trajectory, TrajectoryDataset};
use crate::rng::SeedStream;
use crate::sensitivity::{
    phi_lambda, phi_w, resolve_f_max, smooth_bound_lambda, smooth_bound_w, PrivacyBudget,
};

/// Hard cap on enumerated pools.
pub const POOL_CAP: usize = 10_000;

/// Absolute slack for comparisons on the log scale. `ln psi` carries a few
/// ulps of error proportional to its own magnitude (order 10), so the
/// difference of two logs can sit ~1e-15 past an exact bound; 1e-12 covers
/// that while staying eight orders of magnitude below any meaningful beta.
pub const LN_SCALE_SLACK: f64 = 1e-12;

/// A base dataset together with every candidate replacement for its last
/// trajectory. All datasets in the pool (the base and each replacement) are
/// pairwise neighbors of one another.
#[derive(Clone, Debug)]
pub struct NeighborPool {
    pub base: TrajectoryDataset,
    pub alternatives: Vec<Trajectory>,
}

impl NeighborPool {
    pub fn new(base: TrajectoryDataset, alternatives: Vec<Trajectory>) -> Result<Self> {
        if alternatives.len() > POOL_CAP {
            return Err(Error::PoolTooLarge { size: alternatives.len(), cap: POOL_CAP });
        }
        Ok(NeighborPool { base, alternatives })
    }

    /// Exhaustive pool: every state sequence over `0..n_states` of length
    /// `1..=max_len`, crossed with every reward pattern from `rewards`.
    pub fn enumerate(
        base: TrajectoryDataset,
        n_states: usize,
        max_len: usize,
        rewards: &[f64],
    ) -> Result<Self> {
        let per_step = n_states * rewards.len();
        let mut total = 0usize;
        let mut pow = 1usize;
        for _ in 0..max_len {
            pow = pow.saturating_mul(per_step);
            total = total.saturating_add(pow);
        }
        if total > POOL_CAP {
            return Err(Error::PoolTooLarge { size: total, cap: POOL_CAP });
        }
        let mut alternatives = Vec::with_capacity(total);
        for len in 1..=max_len {
            let mut idx = vec![0usize; len];
            loop {
                let steps: Vec<(usize, f64)> = idx
                    .iter()
                    .map(|&i| (i / rewards.len(), rewards[i % rewards.len()]))
                    .collect();
                alternatives.push(Trajectory::new(steps)?);
                // odometer increment
                let mut pos = 0;
                loop {
                    if pos == len {
                        break;
                    }
                    idx[pos] += 1;
                    if idx[pos] < per_step {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == len {
                    break;
                }
            }
        }
        NeighborPool::new(base, alternatives)
    }

    /// Every dataset in the pool: the base first, then each replacement.
    pub fn datasets(&self) -> Vec<TrajectoryDataset> {
        let mut out = Vec::with_capacity(self.alternatives.len() + 1);
        out.push(self.base.clone());
        for alt in &self.alternatives {
            out.push(self.base.neighbor_replace_last(alt.clone()));
        }
        out
    }
}

/// Which solver a sensitivity oracle exercises.
#[derive(Clone, Debug)]
pub enum SolverSpec {
    Lsw { w: EvalWeights },
    Lsl { rho: EvalWeights, lambda: f64 },
}

/// Outcome of one local-sensitivity enumeration.
#[derive(Clone, Copy, Debug)]
pub struct SensitivityOracleReport {
    /// Largest observed `||theta_X - theta_X'||_2` over the pool.
    pub observed_max: f64,
    /// Closed-form bound evaluated at the base signature.
    pub bound: f64,
    pub n_alternatives: usize,
}

/// Corollary-form local sensitivity bound for the base dataset of the given
/// solver: everything on the right-hand side depends on the data only
/// through the signature.
pub fn corollary_bound(
    solver: &SolverSpec,
    signature: &Signature,
    features: &FeatureMap,
    gamma: f64,
    r_max: f64,
) -> Result<f64> {
    let f_bound = resolve_f_max(r_max, gamma, None)?;
    match solver {
        SolverSpec::Lsw { w } => {
            let norms = feature_norms(features, w)?;
            Ok(f_bound * norms.pinv_norm * phi_w(signature, w.values(), 0).sqrt())
        }
        SolverSpec::Lsl { rho, lambda } => {
            let op = features.op_norm();
            let threshold = op * op * rho.linf();
            if !(*lambda > threshold) {
                return Err(Error::InvalidRegularization { lambda: *lambda, threshold });
            }
            let phi0 = phi_lambda(signature, rho.values(), 0, *lambda, op);
            Ok(2.0 * r_max * op / ((1.0 - gamma) * (lambda - threshold)) * phi0.sqrt())
        }
    }
}

fn solve(solver: &SolverSpec, summary: &DatasetSummary, features: &FeatureMap) -> Result<DVector<f64>> {
    match solver {
        SolverSpec::Lsw { w } => solve_lsw(summary, features, w),
        SolverSpec::Lsl { rho, lambda } => solve_lsl(summary, features, rho, *lambda),
    }
}

/// Enumerates the pool, solves every neighbor, and asserts the observed
/// local sensitivity never exceeds the closed-form bound (with 1e-9
/// relative slack for floating point).
pub fn local_sensitivity_oracle(
    pool: &NeighborPool,
    solver: &SolverSpec,
    features: &FeatureMap,
    gamma: f64,
    r_max: f64,
) -> Result<SensitivityOracleReport> {
    if pool.alternatives.len() > POOL_CAP {
        return Err(Error::PoolTooLarge { size: pool.alternatives.len(), cap: POOL_CAP });
    }
    let n = features.n_states();
    let base_summary = aggregate(&pool.base, gamma, n)?;
    let theta_base = solve(solver, &base_summary, features)?;
    let bound = corollary_bound(solver, &base_summary.signature, features, gamma, r_max)?;
    let mut observed_max = 0.0f64;
    for alt in &pool.alternatives {
        let neighbor = pool.base.neighbor_replace_last(alt.clone());
        let summary = aggregate(&neighbor, gamma, n)?;
        let theta = solve(solver, &summary, features)?;
        observed_max = observed_max.max((&theta_base - &theta).norm());
    }
    assert!(
        observed_max <= bound * (1.0 + 1e-9),
        "local sensitivity {observed_max} exceeds corollary bound {bound}"
    );
    Ok(SensitivityOracleReport {
        observed_max,
        bound,
        n_alternatives: pool.alternatives.len(),
    })
}

/// Per-dataset quantities needed for the pairwise calibration checks.
#[derive(Clone, Debug)]
pub struct PoolPoint {
    pub theta: DVector<f64>,
    pub sigma: f64,
    pub corollary_bound: f64,
}

/// Solves and calibrates every dataset in the pool with the mechanism
/// matching `solver`.
#[allow(clippy::too_many_arguments)]
pub fn pool_points(
    pool: &NeighborPool,
    solver: &SolverSpec,
    features: &FeatureMap,
    gamma: f64,
    r_max: f64,
    f_max: Option<f64>,
    budget: &PrivacyBudget,
) -> Result<Vec<PoolPoint>> {
    let n = features.n_states();
    let mut out = Vec::new();
    for dataset in pool.datasets() {
        let summary = aggregate(&dataset, gamma, n)?;
        let theta = solve(solver, &summary, features)?;
        let report = match solver {
            SolverSpec::Lsw { w } => {
                let norms = feature_norms(features, w)?;
                let bound = smooth_bound_w(&summary.signature, w.values(), budget);
                crate::sensitivity::sigma_lsw(&bound, budget, r_max, gamma, f_max, norms.pinv_norm)?
            }
            SolverSpec::Lsl { rho, lambda } => {
                let op = features.op_norm();
                let bound =
                    smooth_bound_lambda(&summary.signature, rho.values(), *lambda, op, budget);
                crate::sensitivity::sigma_lsl(
                    &bound,
                    budget,
                    r_max,
                    gamma,
                    f_max,
                    op,
                    rho.linf(),
                    *lambda,
                )?
            }
        };
        let bound = corollary_bound(solver, &summary.signature, features, gamma, r_max)?;
        out.push(PoolPoint { theta, sigma: report.sigma, corollary_bound: bound });
    }
    Ok(out)
}

/// Worst margins of the two Gaussian-calibration conditions over every
/// ordered neighbor pair in a pool.
#[derive(Clone, Copy, Debug)]
pub struct CalibrationReport {
    pub n_pairs: usize,
    /// max over pairs of `alpha ||theta - theta'|| / sigma`; condition (a)
    /// holds iff this is at most 1.
    pub worst_condition_a: f64,
    /// max over pairs of `|ln sigma^2 - ln sigma'^2|`; condition (b) holds
    /// iff this is at most beta.
    pub worst_condition_b: f64,
    /// max over pairs of `||theta - theta'|| / corollary bound`.
    pub worst_bound_ratio: f64,
}

/// Checks conditions (a) and (b) of the Gaussian calibration lemma, and the
/// corollary sensitivity bounds, over all ordered pairs of pool datasets
/// (all of which are mutual neighbors).
pub fn calibration_check(points: &[PoolPoint], budget: &PrivacyBudget) -> CalibrationReport {
    let mut worst_a = 0.0f64;
    let mut worst_b = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut n_pairs = 0usize;
    for (i, pi) in points.iter().enumerate() {
        for (j, pj) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            n_pairs += 1;
            let dist = (&pi.theta - &pj.theta).norm();
            worst_a = worst_a.max(budget.alpha * dist / pi.sigma);
            worst_b = worst_b.max((pi.sigma.powi(2).ln() - pj.sigma.powi(2).ln()).abs());
            worst_ratio = worst_ratio.max(dist / pi.corollary_bound);
        }
    }
    CalibrationReport {
        n_pairs,
        worst_condition_a: worst_a,
        worst_condition_b: worst_b,
        worst_bound_ratio: worst_ratio,
    }
}

/// Which smooth-bound family a smoothness check exercises.
#[derive(Clone, Debug)]
pub enum BoundFamily {
    W { w: Vec<f64> },
    Lambda { rho: Vec<f64>, lambda: f64, op_norm: f64 },
}

impl BoundFamily {
    fn psi(&self, signature: &Signature, budget: &PrivacyBudget) -> f64 {
        match self {
            BoundFamily::W { w } => smooth_bound_w(signature, w, budget).psi,
            BoundFamily::Lambda { rho, lambda, op_norm } => {
                smooth_bound_lambda(signature, rho, *lambda, *op_norm, budget).psi
            }
        }
    }

    fn phi0(&self, signature: &Signature) -> f64 {
        match self {
            BoundFamily::W { w } => phi_w(signature, w, 0),
            BoundFamily::Lambda { rho, lambda, op_norm } => {
                phi_lambda(signature, rho, 0, *lambda, *op_norm)
            }
        }
    }
}

/// Asserts `|ln psi(v) - ln psi(v')| <= beta` for every adjacent pair in
/// `signatures` (infinity distance at most 1) and `psi >= phi(0)` for every
/// signature. Returns the largest log-gap observed.
pub fn check_smoothness(
    family: &BoundFamily,
    signatures: &[Signature],
    budget: &PrivacyBudget,
) -> f64 {
    let psis: Vec<f64> = signatures.iter().map(|s| family.psi(s, budget)).collect();
    for (s, &psi) in signatures.iter().zip(&psis) {
        assert!(
            psi >= family.phi0(s) * (1.0 - 1e-12),
            "psi {psi} below phi(0) {}",
            family.phi0(s)
        );
    }
    let mut worst = 0.0f64;
    for i in 0..signatures.len() {
        for j in i + 1..signatures.len() {
            if signatures[i].m != signatures[j].m {
                continue;
            }
            if signatures[i].linf_distance(&signatures[j]) > 1 {
                continue;
            }
            let gap = (psis[i].ln() - psis[j].ln()).abs();
            assert!(
                gap <= budget.beta + LN_SCALE_SLACK,
                "smoothness violated: |ln psi - ln psi'| = {gap} > beta = {}",
                budget.beta
            );
            worst = worst.max(gap);
        }
    }
    worst
}

/// Empirical vs analytic mean of the noise excess risk.
#[derive(Clone, Copy, Debug)]
pub struct NoiseIdentity {
    pub empirical_mean: f64,
    pub analytic: f64,
    pub std_error: f64,
    pub n_draws: usize,
}

impl NoiseIdentity {
    /// Agreement within `k` estimated standard errors.
    pub fn agrees_within(&self, k: f64) -> bool {
        (self.empirical_mean - self.analytic).abs() <= k * self.std_error.max(1e-300)
    }
}

/// Empirical mean of `J^w(theta + eta) - J^w(theta)` over `n_draws` draws of
/// `eta ~ N(0, sigma^2 I)`, against the exact identity
/// `sigma^2 ||Gamma^{1/2} Phi||_F^2`. The empirical side goes through the
/// real risk evaluator, draw by draw.
pub fn noise_expectation_identity_lsw(
    summary: &DatasetSummary,
    features: &FeatureMap,
    w: &EvalWeights,
    sigma: f64,
    n_draws: usize,
    rng: &mut SeedStream,
) -> Result<NoiseIdentity> {
    let theta = solve_lsw(summary, features, w)?;
    let j0 = empirical_risk_w(&theta, summary, features, w)?;
    let norms = feature_norms(features, w)?;
    let analytic = sigma * sigma * norms.frob_norm * norms.frob_norm;
    let excess = |theta_hat: &DVector<f64>| -> Result<f64> {
        Ok(empirical_risk_w(theta_hat, summary, features, w)? - j0)
    };
    summarize_draws(&theta, features.dim(), sigma, n_draws, rng, analytic, excess)
}

/// Same check for the ridge objective: the exact mean excess is
/// `(lambda d / 2m + (1/m) sum_s rho_s ||phi_s||^2 |X_s|) sigma^2`.
#[allow(clippy::too_many_arguments)]
pub fn noise_expectation_identity_lsl(
    summary: &DatasetSummary,
    features: &FeatureMap,
    rho: &EvalWeights,
    lambda: f64,
    sigma: f64,
    n_draws: usize,
    rng: &mut SeedStream,
) -> Result<NoiseIdentity> {
    let theta = solve_lsl(summary, features, rho, lambda)?;
    let j0 = empirical_risk_lambda(&theta, summary, features, rho, lambda)?;
    let m = summary.m() as f64;
    let d = features.dim() as f64;
    let visit_energy: f64 = rho
        .values()
        .iter()
        .zip(&summary.signature.counts)
        .enumerate()
        .map(|(s, (&r, &c))| r * features.row_norm_sq(s) * c as f64)
        .sum();
    let analytic = (lambda * d / (2.0 * m) + visit_energy / m) * sigma * sigma;
    let excess = |theta_hat: &DVector<f64>| -> Result<f64> {
        Ok(empirical_risk_lambda(theta_hat, summary, features, rho, lambda)? - j0)
    };
    summarize_draws(&theta, features.dim(), sigma, n_draws, rng, analytic, excess)
}

fn summarize_draws(
    theta: &DVector<f64>,
    d: usize,
    sigma: f64,
    n_draws: usize,
    rng: &mut SeedStream,
    analytic: f64,
    excess: impl Fn(&DVector<f64>) -> Result<f64>,
) -> Result<NoiseIdentity> {
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n_draws {
        let eta = DVector::from_fn(d, |_, _| rng.normal(sigma));
        let e = excess(&(theta + eta))?;
        sum += e;
        sumsq += e * e;
    }
    let n = n_draws as f64;
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0);
    Ok(NoiseIdentity {
        empirical_mean: mean,
        analytic,
        std_error: (var / n).sqrt(),
        n_draws,
    })
}

/// Constants entering the utility bounds.
#[derive(Clone, Copy, Debug)]
pub struct UtilityConstants {
    pub r_max: f64,
    pub gamma: f64,
    pub pinv_norm: f64,
    pub frob_norm: f64,
}

/// Which version of the fixed-weight utility bound to evaluate: the compact
/// form requires `beta <= 1/2`; the sharper long form holds for
/// `beta <= 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UtilityVariant {
    Compact,
    Sharp,
}

/// Expected excess-risk bound for the fixed-weight mechanism:
/// `C^2 (sum_{p_s = 0} w_s + 6 sum_{p_s > 0} w_s (1/(p_s^2 m^2) +
/// beta^2 (1 - beta p_s / 2)^m))` with
/// `C = alpha R_max pinv frob / (1 - gamma)`, in the compact variant.
pub fn utility_bound_lsw(
    visit: &VisitStats,
    w: &[f64],
    m: usize,
    budget: &PrivacyBudget,
    constants: &UtilityConstants,
    variant: UtilityVariant,
) -> Result<f64> {
    if visit.p.len() != w.len() {
        return Err(Error::InvalidParameter("visit stats and weights disagree on states".into()));
    }
    let beta = budget.beta;
    let limit = match variant {
        UtilityVariant::Compact => 0.5,
        UtilityVariant::Sharp => 2.0,
    };
    if beta > limit {
        return Err(Error::InvalidParameter(format!(
            "utility bound requires beta <= {limit}, got {beta}"
        )));
    }
    let c = budget.alpha * constants.r_max * constants.pinv_norm * constants.frob_norm
        / (1.0 - constants.gamma);
    let mf = m as f64;
    let mut total = 0.0;
    for (&p, &ws) in visit.p.iter().zip(w) {
        if p == 0.0 {
            total += ws;
        } else {
            total += match variant {
                UtilityVariant::Compact => {
                    6.0 * ws * (1.0 / (p * p * mf * mf) + beta * beta * (1.0 - beta * p / 2.0).powi(m as i32))
                }
                UtilityVariant::Sharp => {
                    ws * (6.0 / (p * p * (mf + 1.0) * (mf + 2.0))
                        + std::f64::consts::E.powi(2) / 4.0
                            * beta
                            * beta
                            * (1.0 - (1.0 - (-beta).exp()) * p).powi(m as i32))
                }
            };
        }
    }
    Ok(c * c * total)
}

/// Expected excess-risk bound for the ridge mechanism: the five-group form,
/// organized by dependence on `lambda` and `m`.
#[allow(clippy::too_many_arguments)]
pub fn utility_bound_lsl(
    visit: &VisitStats,
    rho: &[f64],
    features: &FeatureMap,
    m: usize,
    lambda: f64,
    budget: &PrivacyBudget,
    constants: &UtilityConstants,
) -> Result<f64> {
    let (c_lambda, shared) = lsl_bound_inputs(visit, rho, features, m, lambda, budget, constants)?;
    let LslShared { n, d, op_sq, rho_inf_sq, rho_l2_sq, beta, mf, p, row_sq } = shared;
    let two_e_beta = 2.0 * std::f64::consts::E * beta;

    // O(1) group
    let mut g1 = 0.0;
    for s in 0..n {
        g1 += rho[s] * p[s] * (d * op_sq * rho_inf_sq / 2.0 + 2.0 * rho_l2_sq * row_sq[s]);
    }
    // lambda/m group
    let g2 = lambda / mf * d * rho_l2_sq;
    // 1/m group
    let mut g3_sum = 0.0;
    for s in 0..n {
        g3_sum += rho[s] * (1.0 - p[s]).powi(m as i32);
    }
    let g3 = d * op_sq * rho_inf_sq / (2.0 * two_e_beta) / mf * g3_sum;
    // m/lambda group (all ordered pairs including s = s')
    let mut g4_sum = 0.0;
    for s in 0..n {
        for t in 0..n {
            g4_sum += rho[s] * rho[t] * p[s] * p[t] * row_sq[s];
        }
    }
    let g4 = mf / lambda * op_sq * rho_inf_sq * g4_sum;
    // 1/lambda group
    let mut g5_diag = 0.0;
    for s in 0..n {
        g5_diag += rho[s] * rho[s] * row_sq[s] * (p[s] - p[s] * p[s]);
    }
    let mut g5_off = 0.0;
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            g5_off += rho[s]
                * rho[t]
                * row_sq[s]
                * (visit.p_pair[(s, t)] - p[s] * p[t]
                    + visit.p_excl[(s, t)] * (1.0 - p[t]).powi(m as i32 - 1) / two_e_beta);
        }
    }
    let g5 = op_sq * rho_inf_sq / lambda * (g5_diag + g5_off);

    Ok(c_lambda * c_lambda * (g1 + g2 + g3 + g4 + g5))
}

/// Independent re-summation of the same bound in its pre-grouping form
/// (expectations expanded term by term); guards the five-group transcription.
#[allow(clippy::too_many_arguments)]
pub fn utility_bound_lsl_resummed(
    visit: &VisitStats,
    rho: &[f64],
    features: &FeatureMap,
    m: usize,
    lambda: f64,
    budget: &PrivacyBudget,
    constants: &UtilityConstants,
) -> Result<f64> {
    let (c_lambda, shared) = lsl_bound_inputs(visit, rho, features, m, lambda, budget, constants)?;
    let LslShared { n, d, op_sq, rho_inf_sq, rho_l2_sq, beta, mf, p, row_sq } = shared;
    let inv_2eb = 1.0 / (2.0 * std::f64::consts::E * beta);

    // lambda d ||rho||_2^2 / m
    let mut total = lambda * d * rho_l2_sq / mf;
    // (d op^2 rho_inf^2 / 2m) sum_s rho_s (m p_s + (1/2e beta)(1-p_s)^m)
    let mut t2 = 0.0;
    for s in 0..n {
        t2 += rho[s] * (mf * p[s] + inv_2eb * (1.0 - p[s]).powi(m as i32));
    }
    total += d * op_sq * rho_inf_sq / (2.0 * mf) * t2;
    // (2 ||rho||_2^2 / m) sum_s rho_s p_s ||phi_s||^2 m
    let mut t3 = 0.0;
    for s in 0..n {
        t3 += rho[s] * p[s] * row_sq[s] * mf;
    }
    total += 2.0 * rho_l2_sq / mf * t3;
    // (op^2 rho_inf^2 / lambda m) * [diagonal E|X_s|^2 + off-diagonal terms]
    let mut t4 = 0.0;
    for s in 0..n {
        t4 += rho[s] * rho[s] * row_sq[s] * (mf * mf * p[s] * p[s] + mf * (p[s] - p[s] * p[s]));
    }
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            t4 += rho[s]
                * rho[t]
                * row_sq[s]
                * (mf * (mf - 1.0) * p[s] * p[t]
                    + mf * visit.p_pair[(s, t)]
                    + inv_2eb * mf * visit.p_excl[(s, t)] * (1.0 - p[t]).powi(m as i32 - 1));
        }
    }
    total += op_sq * rho_inf_sq / (lambda * mf) * t4;

    Ok(c_lambda * c_lambda * total)
}

struct LslShared {
    n: usize,
    d: f64,
    op_sq: f64,
    rho_inf_sq: f64,
    rho_l2_sq: f64,
    beta: f64,
    mf: f64,
    p: Vec<f64>,
    row_sq: Vec<f64>,
}

fn lsl_bound_inputs(
    visit: &VisitStats,
    rho: &[f64],
    features: &FeatureMap,
    m: usize,
    lambda: f64,
    budget: &PrivacyBudget,
    constants: &UtilityConstants,
) -> Result<(f64, LslShared)> {
    let n = visit.p.len();
    if rho.len() != n || features.n_states() != n {
        return Err(Error::InvalidParameter("visit stats, rho and features disagree on states".into()));
    }
    if budget.beta >= 0.5 {
        return Err(Error::InvalidParameter(format!(
            "ridge utility bound requires beta < 1/2, got {}",
            budget.beta
        )));
    }
    let op = features.op_norm();
    let rho_inf = rho.iter().copied().fold(0.0, f64::max);
    let threshold = op * op * rho_inf;
    if !(lambda > threshold) {
        return Err(Error::InvalidRegularization { lambda, threshold });
    }
    let c_lambda = 2.0 * budget.alpha * constants.r_max * op
        / ((1.0 - constants.gamma) * (lambda - threshold));
    let row_sq: Vec<f64> = (0..n).map(|s| features.row_norm_sq(s)).collect();
    Ok((
        c_lambda,
        LslShared {
            n,
            d: features.dim() as f64,
            op_sq: op * op,
            rho_inf_sq: rho_inf * rho_inf,
            rho_l2_sq: rho.iter().map(|r| r * r).sum(),
            beta: budget.beta,
            mf: m as f64,
            p: visit.p.clone(),
            row_sq,
        },
    ))
}

/// Residuals of the binomial identities: the exact expectation of
/// `1/(B+1)` against its closed form and the `E[B^{-2}; B >= 1]` enumeration
/// against its upper bound.
#[derive(Clone, Copy, Debug)]
pub struct BinomialCheck {
    pub e_inv_enumerated: f64,
    pub e_inv_closed_form: f64,
    pub e_invsq_enumerated: f64,
    pub e_invsq_upper_bound: f64,
}

/// Exact enumeration over the binomial pmf (`m <= 30`, `p` in (0, 1]).
/// Asserts the identity to 1e-12 and the upper bound.
pub fn binomial_lemma_check(m: usize, p: f64) -> BinomialCheck {
    assert!((1..=30).contains(&m), "m must lie in 1..=30");
    assert!(p > 0.0 && p <= 1.0, "p must lie in (0,1]");
    let q = 1.0 - p;
    // pmf via exact binomial coefficients; C(30,15) is far below 2^53.
    let mut coeff = 1.0f64;
    let mut e_inv = 0.0;
    let mut e_invsq = 0.0;
    for k in 0..=m {
        if k > 0 {
            coeff = coeff * (m - k + 1) as f64 / k as f64;
        }
        let pmf = coeff * p.powi(k as i32) * q.powi((m - k) as i32);
        e_inv += pmf / (k + 1) as f64;
        if k >= 1 {
            e_invsq += pmf / (k * k) as f64;
        }
    }
    let closed = (1.0 - q.powi(m as i32 + 1)) / (p * (m + 1) as f64);
    let upper = 6.0 / (p * (m + 1) as f64)
        * ((1.0 - q.powi(m as i32 + 2)) / (p * (m + 2) as f64)
            - q.powi(m as i32 + 1)
            - p * (m + 1) as f64 / 2.0 * q.powi(m as i32));
    assert!(
        (e_inv - closed).abs() <= 1e-12,
        "binomial identity residual {} at m={m}, p={p}",
        (e_inv - closed).abs()
    );
    assert!(
        e_invsq <= upper * (1.0 + 1e-12),
        "E[B^-2] = {e_invsq} exceeds bound {upper} at m={m}, p={p}"
    );
    BinomialCheck {
        e_inv_enumerated: e_inv,
        e_inv_closed_form: closed,
        e_invsq_enumerated: e_invsq,
        e_invsq_upper_bound: upper,
    }
}

/// Closed form of `max_{0 <= x <= a-1} e^{-bx} / (a-x)^2` for `a >= 1`,
/// `b > 0`. The integrand is the product of a decreasing exponential and an
/// increasing reciprocal square, so any interior critical point is a
/// minimum and the maximum sits at an endpoint.
pub fn max_decay_over_shrinking_floor(a: f64, b: f64) -> f64 {
    assert!(a >= 1.0 && b > 0.0);
    (1.0 / (a * a)).max((-b * (a - 1.0)).exp())
}

/// Closed form of `max_{0 <= x <= m-a} e^{-2bx} (a+x)` for `0 <= a <= m`,
/// `b > 0`. Here the product is unimodal with an interior maximum at
/// `x = 1/(2b) - a` when that lies inside the domain.
pub fn max_decay_over_growing_count(a: f64, b: f64, m: f64) -> f64 {
    assert!(a >= 0.0 && m >= a && b > 0.0);
    let x_star = 1.0 / (2.0 * b) - a;
    if x_star <= 0.0 {
        a
    } else if x_star >= m - a {
        m * (-2.0 * b * (m - a)).exp()
    } else {
        (2.0 * a * b - 1.0).exp() / (2.0 * b)
    }
}

/// Grid maximization with local ternary refinement, the independent oracle
/// for the closed forms above.
pub fn grid_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    assert!(hi >= lo);
    if hi == lo {
        return f(lo);
    }
    let coarse = 20_000;
    let mut best = f64::NEG_INFINITY;
    let mut best_x = lo;
    for i in 0..=coarse {
        let x = lo + (hi - lo) * i as f64 / coarse as f64;
        let v = f(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    // refine around the best coarse point
    let h = (hi - lo) / coarse as f64;
    let mut a = (best_x - h).max(lo);
    let mut b = (best_x + h).min(hi);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) < f(m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    best.max(f((a + b) / 2.0))
}

/// Largest relative residual between the closed-form maxima and grid search
/// over a grid of `(a, b)` (and `m` for the second family). Asserts every
/// residual is within 1e-6 relative.
pub fn max_lemma_check(a_grid: &[f64], b_grid: &[f64], m: f64) -> f64 {
    let mut worst = 0.0f64;
    for &a in a_grid {
        for &b in b_grid {
            if a >= 1.0 {
                let closed = max_decay_over_shrinking_floor(a, b);
                let grid = grid_max(|x| (-b * x).exp() / ((a - x) * (a - x)), 0.0, a - 1.0);
                let resid = (closed - grid).abs() / closed.abs().max(1e-300);
                assert!(resid <= 1e-6, "floor lemma: a={a} b={b}: {closed} vs {grid}");
                worst = worst.max(resid);
            }
            if a <= m {
                let closed = max_decay_over_growing_count(a, b, m);
                let grid = grid_max(|x| (-2.0 * b * x).exp() * (a + x), 0.0, m - a);
                let denom = closed.abs().max(grid.abs()).max(1e-300);
                let resid = (closed - grid).abs() / denom;
                assert!(resid <= 1e-6, "count lemma: a={a} b={b} m={m}: {closed} vs {grid}");
                worst = worst.max(resid);
            }
        }
    }
    worst
}

/// Monte Carlo visit statistics for any process, the fallback when the
/// closed forms of `visit_probabilities` do not apply.
pub fn mc_visit_stats(mdp: &Mdp, n_samples: usize, rng: &mut SeedStream) -> Result<VisitStats> {
    let n_tr = mdp.n_transient();
    let sampler = TrajectorySampler::new(mdp);
    let mut hits = vec![0usize; n_tr];
    let mut pair = nalgebra::DMatrix::<f64>::zeros(n_tr, n_tr);
    for _ in 0..n_samples {
        let x = sampler.sample(rng)?;
        let mut seen = vec![false; n_tr];
        for &(s, _) in x.steps() {
            seen[s] = true;
        }
        let visited: Vec<usize> =
            seen.iter().enumerate().filter(|(_, &v)| v).map(|(s, _)| s).collect();
        for &s in &visited {
            hits[s] += 1;
            for &t in &visited {
                pair[(s, t)] += 1.0;
            }
        }
    }
    let nf = n_samples as f64;
    let p: Vec<f64> = hits.iter().map(|&h| h as f64 / nf).collect();
    let mut p_pair = pair / nf;
    let mut p_excl = nalgebra::DMatrix::zeros(n_tr, n_tr);
    for s in 0..n_tr {
        p_pair[(s, s)] = p[s];
        for t in 0..n_tr {
            p_excl[(s, t)] = (p[s] - p_pair[(s, t)]).max(0.0);
        }
    }
    Ok(VisitStats { p, p_pair, p_excl })
}
