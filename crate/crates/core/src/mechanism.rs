//! The two differentially private estimators.
//!
//! Each mechanism solves its non-private objective, calibrates a Gaussian
//! scale from the smooth sensitivity bound of the dataset signature, and
//! releases `theta_hat = theta + eta` with `eta ~ N(0, sigma^2 I)` drawn
//! from a seeded stream. Everything after the draw is post-processing: the
//! released value function is `Phi theta_hat` with no further dataset
//! access.
//!
//! Only `theta_hat` and the public parameters are releasable. The
//! non-private solution, the noise scale, and the smooth-bound diagnostics
//! all depend on the data and are serialized under a separate `[private]`
//! section that callers must opt into.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimators::{
    feature_norms, solve_lsl, solve_lsw, EvalWeights, FeatureMap, WeightKind,
};
use crate::returns::{aggregate, DatasetSummary, TrajectoryDataset};
use crate::rng::{SeedStream, GENERATOR_ID};
use crate::sensitivity::{
    sigma_lsl, sigma_lsw, smooth_bound_lambda, smooth_bound_w, PrivacyBudget, SensitivityReport,
};

/// Which mechanism produced an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mechanism {
    Lsw,
    Lsl,
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Lsw => "dp-lsw",
            Mechanism::Lsl => "dp-lsl",
        }
    }
}

/// A private release together with its (non-releasable) diagnostics.
#[derive(Clone, Debug)]
pub struct PrivateEstimate {
    pub mechanism: Mechanism,
    /// Non-private solution; private.
    pub theta: DVector<f64>,
    /// Perturbed release; public.
    pub theta_hat: DVector<f64>,
    /// Noise scale actually used; private (it is a function of the data).
    pub sigma: f64,
    pub report: SensitivityReport,
    pub budget: PrivacyBudget,
    /// Public MDP parameters.
    pub gamma: f64,
    pub r_max: f64,
    /// Regularization, for the ridge mechanism.
    pub lambda: Option<f64>,
}

impl PrivateEstimate {
    /// The sampled perturbation.
    pub fn noise(&self) -> DVector<f64> {
        &self.theta_hat - &self.theta
    }

    /// Released per-state values `Phi theta_hat` (pure post-processing).
    pub fn released_values(&self, features: &FeatureMap) -> DVector<f64> {
        features.predict(&self.theta_hat)
    }

    /// Key-value text form. The `[private]` section is emitted only on
    /// request; it contains data-dependent quantities whose release is not
    /// covered by the privacy guarantee.
    pub fn to_text(&self, include_private: bool) -> String {
        let mut out = String::new();
        out.push_str("[public]\n");
        out.push_str(&format!("mechanism = {}\n", self.mechanism.name()));
        out.push_str(&format!("generator = {GENERATOR_ID}\n"));
        out.push_str(&format!("epsilon = {}\n", self.budget.epsilon));
        out.push_str(&format!("delta = {}\n", self.budget.delta));
        out.push_str(&format!(
            "conservative_constants = {}\n",
            self.budget.conservative
        ));
        out.push_str(&format!("d = {}\n", self.budget.d));
        out.push_str(&format!("gamma = {}\n", self.gamma));
        out.push_str(&format!("r_max = {}\n", self.r_max));
        out.push_str(&format!("f_max = {}\n", self.report.f_max));
        if let Some(lambda) = self.lambda {
            out.push_str(&format!("lambda = {lambda}\n"));
        }
        out.push_str(&format!("theta_hat = {}\n", fmt_vec(&self.theta_hat)));
        if include_private {
            out.push_str("[private]\n");
            out.push_str(&format!("theta = {}\n", fmt_vec(&self.theta)));
            out.push_str(&format!("sigma = {}\n", self.sigma));
            out.push_str(&format!("psi = {}\n", self.report.psi));
            out.push_str(&format!("argmax_k = {}\n", self.report.argmax_k));
            out.push_str(&format!("k_range = {}\n", self.report.k_range));
            out.push_str(&format!(
                "constant_prefactor = {}\n",
                self.report.constant_prefactor
            ));
        }
        out
    }
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", items.join(", "))
}

/// Parsed form of a serialized estimate, for replay and round-trip checks.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedEstimate {
    pub public: Vec<(String, String)>,
    pub private: Vec<(String, String)>,
}

impl ParsedEstimate {
    pub fn parse(text: &str) -> Result<Self> {
        let mut public = Vec::new();
        let mut private = Vec::new();
        let mut section: Option<&mut Vec<(String, String)>> = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[public]" {
                section = Some(&mut public);
                continue;
            }
            if line == "[private]" {
                section = Some(&mut private);
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad estimate line `{line}`")))?;
            match section {
                Some(ref mut s) => s.push((k.trim().to_string(), v.trim().to_string())),
                None => return Err(Error::Config("estimate key outside a section".into())),
            }
        }
        Ok(ParsedEstimate { public, private })
    }

    pub fn public_field(&self, key: &str) -> Option<&str> {
        self.public
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn theta_hat(&self) -> Result<Vec<f64>> {
        let raw = self
            .public_field("theta_hat")
            .ok_or_else(|| Error::Config("estimate has no theta_hat".into()))?;
        parse_vec(raw)
    }
}

fn parse_vec(raw: &str) -> Result<Vec<f64>> {
    let inner = raw
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Config(format!("expected bracketed vector, got `{raw}`")))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad float `{tok}` in vector")))
        })
        .collect()
}

fn gaussian_vector(d: usize, sigma: f64, rng: &mut SeedStream) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.normal(sigma))
}

fn check_budget(budget: &PrivacyBudget, features: &FeatureMap) -> Result<()> {
    if budget.d != features.dim() {
        return Err(Error::InvalidBudget(format!(
            "budget was derived for d = {} but features have d = {}",
            budget.d,
            features.dim()
        )));
    }
    Ok(())
}

/// DP-LSW on a precomputed summary.
pub fn dp_lsw_from_summary(
    summary: &DatasetSummary,
    features: &FeatureMap,
    w: &EvalWeights,
    gamma: f64,
    r_max: f64,
    f_max: Option<f64>,
    budget: &PrivacyBudget,
    rng: &mut SeedStream,
) -> Result<PrivateEstimate> {
    check_budget(budget, features)?;
    let norms = feature_norms(features, w)?;
    let theta = solve_lsw(summary, features, w)?;
    let bound = smooth_bound_w(&summary.signature, w.values(), budget);
    let report = sigma_lsw(&bound, budget, r_max, gamma, f_max, norms.pinv_norm)?;
    let eta = gaussian_vector(features.dim(), report.sigma, rng);
    Ok(PrivateEstimate {
        mechanism: Mechanism::Lsw,
        theta_hat: &theta + &eta,
        theta,
        sigma: report.sigma,
        report,
        budget: *budget,
        gamma,
        r_max,
        lambda: None,
    })
}

/// DP-LSW: aggregate, solve the fixed-weight objective, calibrate, perturb.
#[allow(clippy::too_many_arguments)]
pub fn dp_lsw(
    dataset: &TrajectoryDataset,
    features: &FeatureMap,
    w: &EvalWeights,
    gamma: f64,
    r_max: f64,
    f_max: Option<f64>,
    budget: &PrivacyBudget,
    rng: &mut SeedStream,
) -> Result<PrivateEstimate> {
    let summary = aggregate(dataset, gamma, features.n_states())?;
    dp_lsw_from_summary(&summary, features, w, gamma, r_max, f_max, budget, rng)
}

/// DP-LSL on a precomputed summary.
#[allow(clippy::too_many_arguments)]
pub fn dp_lsl_from_summary(
    summary: &DatasetSummary,
    features: &FeatureMap,
    rho: &EvalWeights,
    lambda: f64,
    gamma: f64,
    r_max: f64,
    f_max: Option<f64>,
    budget: &PrivacyBudget,
    rng: &mut SeedStream,
) -> Result<PrivateEstimate> {
    check_budget(budget, features)?;
    if rho.kind() != WeightKind::RegressionRho {
        return Err(Error::InvalidParameter("dp_lsl requires regression_rho weights".into()));
    }
    let op_norm = features.op_norm();
    let threshold = op_norm * op_norm * rho.linf();
    if !(lambda > threshold) {
        // Gate before doing any work: no release happens at or below the
        // validity threshold.
        return Err(Error::InvalidRegularization { lambda, threshold });
    }
    let theta = solve_lsl(summary, features, rho, lambda)?;
    let bound = smooth_bound_lambda(&summary.signature, rho.values(), lambda, op_norm, budget);
    let report = sigma_lsl(
        &bound,
        budget,
        r_max,
        gamma,
        f_max,
        op_norm,
        rho.linf(),
        lambda,
    )?;
    let eta = gaussian_vector(features.dim(), report.sigma, rng);
    Ok(PrivateEstimate {
        mechanism: Mechanism::Lsl,
        theta_hat: &theta + &eta,
        theta,
        sigma: report.sigma,
        report,
        budget: *budget,
        gamma,
        r_max,
        lambda: Some(lambda),
    })
}

/// DP-LSL: aggregate, solve the ridge objective, calibrate, perturb.
#[allow(clippy::too_many_arguments)]
pub fn dp_lsl(
    dataset: &TrajectoryDataset,
    features: &FeatureMap,
    rho: &EvalWeights,
    lambda: f64,
    gamma: f64,
    r_max: f64,
    f_max: Option<f64>,
    budget: &PrivacyBudget,
    rng: &mut SeedStream,
) -> Result<PrivateEstimate> {
    let summary = aggregate(dataset, gamma, features.n_states())?;
    dp_lsl_from_summary(&summary, features, rho, lambda, gamma, r_max, f_max, budget, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_chain, sample_trajectory};
    use crate::returns::Trajectory;
    use crate::sensitivity::privacy_constants;
    use approx::assert_relative_eq;

    fn toy_dataset() -> TrajectoryDataset {
        TrajectoryDataset::new(vec![
            Trajectory::new(vec![(0, 0.0), (1, 1.0)]).unwrap(),
            Trajectory::new(vec![(1, 1.0)]).unwrap(),
            Trajectory::new(vec![(0, 0.0), (0, 0.0), (1, 1.0)]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn dp_lsw_is_seed_deterministic() {
        let d = toy_dataset();
        let phi = FeatureMap::identity(2);
        let w = EvalWeights::fixed(vec![1.0, 1.0]).unwrap();
        let budget = privacy_constants(0.5, 0.1, 2).unwrap();
        let run = || {
            let mut rng = SeedStream::new(99);
            dp_lsw(&d, &phi, &w, 0.9, 1.0, Some(1.0), &budget, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.theta_hat.as_slice(), b.theta_hat.as_slice());
        assert_eq!(a.theta.as_slice(), b.theta.as_slice());
        assert_eq!(a.sigma, b.sigma);
    }

    #[test]
    fn dp_lsw_noise_std_matches_sigma() {
        let d = toy_dataset();
        let phi = FeatureMap::identity(2);
        let w = EvalWeights::fixed(vec![1.0, 1.0]).unwrap();
        let budget = privacy_constants(1.0, 0.1, 2).unwrap();
        let mut sigma = 0.0;
        let mut samples = Vec::new();
        for seed in 0..10_000u64 {
            let mut rng = SeedStream::new(seed);
            let est = dp_lsw(&d, &phi, &w, 0.9, 1.0, Some(1.0), &budget, &mut rng).unwrap();
            sigma = est.sigma;
            let eta = est.noise();
            samples.extend(eta.iter().copied());
        }
        let n = samples.len() as f64;
        let var = samples.iter().map(|x| x * x).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() <= 0.03 * sigma,
            "empirical std {std} vs sigma {sigma}"
        );
    }

    #[test]
    fn dp_lsl_threshold_gate_blocks_release() {
        let d = toy_dataset();
        let phi = FeatureMap::identity(2);
        let rho = EvalWeights::regression(vec![1.0, 1.0]).unwrap();
        let budget = privacy_constants(1.0, 0.1, 2).unwrap();
        let mut rng = SeedStream::new(5);
        // ||Phi||^2 ||rho||_inf = 1; lambda at the threshold must fail.
        let err = dp_lsl(&d, &phi, &rho, 1.0, 0.9, 1.0, None, &budget, &mut rng);
        assert!(matches!(err, Err(Error::InvalidRegularization { .. })));
    }

    #[test]
    fn dp_lsl_matches_independent_solution_and_noise() {
        // Singleton dataset from the 3-state deterministic chain.
        let mdp = build_chain(3, 0.0, 0.5).unwrap().with_start_state(0).unwrap();
        let mut srng = SeedStream::new(1);
        let x = sample_trajectory(&mdp, &mut srng).unwrap();
        let d = TrajectoryDataset::new(vec![x]).unwrap();
        let phi = FeatureMap::identity(2);
        let rho = EvalWeights::regression(vec![1.0, 1.0]).unwrap();
        let budget = privacy_constants(1.0, 0.1, 2).unwrap();
        let lambda = 4.0;
        let mut rng = SeedStream::new(42);
        let est = dp_lsl(&d, &phi, &rho, lambda, 0.5, 1.0, None, &budget, &mut rng).unwrap();
        // theta agrees with the standalone ridge solve on the same summary.
        let summary = aggregate(&d, 0.5, 2).unwrap();
        let theta = solve_lsl(&summary, &phi, &rho, lambda).unwrap();
        assert_eq!(est.theta.as_slice(), theta.as_slice());
        // Expected noise scale: 2 alpha f_bound ||Phi|| / (lambda - 1) sqrt(psi).
        let bound =
            smooth_bound_lambda(&summary.signature, rho.values(), lambda, 1.0, &budget);
        let f_bound = 1.0 / (1.0 - 0.5);
        let expect_sigma = 2.0 * budget.alpha * f_bound / (lambda - 1.0) * bound.psi.sqrt();
        assert_relative_eq!(est.sigma, expect_sigma, max_relative = 1e-12);
        // The perturbation reproduces the seeded stream exactly.
        let mut replay = SeedStream::new(42);
        let eta = est.noise();
        for i in 0..2 {
            assert_eq!(eta[i], replay.normal(est.sigma));
        }
    }

    #[test]
    fn serialization_hides_private_fields_by_default() {
        let d = toy_dataset();
        let phi = FeatureMap::identity(2);
        let w = EvalWeights::fixed(vec![1.0, 1.0]).unwrap();
        let budget = privacy_constants(0.5, 0.1, 2).unwrap();
        let mut rng = SeedStream::new(3);
        let est = dp_lsw(&d, &phi, &w, 0.9, 1.0, Some(1.0), &budget, &mut rng).unwrap();

        let public_only = est.to_text(false);
        assert!(public_only.contains("[public]"));
        assert!(public_only.contains("theta_hat = ["));
        assert!(!public_only.contains("[private]"));
        assert!(!public_only.contains("sigma ="));
        assert!(!public_only.contains("psi ="));
        assert!(!public_only.contains("theta ="));

        let full = est.to_text(true);
        assert!(full.contains("[private]"));
        let parsed = ParsedEstimate::parse(&full).unwrap();
        assert_eq!(parsed.public_field("mechanism"), Some("dp-lsw"));
        assert_eq!(parsed.theta_hat().unwrap(), est.theta_hat.as_slice().to_vec());
        assert_eq!(parsed.private.len(), 6);
    }

    #[test]
    fn serialization_field_order_is_stable() {
        let d = toy_dataset();
        let phi = FeatureMap::identity(2);
        let rho = EvalWeights::regression(vec![1.0, 1.0]).unwrap();
        let budget = privacy_constants(1.0, 0.1, 2).unwrap();
        let mut rng = SeedStream::new(3);
        let est = dp_lsl(&d, &phi, &rho, 3.0, 0.9, 1.0, Some(1.0), &budget, &mut rng).unwrap();
        let text = est.to_text(true);
        let keys: Vec<&str> = text
            .lines()
            .filter(|l| l.contains('='))
            .map(|l| l.split('=').next().unwrap().trim())
            .collect();
        assert_eq!(
            keys,
            vec![
                "mechanism",
                "generator",
                "epsilon",
                "delta",
                "conservative_constants",
                "d",
                "gamma",
                "r_max",
                "f_max",
                "lambda",
                "theta_hat",
                "theta",
                "sigma",
                "psi",
                "argmax_k",
                "k_range",
                "constant_prefactor",
            ]
        );
    }

    #[test]
    fn serialization_golden_bytes() {
        // Every field is hand-checkable: the single trajectory (state 0,
        // reward 1) gives theta = F = [1]; counts = [1] saturate phi at
        // every k so psi = 1 at k = 0; delta = 2/e^2 and eps = 10 give
        // alpha = 1, and the default f_max = r_max/(1-gamma) = 2 makes
        // sigma = 2. theta_hat freezes the seeded noise draw.
        let d = TrajectoryDataset::new(vec![Trajectory::new(vec![(0, 1.0)]).unwrap()]).unwrap();
        let summary = aggregate(&d, 0.5, 1).unwrap();
        let phi = FeatureMap::identity(1);
        let w = EvalWeights::fixed(vec![1.0]).unwrap();
        let delta = 2.0 / std::f64::consts::E.powi(2);
        let budget = privacy_constants(10.0, delta, 1).unwrap();
        let mut rng = SeedStream::new(42);
        let est =
            dp_lsw_from_summary(&summary, &phi, &w, 0.5, 1.0, None, &budget, &mut rng).unwrap();
        let expected = "\
[public]
mechanism = dp-lsw
generator = chacha12/splitmix64-derive/inverse-cdf-normal-v1
epsilon = 10
delta = 0.2706705664732254
conservative_constants = false
d = 1
gamma = 0.5
r_max = 1
f_max = 2
theta_hat = [-1.0185181031500687]
[private]
theta = [1]
sigma = 2
psi = 1
argmax_k = 0
k_range = 1
constant_prefactor = 2
";
        assert_eq!(est.to_text(true), expected);
    }

    #[test]
    fn released_values_are_postprocessing_of_theta_hat() {
        let d = toy_dataset();
        let phi = FeatureMap::identity(2);
        let w = EvalWeights::fixed(vec![1.0, 1.0]).unwrap();
        let budget = privacy_constants(0.5, 0.1, 2).unwrap();
        let mut rng = SeedStream::new(8);
        let est = dp_lsw(&d, &phi, &w, 0.9, 1.0, Some(1.0), &budget, &mut rng).unwrap();
        let v = est.released_values(&phi);
        let direct = phi.predict(&est.theta_hat);
        assert_eq!(v.as_slice(), direct.as_slice());
    }
}
