//! Smooth sensitivity bounds and Gaussian noise scales.
//!
//! The local sensitivity of either solver depends on the dataset only
//! through its signature `v`. The per-mechanism proxies are
//!
//! * `phi^w(v)  = sum_s w_s / max(v_s, 1)^2`
//! * `phi^l(v)  = (c_lambda sqrt(sum_s rho_s min(v_s, m)) + ||rho||_2)^2`
//!   with `c_lambda = ||Phi|| ||rho||_inf / sqrt(2 lambda)`,
//!
//! and the released noise scale is calibrated to the smallest beta-smooth
//! upper bound `psi(v) = max_k e^{-k beta} phi_k(v)`, where `phi_k` relaxes
//! every count by up to `k`. Both `phi_k` families have closed forms, so the
//! maximization is an exhaustive scan: `k <= K_X` for the fixed-weight bound
//! (the proxy saturates once every count hits its floor) and `k <= m` for
//! the ridge bound. Ties break toward the smallest `k` so reports are
//! deterministic.

use crate::error::{Error, Result};
use crate::returns::Signature;

/// Privacy parameters with the derived Gaussian-calibration constants.
///
/// The default constants are `alpha = 5 sqrt(2 ln(2/delta)) / eps` and
/// `beta = eps / (4 (d + ln(2/delta)))`. The conservative variant uses the
/// constants from the elementary self-contained calibration proof
/// (`alpha = 15 sqrt(2 ln(4/delta)) / eps`,
/// `beta = 2 ln 2 · eps / (5 (sqrt(d) + sqrt(2 ln(4/delta)))^2)`), which is
/// valid for `eps <= 5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    pub conservative: bool,
}

fn check_budget_domain(epsilon: f64, delta: f64, d: usize) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidBudget(format!("epsilon = {epsilon} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidBudget(format!("delta = {delta} must lie in (0,1)")));
    }
    if d == 0 {
        return Err(Error::InvalidBudget("output dimension d must be at least 1".into()));
    }
    Ok(())
}

/// Main-text calibration constants.
pub fn privacy_constants(epsilon: f64, delta: f64, d: usize) -> Result<PrivacyBudget> {
    check_budget_domain(epsilon, delta, d)?;
    let ln2d = (2.0 / delta).ln();
    Ok(PrivacyBudget {
        epsilon,
        delta,
        d,
        alpha: 5.0 * (2.0 * ln2d).sqrt() / epsilon,
        beta: epsilon / (4.0 * (d as f64 + ln2d)),
        conservative: false,
    })
}

/// Conservative constants from the self-contained proof; requires
/// `eps <= 5` and yields `beta <= ln 2` by construction for `d >= 1`.
pub fn privacy_constants_conservative(epsilon: f64, delta: f64, d: usize) -> Result<PrivacyBudget> {
    check_budget_domain(epsilon, delta, d)?;
    if epsilon > 5.0 {
        return Err(Error::InvalidBudget(format!(
            "conservative constants require epsilon <= 5, got {epsilon}"
        )));
    }
    let ln4d = (4.0 / delta).ln();
    let beta = 2.0 * std::f64::consts::LN_2 * epsilon
        / (5.0 * ((d as f64).sqrt() + (2.0 * ln4d).sqrt()).powi(2));
    if beta > std::f64::consts::LN_2 {
        return Err(Error::InvalidBudget(format!(
            "conservative beta = {beta} exceeds ln 2"
        )));
    }
    Ok(PrivacyBudget {
        epsilon,
        delta,
        d,
        alpha: 15.0 * (2.0 * ln4d).sqrt() / epsilon,
        beta,
        conservative: true,
    })
}

impl PrivacyBudget {
    /// Rebuilds the constants for the same `(epsilon, delta)` at a different
    /// output dimension.
    pub fn with_dimension(&self, d: usize) -> Result<PrivacyBudget> {
        if self.conservative {
            privacy_constants_conservative(self.epsilon, self.delta, d)
        } else {
            privacy_constants(self.epsilon, self.delta, d)
        }
    }
}

/// `phi_k^w(v) = sum_s w_s / max(v_s - k, 1)^2`. For
/// `k >= max_s v_s - 1` this saturates at `sum_s w_s`.
pub fn phi_w(signature: &Signature, w: &[f64], k: usize) -> f64 {
    debug_assert_eq!(signature.counts.len(), w.len());
    signature
        .counts
        .iter()
        .zip(w)
        .map(|(&v, &ws)| {
            let floor = v.saturating_sub(k).max(1) as f64;
            ws / (floor * floor)
        })
        .sum()
}

/// `phi_k^l(v) = (c_lambda sqrt(sum_s rho_s min(v_s + k, m)) + ||rho||_2)^2`
/// with `c_lambda = op_norm * ||rho||_inf / sqrt(2 lambda)`. Counts are
/// capped at `m`: no state can be visited by more than `m` trajectories.
/// Constant in `k` once `k >= m - min_s v_s`.
pub fn phi_lambda(signature: &Signature, rho: &[f64], k: usize, lambda: f64, op_norm: f64) -> f64 {
    debug_assert_eq!(signature.counts.len(), rho.len());
    assert!(lambda > 0.0, "lambda must be positive");
    let m = signature.m;
    let rho_inf = rho.iter().copied().fold(0.0, f64::max);
    let rho_l2 = rho.iter().map(|r| r * r).sum::<f64>().sqrt();
    let c_lambda = op_norm * rho_inf / (2.0 * lambda).sqrt();
    let mass: f64 = signature
        .counts
        .iter()
        .zip(rho)
        .map(|(&v, &r)| r * (v + k).min(m) as f64)
        .sum();
    let root = c_lambda * mass.sqrt() + rho_l2;
    root * root
}

/// Result of a smooth-bound maximization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothBound {
    /// `psi = max_k e^{-k beta} phi_k`.
    pub psi: f64,
    /// Smallest `k` achieving the maximum.
    pub argmax_k: usize,
    /// Upper end of the scanned range (inclusive).
    pub k_range: usize,
}

/// `psi^w`: exhaustive maximum over `k in 0..=K_X`, `O(K_X N)` time.
pub fn smooth_bound_w(signature: &Signature, w: &[f64], budget: &PrivacyBudget) -> SmoothBound {
    let k_range = signature.k_max();
    scan_max(k_range, budget.beta, |k| phi_w(signature, w, k))
}

/// `psi^l`: exhaustive maximum over `k in 0..=m`, `O(m N)` time.
pub fn smooth_bound_lambda(
    signature: &Signature,
    rho: &[f64],
    lambda: f64,
    op_norm: f64,
    budget: &PrivacyBudget,
) -> SmoothBound {
    scan_max(signature.m, budget.beta, |k| {
        phi_lambda(signature, rho, k, lambda, op_norm)
    })
}

fn scan_max(k_range: usize, beta: f64, phi: impl Fn(usize) -> f64) -> SmoothBound {
    let mut best = f64::NEG_INFINITY;
    let mut argmax_k = 0;
    for k in 0..=k_range {
        let candidate = (-(k as f64) * beta).exp() * phi(k);
        if candidate > best {
            best = candidate;
            argmax_k = k;
        }
    }
    SmoothBound { psi: best, argmax_k, k_range }
}

/// Everything the mechanism records about one noise calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityReport {
    pub psi: f64,
    pub argmax_k: usize,
    pub k_range: usize,
    /// Dataset-independent multiplier of `sqrt(psi)` in the noise scale.
    pub constant_prefactor: f64,
    pub sigma: f64,
    /// Public return bound actually used.
    pub f_max: f64,
}

/// Resolves the public return bound: defaults to `r_max / (1 - gamma)` and
/// rejects any override above it, since a larger value would void the
/// calibration argument. The override must be publicly known, never
/// estimated from the private data.
pub fn resolve_f_max(r_max: f64, gamma: f64, f_max: Option<f64>) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} must lie in (0,1)")));
    }
    let limit = r_max / (1.0 - gamma);
    match f_max {
        None => Ok(limit),
        Some(f) => {
            if !(f > 0.0) || f > limit {
                Err(Error::FMaxTooLarge { f_max: f, limit })
            } else {
                Ok(f)
            }
        }
    }
}

/// Fixed-weight noise scale
/// `sigma = alpha * F_max * ||(Gamma^{1/2} Phi)^dagger|| * sqrt(psi^w)`.
pub fn sigma_lsw(
    bound: &SmoothBound,
    budget: &PrivacyBudget,
    r_max: f64,
    gamma: f64,
    f_max: Option<f64>,
    pinv_norm: f64,
) -> Result<SensitivityReport> {
    let f_max = resolve_f_max(r_max, gamma, f_max)?;
    let prefactor = budget.alpha * f_max * pinv_norm;
    Ok(SensitivityReport {
        psi: bound.psi,
        argmax_k: bound.argmax_k,
        k_range: bound.k_range,
        constant_prefactor: prefactor,
        sigma: prefactor * bound.psi.sqrt(),
        f_max,
    })
}

/// Ridge noise scale
/// `sigma = 2 alpha F_max ||Phi|| / (lambda - ||Phi||^2 ||rho||_inf) * sqrt(psi^l)`,
/// defined only for `lambda` strictly above the threshold.
pub fn sigma_lsl(
    bound: &SmoothBound,
    budget: &PrivacyBudget,
    r_max: f64,
    gamma: f64,
    f_max: Option<f64>,
    op_norm: f64,
    rho_inf: f64,
    lambda: f64,
) -> Result<SensitivityReport> {
    let threshold = op_norm * op_norm * rho_inf;
    if !(lambda > threshold) {
        return Err(Error::InvalidRegularization { lambda, threshold });
    }
    let f_max = resolve_f_max(r_max, gamma, f_max)?;
    let prefactor = 2.0 * budget.alpha * f_max * op_norm / (lambda - threshold);
    Ok(SensitivityReport {
        psi: bound.psi,
        argmax_k: bound.argmax_k,
        k_range: bound.k_range,
        constant_prefactor: prefactor,
        sigma: prefactor * bound.psi.sqrt(),
        f_max,
    })
}
