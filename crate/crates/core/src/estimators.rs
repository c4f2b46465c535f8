//! Non-private least-squares solvers and their empirical risks.
//!
//! Two objectives are fit from a [`DatasetSummary`]:
//!
//! * fixed-weight least squares over the averaged returns,
//!   `J^w(theta) = sum_s w_s (F_X(s) - phi_s' theta)^2`, solved through the
//!   pseudo-inverse of the weighted feature matrix;
//! * ridge-regularized per-trajectory least squares,
//!   `J^lambda(theta) = (1/m) sum_i sum_{s in x_i} rho_s (F_{x_i,s} -
//!   phi_s' theta)^2 + (lambda/2m) ||theta||^2`.
//!
//! Every solve goes through an SVD: the pseudo-inverse norm is needed by the
//! noise calibration anyway and the decomposition is robust at the rank
//! boundary where the fixed-weight solve must fail loudly. Diagonal weight
//! matrices are applied row-wise and never materialized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::returns::DatasetSummary;

/// Relative singular-value cutoff: values below `RANK_TOL * sigma_max` count
/// as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Feature representation, one row `phi_s` per state.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::InvalidParameter("feature matrix must be nonempty".into()));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("feature matrix entries must be finite".into()));
        }
        Ok(FeatureMap { phi })
    }

    /// Tabular features: the N x N identity.
    pub fn identity(n: usize) -> Self {
        FeatureMap { phi: DMatrix::identity(n, n) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// Largest singular value of the raw feature matrix.
    pub fn op_norm(&self) -> f64 {
        singular_values(&self.phi)[0]
    }

    /// Row `phi_s` as an owned vector.
    pub fn row(&self, s: usize) -> DVector<f64> {
        self.phi.row(s).transpose()
    }

    /// Squared euclidean norm of row `phi_s`.
    pub fn row_norm_sq(&self, s: usize) -> f64 {
        self.phi.row(s).iter().map(|x| x * x).sum()
    }

    /// `Phi * theta` as per-state predictions.
    pub fn predict(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.phi * theta
    }
}

/// Which objective a weight vector parameterizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    /// Data-independent weights `w_s >= 0`, at least one positive.
    FixedW,
    /// Regression weights `0 <= rho_s <= 1`.
    RegressionRho,
}

/// Per-state weights for either objective, validated on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalWeights {
    kind: WeightKind,
    values: Vec<f64>,
}

impl EvalWeights {
    pub fn fixed(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidParameter("fixed weights must be finite and nonnegative".into()));
        }
        if values.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParameter("fixed weights must have positive total mass".into()));
        }
        Ok(EvalWeights { kind: WeightKind::FixedW, values })
    }

    pub fn regression(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&r| !r.is_finite() || !(0.0..=1.0).contains(&r)) {
            return Err(Error::InvalidParameter("regression weights must lie in [0,1]".into()));
        }
        Ok(EvalWeights { kind: WeightKind::RegressionRho, values })
    }

    pub fn ones(kind: WeightKind, n: usize) -> Self {
        EvalWeights { kind, values: vec![1.0; n] }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `||rho||_inf`.
    pub fn linf(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `||rho||_2`.
    pub fn l2(&self) -> f64 {
        self.values.iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    fn expect_fixed(&self) -> Result<&[f64]> {
        if self.kind != WeightKind::FixedW {
            return Err(Error::InvalidParameter("operation requires fixed_w weights".into()));
        }
        Ok(&self.values)
    }

    fn expect_regression(&self) -> Result<&[f64]> {
        if self.kind != WeightKind::RegressionRho {
            return Err(Error::InvalidParameter("operation requires regression_rho weights".into()));
        }
        Ok(&self.values)
    }
}

/// Matrix functionals consumed by the noise formulas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureNorms {
    /// `||Phi||`, the largest singular value of the raw features.
    pub op_norm: f64,
    /// `||(Gamma^{1/2} Phi)^dagger||`: reciprocal of the smallest nonzero
    /// singular value of the weighted features.
    pub pinv_norm: f64,
    /// `||Gamma^{1/2} Phi||_F`.
    pub frob_norm: f64,
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Scales row `s` of `phi` by `sqrt(scale[s])`.
fn row_scaled(phi: &DMatrix<f64>, scale: &[f64]) -> DMatrix<f64> {
    let mut out = phi.clone();
    for (s, &c) in scale.iter().enumerate() {
        let root = c.sqrt();
        for j in 0..out.ncols() {
            out[(s, j)] *= root;
        }
    }
    out
}

/// Operator, pseudo-inverse and Frobenius norms for the weighted features.
/// `weights` must be the fixed-weight kind; the operator norm ignores them.
pub fn feature_norms(features: &FeatureMap, weights: &EvalWeights) -> Result<FeatureNorms> {
    let w = weights.expect_fixed()?;
    if w.len() != features.n_states() {
        return Err(Error::InvalidParameter("weight length must match feature rows".into()));
    }
    let scaled = row_scaled(features.matrix(), w);
    let sv = singular_values(&scaled);
    let largest = sv[0];
    let cutoff = RANK_TOL * largest;
    // sv is sorted descending; the smallest nonzero is the last above cutoff.
    let smallest_nonzero = sv.iter().rev().copied().find(|&s| s > cutoff).unwrap_or(0.0);
    let pinv_norm = if smallest_nonzero > 0.0 { 1.0 / smallest_nonzero } else { 0.0 };
    Ok(FeatureNorms {
        op_norm: features.op_norm(),
        pinv_norm,
        frob_norm: scaled.iter().map(|x| x * x).sum::<f64>().sqrt(),
    })
}

/// Applies the pseudo-inverse of `a` to `y` through an SVD. When
/// `require_full_rank` is set, a singular value below the relative cutoff is
/// a hard error instead of being truncated.
fn pinv_apply(a: &DMatrix<f64>, y: &DVector<f64>, require_full_rank: bool) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let largest = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = RANK_TOL * largest;
    if require_full_rank {
        let smallest = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        if largest == 0.0 || smallest <= cutoff || svd.singular_values.len() < a.ncols() {
            return Err(Error::RankDeficient { smallest, tol: cutoff });
        }
    }
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut coeffs = u.transpose() * y;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        coeffs[i] = if s > cutoff { coeffs[i] / s } else { 0.0 };
    }
    Ok(vt.transpose() * coeffs)
}

/// Fixed-weight least-squares solution
/// `theta = (Gamma^{1/2} Phi)^dagger Gamma^{1/2} F_X`.
///
/// Errors when the weighted feature matrix is not full column rank, since
/// the objective then has no unique minimizer.
pub fn solve_lsw(
    summary: &DatasetSummary,
    features: &FeatureMap,
    weights: &EvalWeights,
) -> Result<DVector<f64>> {
    let w = weights.expect_fixed()?;
    check_dims(summary, features, w.len())?;
    let scaled = row_scaled(features.matrix(), w);
    let y = DVector::from_iterator(
        w.len(),
        summary.f_x.iter().zip(w).map(|(&f, &ws)| ws.sqrt() * f),
    );
    pinv_apply(&scaled, &y, true)
}

/// Ridge solution
/// `theta = (Phi' Gamma_X Phi + (lambda/2m) I)^{-1} Phi' Gamma_X F_X`,
/// with `Gamma_X(s,s) = rho_s |X_s| / m`. Always well-posed for
/// `lambda > 0`.
pub fn solve_lsl(
    summary: &DatasetSummary,
    features: &FeatureMap,
    rho: &EvalWeights,
    lambda: f64,
) -> Result<DVector<f64>> {
    let r = rho.expect_regression()?;
    check_dims(summary, features, r.len())?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
    }
    let m = summary.m() as f64;
    let gamma_x: Vec<f64> = r
        .iter()
        .zip(&summary.signature.counts)
        .map(|(&rho_s, &c)| rho_s * c as f64 / m)
        .collect();
    let scaled = row_scaled(features.matrix(), &gamma_x);
    let y = DVector::from_iterator(
        gamma_x.len(),
        summary.f_x.iter().zip(&gamma_x).map(|(&f, &g)| g.sqrt() * f),
    );
    // theta = V (S^2 + lambda/2m)^{-1} S U' y for scaled = U S V'.
    let svd = scaled.svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let ridge = lambda / (2.0 * m);
    let mut coeffs = u.transpose() * y;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        coeffs[i] *= s / (s * s + ridge);
    }
    Ok(vt.transpose() * coeffs)
}

/// `J^w(theta) = sum_s w_s (F_X(s) - phi_s' theta)^2`.
pub fn empirical_risk_w(
    theta: &DVector<f64>,
    summary: &DatasetSummary,
    features: &FeatureMap,
    weights: &EvalWeights,
) -> Result<f64> {
    let w = weights.expect_fixed()?;
    check_dims(summary, features, w.len())?;
    let pred = features.predict(theta);
    Ok(summary
        .f_x
        .iter()
        .zip(w)
        .zip(pred.iter())
        .map(|((&f, &ws), &p)| ws * (f - p) * (f - p))
        .sum())
}

/// `J^lambda(theta)`: per-trajectory weighted residuals plus the ridge term.
/// Uses the retained per-trajectory first-visit returns, not the averages.
pub fn empirical_risk_lambda(
    theta: &DVector<f64>,
    summary: &DatasetSummary,
    features: &FeatureMap,
    rho: &EvalWeights,
    lambda: f64,
) -> Result<f64> {
    let r = rho.expect_regression()?;
    check_dims(summary, features, r.len())?;
    let m = summary.m() as f64;
    let pred = features.predict(theta);
    let mut total = 0.0;
    for fv in &summary.per_trajectory {
        for &(s, f) in fv {
            let resid = f - pred[s];
            total += r[s] * resid * resid;
        }
    }
    Ok(total / m + lambda / (2.0 * m) * theta.norm_squared())
}

/// Analytic gradient of `J^w`: `2 Phi' Gamma (Phi theta - F_X)`.
pub fn risk_gradient_w(
    theta: &DVector<f64>,
    summary: &DatasetSummary,
    features: &FeatureMap,
    weights: &EvalWeights,
) -> Result<DVector<f64>> {
    let w = weights.expect_fixed()?;
    check_dims(summary, features, w.len())?;
    let resid = features.predict(theta)
        - DVector::from_iterator(summary.f_x.len(), summary.f_x.iter().copied());
    let weighted = DVector::from_iterator(w.len(), resid.iter().zip(w).map(|(&r, &ws)| 2.0 * ws * r));
    Ok(features.matrix().transpose() * weighted)
}

/// Analytic gradient of `J^lambda`:
/// `2 Phi' Gamma_X (Phi theta - F_X) + (lambda/m) theta`.
pub fn risk_gradient_lambda(
    theta: &DVector<f64>,
    summary: &DatasetSummary,
    features: &FeatureMap,
    rho: &EvalWeights,
    lambda: f64,
) -> Result<DVector<f64>> {
    let r = rho.expect_regression()?;
    check_dims(summary, features, r.len())?;
    let m = summary.m() as f64;
    let resid = features.predict(theta)
        - DVector::from_iterator(summary.f_x.len(), summary.f_x.iter().copied());
    let weighted = DVector::from_iterator(
        r.len(),
        resid
            .iter()
            .zip(r)
            .zip(&summary.signature.counts)
            .map(|((&res, &rho_s), &c)| 2.0 * rho_s * c as f64 / m * res),
    );
    Ok(features.matrix().transpose() * weighted + (lambda / m) * theta)
}

fn check_dims(summary: &DatasetSummary, features: &FeatureMap, weight_len: usize) -> Result<()> {
    let n = summary.n_states();
    if features.n_states() != n || weight_len != n {
        return Err(Error::InvalidParameter(format!(
            "dimension mismatch: {n} states, {} feature rows, {weight_len} weights",
            features.n_states()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::returns::{aggregate, Trajectory, TrajectoryDataset};
    use crate::rng::SeedStream;
    use approx::assert_relative_eq;

    fn summary_from(f_x: Vec<f64>, counts: Vec<usize>, m: usize) -> DatasetSummary {
        // Synthetic summary with one per-trajectory map per count unit; the
        // per-trajectory maps replay each state's average so both risk paths
        // agree on simple fixtures.
        let per_trajectory = (0..m)
            .map(|i| {
                f_x.iter()
                    .enumerate()
                    .filter(|&(s, _)| i < counts[s])
                    .map(|(s, &f)| (s, f))
                    .collect()
            })
            .collect();
        DatasetSummary {
            f_x,
            signature: crate::returns::Signature { counts, m },
            per_trajectory,
        }
    }

    #[test]
    fn feature_norms_identity() {
        let phi = FeatureMap::identity(4);
        let w = EvalWeights::fixed(vec![1.0; 4]).unwrap();
        let norms = feature_norms(&phi, &w).unwrap();
        assert_relative_eq!(norms.op_norm, 1.0, max_relative = 1e-12);
        assert_relative_eq!(norms.pinv_norm, 1.0, max_relative = 1e-12);
        assert_relative_eq!(norms.frob_norm, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn feature_norms_column_of_ones() {
        let phi = FeatureMap::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        let w = EvalWeights::fixed(vec![1.0, 1.0]).unwrap();
        let norms = feature_norms(&phi, &w).unwrap();
        assert_relative_eq!(norms.op_norm, 2f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(norms.pinv_norm, 1.0 / 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn feature_norms_scaled_weights() {
        let n = 3;
        let phi = FeatureMap::identity(n);
        let w = EvalWeights::fixed(vec![4.0; n]).unwrap();
        let norms = feature_norms(&phi, &w).unwrap();
        assert_relative_eq!(norms.pinv_norm, 0.5, max_relative = 1e-12);
        assert_relative_eq!(norms.frob_norm, 2.0 * (n as f64).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn solve_lsw_identity_features_reproduce_targets() {
        let s = summary_from(vec![0.3, 0.7, 0.1], vec![2, 1, 3], 3);
        let phi = FeatureMap::identity(3);
        let w = EvalWeights::fixed(vec![1.0, 2.0, 5.0]).unwrap();
        let theta = solve_lsw(&s, &phi, &w).unwrap();
        for i in 0..3 {
            assert_relative_eq!(theta[i], s.f_x[i], max_relative = 1e-10);
        }
    }

    #[test]
    fn solve_lsw_column_of_ones_averages() {
        let s = summary_from(vec![1.0, 3.0], vec![1, 1], 1);
        let phi = FeatureMap::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0])).unwrap();
        let w = EvalWeights::fixed(vec![1.0, 1.0]).unwrap();
        let theta = solve_lsw(&s, &phi, &w).unwrap();
        assert_relative_eq!(theta[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn solve_lsw_invariant_to_uniform_weight_rescale() {
        let s = summary_from(vec![0.2, 0.9, 0.5], vec![1, 2, 1], 2);
        let phi = FeatureMap::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]))
            .unwrap();
        let w1 = EvalWeights::fixed(vec![0.5, 1.0, 2.0]).unwrap();
        let w2 = EvalWeights::fixed(vec![1.0, 2.0, 4.0]).unwrap();
        let t1 = solve_lsw(&s, &phi, &w1).unwrap();
        let t2 = solve_lsw(&s, &phi, &w2).unwrap();
        assert_relative_eq!((t1 - t2).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn solve_lsw_residual_satisfies_normal_equations() {
        let s = summary_from(vec![0.4, 0.1, 0.8, 0.2], vec![3, 1, 2, 2], 3);
        let phi = FeatureMap::new(DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 0.5, 0.0, 1.0, 1.0, 1.0, 2.0, 0.0],
        ))
        .unwrap();
        let w = EvalWeights::fixed(vec![1.0, 0.5, 2.0, 1.5]).unwrap();
        let theta = solve_lsw(&s, &phi, &w).unwrap();
        // ||Phi' G Phi theta - Phi' G F|| <= 1e-8 ||Phi' G F|| (inf norm)
        let g = DMatrix::from_diagonal(&DVector::from_vec(w.values().to_vec()));
        let lhs = phi.matrix().transpose() * &g * phi.matrix() * &theta;
        let rhs = phi.matrix().transpose()
            * &g
            * DVector::from_iterator(4, s.f_x.iter().copied());
        assert!((lhs - &rhs).amax() <= 1e-8 * rhs.amax());
    }

    #[test]
    fn solve_lsw_detects_rank_deficiency() {
        // Two identical columns cannot be identified.
        let s = summary_from(vec![1.0, 2.0], vec![1, 1], 1);
        let phi =
            FeatureMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0])).unwrap();
        let w = EvalWeights::fixed(vec![1.0, 1.0]).unwrap();
        match solve_lsw(&s, &phi, &w) {
            Err(Error::RankDeficient { .. }) => {}
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn solve_lsl_scalar_closed_form() {
        // N = d = 1, count 1 of m = 1, rho = 1, F = 1, lambda = 1:
        // theta = 1/(1 + 0.5) = 2/3.
        let s = summary_from(vec![1.0], vec![1], 1);
        let phi = FeatureMap::identity(1);
        let rho = EvalWeights::regression(vec![1.0]).unwrap();
        let theta = solve_lsl(&s, &phi, &rho, 1.0).unwrap();
        assert_relative_eq!(theta[0], 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn solve_lsl_huge_lambda_shrinks_to_zero() {
        let s = summary_from(vec![0.5, 0.25], vec![2, 1], 2);
        let phi = FeatureMap::identity(2);
        let rho = EvalWeights::regression(vec![1.0, 1.0]).unwrap();
        let theta = solve_lsl(&s, &phi, &rho, 1e12).unwrap();
        assert!(theta.norm() <= 1e-10, "theta = {theta}");
    }

    #[test]
    fn solve_lsl_ignores_unvisited_rows() {
        let s = summary_from(vec![0.5, 0.0], vec![2, 0], 2);
        let phi1 = FeatureMap::new(DMatrix::from_row_slice(2, 1, &[1.0, 3.0])).unwrap();
        let phi2 = FeatureMap::new(DMatrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        let rho = EvalWeights::regression(vec![1.0, 1.0]).unwrap();
        let t1 = solve_lsl(&s, &phi1, &rho, 2.0).unwrap();
        let t2 = solve_lsl(&s, &phi2, &rho, 2.0).unwrap();
        assert_relative_eq!(t1[0], t2[0], max_relative = 1e-12);
    }

    #[test]
    fn risk_w_examples() {
        let s = summary_from(vec![1.0, 0.0], vec![1, 1], 1);
        let phi = FeatureMap::identity(2);
        let w = EvalWeights::fixed(vec![1.0, 1.0]).unwrap();
        // Perfect fit has zero risk.
        let theta = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(empirical_risk_w(&theta, &s, &phi, &w).unwrap(), 0.0);
        // theta = 0 leaves the single unit residual.
        let zero = DVector::zeros(2);
        assert_eq!(empirical_risk_w(&zero, &s, &phi, &w).unwrap(), 1.0);
    }

    #[test]
    fn risk_lambda_scalar_example() {
        // Single trajectory, single state, theta = 2/3, lambda = 1:
        // (1 - 2/3)^2 + 0.5 (2/3)^2 = 1/3.
        let s = summary_from(vec![1.0], vec![1], 1);
        let phi = FeatureMap::identity(1);
        let rho = EvalWeights::regression(vec![1.0]).unwrap();
        let theta = DVector::from_vec(vec![2.0 / 3.0]);
        let j = empirical_risk_lambda(&theta, &s, &phi, &rho, 1.0).unwrap();
        assert_relative_eq!(j, 1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn risk_lambda_at_zero_matches_weighted_target_energy() {
        let s = summary_from(vec![0.5, 0.25], vec![2, 1], 2);
        let phi = FeatureMap::identity(2);
        let rho = EvalWeights::regression(vec![1.0, 0.5]).unwrap();
        let zero = DVector::zeros(2);
        let j = empirical_risk_lambda(&zero, &s, &phi, &rho, 3.0).unwrap();
        // (1/m) sum_i sum_s rho_s F_{x_i,s}^2
        let mut expect = 0.0;
        for fv in &s.per_trajectory {
            for &(st, f) in fv {
                expect += rho.values()[st] * f * f;
            }
        }
        expect /= s.m() as f64;
        assert_relative_eq!(j, expect, max_relative = 1e-12);
    }

    #[test]
    fn solutions_minimize_their_objectives() {
        let s = summary_from(vec![0.7, 0.2, 0.9], vec![3, 1, 2], 3);
        let phi = FeatureMap::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 1.0]))
            .unwrap();
        let w = EvalWeights::fixed(vec![1.0, 2.0, 0.5]).unwrap();
        let rho = EvalWeights::regression(vec![1.0, 0.8, 0.5]).unwrap();
        let lambda = 0.7;
        let tw = solve_lsw(&s, &phi, &w).unwrap();
        let tl = solve_lsl(&s, &phi, &rho, lambda).unwrap();
        let jw = empirical_risk_w(&tw, &s, &phi, &w).unwrap();
        let jl = empirical_risk_lambda(&tl, &s, &phi, &rho, lambda).unwrap();
        let mut rng = SeedStream::new(5);
        for _ in 0..100 {
            let cand = DVector::from_fn(2, |_, _| 2.0 * rng.standard_normal());
            assert!(empirical_risk_w(&cand, &s, &phi, &w).unwrap() >= jw - 1e-12);
            assert!(empirical_risk_lambda(&cand, &s, &phi, &rho, lambda).unwrap() >= jl - 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = summary_from(vec![0.4, 0.9, 0.1, 0.6], vec![2, 3, 1, 2], 3);
        let phi = FeatureMap::new(DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.2, 0.0, 0.0, 1.0, 0.3, 0.7, 0.0, 1.0, 0.1, 0.4, 0.5],
        ))
        .unwrap();
        let w = EvalWeights::fixed(vec![1.0, 0.4, 2.0, 1.1]).unwrap();
        let rho = EvalWeights::regression(vec![0.9, 1.0, 0.3, 0.7]).unwrap();
        let lambda = 1.3;
        let h = 1e-6;
        let mut rng = SeedStream::new(21);
        for _ in 0..20 {
            let theta = DVector::from_fn(3, |_, _| rng.standard_normal());
            let gw = risk_gradient_w(&theta, &s, &phi, &w).unwrap();
            let gl = risk_gradient_lambda(&theta, &s, &phi, &rho, lambda).unwrap();
            for k in 0..3 {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                let fd_w = (empirical_risk_w(&up, &s, &phi, &w).unwrap()
                    - empirical_risk_w(&dn, &s, &phi, &w).unwrap())
                    / (2.0 * h);
                let fd_l = (empirical_risk_lambda(&up, &s, &phi, &rho, lambda).unwrap()
                    - empirical_risk_lambda(&dn, &s, &phi, &rho, lambda).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(gw[k], fd_w, max_relative = 1e-5, epsilon = 1e-7);
                assert_relative_eq!(gl[k], fd_l, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn ridge_solution_norm_bound() {
        // ||theta|| <= sqrt(m / 2 lambda) * F_bound * sqrt(sum rho_s |X_s| / m)
        // with returns bounded by r_max/(1-gamma); checked on sampled chains.
        let mdp = crate::mdp::build_chain(6, 0.4, 0.9).unwrap();
        let sampler = crate::mdp::TrajectorySampler::new(&mdp);
        let mut rng = SeedStream::new(33);
        for round in 0..20 {
            let m = 1 + (round % 5);
            let trajs: Vec<Trajectory> =
                (0..m).map(|_| sampler.sample(&mut rng).unwrap()).collect();
            let d = TrajectoryDataset::new(trajs).unwrap();
            let s = aggregate(&d, mdp.gamma(), 5).unwrap();
            let phi = FeatureMap::identity(5);
            let rho = EvalWeights::regression(vec![1.0; 5]).unwrap();
            let lambda = 0.5 + round as f64 * 0.3;
            let theta = solve_lsl(&s, &phi, &rho, lambda).unwrap();
            let f_bound = mdp.r_max() / (1.0 - mdp.gamma());
            let mass: f64 = s
                .signature
                .counts
                .iter()
                .map(|&c| c as f64 / s.m() as f64)
                .sum();
            let bound = (s.m() as f64 / (2.0 * lambda)).sqrt() * f_bound * mass.sqrt();
            assert!(theta.norm() <= bound * (1.0 + 1e-9), "{} > {bound}", theta.norm());
        }
    }

    #[test]
    fn strong_convexity_witness() {
        let s = summary_from(vec![0.7, 0.2, 0.9], vec![3, 1, 2], 3);
        let phi = FeatureMap::identity(3);
        let rho = EvalWeights::regression(vec![1.0, 0.6, 0.9]).unwrap();
        let lambda = 0.8;
        let m = s.m() as f64;
        let mut rng = SeedStream::new(8);
        for _ in 0..50 {
            let t1 = DVector::from_fn(3, |_, _| rng.standard_normal());
            let t2 = DVector::from_fn(3, |_, _| rng.standard_normal());
            let j1 = empirical_risk_lambda(&t1, &s, &phi, &rho, lambda).unwrap();
            let j2 = empirical_risk_lambda(&t2, &s, &phi, &rho, lambda).unwrap();
            let g2 = risk_gradient_lambda(&t2, &s, &phi, &rho, lambda).unwrap();
            let gap = j1 - j2 - g2.dot(&(&t1 - &t2));
            let quad = lambda / (2.0 * m) * (&t1 - &t2).norm_squared();
            assert!(gap >= quad - 1e-9, "gap {gap} < {quad}");
        }
    }
}
