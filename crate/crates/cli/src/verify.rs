//! The `dpeval verify` oracle suite: each check either prints a PASS line
//! with its worst observed margin or a FAIL line with the panic message,
//! and the command exits nonzero if anything failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use clap::Args;

use dpeval_core::estimators::{EvalWeights, FeatureMap};
use dpeval_core::mdp::{build_chain, visit_probabilities};
use dpeval_core::oracle::{
    binomial_lemma_check, calibration_check, check_smoothness, local_sensitivity_oracle,
    max_lemma_check, mc_visit_stats, noise_expectation_identity_lsl,
    noise_expectation_identity_lsw, pool_points, BoundFamily, NeighborPool, SolverSpec,
};
use dpeval_core::returns::{aggregate, Signature, Trajectory, TrajectoryDataset};
use dpeval_core::rng::SeedStream;
use dpeval_core::sensitivity::{
    privacy_constants, privacy_constants_conservative, sigma_lsl, sigma_lsw, smooth_bound_lambda,
    smooth_bound_w, PrivacyBudget,
};
use dpeval_core::Error;

#[derive(Args)]
pub struct VerifyArgs {
    /// Cap on the number of enumerated neighbor alternatives.
    #[arg(long)]
    pool_size: Option<usize>,
    /// Seed for the randomized checks.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Noise draws for the expectation identities.
    #[arg(long, default_value_t = 20_000)]
    draws: usize,
    /// Use the conservative calibration constants.
    #[arg(long)]
    conservative_constants: bool,
}

fn budget_for(args: &VerifyArgs, epsilon: f64, delta: f64, d: usize) -> Result<PrivacyBudget, Error> {
    if args.conservative_constants {
        privacy_constants_conservative(epsilon, delta, d)
    } else {
        privacy_constants(epsilon, delta, d)
    }
}

fn base_dataset() -> TrajectoryDataset {
    TrajectoryDataset::new(vec![
        Trajectory::new(vec![(0, 0.0), (1, 0.0), (2, 1.0)]).unwrap(),
        Trajectory::new(vec![(1, 1.0)]).unwrap(),
        Trajectory::new(vec![(0, 1.0), (0, 0.0)]).unwrap(),
    ])
    .unwrap()
}

fn truncated_pool(cap: Option<usize>) -> Result<NeighborPool, Error> {
    let pool = NeighborPool::enumerate(base_dataset(), 3, 3, &[0.0, 1.0])?;
    match cap {
        Some(k) if k < pool.alternatives.len() => {
            NeighborPool::new(pool.base, pool.alternatives.into_iter().take(k).collect())
        }
        _ => Ok(pool),
    }
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Result<String, Error>) {
        match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(e)) => {
                println!("FAIL {name}: {e}");
                self.failed += 1;
            }
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                println!("FAIL {name}: {msg}");
                self.failed += 1;
            }
        }
    }
}

pub fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Error> {
    let gamma = 0.5;
    let r_max = 1.0;
    let mut suite = Suite { failed: 0 };

    for mechanism in ["dp-lsw", "dp-lsl"] {
        let args_ref = &args;
        suite.check(&format!("calibration {mechanism}"), || {
            let pool = truncated_pool(args_ref.pool_size)?;
            let phi = FeatureMap::identity(3);
            let budget = budget_for(args_ref, 1.0, 0.1, 3)?;
            let solver = match mechanism {
                "dp-lsw" => SolverSpec::Lsw { w: EvalWeights::fixed(vec![1.0; 3])? },
                _ => SolverSpec::Lsl {
                    rho: EvalWeights::regression(vec![1.0; 3])?,
                    lambda: 2.0,
                },
            };
            let sens = local_sensitivity_oracle(&pool, &solver, &phi, gamma, r_max)?;
            let points = pool_points(&pool, &solver, &phi, gamma, r_max, None, &budget)?;
            let rep = calibration_check(&points, &budget);
            if rep.worst_condition_a > 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "condition (a) violated: ratio {}",
                    rep.worst_condition_a
                )));
            }
            if rep.worst_condition_b > budget.beta + dpeval_core::oracle::LN_SCALE_SLACK {
                return Err(Error::InvalidParameter(format!(
                    "condition (b) violated: {} > beta {}",
                    rep.worst_condition_b, budget.beta
                )));
            }
            if rep.worst_bound_ratio > 1.0 + 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "corollary bound violated: ratio {}",
                    rep.worst_bound_ratio
                )));
            }
            Ok(format!(
                "{} neighbors, {} pairs; local sens {:.4e} <= bound {:.4e}; worst (a) {:.4} of sigma, worst (b) {:.3e} <= beta {:.3e}",
                sens.n_alternatives,
                rep.n_pairs,
                sens.observed_max,
                sens.bound,
                rep.worst_condition_a,
                rep.worst_condition_b,
                budget.beta
            ))
        });
    }

    let args_ref = &args;
    suite.check("smoothness psi^w / psi^l", || {
        let budget = budget_for(args_ref, 0.1, 0.1, 39)?;
        let mut rng = SeedStream::derived(args_ref.seed, &[100]);
        let n = 40;
        let mut signatures = Vec::new();
        let m = 1000;
        for _ in 0..500 {
            let counts: Vec<usize> = (0..n).map(|_| rng.uniform_index(m + 1)).collect();
            let mut bumped = counts.clone();
            for c in bumped.iter_mut() {
                match rng.uniform_index(3) {
                    0 => *c = c.saturating_sub(1),
                    2 => *c = (*c + 1).min(m),
                    _ => {}
                }
            }
            signatures.push(Signature { counts, m });
            signatures.push(Signature { counts: bumped, m });
        }
        let w = BoundFamily::W { w: vec![1.0; n] };
        let worst_w = check_smoothness(&w, &signatures, &budget);
        let l = BoundFamily::Lambda { rho: vec![1.0; n], lambda: 3.0, op_norm: 1.0 };
        let worst_l = check_smoothness(&l, &signatures, &budget);
        Ok(format!(
            "{} signatures; worst |ln psi - ln psi'|: w {:.3e}, lambda {:.3e} (beta {:.3e})",
            signatures.len(),
            worst_w,
            worst_l,
            budget.beta
        ))
    });

    suite.check("noise identity dp-lsw", || {
        let dataset = base_dataset();
        let summary = aggregate(&dataset, gamma, 3)?;
        let phi = FeatureMap::identity(3);
        let w = EvalWeights::fixed(vec![1.0; 3])?;
        let budget = budget_for(args_ref, 1.0, 0.1, 3)?;
        let norms = dpeval_core::estimators::feature_norms(&phi, &w)?;
        let bound = smooth_bound_w(&summary.signature, w.values(), &budget);
        let sigma = sigma_lsw(&bound, &budget, r_max, gamma, None, norms.pinv_norm)?.sigma;
        let mut rng = SeedStream::derived(args_ref.seed, &[200]);
        let id = noise_expectation_identity_lsw(&summary, &phi, &w, sigma, args_ref.draws, &mut rng)?;
        if !id.agrees_within(5.0) {
            return Err(Error::InvalidParameter(format!(
                "empirical {} vs analytic {} (se {})",
                id.empirical_mean, id.analytic, id.std_error
            )));
        }
        Ok(format!(
            "empirical {:.6e} vs analytic {:.6e} over {} draws (se {:.2e})",
            id.empirical_mean, id.analytic, id.n_draws, id.std_error
        ))
    });

    suite.check("noise identity dp-lsl", || {
        let dataset = base_dataset();
        let summary = aggregate(&dataset, gamma, 3)?;
        let phi = FeatureMap::identity(3);
        let rho = EvalWeights::regression(vec![1.0; 3])?;
        let lambda = 2.0;
        let budget = budget_for(args_ref, 1.0, 0.1, 3)?;
        let bound =
            smooth_bound_lambda(&summary.signature, rho.values(), lambda, phi.op_norm(), &budget);
        let sigma = sigma_lsl(&bound, &budget, r_max, gamma, None, phi.op_norm(), 1.0, lambda)?.sigma;
        let mut rng = SeedStream::derived(args_ref.seed, &[201]);
        let id = noise_expectation_identity_lsl(
            &summary, &phi, &rho, lambda, sigma, args_ref.draws, &mut rng,
        )?;
        if !id.agrees_within(5.0) {
            return Err(Error::InvalidParameter(format!(
                "empirical {} vs analytic {} (se {})",
                id.empirical_mean, id.analytic, id.std_error
            )));
        }
        Ok(format!(
            "empirical {:.6e} vs analytic {:.6e} over {} draws (se {:.2e})",
            id.empirical_mean, id.analytic, id.n_draws, id.std_error
        ))
    });

    suite.check("binomial lemmas", || {
        let mut worst = 0.0f64;
        for m in 1..=30 {
            for i in 1..=9 {
                let c = binomial_lemma_check(m, i as f64 / 10.0);
                worst = worst.max((c.e_inv_enumerated - c.e_inv_closed_form).abs());
            }
        }
        Ok(format!("identity residual {:.2e} over m <= 30, p in 0.1..0.9", worst))
    });

    suite.check("max lemmas", || {
        let a_grid: Vec<f64> = (0..10).map(|i| 1.0 + 1.7 * i as f64).collect();
        let b_grid: Vec<f64> = (0..10).map(|i| 0.01 * 2.3f64.powi(i)).collect();
        let worst = max_lemma_check(&a_grid, &b_grid, 40.0);
        Ok(format!("worst closed-form vs grid residual {:.2e} on 100-point grid", worst))
    });

    suite.check("visit probabilities", || {
        let mdp = build_chain(12, 0.4, 0.9)?;
        let exact = visit_probabilities(&mdp)?;
        let n = 50_000;
        let mut rng = SeedStream::derived(args_ref.seed, &[300]);
        let mc = mc_visit_stats(&mdp, n, &mut rng)?;
        let mut worst = 0.0f64;
        for s in 0..exact.p.len() {
            let se = (exact.p[s] * (1.0 - exact.p[s]) / n as f64).sqrt().max(1e-9);
            let dev = (mc.p[s] - exact.p[s]).abs() / se;
            worst = worst.max(dev);
            if dev > 3.0 {
                return Err(Error::InvalidParameter(format!(
                    "state {s}: MC frequency {} vs {} ({dev:.1} se)",
                    mc.p[s], exact.p[s]
                )));
            }
        }
        Ok(format!("chain(12) MC frequencies within 3 se (worst {:.2} se, n = {n})", worst))
    });

    if suite.failed == 0 {
        println!("verify: all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verify: {} check(s) failed", suite.failed);
        Ok(ExitCode::FAILURE)
    }
}
