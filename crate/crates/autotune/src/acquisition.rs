//! Expected Improvement and next-point proposal.
//!
//! EI is computed in the maximization convention: the improvement of a draw
//! `F(x)` over the incumbent value `f+` is `max(F(x) - f+, 0)`. Small spaces
//! are scored exhaustively; larger ones through a uniformly drawn candidate
//! pool. Already-evaluated configurations are never proposed again unless the
//! space is exhausted, which is an error.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::Distribution;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::gp::{GpError, GpModel, Posterior};
use crate::space::{Configuration, SearchSpace, SpaceError};

/// Default candidate-pool size for spaces too large to enumerate.
pub const DEFAULT_POOL_SIZE: usize = 2048;

/// The best configuration observed so far and its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub config: Configuration,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("search space exhausted: every configuration has been evaluated")]
    Exhausted,
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Closed-form Expected Improvement of a Gaussian posterior over `f_plus`:
/// `(mu - f+) Phi(z) + sigma phi(z)` with `z = (mu - f+) / sigma`, and the
/// degenerate value `max(mu - f+, 0)` when the posterior is deterministic.
pub fn expected_improvement(p: &Posterior, f_plus: f64) -> f64 {
    let sigma = p.variance.max(0.0).sqrt();
    let delta = p.mean - f_plus;
    if sigma == 0.0 {
        return delta.max(0.0);
    }
    let z = delta / sigma;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (delta * normal.cdf(z) + sigma * normal.pdf(z)).max(0.0)
}

/// Monte-Carlo estimate of the same expectation: the sample mean of
/// `max(draw - f_plus, 0)` over `n_samples` Gaussian draws, with its standard
/// error. Serves as the independent cross-check for the closed form.
pub fn ei_monte_carlo<R: Rng + ?Sized>(
    p: &Posterior,
    f_plus: f64,
    n_samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let sigma = p.variance.max(0.0).sqrt();
    if sigma == 0.0 {
        return ((p.mean - f_plus).max(0.0), 0.0);
    }
    let dist = rand_distr::Normal::new(p.mean, sigma).expect("finite parameters");
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let v = (dist.sample(rng) - f_plus).max(0.0);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let sample_var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (sample_var / n).sqrt())
}

/// Propose the next configuration to evaluate by maximizing EI.
///
/// When the space's cardinality is at most `pool_size` every unevaluated
/// configuration is scored; otherwise `pool_size` uniform candidates are
/// drawn and the already-evaluated ones removed. Ties break toward the
/// earliest candidate in enumeration/draw order. If every candidate in the
/// pool has been evaluated, a fresh uniform unevaluated sample is used.
pub fn propose_next<R: Rng + ?Sized>(
    model: &GpModel,
    space: &SearchSpace,
    incumbent: &Incumbent,
    evaluated: &HashSet<Configuration>,
    rng: &mut R,
    pool_size: usize,
) -> Result<Configuration, AcquisitionError> {
    let cardinality = space.cardinality().finite();
    if let Some(n) = cardinality {
        if evaluated.len() as u128 >= n {
            return Err(AcquisitionError::Exhausted);
        }
        if n <= pool_size.max(1) as u128 {
            let fresh = space
                .enumerate()?
                .into_iter()
                .filter(|c| !evaluated.contains(c));
            return argmax_ei(model, space, incumbent.value, fresh);
        }
    }

    let fresh: Vec<Configuration> = (0..pool_size.max(1))
        .map(|_| space.sample_uniform(rng))
        .filter(|c| !evaluated.contains(c))
        .collect();
    if !fresh.is_empty() {
        return argmax_ei(model, space, incumbent.value, fresh.into_iter());
    }

    // Every pool candidate was already evaluated: fall back to a fresh
    // uniform unevaluated sample.
    for _ in 0..pool_size.max(1).saturating_mul(10) {
        let c = space.sample_uniform(rng);
        if !evaluated.contains(&c) {
            return Ok(c);
        }
    }
    // Deterministic sweep as the last resort on finite spaces.
    if cardinality.is_some() {
        for c in space.enumerate()? {
            if !evaluated.contains(&c) {
                return Ok(c);
            }
        }
    }
    Err(AcquisitionError::Exhausted)
}

fn argmax_ei(
    model: &GpModel,
    space: &SearchSpace,
    f_plus: f64,
    candidates: impl Iterator<Item = Configuration>,
) -> Result<Configuration, AcquisitionError> {
    let mut best: Option<(Configuration, f64)> = None;
    for candidate in candidates {
        let encoded = space.encode(&candidate)?;
        let posterior = model.posterior(&encoded)?;
        let ei = expected_improvement(&posterior, f_plus);
        match &best {
            Some((_, best_ei)) if ei <= *best_ei => {}
            _ => best = Some((candidate, ei)),
        }
    }
    best.map(|(c, _)| c).ok_or(AcquisitionError::Exhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{optimize_hyperparams, KernelParams};
    use crate::space::{ParamDomain, ParamSpec, ParamValue};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn posterior(mean: f64, variance: f64) -> Posterior {
        Posterior { mean, variance }
    }

    fn small_space() -> SearchSpace {
        SearchSpace::new(vec![
            ParamSpec::new("x", ParamDomain::OrdinalGrid((0..10).map(f64::from).collect())),
            ParamSpec::new("y", ParamDomain::IntegerRange { lo: 0, hi: 9 }),
        ])
    }

    /// Deterministic objective with the maximum at x=7, y=3.
    fn objective(c: &Configuration) -> f64 {
        let x = c.get("x").unwrap().as_f64().unwrap();
        let y = c.get("y").unwrap().as_f64().unwrap();
        -((x - 7.0) / 9.0).powi(2) - ((y - 3.0) / 9.0).powi(2)
    }

    fn fitted_model(space: &SearchSpace, n: usize, seed: u64) -> (GpModel, Incumbent, HashSet<Configuration>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut evaluated = HashSet::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut best: Option<Incumbent> = None;
        while xs.len() < n {
            let c = space.sample_uniform(&mut rng);
            if !evaluated.insert(c.clone()) {
                continue;
            }
            let v = objective(&c);
            xs.push(space.encode(&c).unwrap());
            ys.push(v);
            if best.as_ref().is_none_or(|b| v > b.value) {
                best = Some(Incumbent { config: c, value: v });
            }
        }
        let params = optimize_hyperparams(&xs, &ys);
        let mu0 = ys.iter().sum::<f64>() / ys.len() as f64;
        let model = GpModel::fit(&xs, &ys, mu0, params).unwrap();
        (model, best.unwrap(), evaluated)
    }

    #[test]
    fn ei_degenerate_at_incumbent_is_zero() {
        assert_eq!(expected_improvement(&posterior(1.0, 0.0), 1.0), 0.0);
    }

    #[test]
    fn ei_at_incumbent_with_unit_sigma_is_phi_zero() {
        let ei = expected_improvement(&posterior(0.0, 1.0), 0.0);
        let expected = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((ei - expected).abs() < 1e-9);
        assert!((ei - 0.398_942).abs() < 1e-6);

        // Cross-checked against the Monte-Carlo estimator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (estimate, se) = ei_monte_carlo(&posterior(0.0, 1.0), 0.0, 1_000_000, &mut rng);
        assert!((ei - estimate).abs() <= 3.0 * se);
    }

    #[test]
    fn ei_with_certain_improvement_approaches_the_gap() {
        let ei = expected_improvement(&posterior(3.0, 1e-12), 0.0);
        assert!((ei - 3.0).abs() < 1e-6);
    }

    #[test]
    fn monte_carlo_degenerate_case_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (est, se) = ei_monte_carlo(&posterior(2.0, 0.0), 0.5, 10_000, &mut rng);
        assert_eq!(est, 1.5);
        assert_eq!(se, 0.0);
        let (est, se) = ei_monte_carlo(&posterior(-2.0, 0.0), 0.5, 10_000, &mut rng);
        assert_eq!(est, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_per_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            ei_monte_carlo(&posterior(0.3, 0.8), 0.1, 50_000, &mut rng)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn closed_form_agrees_with_monte_carlo_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let mu = rng.gen_range(-2.0..2.0);
            // Every fifth triple exercises the degenerate branch.
            let sigma2 = if trial % 5 == 4 {
                0.0
            } else {
                rng.gen_range(0.01..4.0)
            };
            let f_plus = rng.gen_range(-2.0..2.0);
            let p = posterior(mu, sigma2);
            let ei = expected_improvement(&p, f_plus);
            let (est, se) = ei_monte_carlo(&p, f_plus, 1_000_000, &mut rng);
            if sigma2 == 0.0 {
                assert_eq!(ei, est);
            } else {
                assert!(
                    (ei - est).abs() <= 3.0 * se,
                    "trial {trial}: |{ei} - {est}| > 3 * {se}"
                );
            }
        }
    }

    #[test]
    fn ei_is_monotone_in_mean_and_spread() {
        let f_plus = 0.5;
        let mut prev = -1.0;
        for i in 0..50 {
            let mu = -2.0 + i as f64 * 0.1;
            let ei = expected_improvement(&posterior(mu, 0.7), f_plus);
            assert!(ei > prev, "EI not strictly increasing in mean at {mu}");
            prev = ei;
        }
        // For mu <= f+ the EI grows with sigma.
        let mut prev = 0.0;
        for i in 1..40 {
            let sigma = i as f64 * 0.1;
            let ei = expected_improvement(&posterior(0.0, sigma * sigma), f_plus);
            assert!(ei > prev, "EI not increasing in sigma at {sigma}");
            prev = ei;
        }
    }

    #[test]
    fn forced_choice_returns_the_single_remaining_configuration() {
        let space = SearchSpace::new(vec![
            ParamSpec::new(
                "c",
                ParamDomain::Categorical(vec!["a".into(), "b".into(), "c".into(), "d".into()]),
            ),
            ParamSpec::new("g", ParamDomain::OrdinalGrid(vec![1.0, 2.0, 3.0])),
        ]);
        let all = space.enumerate().unwrap();
        assert_eq!(all.len(), 12);
        let mut evaluated: HashSet<Configuration> = all.iter().cloned().collect();
        let remaining = all[5].clone();
        evaluated.remove(&remaining);

        let xs: Vec<_> = evaluated.iter().map(|c| space.encode(c).unwrap()).collect();
        let ys: Vec<f64> = (0..xs.len()).map(|i| i as f64 * 0.01).collect();
        let model = GpModel::fit(&xs, &ys, 0.0, KernelParams::isotropic(space.encoded_dim())).unwrap();
        let incumbent = Incumbent {
            config: all[0].clone(),
            value: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = propose_next(&model, &space, &incumbent, &evaluated, &mut rng, 2048).unwrap();
        assert_eq!(got, remaining);
    }

    #[test]
    fn exhausted_space_is_an_error() {
        let space = SearchSpace::new(vec![ParamSpec::new(
            "g",
            ParamDomain::OrdinalGrid(vec![1.0, 2.0]),
        )]);
        let all = space.enumerate().unwrap();
        let evaluated: HashSet<Configuration> = all.iter().cloned().collect();
        let xs: Vec<_> = all.iter().map(|c| space.encode(c).unwrap()).collect();
        let model = GpModel::fit(&xs, &[0.0, 1.0], 0.5, KernelParams::isotropic(1)).unwrap();
        let incumbent = Incumbent {
            config: all[1].clone(),
            value: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            propose_next(&model, &space, &incumbent, &evaluated, &mut rng, 16),
            Err(AcquisitionError::Exhausted)
        ));
    }

    #[test]
    fn exhaustive_mode_matches_brute_force_scan() {
        let space = small_space();
        assert_eq!(space.cardinality().finite(), Some(100));
        for seed in 0..10 {
            let (model, incumbent, evaluated) = fitted_model(&space, 12, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let got = propose_next(&model, &space, &incumbent, &evaluated, &mut rng, 500).unwrap();

            // Brute-force oracle: score every unevaluated configuration.
            let mut best: Option<(Configuration, f64)> = None;
            for c in space.enumerate().unwrap() {
                if evaluated.contains(&c) {
                    continue;
                }
                let p = model.posterior(&space.encode(&c).unwrap()).unwrap();
                let ei = expected_improvement(&p, incumbent.value);
                if best.as_ref().is_none_or(|(_, b)| ei > *b) {
                    best = Some((c, ei));
                }
            }
            assert_eq!(got, best.unwrap().0, "seed {seed}");
        }
    }

    #[test]
    fn proposal_is_invariant_under_constant_shift() {
        let space = small_space();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut evaluated = HashSet::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        while xs.len() < 15 {
            let c = space.sample_uniform(&mut rng);
            if evaluated.insert(c.clone()) {
                xs.push(space.encode(&c).unwrap());
                ys.push(objective(&c));
            }
        }
        let shift = 42.0;
        let propose_for = |targets: &[f64]| {
            let params = optimize_hyperparams(&xs, targets);
            let mu0 = targets.iter().sum::<f64>() / targets.len() as f64;
            let model = GpModel::fit(&xs, targets, mu0, params).unwrap();
            let best_idx = (0..targets.len())
                .max_by(|a, b| targets[*a].partial_cmp(&targets[*b]).unwrap())
                .unwrap();
            let incumbent = Incumbent {
                config: space.decode(&xs[best_idx]).unwrap(),
                value: targets[best_idx],
            };
            let mut rng = ChaCha8Rng::seed_from_u64(777);
            propose_next(&model, &space, &incumbent, &evaluated, &mut rng, 500).unwrap()
        };
        let shifted: Vec<f64> = ys.iter().map(|y| y + shift).collect();
        assert_eq!(propose_for(&ys), propose_for(&shifted));
    }

    #[test]
    fn pool_mode_never_returns_an_evaluated_configuration() {
        // Cardinality 100 with a pool of 8 forces pool mode.
        let space = small_space();
        for seed in 0..5 {
            let (model, incumbent, evaluated) = fitted_model(&space, 30, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = propose_next(&model, &space, &incumbent, &evaluated, &mut rng, 8).unwrap();
            assert!(!evaluated.contains(&got));
        }
    }

    #[test]
    fn proposal_is_deterministic() {
        let space = small_space();
        let (model, incumbent, evaluated) = fitted_model(&space, 20, 5);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            propose_next(&model, &space, &incumbent, &evaluated, &mut rng, 8).unwrap()
        };
        assert_eq!(run(11), run(11));
    }

    proptest! {
        #[test]
        fn ei_is_never_negative(
            mean in -1e3..1e3f64,
            variance in 0.0..1e4f64,
            f_plus in -1e3..1e3f64,
        ) {
            let ei = expected_improvement(&Posterior { mean, variance }, f_plus);
            prop_assert!(ei >= 0.0);
            prop_assert!(ei.is_finite());
        }

        #[test]
        fn ei_zero_when_deterministic_and_not_improving(
            mean in -1e3..1e3f64,
            gap in 0.0..1e3f64,
        ) {
            let f_plus = mean + gap;
            let ei = expected_improvement(&Posterior { mean, variance: 0.0 }, f_plus);
            prop_assert_eq!(ei, 0.0);
        }
    }
}
