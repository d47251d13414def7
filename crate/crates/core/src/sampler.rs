//! Monte Carlo samplers for the invariant laws.
//!
//! `sample_z_epsilon` draws from the law of the random backward composition
//! `f_{i_1, y_1} o ... o f_{i_n, y_n}(0)` under the multiplicative model, and
//! `sample_x_lambda` evaluates the random series `X_{lambda, eps}` of the
//! additive-ratio model. With `eps = 0` both reduce to the unperturbed
//! invariant measure.
//!
//! Each sample consumes its own ChaCha stream and draws its `(i_k, u_k)`
//! pairs in order, with the noise value `lo + (hi - lo) u_k`. Two batches
//! with the same seed at different `eps` therefore share their branch choices
//! and uniforms, which keeps comparisons across `eps` free of extra noise.

use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IfsError, Result};
use crate::ifs::{IfsSpec, Perturbation};
use crate::measure::EmpiricalMeasure;
use crate::rng::{map_indexed, stream_rng};

/// Samples further than this outside `[-1, 1]` abort the batch.
pub const ESCAPE_TOL: f64 = 1e-9;
/// Target truncation error for [`default_depth`].
pub const DEFAULT_TRUNCATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleModel {
    /// Backward composition under the multiplicative model.
    ZEpsilon,
    /// Random series under the additive-ratio model.
    XLambda,
}

impl SampleModel {
    pub fn perturbation(self) -> Perturbation {
        match self {
            SampleModel::ZEpsilon => Perturbation::Multiplicative,
            SampleModel::XLambda => Perturbation::AdditiveRatio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub values: Vec<f64>,
    pub n: usize,
    pub truncation_depth: usize,
    /// Uniform bound on `|sample - limit|`.
    pub truncation_bound: f64,
    pub seed: u64,
    pub model: SampleModel,
    pub epsilon: f64,
}

/// Per-step contraction bound: `(1 + eps) lambda_max` or `lambda_max + eps`.
pub fn contraction_factor(ifs: &IfsSpec, epsilon: f64, model: SampleModel) -> f64 {
    match model {
        SampleModel::ZEpsilon => (1.0 + epsilon) * ifs.lambda_max_max(),
        SampleModel::XLambda => ifs.lambda_max_max() + epsilon,
    }
}

/// Smallest depth with `2 q^depth < 1e-9`, `q` the contraction factor.
pub fn default_depth(ifs: &IfsSpec, epsilon: f64, model: SampleModel) -> Result<usize> {
    let q = contraction_factor(ifs, epsilon, model);
    if !(q < 1.0) {
        return Err(IfsError::Hypothesis(format!("contraction factor {q} is not below 1")));
    }
    if q == 0.0 {
        return Ok(1);
    }
    let d = ((DEFAULT_TRUNCATION / 2.0).ln() / q.ln()).floor() as usize + 1;
    Ok(d.max(1))
}

fn prepare(ifs: &IfsSpec, epsilon: f64, n: usize, depth: usize, model: SampleModel) -> Result<IfsSpec> {
    if n == 0 {
        return Err(IfsError::InvalidArgument("n must be >= 1".into()));
    }
    if depth == 0 {
        return Err(IfsError::InvalidArgument("depth must be >= 1".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(IfsError::EpsilonOutOfRange {
            epsilon,
            reason: "epsilon must be >= 0".into(),
        });
    }
    let mut sys = ifs.with_epsilon(epsilon);
    sys.perturbation = model.perturbation();
    if model == SampleModel::XLambda {
        let ratios = sys.ratios()?;
        if let Some(&lambda) = ratios.iter().find(|&&l| l - epsilon <= 0.0) {
            return Err(IfsError::EpsilonOutOfRange {
                epsilon,
                reason: format!("lambda - epsilon = {} must be positive", lambda - epsilon),
            });
        }
    }
    let report = sys.validate();
    if !report.passed() {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        return Err(IfsError::Hypothesis(format!("validation failed: {}", names.join(", "))));
    }
    Ok(sys)
}

fn run_batch<F>(sys: &IfsSpec, epsilon: f64, n: usize, depth: usize, seed: u64, model: SampleModel, one: F) -> Result<SampleBatch>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<f64> + Sync + Send,
{
    let values = map_indexed(n, |k| one(&mut stream_rng(seed, k as u64)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let q = contraction_factor(sys, epsilon, model);
    Ok(SampleBatch {
        values,
        n,
        truncation_depth: depth,
        truncation_bound: 2.0 * q.powi(depth.min(i32::MAX as usize) as i32),
        seed,
        model,
        epsilon,
    })
}

/// `n` independent draws of `Z_eps` truncated at `depth` maps.
pub fn sample_z_epsilon(ifs: &IfsSpec, epsilon: f64, n: usize, depth: usize, seed: u64) -> Result<SampleBatch> {
    let sys = prepare(ifs, epsilon, n, depth, SampleModel::ZEpsilon)?;
    let chooser = sys.chooser()?;
    run_batch(&sys, epsilon, n, depth, seed, SampleModel::ZEpsilon, |rng| {
        let draws: Vec<(usize, f64)> = (0..depth)
            .map(|_| {
                let i = chooser.sample(rng);
                let u: f64 = rng.random();
                (i, 1.0 + epsilon * (2.0 * u - 1.0))
            })
            .collect();
        let mut x = 0.0;
        for (step, &(i, y)) in draws.iter().enumerate().rev() {
            x = sys.apply_perturbed(i, y, x);
            if !(x.abs() <= 1.0 + ESCAPE_TOL) {
                return Err(IfsError::Escape { value: x, step });
            }
        }
        Ok(x)
    })
}

/// `n` independent evaluations of the series `X_{lambda, eps}` truncated at `depth` terms.
pub fn sample_x_lambda(ifs: &IfsSpec, epsilon: f64, n: usize, depth: usize, seed: u64) -> Result<SampleBatch> {
    let sys = prepare(ifs, epsilon, n, depth, SampleModel::XLambda)?;
    let chooser = sys.chooser()?;
    let ratios = sys.ratios()?;
    let fixpoints = sys.fixpoints();
    run_batch(&sys, epsilon, n, depth, seed, SampleModel::XLambda, |rng| {
        let (mut sum, mut prod) = (0.0, 1.0);
        for _ in 0..depth {
            let i = chooser.sample(rng);
            let u: f64 = rng.random();
            let lambda = ratios[i] + epsilon * (2.0 * u - 1.0);
            sum += fixpoints[i] * (1.0 - lambda) * prod;
            prod *= lambda;
        }
        Ok(sum)
    })
}

/// Sorted samples plus an equal-width histogram over `[-1, 1]`.
pub fn empirical_measure(batch: &SampleBatch, bins: usize) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::from_samples(&batch.values)?.with_histogram(bins)
}

/// `sum_i p_i mu o f_i^{-1}`: every atom pushed through every unperturbed map.
pub fn invariance_pushforward(ifs: &IfsSpec, mu: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    let images = ifs
        .maps
        .iter()
        .map(|f| mu.pushforward(|x| f.apply(x)))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<(f64, &EmpiricalMeasure)> = ifs.probabilities.iter().copied().zip(images.iter()).collect();
    EmpiricalMeasure::mixture(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::MapSpec;
    use crate::measure::ks_distance;

    fn system(lambdas: &[f64], fixpoints: &[f64], p: &[f64]) -> IfsSpec {
        let maps = lambdas.iter().zip(fixpoints).map(|(&l, &a)| MapSpec::affine(l, a)).collect();
        IfsSpec::new(maps, p.to_vec(), Perturbation::Multiplicative, 0.0).unwrap()
    }

    fn reference() -> IfsSpec {
        system(&[0.6, 0.6], &[-0.5, 0.5], &[0.5, 0.5])
    }

    fn mean_and_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn single_map_at_origin_gives_zero() {
        let ifs = system(&[0.5], &[0.0], &[1.0]);
        for depth in [1, 7, 40] {
            let b = sample_z_epsilon(&ifs, 0.0, 100, depth, 1).unwrap();
            assert!(b.values.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn single_map_converges_to_fixpoint() {
        let ifs = system(&[0.5], &[0.5], &[1.0]);
        let b = sample_z_epsilon(&ifs, 0.0, 100, 50, 1).unwrap();
        assert!(b.values.iter().all(|&x| (x - 0.5).abs() <= 2.0 * 0.5f64.powi(50)));
        assert_eq!(b.truncation_bound, 2.0 * 0.5f64.powi(50));
    }

    #[test]
    fn symmetric_system_has_zero_mean() {
        let n = 100_000;
        let b = sample_z_epsilon(&reference(), 0.0, n, 60, 3).unwrap();
        let (mean, sd) = mean_and_sd(&b.values);
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "{mean}");

        let ifs = system(&[0.5, 0.5], &[-0.5, 0.5], &[0.5, 0.5]);
        let b = sample_x_lambda(&ifs, 0.0, n, 60, 4).unwrap();
        let (mean, sd) = mean_and_sd(&b.values);
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn x_lambda_with_zero_fixpoint_is_zero() {
        let ifs = system(&[0.5], &[0.0], &[1.0]);
        let b = sample_x_lambda(&ifs, 0.2, 50, 30, 2).unwrap();
        assert!(b.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn x_lambda_matches_z_epsilon_at_zero_noise() {
        let ifs = reference();
        let z = sample_z_epsilon(&ifs, 0.0, 100_000, 60, 10).unwrap();
        let x = sample_x_lambda(&ifs, 0.0, 100_000, 60, 11).unwrap();
        let d = ks_distance(
            &EmpiricalMeasure::from_samples(&z.values).unwrap(),
            &EmpiricalMeasure::from_samples(&x.values).unwrap(),
        );
        assert!(d < 0.01, "{d}");
        // same seed: identical draws telescope to the same values
        let x_same = sample_x_lambda(&ifs, 0.0, 1000, 60, 10).unwrap();
        let z_same = sample_z_epsilon(&ifs, 0.0, 1000, 60, 10).unwrap();
        for (a, b) in x_same.values.iter().zip(&z_same.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn x_lambda_rejects_large_noise() {
        let ifs = system(&[0.3, 0.6], &[-0.5, 0.5], &[0.5, 0.5]);
        assert!(matches!(
            sample_x_lambda(&ifs, 0.3, 10, 10, 0),
            Err(IfsError::EpsilonOutOfRange { .. })
        ));
        let cubic = IfsSpec::new(
            vec![MapSpec::cubic([0.0, 0.5, 0.0, 0.0], 0.0), MapSpec::affine(0.5, 0.5)],
            vec![0.5, 0.5],
            Perturbation::Multiplicative,
            0.0,
        )
        .unwrap();
        assert!(matches!(sample_x_lambda(&cubic, 0.1, 10, 10, 0), Err(IfsError::NotAffine { .. })));
    }

    #[test]
    fn rejects_bad_arguments_and_invalid_systems() {
        let ifs = reference();
        assert!(sample_z_epsilon(&ifs, 0.0, 0, 10, 0).is_err());
        assert!(sample_z_epsilon(&ifs, 0.0, 10, 0, 0).is_err());
        assert!(sample_z_epsilon(&ifs, -0.1, 10, 10, 0).is_err());
        let bad = system(&[0.6, 0.6], &[0.3, 0.3], &[0.5, 0.5]);
        assert!(matches!(sample_z_epsilon(&bad, 0.0, 10, 10, 0), Err(IfsError::Hypothesis(_))));
    }

    #[test]
    fn escaping_orbits_are_reported() {
        // the perturbed range check only warns; the sampler catches the escape
        let ifs = system(&[0.9, 0.9], &[-0.9, 0.9], &[0.5, 0.5]);
        assert!(matches!(sample_z_epsilon(&ifs, 0.3, 200, 40, 0), Err(IfsError::Escape { .. })));
    }

    #[test]
    fn batches_are_deterministic() {
        let ifs = reference();
        let a = sample_z_epsilon(&ifs, 0.05, 500, 40, 77).unwrap();
        let b = sample_z_epsilon(&ifs, 0.05, 500, 40, 77).unwrap();
        assert_eq!(a, b);
        let c = sample_z_epsilon(&ifs, 0.05, 500, 40, 78).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn doubling_depth_moves_samples_within_bound() {
        let ifs = reference();
        for eps in [0.0, 0.05] {
            let short = sample_z_epsilon(&ifs, eps, 2000, 20, 5).unwrap();
            let long = sample_z_epsilon(&ifs, eps, 2000, 40, 5).unwrap();
            for (a, b) in short.values.iter().zip(&long.values) {
                assert!((a - b).abs() <= short.truncation_bound);
            }
        }
    }

    #[test]
    fn default_depth_meets_target() {
        let ifs = reference();
        let d = default_depth(&ifs, 0.01, SampleModel::ZEpsilon).unwrap();
        let q: f64 = 1.01 * 0.6;
        assert!(2.0 * q.powi(d as i32) < DEFAULT_TRUNCATION);
        assert!(2.0 * q.powi(d as i32 - 1) >= DEFAULT_TRUNCATION);
        assert!(default_depth(&ifs, 0.7, SampleModel::ZEpsilon).is_err());
    }

    #[test]
    fn invariance_mixture_is_close() {
        let ifs = reference();
        let b = sample_z_epsilon(&ifs, 0.0, 100_000, 60, 8).unwrap();
        let mu = empirical_measure(&b, 50).unwrap();
        let pushed = invariance_pushforward(&ifs, &mu).unwrap();
        assert!((pushed.total_mass() - 1.0).abs() < 1e-9);
        assert!(ks_distance(&mu, &pushed) < 0.02);
    }
}
