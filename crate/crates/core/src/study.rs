//! Composite experiments built from the samplers, the cube map and the
//! measure statistics: weak convergence in `eps` and in `m`, the `J(r)`
//! recursion inequality, and the projection inequality.

use serde::{Deserialize, Serialize};

use crate::constants::{b_factor, c_double_prime_t5, c_eps_m_lemma1, Theorem, DEFAULT_SIGMA};
use crate::error::{IfsError, Result};
use crate::ifs::IfsSpec;
use crate::measure::{correlation_form, j_statistic, ks_distance, EmpiricalMeasure};
use crate::sampler::{sample_x_lambda, sample_z_epsilon, SampleBatch, SampleModel};
use crate::skewprod::{pushforward_measure, Pushforward};

/// Draws a batch under the given model.
pub fn sample(ifs: &IfsSpec, model: SampleModel, epsilon: f64, n: usize, depth: usize, seed: u64) -> Result<SampleBatch> {
    match model {
        SampleModel::ZEpsilon => sample_z_epsilon(ifs, epsilon, n, depth, seed),
        SampleModel::XLambda => sample_x_lambda(ifs, epsilon, n, depth, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    /// KS distance to the unperturbed batch.
    pub ks: f64,
}

/// `KS(nu_eps, nu_0)` along a ladder. All batches share the seed, so they use
/// the same branch choices and uniforms and differ only through `eps`.
pub fn ks_vs_epsilon(ifs: &IfsSpec, model: SampleModel, ladder: &[f64], n: usize, depth: usize, seed: u64) -> Result<Vec<EpsilonRow>> {
    let base = EmpiricalMeasure::from_samples(&sample(ifs, model, 0.0, n, depth, seed)?.values)?;
    ladder
        .iter()
        .map(|&epsilon| {
            let batch = sample(ifs, model, epsilon, n, depth, seed)?;
            let mu = EmpiricalMeasure::from_samples(&batch.values)?;
            Ok(EpsilonRow {
                epsilon,
                ks: ks_distance(&mu, &base),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub m: u32,
    /// KS between the projection and the coupled independent-noise chain.
    pub ks_coupled: f64,
    /// KS between the projection and an independent batch of the sampler.
    pub ks_independent: f64,
    pub samples: usize,
}

/// `KS(nu_{eps,m}, nu_eps)` for a ladder of partition depths.
#[allow(clippy::too_many_arguments)]
pub fn ks_vs_depth(
    ifs: &IfsSpec,
    epsilon: f64,
    variant: Theorem,
    ladder: &[u32],
    n_points: usize,
    n_steps: usize,
    depth: usize,
    seed: u64,
) -> Result<Vec<DepthRow>> {
    let model = match variant {
        Theorem::T3 => SampleModel::ZEpsilon,
        Theorem::T5 => SampleModel::XLambda,
    };
    let n = n_points * (n_steps - n_steps / 2);
    let reference = EmpiricalMeasure::from_samples(&sample(ifs, model, epsilon, n, depth, seed.wrapping_add(1))?.values)?;
    ladder
        .iter()
        .map(|&m| {
            let pf = pushforward_measure(ifs, epsilon, m, variant, n_points, n_steps, seed)?;
            Ok(DepthRow {
                m,
                ks_coupled: ks_distance(&pf.projection, &pf.direct),
                ks_independent: ks_distance(&pf.projection, &reference),
                samples: pf.len(),
            })
        })
        .collect()
}

/// True when `values` decreases except for at most `max_inversions` steps up,
/// each smaller than `tol`.
pub fn decreasing_with_inversions(values: &[f64], max_inversions: usize, tol: f64) -> bool {
    let ups: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).filter(|&d| d >= 0.0).collect();
    ups.len() <= max_inversions && ups.iter().all(|&d| d < tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionRow {
    pub r: f64,
    pub j: f64,
    /// `max_i J(r / ((1 - eps) lambda_i,min))`
    pub j_coarse: f64,
    /// `8 / (C eps) + b j_coarse`
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Transversality constant used in the recursion: `C_{eps,m}` (T3) or the
/// sigma-scaled limit (T5).
pub fn recursion_constant(ifs: &IfsSpec, epsilon: f64, m: u32, variant: Theorem, sigma: f64) -> Result<f64> {
    match variant {
        Theorem::T3 => c_eps_m_lemma1(ifs, epsilon, Some(m)),
        Theorem::T5 => c_double_prime_t5(ifs, sigma),
    }
}

/// Checks `J(r) <= slack * (8 / (C eps) + b max_i J(r / ((1 - eps) lambda_i,min)))`
/// (with `lambda_i - eps` in place of `(1 - eps) lambda_i,min` for T5)
/// on the empirical slices of a pushforward run.
pub fn recursion_check(
    ifs: &IfsSpec,
    epsilon: f64,
    m: u32,
    variant: Theorem,
    slices: &[(f64, EmpiricalMeasure)],
    r_values: &[f64],
    slack: f64,
) -> Result<Vec<RecursionRow>> {
    let c = recursion_constant(ifs, epsilon, m, variant, DEFAULT_SIGMA)?;
    if !(c > 0.0) || !(epsilon > 0.0) {
        return Err(IfsError::NonPositiveConstant {
            name: "C eps",
            value: c * epsilon,
        });
    }
    let b = b_factor(ifs, epsilon)?;
    // smallest contraction of each branch over the noise interval
    let rates: Vec<f64> = match variant {
        Theorem::T3 => ifs.lambda_bounds().iter().map(|b| (1.0 - epsilon) * b.0).collect(),
        Theorem::T5 => ifs.ratios()?.iter().map(|l| l - epsilon).collect(),
    };
    r_values
        .iter()
        .map(|&r| {
            let j = j_statistic(slices, r)?;
            let mut j_coarse = 0.0f64;
            for &rate in &rates {
                j_coarse = j_coarse.max(j_statistic(slices, r / rate)?);
            }
            let rhs = 8.0 / (c * epsilon) + b * j_coarse;
            Ok(RecursionRow {
                r,
                j,
                j_coarse,
                rhs,
                slack,
                holds: j <= slack * rhs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub r: f64,
    /// `(1/r^2)(nu, nu)_r` of the projection.
    pub projection: f64,
    pub j: f64,
    /// `2 (J / 2) (1 + tolerance)`
    pub bound: f64,
    pub holds: bool,
}

/// The projection's L2 proxy against twice the slice-averaged cube proxy `J / 2`.
pub fn projection_consistency(pf: &Pushforward, slices: &[(f64, EmpiricalMeasure)], r_values: &[f64], tolerance: f64) -> Result<Vec<ProjectionRow>> {
    r_values
        .iter()
        .map(|&r| {
            let projection = correlation_form(&pf.projection, &pf.projection, r)? / (r * r);
            let j = j_statistic(slices, r)?;
            let bound = 2.0 * (j / 2.0) * (1.0 + tolerance);
            Ok(ProjectionRow {
                r,
                projection,
                j,
                bound,
                holds: projection <= bound,
            })
        })
        .collect()
}
