//! Closed-form constants of the L2 density bounds.
//!
//! Two settings are covered. The multiplicative model (`Theorem::T3`) works
//! for any `C^{1+alpha}` contraction family; the additive-ratio model
//! (`Theorem::T5`) needs affine maps and the transversality condition (a1).
//! Which one applies is read off the system's perturbation model.

use serde::{Deserialize, Serialize};

use crate::error::{IfsError, Result};
use crate::ifs::{pairs, IfsSpec, Perturbation};

/// Default scale for the additive-ratio transversality constant.
pub const DEFAULT_SIGMA: f64 = 0.5;
/// Resolution of the admissible-epsilon bisection.
pub const EPSILON_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    /// Multiplicative noise, general contractions.
    T3,
    /// Additive noise on the contraction ratio, affine maps.
    T5,
}

impl Theorem {
    pub fn for_model(model: Perturbation) -> Self {
        match model {
            Perturbation::Multiplicative => Theorem::T3,
            Perturbation::AdditiveRatio => Theorem::T5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub theorem: Theorem,
    pub epsilon: f64,
    /// Partition depth; `None` stands for the `m -> infinity` limit.
    pub m: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub c_double_prime: f64,
    pub c_eps_m: f64,
    pub b_factor: f64,
    pub c_prime: f64,
    pub l2_bound: f64,
    pub l2_condition: f64,
    pub max_admissible_epsilon: Option<f64>,
}

impl BoundsReport {
    /// Right-hand side of the iterated recursion `J(r_k) <= 8/(C eps) (1 - b^k)/(1 - b) + b^k J(r_0)`.
    pub fn j_recursion_bound(&self, k: u32, j0: f64) -> f64 {
        let bk = self.b_factor.powi(k as i32);
        8.0 / (self.c_eps_m * self.epsilon) * (1.0 - bk) / (1.0 - self.b_factor) + bk * j0
    }

    /// Limit of [`Self::j_recursion_bound`] as `k -> infinity`.
    pub fn j_limit(&self) -> f64 {
        8.0 / (self.c_eps_m * self.epsilon * (1.0 - self.b_factor))
    }

    /// Square of the L2 bound, comparable with `(1/r^2)(nu, nu)_r` estimates.
    pub fn l2_bound_squared(&self) -> f64 {
        self.l2_bound * self.l2_bound
    }
}

/// Which parts of the admissibility predicate hold at a given epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub hypotheses: bool,
    pub epsilon_in_range: bool,
    pub b_contracting: bool,
    pub c_positive: bool,
}

impl Admissibility {
    pub fn holds(&self) -> bool {
        self.hypotheses && self.epsilon_in_range && self.b_contracting && self.c_positive
    }
}

fn require_pairs(ifs: &IfsSpec) -> Result<()> {
    if ifs.len() < 2 {
        return Err(IfsError::Hypothesis("at least two maps are needed".into()));
    }
    Ok(())
}

fn check_epsilon_t3(ifs: &IfsSpec, epsilon: f64) -> Result<()> {
    let max = ifs.max_epsilon();
    if !(epsilon >= 0.0 && epsilon < max) {
        return Err(IfsError::EpsilonOutOfRange {
            epsilon,
            reason: format!("need 0 <= eps < {max}"),
        });
    }
    Ok(())
}

/// `min_{i != j} (|a_i - a_j| - eps (|a_i + a_j| + 2)) / (1 - eps^2)`.
pub fn c_double_prime_t3(ifs: &IfsSpec, epsilon: f64) -> Result<f64> {
    require_pairs(ifs)?;
    check_epsilon_t3(ifs, epsilon)?;
    let a = ifs.fixpoints();
    Ok(pairs(ifs.len())
        .map(|(i, j)| {
            ((a[i] - a[j]).abs() - epsilon * ((a[i] + a[j]).abs() + 2.0)) / (1.0 - epsilon * epsilon)
        })
        .fold(f64::INFINITY, f64::min))
}

/// `sigma min_{i != j} (|a_i l_j - a_j l_i| - |l_i - l_j|) / (l_i l_j)`.
pub fn c_double_prime_t5(ifs: &IfsSpec, sigma: f64) -> Result<f64> {
    require_pairs(ifs)?;
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(IfsError::InvalidArgument(format!("sigma = {sigma} must lie in (0, 1)")));
    }
    let lambda = ifs.ratios()?;
    let a = ifs.fixpoints();
    let min = pairs(ifs.len())
        .map(|(i, j)| {
            ((a[i] * lambda[j] - a[j] * lambda[i]).abs() - (lambda[i] - lambda[j]).abs())
                / (lambda[i] * lambda[j])
        })
        .fold(f64::INFINITY, f64::min);
    Ok(sigma * min)
}

/// Transversality constant at finite partition depth `m` (multiplicative model).
///
/// Returns the value even when it is not positive; callers decide whether `m`
/// is large enough. `m = None` gives the limit `c_double_prime_t3`.
pub fn c_eps_m_lemma1(ifs: &IfsSpec, epsilon: f64, m: Option<u32>) -> Result<f64> {
    let limit = c_double_prime_t3(ifs, epsilon)?;
    let Some(m) = m else { return Ok(limit) };
    let lmm = ifs.lambda_max_max();
    let den = 2f64.powi(m as i32) - lmm * (1.0 + epsilon);
    if den <= 0.0 {
        return Err(IfsError::DepthTooSmall {
            m,
            reason: format!("2^m <= lambda_max,max (1 + eps) = {}", lmm * (1.0 + epsilon)),
        });
    }
    Ok(limit - 4.0 * (1.0 + epsilon) * lmm / den)
}

/// Contraction factor `b` of the `J(r)` recursion.
///
/// Multiplicative model: `sum p_i^2 (1 + eps) l_max / ((1 - eps) l_min)^2`.
/// Additive-ratio model: `sum p_i^2 (l_i + eps) / (l_i - eps)^2`.
pub fn b_factor(ifs: &IfsSpec, epsilon: f64) -> Result<f64> {
    match ifs.perturbation {
        Perturbation::Multiplicative => Ok(ifs
            .probabilities
            .iter()
            .zip(ifs.lambda_bounds())
            .map(|(&p, (lmin, lmax))| {
                let shrink = (1.0 - epsilon) * lmin;
                p * p * (1.0 + epsilon) * lmax / (shrink * shrink)
            })
            .sum()),
        Perturbation::AdditiveRatio => {
            let lambda = ifs.ratios()?;
            Ok(ifs
                .probabilities
                .iter()
                .zip(lambda)
                .map(|(&p, l)| p * p * (l + epsilon) / ((l - epsilon) * (l - epsilon)))
                .sum())
        }
    }
}

/// Smallest `|a_j d_p - a_i d_q| - |d_p - d_q|` over the corners of the
/// noise rectangles `[l_i - eps, l_i + eps] x [l_j - eps, l_j + eps]`.
/// Positive margin means the additive-ratio transversality holds at `eps`.
pub fn t5_corner_margin(ifs: &IfsSpec, epsilon: f64) -> Result<f64> {
    let lambda = ifs.ratios()?;
    let a = ifs.fixpoints();
    let mut margin = f64::INFINITY;
    for (i, j) in pairs(ifs.len()) {
        for dp in [lambda[i] - epsilon, lambda[i] + epsilon] {
            for dq in [lambda[j] - epsilon, lambda[j] + epsilon] {
                let m = (a[j] * dp - a[i] * dq).abs() - (dp - dq).abs();
                margin = margin.min(m);
            }
        }
    }
    Ok(margin)
}

fn hypotheses_hold(ifs: &IfsSpec) -> bool {
    if ifs.len() < 2 || !ifs.validate().passed() {
        return false;
    }
    match Theorem::for_model(ifs.perturbation) {
        Theorem::T3 => ifs.check_l2_condition().passes,
        Theorem::T5 => {
            ifs.check_l2_condition().passes
                && ifs.check_transversality_a1().map(|c| c.passes).unwrap_or(false)
        }
    }
}

fn admissibility_with(ifs: &IfsSpec, epsilon: f64, sigma: f64, hypotheses: bool) -> Admissibility {
    let theorem = Theorem::for_model(ifs.perturbation);
    let epsilon_in_range = epsilon > 0.0
        && match theorem {
            Theorem::T3 => epsilon < ifs.max_epsilon(),
            Theorem::T5 => {
                let positive = ifs
                    .ratios()
                    .map(|l| l.iter().all(|&li| li - epsilon > 0.0))
                    .unwrap_or(false);
                positive && t5_corner_margin(ifs, epsilon).map(|m| m > 0.0).unwrap_or(false)
            }
        };
    let b_contracting = b_factor(ifs, epsilon).map(|b| b < 1.0).unwrap_or(false);
    let c_positive = match theorem {
        Theorem::T3 => c_double_prime_t3(ifs, epsilon).map(|c| c > 0.0).unwrap_or(false),
        Theorem::T5 => c_double_prime_t5(ifs, sigma).map(|c| c > 0.0).unwrap_or(false),
    };
    Admissibility {
        hypotheses,
        epsilon_in_range,
        b_contracting,
        c_positive,
    }
}

/// Evaluates the concrete "sufficiently small epsilon" predicate.
pub fn admissibility(ifs: &IfsSpec, epsilon: f64, sigma: f64) -> Admissibility {
    admissibility_with(ifs, epsilon, sigma, hypotheses_hold(ifs))
}

/// Largest admissible epsilon, located by bisection to [`EPSILON_RESOLUTION`].
pub fn max_admissible_epsilon(ifs: &IfsSpec, sigma: f64) -> Option<f64> {
    if !hypotheses_hold(ifs) {
        return None;
    }
    let ok = |e: f64| admissibility_with(ifs, e, sigma, true).holds();
    let mut lo = 1e-12;
    if !ok(lo) {
        return None;
    }
    let mut hi = match Theorem::for_model(ifs.perturbation) {
        Theorem::T3 => ifs.max_epsilon().min(1.0),
        Theorem::T5 => ifs.ratios().ok()?.into_iter().fold(1.0, f64::min),
    };
    if ok(hi) {
        return Some(hi);
    }
    while hi - lo > EPSILON_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// All constants of the L2 bound for the system's model at `epsilon`.
///
/// `sigma` is only used by the additive-ratio model. For that model the
/// finite-`m` constant is reported equal to the sigma-scaled limit.
pub fn bounds_report(ifs: &IfsSpec, epsilon: f64, m: Option<u32>, sigma: f64) -> Result<BoundsReport> {
    let theorem = Theorem::for_model(ifs.perturbation);
    if !hypotheses_hold(ifs) {
        let mut failed: Vec<String> = ifs.validate().failures().map(|c| c.name.clone()).collect();
        if ifs.len() < 2 {
            failed.push("at least two maps".into());
        }
        if !ifs.check_l2_condition().passes {
            failed.push("l2_condition".into());
        }
        if theorem == Theorem::T5 && !ifs.check_transversality_a1().map(|c| c.passes).unwrap_or(false) {
            failed.push("transversality_a1".into());
        }
        return Err(IfsError::Hypothesis(failed.join(", ")));
    }
    if epsilon <= 0.0 {
        return Err(IfsError::EpsilonOutOfRange {
            epsilon,
            reason: "the bound C'/sqrt(eps) needs eps > 0".into(),
        });
    }
    let adm = admissibility_with(ifs, epsilon, sigma, true);
    if !adm.epsilon_in_range {
        let reason = match theorem {
            Theorem::T3 => format!("need eps < {}", ifs.max_epsilon()),
            Theorem::T5 => "need l_i - eps > 0 and the corner transversality margin > 0".into(),
        };
        return Err(IfsError::EpsilonOutOfRange { epsilon, reason });
    }
    let b = b_factor(ifs, epsilon)?;
    if b >= 1.0 {
        return Err(IfsError::NotContracting { b });
    }
    let (c_double_prime, c_eps_m, sigma_used) = match theorem {
        Theorem::T3 => (
            c_double_prime_t3(ifs, epsilon)?,
            c_eps_m_lemma1(ifs, epsilon, m)?,
            None,
        ),
        Theorem::T5 => {
            let c = c_double_prime_t5(ifs, sigma)?;
            (c, c, Some(sigma))
        }
    };
    if c_double_prime <= 0.0 {
        return Err(IfsError::NonPositiveConstant {
            name: "C''",
            value: c_double_prime,
        });
    }
    if c_eps_m <= 0.0 {
        return Err(IfsError::NonPositiveConstant {
            name: "C_eps_m",
            value: c_eps_m,
        });
    }
    let c_prime = (32.0 / ((1.0 - b) * c_double_prime)).sqrt();
    Ok(BoundsReport {
        theorem,
        epsilon,
        m,
        sigma: sigma_used,
        c_double_prime,
        c_eps_m,
        b_factor: b,
        c_prime,
        l2_bound: c_prime / epsilon.sqrt(),
        l2_condition: ifs.check_l2_condition().value,
        max_admissible_epsilon: max_admissible_epsilon(ifs, sigma),
    })
}

/// `J(r_k)` bound after `k` steps of the recursion, starting from `J(r_0) = j0`.
pub fn j_recursion_bound(ifs: &IfsSpec, epsilon: f64, m: Option<u32>, k: u32, j0: f64) -> Result<f64> {
    let report = bounds_report(ifs, epsilon, m, DEFAULT_SIGMA)?;
    Ok(report.j_recursion_bound(k, j0))
}
