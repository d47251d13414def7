//! Iterated function systems on `[-1, 1)`, their two random perturbation
//! models, and the hypothesis checks the density bounds rely on.
//!
//! Maps are either affine (`x -> lambda x + a (1 - lambda)`) or cubic
//! polynomials. Cubics are the only nonlinear family accepted because the
//! extrema of their derivative are available in closed form, which keeps
//! the contraction bounds `lambda_min`/`lambda_max` exact.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IfsError, Result};
use crate::rng::stream_rng;

/// Tolerance for equality checks (fixpoints, probability sums).
pub const EQ_TOL: f64 = 1e-12;
/// Two fixpoints closer than this are treated as equal.
pub const DISTINCT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MapSpec {
    Affine {
        lambda: f64,
        fixpoint: f64,
    },
    /// `c0 + c1 x + c2 x^2 + c3 x^3` with a declared fixpoint.
    Polynomial {
        coeffs: [f64; 4],
        fixpoint: f64,
    },
}

impl MapSpec {
    pub fn affine(lambda: f64, fixpoint: f64) -> Self {
        MapSpec::Affine { lambda, fixpoint }
    }

    pub fn cubic(coeffs: [f64; 4], fixpoint: f64) -> Self {
        MapSpec::Polynomial { coeffs, fixpoint }
    }

    pub fn fixpoint(&self) -> f64 {
        match *self {
            MapSpec::Affine { fixpoint, .. } | MapSpec::Polynomial { fixpoint, .. } => fixpoint,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, MapSpec::Affine { .. })
    }

    /// Contraction ratio of an affine map.
    pub fn ratio(&self) -> Option<f64> {
        match *self {
            MapSpec::Affine { lambda, .. } => Some(lambda),
            MapSpec::Polynomial { .. } => None,
        }
    }

    /// Evaluates the map without a domain check.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            MapSpec::Affine { lambda, fixpoint } => lambda * x + fixpoint * (1.0 - lambda),
            MapSpec::Polynomial { coeffs: c, .. } => c[0] + x * (c[1] + x * (c[2] + x * c[3])),
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        if !(-1.0..1.0).contains(&x) {
            return Err(IfsError::Domain { x });
        }
        Ok(self.apply(x))
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            MapSpec::Affine { lambda, .. } => lambda,
            MapSpec::Polynomial { coeffs: c, .. } => c[1] + x * (2.0 * c[2] + 3.0 * x * c[3]),
        }
    }

    /// `(lambda_min, lambda_max)`: the extrema of `|f'|` over `[-1, 1]`.
    ///
    /// `lambda_min` is zero when `f'` changes sign on the interval.
    pub fn derivative_bounds(&self) -> (f64, f64) {
        match *self {
            MapSpec::Affine { lambda, .. } => (lambda.abs(), lambda.abs()),
            MapSpec::Polynomial { coeffs: c, .. } => {
                let mut candidates = vec![-1.0, 1.0];
                if c[3] != 0.0 {
                    let vertex = -c[2] / (3.0 * c[3]);
                    if vertex > -1.0 && vertex < 1.0 {
                        candidates.push(vertex);
                    }
                }
                let values: Vec<f64> = candidates.iter().map(|&x| self.derivative(x)).collect();
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let max_abs = lo.abs().max(hi.abs());
                let min_abs = if lo <= 0.0 && hi >= 0.0 {
                    0.0
                } else {
                    lo.abs().min(hi.abs())
                };
                (min_abs, max_abs)
            }
        }
    }

    /// Points of `[-1, 1]` where the extrema of `f` can occur.
    fn extremal_points(&self) -> Vec<f64> {
        let mut points = vec![-1.0, 1.0];
        if let MapSpec::Polynomial { coeffs: c, .. } = *self {
            // roots of 3 c3 x^2 + 2 c2 x + c1
            let (qa, qb, qc) = (3.0 * c[3], 2.0 * c[2], c[1]);
            if qa != 0.0 {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    points.push((-qb + s) / (2.0 * qa));
                    points.push((-qb - s) / (2.0 * qa));
                }
            } else if qb != 0.0 {
                points.push(-qc / qb);
            }
        }
        points.retain(|x| (-1.0..=1.0).contains(x));
        points
    }

    /// `(min, max)` of `f` over `[-1, 1]`.
    pub fn range(&self) -> (f64, f64) {
        self.extremal_points()
            .into_iter()
            .map(|x| self.apply(x))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Solves `f(x) = target` for `x` in `[-1, 1]`. Requires a monotone map.
    pub fn inverse(&self, target: f64) -> Option<f64> {
        match *self {
            MapSpec::Affine { lambda, fixpoint } => {
                let x = fixpoint + (target - fixpoint) / lambda;
                (-1.0..=1.0).contains(&x).then_some(x)
            }
            MapSpec::Polynomial { .. } => {
                let (lo_v, hi_v) = (self.apply(-1.0), self.apply(1.0));
                let increasing = hi_v >= lo_v;
                let (vmin, vmax) = if increasing { (lo_v, hi_v) } else { (hi_v, lo_v) };
                if target < vmin || target > vmax {
                    return None;
                }
                let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let below = self.apply(mid) < target;
                    if below == increasing {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(0.5 * (lo + hi))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// `y f_i(x) + a_i (1 - y)` with `y ~ U[1 - eps, 1 + eps]`.
    #[default]
    Multiplicative,
    /// `l x + a_i (1 - l)` with `l ~ U[lambda_i - eps, lambda_i + eps]`; affine maps only.
    AdditiveRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsSpec {
    pub maps: Vec<MapSpec>,
    pub probabilities: Vec<f64>,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default)]
    pub epsilon: f64,
}

/// Result of a scalar hypothesis such as the L2 condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub value: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    /// Warnings do not make the report fail.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub warning: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            passed,
            value,
            threshold,
            warning: false,
            note: None,
        }
    }

    fn warning(mut self) -> Self {
        self.warning = true;
        self
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    /// True when every non-warning check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.warning)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed && !c.warning)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed && c.warning)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Shannon entropy `-sum p_i log p_i` of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.ln())
        .sum::<f64>()
}

impl IfsSpec {
    /// Builds a system after structural checks (shape and finiteness).
    /// Hypothesis checks live in [`IfsSpec::validate`].
    pub fn new(
        maps: Vec<MapSpec>,
        probabilities: Vec<f64>,
        perturbation: Perturbation,
        epsilon: f64,
    ) -> Result<Self> {
        let ifs = IfsSpec {
            maps,
            probabilities,
            perturbation,
            epsilon,
        };
        ifs.check_structure()?;
        Ok(ifs)
    }

    pub fn check_structure(&self) -> Result<()> {
        if self.maps.is_empty() {
            return Err(IfsError::Malformed("no maps".into()));
        }
        if self.maps.len() != self.probabilities.len() {
            return Err(IfsError::Malformed(format!(
                "{} maps but {} probabilities",
                self.maps.len(),
                self.probabilities.len()
            )));
        }
        let finite = self.probabilities.iter().all(|p| p.is_finite())
            && self.epsilon.is_finite()
            && self.maps.iter().all(|m| match m {
                MapSpec::Affine { lambda, fixpoint } => lambda.is_finite() && fixpoint.is_finite(),
                MapSpec::Polynomial { coeffs, fixpoint } => {
                    coeffs.iter().all(|c| c.is_finite()) && fixpoint.is_finite()
                }
            });
        if !finite {
            return Err(IfsError::Malformed("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Same system with another perturbation size.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        IfsSpec {
            epsilon,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn fixpoints(&self) -> Vec<f64> {
        self.maps.iter().map(MapSpec::fixpoint).collect()
    }

    pub fn all_affine(&self) -> bool {
        self.maps.iter().all(MapSpec::is_affine)
    }

    pub fn require_affine(&self) -> Result<()> {
        match self.maps.iter().position(|m| !m.is_affine()) {
            Some(index) => Err(IfsError::NotAffine { index }),
            None => Ok(()),
        }
    }

    /// Contraction ratios of an all-affine system.
    pub fn ratios(&self) -> Result<Vec<f64>> {
        self.require_affine()?;
        Ok(self.maps.iter().filter_map(MapSpec::ratio).collect())
    }

    pub fn lambda_bounds(&self) -> Vec<(f64, f64)> {
        self.maps.iter().map(MapSpec::derivative_bounds).collect()
    }

    /// `max_i lambda_{i,max}`.
    pub fn lambda_max_max(&self) -> f64 {
        self.lambda_bounds()
            .iter()
            .map(|b| b.1)
            .fold(0.0, f64::max)
    }

    pub fn lambda_min_min(&self) -> f64 {
        self.lambda_bounds()
            .iter()
            .map(|b| b.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Cumulative probabilities `[0, p_1, p_1 + p_2, ..., 1]`; the last entry is exactly 1.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for &p in &self.probabilities {
            acc += p;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        cum
    }

    pub(crate) fn chooser(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(&self.probabilities)
            .map_err(|e| IfsError::Malformed(format!("probabilities: {e}")))
    }

    /// Admissible noise interval of map `i` for the configured model.
    pub fn noise_interval(&self, i: usize, epsilon: f64) -> Result<(f64, f64)> {
        match self.perturbation {
            Perturbation::Multiplicative => Ok((1.0 - epsilon, 1.0 + epsilon)),
            Perturbation::AdditiveRatio => {
                let lambda = self.maps[i].ratio().ok_or(IfsError::NotAffine { index: i })?;
                Ok((lambda - epsilon, lambda + epsilon))
            }
        }
    }

    /// Perturbed map without range checks.
    #[inline]
    pub fn apply_perturbed(&self, i: usize, noise: f64, x: f64) -> f64 {
        let map = &self.maps[i];
        let a = map.fixpoint();
        match self.perturbation {
            Perturbation::Multiplicative => noise * map.apply(x) + a * (1.0 - noise),
            Perturbation::AdditiveRatio => noise * x + a * (1.0 - noise),
        }
    }

    /// Evaluates map `i` under the noise value `noise` at `x`.
    pub fn perturbed_map(&self, i: usize, noise: f64, x: f64) -> Result<f64> {
        if i >= self.len() {
            return Err(IfsError::InvalidArgument(format!("map index {i} out of range")));
        }
        let (lo, hi) = self.noise_interval(i, self.epsilon)?;
        let slack = EQ_TOL * (1.0 + lo.abs().max(hi.abs()));
        if !(noise >= lo - slack && noise <= hi + slack) {
            return Err(IfsError::NoiseOutOfRange { noise, lo, hi });
        }
        if !(-1.0..1.0).contains(&x) {
            return Err(IfsError::Domain { x });
        }
        Ok(self.apply_perturbed(i, noise, x))
    }

    /// Runs every model hypothesis check. Failures are reported, never raised.
    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();
        let l = self.len();

        let min_p = self.probabilities.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check::new("probabilities_positive", min_p > 0.0, min_p, 0.0));
        let sum_err = (self.probabilities.iter().sum::<f64>() - 1.0).abs();
        checks.push(Check::new("probabilities_sum_to_one", sum_err <= EQ_TOL, sum_err, EQ_TOL));
        checks.push(Check::new(
            "epsilon_nonnegative",
            self.epsilon >= 0.0,
            self.epsilon,
            0.0,
        ));

        for (i, map) in self.maps.iter().enumerate() {
            let a = map.fixpoint();
            checks.push(Check::new(
                format!("map{i}_fixpoint_in_interval"),
                (-1.0..=1.0).contains(&a),
                a,
                1.0,
            ));
            let fix_err = (map.apply(a) - a).abs();
            checks.push(Check::new(
                format!("map{i}_fixpoint"),
                fix_err <= EQ_TOL,
                fix_err,
                EQ_TOL,
            ));
            let (lmin, lmax) = map.derivative_bounds();
            checks.push(Check::new(format!("map{i}_lambda_min_positive"), lmin > 0.0, lmin, 0.0));
            checks.push(Check::new(format!("map{i}_contraction"), lmax < 1.0, lmax, 1.0));
            let (lo, hi) = map.range();
            let excess = (-1.0 - lo).max(hi - 1.0).max(0.0);
            checks.push(Check::new(format!("map{i}_maps_into_domain"), excess == 0.0, excess, 0.0));
        }

        let min_gap = if l < 2 {
            f64::INFINITY
        } else {
            let a = self.fixpoints();
            pairs(l)
                .map(|(i, j)| (a[i] - a[j]).abs())
                .fold(f64::INFINITY, f64::min)
        };
        let mut distinct = Check::new(
            "distinct_fixpoints",
            min_gap > DISTINCT_TOL,
            min_gap,
            DISTINCT_TOL,
        );
        if l < 2 {
            distinct = distinct.note("not applicable: single map");
        }
        checks.push(distinct);

        match self.perturbation {
            Perturbation::Multiplicative => {
                for (i, map) in self.maps.iter().enumerate() {
                    let a = map.fixpoint();
                    let (lo, hi) = map.range();
                    let mut excess: f64 = 0.0;
                    for y in [1.0 - self.epsilon, 1.0 + self.epsilon] {
                        for v in [lo, hi] {
                            let img = y * v + a * (1.0 - y);
                            excess = excess.max(-1.0 - img).max(img - 1.0);
                        }
                    }
                    checks.push(
                        Check::new(format!("map{i}_perturbed_in_domain"), excess <= 0.0, excess.max(0.0), 0.0)
                            .warning(),
                    );
                }
            }
            Perturbation::AdditiveRatio => {
                let affine = self.require_affine();
                checks.push(Check::new(
                    "additive_ratio_affine",
                    affine.is_ok(),
                    self.maps.iter().filter(|m| !m.is_affine()).count() as f64,
                    0.0,
                ));
                if affine.is_ok() {
                    for (i, map) in self.maps.iter().enumerate() {
                        let a = map.fixpoint();
                        let lambda = map.ratio().unwrap_or(f64::NAN);
                        let low = lambda - self.epsilon;
                        checks.push(Check::new(
                            format!("map{i}_perturbed_ratio_positive"),
                            low > 0.0,
                            low,
                            0.0,
                        ));
                        let mut excess: f64 = 0.0;
                        for t in [lambda - self.epsilon, lambda + self.epsilon] {
                            for x in [-1.0, 1.0] {
                                let img = t * x + a * (1.0 - t);
                                excess = excess.max(-1.0 - img).max(img - 1.0);
                            }
                        }
                        checks.push(
                            Check::new(format!("map{i}_perturbed_in_domain"), excess <= 0.0, excess.max(0.0), 0.0)
                                .warning(),
                        );
                    }
                }
            }
        }

        ValidationReport { checks }
    }

    /// `sum_i p_i^2 lambda_{i,max} / lambda_{i,min}^2 < 1`.
    pub fn check_l2_condition(&self) -> ConditionCheck {
        let value: f64 = self
            .probabilities
            .iter()
            .zip(self.lambda_bounds())
            .map(|(&p, (lmin, lmax))| {
                if lmin > 0.0 {
                    p * p * lmax / (lmin * lmin)
                } else {
                    f64::INFINITY
                }
            })
            .sum();
        ConditionCheck {
            value,
            passes: value < 1.0,
        }
    }

    /// `min_{i != j} |a_j l_i - a_i l_j| / |l_i - l_j| > 1`; equal ratios count as `+inf`.
    pub fn check_transversality_a1(&self) -> Result<ConditionCheck> {
        let lambda = self.ratios()?;
        let a = self.fixpoints();
        let value = pairs(self.len())
            .map(|(i, j)| {
                let den = (lambda[i] - lambda[j]).abs();
                if den == 0.0 {
                    f64::INFINITY
                } else {
                    (a[j] * lambda[i] - a[i] * lambda[j]).abs() / den
                }
            })
            .fold(f64::INFINITY, f64::min);
        Ok(ConditionCheck {
            value,
            passes: value > 1.0,
        })
    }

    /// `min_{i != j} |a_i - a_j| / (2 + |a_i + a_j|)`, or `+inf` for a single map.
    pub fn max_epsilon(&self) -> f64 {
        let a = self.fixpoints();
        pairs(self.len())
            .map(|(i, j)| (a[i] - a[j]).abs() / (2.0 + (a[i] + a[j]).abs()))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probabilities)
    }

    /// Monte Carlo estimate of `E log |noise * f'|` along a stationary orbit.
    pub fn lyapunov(&self, n_samples: usize, seed: u64) -> Result<LyapunovEstimate> {
        if n_samples == 0 {
            return Err(IfsError::InvalidArgument("n_samples must be >= 1".into()));
        }
        if self.perturbation == Perturbation::AdditiveRatio {
            self.require_affine()?;
        }
        let chooser = self.chooser()?;
        let mut rng = stream_rng(seed, 0);
        let eps = self.epsilon;
        let mut x = 0.0;
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, x: f64| {
            let i = chooser.sample(rng);
            let u: f64 = rng.random();
            let (lo, hi) = match self.perturbation {
                Perturbation::Multiplicative => (1.0 - eps, 1.0 + eps),
                Perturbation::AdditiveRatio => {
                    let l = self.maps[i].ratio().unwrap_or(0.0);
                    (l - eps, l + eps)
                }
            };
            let noise = lo + (hi - lo) * u;
            let log_rate = match self.perturbation {
                Perturbation::Multiplicative => (noise * self.maps[i].derivative(x)).abs().ln(),
                Perturbation::AdditiveRatio => noise.abs().ln(),
            };
            (log_rate, self.apply_perturbed(i, noise, x))
        };
        for _ in 0..256 {
            x = draw(&mut rng, x).1;
        }
        let (mut mean, mut m2) = (0.0, 0.0);
        for k in 0..n_samples {
            let (v, next) = draw(&mut rng, x);
            x = next;
            let delta = v - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (v - mean);
        }
        let var = if n_samples > 1 {
            (m2 / (n_samples - 1) as f64).max(0.0)
        } else {
            0.0
        };
        if mean >= 0.0 {
            return Err(IfsError::NotContractingOnAverage { chi: mean });
        }
        Ok(LyapunovEstimate {
            value: mean,
            std_error: (var / n_samples as f64).sqrt(),
            samples: n_samples,
        })
    }

    /// `h / |chi|`, the upper bound on the Hausdorff dimension of the invariant measure.
    pub fn dimension_bound(&self, n_samples: usize, seed: u64) -> Result<f64> {
        let chi = self.lyapunov(n_samples, seed)?;
        Ok(self.entropy() / chi.value.abs())
    }
}

/// Unordered index pairs `i < j`.
pub(crate) fn pairs(l: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..l).flat_map(move |i| (i + 1..l).map(move |j| (i, j)))
}
