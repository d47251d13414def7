//! Discrete measures on the line and the statistics computed from them:
//! the correlation form `(mu1, mu2)_r`, the L2 proxy built from it, the
//! slice-integrated `J(r)` statistic, and the Kolmogorov-Smirnov distance.

use serde::{Deserialize, Serialize};

use crate::error::{IfsError, Result};

/// Minimum expected number of samples inside a ball `B_r` for `r` to count.
pub const MIN_WINDOW_SAMPLES: f64 = 50.0;
/// Accepted band for ratios of consecutive L2 proxy values.
pub const STABLE_RATIO: (f64, f64) = (0.8, 1.25);

/// Equal-width histogram over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = self.width();
        (self.lo + w * bin as f64, self.lo + w * (bin + 1) as f64)
    }

    /// Bin of `x`; points outside `[lo, hi]` fall in the nearest end bin.
    pub fn bin_of(&self, x: f64) -> usize {
        bin_index(x, self.lo, self.hi, self.bins())
    }

    /// Mass divided by bin width.
    pub fn densities(&self) -> Vec<f64> {
        let w = self.width();
        self.masses.iter().map(|m| m / w).collect()
    }
}

fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((x - lo) / (hi - lo) * bins as f64).floor();
    if t < 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

/// Weighted atoms sorted by position, optionally with a histogram.
///
/// Measures built from samples carry total mass 1; [`EmpiricalMeasure::scaled`]
/// produces other masses for bilinearity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    histogram: Option<Histogram>,
}

impl EmpiricalMeasure {
    /// Equal-weight measure on the given samples.
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(IfsError::Empty("sample batch"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IfsError::InvalidArgument("non-finite sample".into()));
        }
        let mut atoms = values.to_vec();
        atoms.sort_by(f64::total_cmp);
        let w = 1.0 / atoms.len() as f64;
        Ok(EmpiricalMeasure {
            weights: vec![w; atoms.len()],
            atoms,
            histogram: None,
        })
    }

    /// Measure from `(position, weight)` pairs; weights are kept as given.
    pub fn from_weighted(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(IfsError::Empty("weighted atoms"));
        }
        if pairs.iter().any(|(x, w)| !x.is_finite() || !w.is_finite() || *w < 0.0) {
            return Err(IfsError::InvalidArgument("atoms need finite positions and weights >= 0".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (atoms, weights) = pairs.into_iter().unzip();
        Ok(EmpiricalMeasure {
            atoms,
            weights,
            histogram: None,
        })
    }

    pub fn point_mass(x: f64) -> Self {
        EmpiricalMeasure {
            atoms: vec![x],
            weights: vec![1.0],
            histogram: None,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        EmpiricalMeasure {
            atoms: self.atoms.clone(),
            weights: self.weights.iter().map(|w| w * c).collect(),
            histogram: self.histogram.as_ref().map(|h| Histogram {
                masses: h.masses.iter().map(|m| m * c).collect(),
                ..h.clone()
            }),
        }
    }

    /// Attaches an equal-width histogram over `[-1, 1]` normalized to mass 1.
    pub fn with_histogram(mut self, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(IfsError::InvalidArgument("bins must be >= 1".into()));
        }
        let mut acc = vec![Compensated::default(); bins];
        let mut total = Compensated::default();
        for (&x, &w) in self.atoms.iter().zip(&self.weights) {
            acc[bin_index(x, -1.0, 1.0, bins)].add(w);
            total.add(w);
        }
        let total = total.value();
        let masses = acc.iter().map(|c| c.value() / total).collect();
        self.histogram = Some(Histogram {
            lo: -1.0,
            hi: 1.0,
            masses,
        });
        Ok(self)
    }

    pub fn histogram(&self) -> Option<&Histogram> {
        self.histogram.as_ref()
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Kish effective sample size `(sum w)^2 / sum w^2`.
    pub fn effective_size(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        s * s / s2
    }

    pub fn mean(&self) -> f64 {
        let s: f64 = self.atoms.iter().zip(&self.weights).map(|(x, w)| x * w).sum();
        s / self.total_mass()
    }

    /// Normalized CDF `mu((-inf, x]) / mu(R)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.atoms.partition_point(|&a| a <= x);
        self.weights[..k].iter().sum::<f64>() / self.total_mass()
    }

    /// Mass of `[x - r, x + r]`.
    pub fn ball_mass(&self, x: f64, r: f64) -> f64 {
        let lo = self.atoms.partition_point(|&a| a < x - r);
        let hi = self.atoms.partition_point(|&a| a <= x + r);
        self.weights[lo..hi].iter().sum()
    }

    /// Convex combination `sum c_k mu_k`, merged into one sorted measure.
    pub fn mixture(parts: &[(f64, &EmpiricalMeasure)]) -> Result<Self> {
        let pairs: Vec<(f64, f64)> = parts
            .iter()
            .flat_map(|(c, mu)| mu.atoms.iter().zip(&mu.weights).map(move |(&x, &w)| (x, c * w)))
            .collect();
        Self::from_weighted(pairs)
    }

    /// Image measure under `f`.
    pub fn pushforward(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_weighted(self.atoms.iter().zip(&self.weights).map(|(&x, &w)| (f(x), w)).collect())
    }
}

/// Compensated running sum (Neumaier), exposed as prefix values.
#[derive(Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Prefix sums of weights and of weighted positions, each as (sum, compensation).
struct Prefix {
    w: Vec<Compensated>,
    wx: Vec<Compensated>,
}

impl Prefix {
    fn new(mu: &EmpiricalMeasure) -> Self {
        let n = mu.len();
        let mut w = Vec::with_capacity(n + 1);
        let mut wx = Vec::with_capacity(n + 1);
        let (mut cw, mut cwx) = (Compensated::default(), Compensated::default());
        w.push(cw);
        wx.push(cwx);
        for (&x, &m) in mu.atoms.iter().zip(&mu.weights) {
            cw.add(m);
            cwx.add(m * x);
            w.push(cw);
            wx.push(cwx);
        }
        Prefix { w, wx }
    }

    fn diff(v: &[Compensated], a: usize, b: usize) -> f64 {
        (v[b].sum - v[a].sum) + (v[b].comp - v[a].comp)
    }
}

/// `(mu1, mu2)_r = integral of mu1(B_r(x)) mu2(B_r(x)) dx` with `B_r(x) = [x - r, x + r]`.
///
/// For atoms `s` and `t` the two indicator functions overlap on an interval of
/// length `max(0, 2r - |s - t|)`, so the integral is the double sum of that
/// kernel. A single sweep with prefix sums evaluates it exactly in `O(n1 + n2)`.
pub fn correlation_form(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(IfsError::InvalidArgument(format!("r = {r} must be positive")));
    }
    let prefix = Prefix::new(mu2);
    let t = &mu2.atoms;
    let two_r = 2.0 * r;
    let (mut lo, mut mid, mut hi) = (0, 0, 0);
    let mut total = Compensated::default();
    for (&s, &ws) in mu1.atoms.iter().zip(&mu1.weights) {
        while lo < t.len() && t[lo] <= s - two_r {
            lo += 1;
        }
        mid = mid.max(lo);
        while mid < t.len() && t[mid] <= s {
            mid += 1;
        }
        hi = hi.max(mid);
        while hi < t.len() && t[hi] < s + two_r {
            hi += 1;
        }
        let w_left = Prefix::diff(&prefix.w, lo, mid);
        let x_left = Prefix::diff(&prefix.wx, lo, mid);
        let w_right = Prefix::diff(&prefix.w, mid, hi);
        let x_right = Prefix::diff(&prefix.wx, mid, hi);
        // left: sum v (2r - s + t), right: sum v (2r + s - t)
        let left = two_r * w_left - (s * w_left - x_left);
        let right = two_r * w_right - (x_right - s * w_right);
        total.add(ws * (left + right));
    }
    Ok(total.sum + total.comp)
}

/// Average over atoms of `mu(B_r(atom))` times the effective sample size:
/// the expected number of samples sharing a window of radius `r`.
pub fn window_samples(mu: &EmpiricalMeasure, r: f64) -> f64 {
    let x = &mu.atoms;
    let w = &mu.weights;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    let mut acc = Compensated::default();
    prefix.push(0.0);
    for &m in w {
        acc.add(m);
        prefix.push(acc.sum + acc.comp);
    }
    let (mut lo, mut hi) = (0, 0);
    let mut avg = 0.0;
    for (&s, &ws) in x.iter().zip(w) {
        while x[lo] < s - r {
            lo += 1;
        }
        while hi < x.len() && x[hi] <= s + r {
            hi += 1;
        }
        avg += ws * (prefix[hi] - prefix[lo]);
    }
    let total = mu.total_mass();
    mu.effective_size() * avg / (total * total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Point {
    pub r: f64,
    /// `(mu, mu)_r`
    pub form: f64,
    /// `(mu, mu)_r / r^2`
    pub scaled: f64,
    pub window_samples: f64,
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Estimate {
    pub points: Vec<L2Point>,
    /// Minimum of the scaled values over the last half of the usable ladder.
    pub liminf_proxy: f64,
    /// Ratios `scaled(r_{k+1}) / scaled(r_k)` over that tail.
    pub tail_ratios: Vec<f64>,
    pub stable: bool,
    /// Every tail step grows by more than the stability band: no L2 density in sight.
    pub diverging: bool,
}

/// Evaluates `(1/r^2)(mu, mu)_r` on a strictly decreasing ladder of radii and
/// summarizes the small-`r` behaviour as a liminf proxy.
pub fn l2_estimate(mu: &EmpiricalMeasure, r_list: &[f64]) -> Result<L2Estimate> {
    if r_list.windows(2).any(|w| !(w[1] < w[0])) || r_list.iter().any(|&r| !(r > 0.0)) {
        return Err(IfsError::InvalidArgument("r ladder must be positive and strictly decreasing".into()));
    }
    let points = r_list
        .iter()
        .map(|&r| {
            let form = correlation_form(mu, mu, r)?;
            let window = window_samples(mu, r);
            Ok(L2Point {
                r,
                form,
                scaled: form / (r * r),
                window_samples: window,
                usable: window >= MIN_WINDOW_SAMPLES,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let usable: Vec<f64> = points.iter().filter(|p| p.usable).map(|p| p.scaled).collect();
    let tail = &usable[usable.len() / 2..];
    let tail_ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
    let liminf_proxy = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let stable = !tail.is_empty()
        && tail_ratios
            .iter()
            .all(|&q| q >= STABLE_RATIO.0 && q <= STABLE_RATIO.1);
    let diverging = !tail_ratios.is_empty() && tail_ratios.iter().all(|&q| q > STABLE_RATIO.1);
    Ok(L2Estimate {
        points,
        liminf_proxy,
        tail_ratios,
        stable,
        diverging,
    })
}

/// `J(r) = (1/r^2) integral (gamma_z, gamma_z)_r dz`, approximated by a weighted
/// sum over z-slices. Slice weights are the slice lengths and must add up to 2.
pub fn j_statistic(slices: &[(f64, EmpiricalMeasure)], r: f64) -> Result<f64> {
    if slices.is_empty() {
        return Err(IfsError::Empty("slices"));
    }
    let total: f64 = slices.iter().map(|s| s.0).sum();
    if (total - 2.0).abs() > 1e-9 {
        return Err(IfsError::InvalidArgument(format!("slice weights sum to {total}, expected 2")));
    }
    let mut j = 0.0;
    for (w, gamma) in slices {
        j += w * correlation_form(gamma, gamma, r)?;
    }
    Ok(j / (r * r))
}

/// Sup distance between the normalized CDFs of two measures.
pub fn ks_distance(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> f64 {
    let (m1, m2) = (mu1.total_mass(), mu2.total_mass());
    let (a, b) = (&mu1.atoms, &mu2.atoms);
    let (mut i, mut j) = (0, 0);
    let (mut c1, mut c2) = (Compensated::default(), Compensated::default());
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] == x {
            c1.add(mu1.weights[i]);
            i += 1;
        }
        while j < b.len() && b[j] == x {
            c2.add(mu2.weights[j]);
            j += 1;
        }
        let f1 = (c1.sum + c1.comp) / m1;
        let f2 = (c2.sum + c2.comp) / m2;
        d = d.max((f1 - f2).abs());
    }
    d.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Midpoint-rule integral of mu1(B_r(x)) mu2(B_r(x)) on a uniform grid.
    fn brute_force_form(a: &[(f64, f64)], b: &[(f64, f64)], r: f64, h: f64) -> f64 {
        let ball = |atoms: &[(f64, f64)], x: f64| -> f64 {
            atoms.iter().filter(|(s, _)| (x - s).abs() <= r).map(|(_, w)| w).sum()
        };
        let lo = a.iter().chain(b).map(|p| p.0).fold(f64::INFINITY, f64::min) - r - 1.0;
        let hi = a.iter().chain(b).map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + r + 1.0;
        let n = ((hi - lo) / h).ceil() as usize;
        let mut acc = 0.0;
        for k in 0..n {
            let x = lo + (k as f64 + 0.5) * h;
            let m1 = ball(a, x);
            if m1 != 0.0 {
                acc += m1 * ball(b, x);
            }
        }
        acc * h
    }

    fn uniform_samples(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn point_mass_form_is_two_r() {
        let d = EmpiricalMeasure::point_mass(0.0);
        for r in [0.1, 0.01, 0.3] {
            assert_relative_eq!(correlation_form(&d, &d, r).unwrap(), 2.0 * r, max_relative = 1e-14);
        }
    }

    #[test]
    fn separated_masses_do_not_interact() {
        let a = EmpiricalMeasure::point_mass(0.0);
        let b = EmpiricalMeasure::point_mass(0.5);
        assert_eq!(correlation_form(&a, &b, 0.2).unwrap(), 0.0);
        assert_relative_eq!(correlation_form(&a, &b, 0.3).unwrap(), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn rejects_nonpositive_radius() {
        let a = EmpiricalMeasure::point_mass(0.0);
        assert!(correlation_form(&a, &a, 0.0).is_err());
        assert!(correlation_form(&a, &a, -1.0).is_err());
    }

    #[test]
    fn matches_grid_integration_for_few_atoms() {
        type Atoms = Vec<(f64, f64)>;
        let cases: Vec<(Atoms, Atoms, f64)> = vec![
            (vec![(0.1, 0.5), (0.3, 0.5)], vec![(0.2, 1.0)], 0.15),
            (vec![(-0.4, 0.2), (0.0, 0.3), (0.05, 0.5)], vec![(-0.3, 0.6), (0.2, 0.4)], 0.12),
            (vec![(0.7, 1.0)], vec![(0.7, 0.25), (0.71, 0.25), (0.9, 0.5)], 0.05),
        ];
        for (a, b, r) in cases {
            let mu1 = EmpiricalMeasure::from_weighted(a.clone()).unwrap();
            let mu2 = EmpiricalMeasure::from_weighted(b.clone()).unwrap();
            let exact = correlation_form(&mu1, &mu2, r).unwrap();
            let grid = brute_force_form(&a, &b, r, 1e-7);
            assert!((exact - grid).abs() < 1e-6, "{exact} vs {grid}");
        }
    }

    #[test]
    fn uniform_measure_scaled_form_approaches_two() {
        let mu = EmpiricalMeasure::from_samples(&uniform_samples(200_000, 11)).unwrap();
        for r in [0.05, 0.02] {
            let v = correlation_form(&mu, &mu, r).unwrap() / (r * r);
            assert!((v - 2.0).abs() < 0.1, "r = {r}: {v}");
        }
    }

    #[test]
    fn l2_estimate_uniform_calibration() {
        let mu = EmpiricalMeasure::from_samples(&uniform_samples(200_000, 5)).unwrap();
        let est = l2_estimate(&mu, &[0.1, 0.05, 0.02]).unwrap();
        assert!(est.points.iter().all(|p| p.usable));
        assert!((est.liminf_proxy - 2.0).abs() < 0.2, "{est:?}");
        assert!(est.stable);
        assert!(!est.diverging);
    }

    #[test]
    fn l2_estimate_point_mass_diverges() {
        let mu = EmpiricalMeasure::from_samples(&vec![0.25; 1000]).unwrap();
        let ladder = [0.1, 0.05, 0.025, 0.0125];
        let est = l2_estimate(&mu, &ladder).unwrap();
        for p in &est.points {
            assert_relative_eq!(p.scaled, 2.0 / p.r, max_relative = 1e-12);
        }
        assert!(est.diverging);
        assert!(!est.stable);
    }

    #[test]
    fn l2_estimate_tracks_four_times_squared_density() {
        // triangular density h(x) = 1 - |x| on [-1, 1]: integral of h^2 = 2/3
        let mut rng = stream_rng(9, 0);
        let samples: Vec<f64> = (0..300_000)
            .map(|_| rng.random::<f64>() + rng.random::<f64>() - 1.0)
            .collect();
        let mu = EmpiricalMeasure::from_samples(&samples).unwrap();
        let est = l2_estimate(&mu, &[0.04, 0.02, 0.01]).unwrap();
        let target = 4.0 * 2.0 / 3.0;
        assert!((est.liminf_proxy - target).abs() < 0.05 * target, "{}", est.liminf_proxy);
    }

    #[test]
    fn l2_estimate_rejects_bad_ladder() {
        let mu = EmpiricalMeasure::point_mass(0.0);
        assert!(l2_estimate(&mu, &[0.1, 0.2]).is_err());
        assert!(l2_estimate(&mu, &[0.1, 0.0]).is_err());
    }

    #[test]
    fn small_radii_are_flagged_unusable() {
        let mu = EmpiricalMeasure::from_samples(&uniform_samples(1000, 1)).unwrap();
        // about 1000 * 2r samples per window: 100 at r = 0.05, 10 at r = 0.005
        let est = l2_estimate(&mu, &[0.05, 0.005]).unwrap();
        assert!(est.points[0].usable);
        assert!(!est.points[1].usable);
    }

    #[test]
    fn j_statistic_examples() {
        let mu = EmpiricalMeasure::from_samples(&uniform_samples(100_000, 2)).unwrap();
        let r = 0.02;
        let per_r = correlation_form(&mu, &mu, r).unwrap() / (r * r);
        let slices: Vec<(f64, EmpiricalMeasure)> = (0..4).map(|_| (0.5, mu.clone())).collect();
        assert_relative_eq!(j_statistic(&slices, r).unwrap(), 2.0 * per_r, max_relative = 1e-12);
        let single = j_statistic(&[(2.0, mu.clone())], r).unwrap();
        assert!((single - 4.0).abs() < 0.3, "{single}");

        let points = vec![(1.0, EmpiricalMeasure::point_mass(0.0)), (1.0, EmpiricalMeasure::point_mass(0.5))];
        assert_relative_eq!(j_statistic(&points, r).unwrap(), 2.0 * 2.0 / r, max_relative = 1e-12);

        assert!(j_statistic(&[], r).is_err());
        assert!(j_statistic(&[(1.0, mu)], r).is_err());
    }

    #[test]
    fn ks_examples() {
        let a = EmpiricalMeasure::from_samples(&uniform_samples(5000, 3)).unwrap();
        assert_eq!(ks_distance(&a, &a), 0.0);
        let d0 = EmpiricalMeasure::point_mass(0.0);
        let d1 = EmpiricalMeasure::point_mass(0.5);
        assert_eq!(ks_distance(&d0, &d1), 1.0);

        let x = EmpiricalMeasure::from_samples(&uniform_samples(100_000, 21)).unwrap();
        let y = EmpiricalMeasure::from_samples(&uniform_samples(100_000, 22)).unwrap();
        assert!(ks_distance(&x, &y) < 0.01);
    }

    #[test]
    fn ks_handles_ties_and_weights() {
        let a = EmpiricalMeasure::from_weighted(vec![(0.0, 1.0), (1.0, 1.0)]).unwrap();
        let b = EmpiricalMeasure::from_weighted(vec![(0.0, 0.5), (1.0, 1.5)]).unwrap();
        assert_relative_eq!(ks_distance(&a, &b), 0.25, max_relative = 1e-15);
        let c = EmpiricalMeasure::from_samples(&[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(ks_distance(&a, &c), 0.0);
    }

    #[test]
    fn histogram_examples() {
        let zeros = EmpiricalMeasure::from_samples(&[0.0; 10]).unwrap().with_histogram(4).unwrap();
        let h = zeros.histogram().unwrap();
        assert_eq!(h.masses, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(h.edges(2), (0.0, 0.5));

        let n = 400_000;
        let bins = 40;
        let uni = EmpiricalMeasure::from_samples(&uniform_samples(n, 4)).unwrap().with_histogram(bins).unwrap();
        let h = uni.histogram().unwrap();
        let tol = 4.0 * (1.0 / (n as f64 * bins as f64)).sqrt();
        for &m in &h.masses {
            assert!((m - 1.0 / bins as f64).abs() < tol);
        }
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(EmpiricalMeasure::from_samples(&[]).is_err());
        assert!(EmpiricalMeasure::point_mass(0.0).with_histogram(0).is_err());
    }

    fn small_measure() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-1.0f64..1.0, 0.01f64..1.0), 1..40)
    }

    proptest! {
        #[test]
        fn form_is_symmetric(a in small_measure(), b in small_measure(), r in 0.001f64..0.5) {
            let mu1 = EmpiricalMeasure::from_weighted(a).unwrap();
            let mu2 = EmpiricalMeasure::from_weighted(b).unwrap();
            let f12 = correlation_form(&mu1, &mu2, r).unwrap();
            let f21 = correlation_form(&mu2, &mu1, r).unwrap();
            prop_assert!((f12 - f21).abs() <= 1e-12 * (1.0 + f12.abs()));
        }

        #[test]
        fn form_obeys_cauchy_schwarz(a in small_measure(), b in small_measure(), r in 0.001f64..0.5) {
            let mu1 = EmpiricalMeasure::from_weighted(a).unwrap();
            let mu2 = EmpiricalMeasure::from_weighted(b).unwrap();
            let f12 = correlation_form(&mu1, &mu2, r).unwrap();
            let f11 = correlation_form(&mu1, &mu1, r).unwrap();
            let f22 = correlation_form(&mu2, &mu2, r).unwrap();
            prop_assert!(f12 * f12 <= f11 * f22 + 1e-9);
        }

        #[test]
        fn form_is_linear_in_mass(a in small_measure(), b in small_measure(), r in 0.001f64..0.5, c in 0.1f64..10.0) {
            let mu1 = EmpiricalMeasure::from_weighted(a).unwrap();
            let mu2 = EmpiricalMeasure::from_weighted(b).unwrap();
            let f = correlation_form(&mu1, &mu2, r).unwrap();
            let fc = correlation_form(&mu1.scaled(c), &mu2, r).unwrap();
            prop_assert!((fc - c * f).abs() <= 1e-12 * (1.0 + fc.abs()));
        }

        #[test]
        fn self_form_is_monotone_in_r(a in small_measure(), r in 0.001f64..0.4, dr in 0.0f64..0.1) {
            let mu = EmpiricalMeasure::from_weighted(a).unwrap();
            let small = correlation_form(&mu, &mu, r).unwrap();
            let large = correlation_form(&mu, &mu, r + dr).unwrap();
            prop_assert!(large >= small - 1e-12);
        }

        #[test]
        fn ks_is_a_bounded_symmetric_distance(a in small_measure(), b in small_measure()) {
            let mu1 = EmpiricalMeasure::from_weighted(a).unwrap();
            let mu2 = EmpiricalMeasure::from_weighted(b).unwrap();
            let d = ks_distance(&mu1, &mu2);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - ks_distance(&mu2, &mu1)).abs() < 1e-12);
        }
    }
}
