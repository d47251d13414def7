//! The skew product on the cube `Q = [-1, 1)^3`.
//!
//! `Q` is cut into pieces `Q_{i,k}`: the y-axis into `l` slabs of width
//! `2 p_i`, the z-axis into `2^m` dyadic slabs. On `Q_{i,k}` the map is
//!
//! ```text
//! (x, y, z) -> (d x_i + a_i (1 - d), y / p_i + b_i, 2^m z + c_k)
//! ```
//!
//! with `x_i = f_i(x)` for the multiplicative variant (`Theorem::T3`) and
//! `x_i = x` for the additive-ratio variant (`Theorem::T5`). Writing `z'` for
//! the new z-coordinate, the multiplier is `d = 1 + eps z'` (T3) or
//! `d = lambda_i + eps z'` (T5), so it sweeps the whole noise interval across
//! each z-slab.
//!
//! Map indices `i` are 0-based here.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constants::{c_double_prime_t5, c_eps_m_lemma1, t5_corner_margin, Theorem};
use crate::error::{IfsError, Result};
use crate::ifs::{IfsSpec, Perturbation};
use crate::measure::EmpiricalMeasure;
use crate::rng::{map_indexed, stream_rng};

/// Jacobian queries closer than this to a partition boundary are rejected.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Largest supported partition depth.
pub const MAX_DEPTH: u32 = 40;
/// Step used by [`jacobian_check`] for central differences.
pub const FD_STEP: f64 = 1e-6;

const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;
const ESCAPE_TOL: f64 = 1e-9;
const MAX_WITNESSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CubePoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        CubePoint { x, y, z }
    }

    pub fn in_cube(&self) -> bool {
        [self.x, self.y, self.z].iter().all(|c| (-1.0..1.0).contains(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartitionIndex {
    /// Map index, `0..l`.
    pub i: usize,
    /// Dyadic z-slab, `0..2^m`.
    pub k: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl TangentVector {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        TangentVector { u, v, w }
    }

    /// `(|u / w|, |v / w|)`
    pub fn ratios(&self) -> (f64, f64) {
        ((self.u / self.w).abs(), (self.v / self.w).abs())
    }

    /// Open cone `|u/w| < tau`, `|v/w| < tau` around the z-axis.
    pub fn in_cone(&self, tau: f64) -> bool {
        let (ru, rv) = self.ratios();
        ru < tau && rv < tau
    }
}

pub type Matrix3 = [[f64; 3]; 3];

pub fn mat_vec(m: &Matrix3, t: TangentVector) -> TangentVector {
    let v = [t.u, t.v, t.w];
    let row = |r: usize| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2];
    TangentVector::new(row(0), row(1), row(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub points: Vec<CubePoint>,
    pub itinerary: Vec<PartitionIndex>,
}

/// The cube map for one system, noise level, depth and variant.
#[derive(Debug, Clone)]
pub struct CubeMap {
    ifs: IfsSpec,
    epsilon: f64,
    m: u32,
    variant: Theorem,
    scale: f64,
    y_edges: Vec<f64>,
}

impl CubeMap {
    pub fn new(ifs: &IfsSpec, epsilon: f64, m: u32, variant: Theorem) -> Result<Self> {
        if m > MAX_DEPTH {
            return Err(IfsError::InvalidArgument(format!("m = {m} exceeds {MAX_DEPTH}")));
        }
        if !(epsilon >= 0.0) {
            return Err(IfsError::EpsilonOutOfRange {
                epsilon,
                reason: "epsilon must be >= 0".into(),
            });
        }
        let mut ifs = ifs.with_epsilon(epsilon);
        ifs.perturbation = match variant {
            Theorem::T3 => Perturbation::Multiplicative,
            Theorem::T5 => {
                ifs.require_affine()?;
                Perturbation::AdditiveRatio
            }
        };
        let y_edges = ifs.cumulative().iter().map(|c| -1.0 + 2.0 * c).collect();
        Ok(CubeMap {
            ifs,
            epsilon,
            m,
            variant,
            scale: 2f64.powi(m as i32),
            y_edges,
        })
    }

    pub fn ifs(&self) -> &IfsSpec {
        &self.ifs
    }

    pub fn depth(&self) -> u32 {
        self.m
    }

    pub fn slabs(&self) -> u64 {
        1u64 << self.m
    }

    pub fn index(&self, p: &CubePoint) -> PartitionIndex {
        let l = self.ifs.len();
        let i = self.y_edges[1..l].partition_point(|&e| e <= p.y);
        let k = ((p.z + 1.0) * (self.scale / 2.0)).floor();
        let k = if k < 0.0 { 0 } else { (k as u64).min(self.slabs() - 1) };
        PartitionIndex { i, k }
    }

    /// y- and z-edges `(y_lo, y_hi, z_lo, z_hi)` of a piece.
    pub fn piece_bounds(&self, idx: PartitionIndex) -> (f64, f64, f64, f64) {
        let width = 2.0 / self.scale;
        (
            self.y_edges[idx.i],
            self.y_edges[idx.i + 1],
            -1.0 + idx.k as f64 * width,
            -1.0 + (idx.k + 1) as f64 * width,
        )
    }

    /// Expanding coordinates on piece `idx`, without clamping.
    pub fn branch_yz(&self, idx: PartitionIndex, y: f64, z: f64) -> (f64, f64) {
        let p = self.ifs.probabilities[idx.i];
        let y_new = 1.0 + (y - self.y_edges[idx.i + 1]) / p;
        let c = self.scale - 2.0 * idx.k as f64 - 1.0;
        (y_new, self.scale * z + c)
    }

    /// Noise multiplier `d` as a function of the image coordinate `z'`.
    pub fn multiplier(&self, i: usize, z_image: f64) -> f64 {
        self.base(i) + self.epsilon * z_image
    }

    fn base(&self, i: usize) -> f64 {
        match self.variant {
            Theorem::T3 => 1.0,
            Theorem::T5 => self.ifs.maps[i].ratio().unwrap_or(f64::NAN),
        }
    }

    fn check_point(p: &CubePoint) -> Result<()> {
        for c in [p.x, p.y, p.z] {
            if !(-1.0..1.0).contains(&c) {
                return Err(IfsError::Domain { x: c });
            }
        }
        Ok(())
    }

    pub fn step(&self, p: &CubePoint) -> Result<CubePoint> {
        Self::check_point(p)?;
        let idx = self.index(p);
        let (y, z) = self.branch_yz(idx, p.y, p.z);
        let d = self.multiplier(idx.i, z);
        let x = self.ifs.apply_perturbed(idx.i, d, p.x);
        if !(-1.0..1.0).contains(&x) {
            return Err(IfsError::Escape { value: x, step: 0 });
        }
        Ok(CubePoint::new(x, y.clamp(-1.0, BELOW_ONE), z.clamp(-1.0, BELOW_ONE)))
    }

    pub fn jacobian(&self, p: &CubePoint) -> Result<Matrix3> {
        Self::check_point(p)?;
        let idx = self.index(p);
        let (y_lo, y_hi, z_lo, z_hi) = self.piece_bounds(idx);
        // only interior edges count; the faces of Q are not partition boundaries
        let y_near = (idx.i > 0 && p.y - y_lo <= BOUNDARY_TOL)
            || (idx.i + 1 < self.ifs.len() && y_hi - p.y <= BOUNDARY_TOL);
        let z_near = (idx.k > 0 && p.z - z_lo <= BOUNDARY_TOL)
            || (idx.k + 1 < self.slabs() && z_hi - p.z <= BOUNDARY_TOL);
        if y_near || z_near {
            return Err(IfsError::BoundaryPoint { tol: BOUNDARY_TOL });
        }
        let (_, z) = self.branch_yz(idx, p.y, p.z);
        let d = self.multiplier(idx.i, z);
        let map = &self.ifs.maps[idx.i];
        let a = map.fixpoint();
        let (dx, corner) = match self.variant {
            Theorem::T3 => (d * map.derivative(p.x), self.scale * self.epsilon * (map.apply(p.x) - a)),
            Theorem::T5 => (d, self.scale * self.epsilon * (p.x - a)),
        };
        Ok([
            [dx, 0.0, corner],
            [0.0, 1.0 / self.ifs.probabilities[idx.i], 0.0],
            [0.0, 0.0, self.scale],
        ])
    }

    /// `2^{m+1} eps / (2^m - lambda_max,max (1 + eps))` (T3) or
    /// `2^{m+1} eps / (2^m - lambda_max - eps)` (T5).
    pub fn cone_halfwidth(&self) -> Result<f64> {
        let den = self.scale - self.max_rate();
        if den <= 0.0 {
            return Err(IfsError::DepthTooSmall {
                m: self.m,
                reason: format!("2^m <= {}", self.max_rate()),
            });
        }
        Ok(2.0 * self.scale * self.epsilon / den)
    }

    /// Largest x-contraction rate over all pieces.
    fn max_rate(&self) -> f64 {
        match self.variant {
            Theorem::T3 => self.ifs.lambda_max_max() * (1.0 + self.epsilon),
            Theorem::T5 => self.ifs.lambda_max_max() + self.epsilon,
        }
    }

    pub fn orbit(&self, p: &CubePoint, n: usize) -> Result<OrbitRecord> {
        let mut points = Vec::with_capacity(n);
        let mut itinerary = Vec::with_capacity(n);
        let mut q = *p;
        for t in 0..n {
            if t > 0 {
                q = self.step(&q)?;
            } else {
                Self::check_point(&q)?;
            }
            points.push(q);
            itinerary.push(self.index(&q));
        }
        Ok(OrbitRecord { points, itinerary })
    }

    /// First `n` symbols of the coding. Only the `(y, z)` dynamics matter.
    pub fn itinerary(&self, p: &CubePoint, n: usize) -> Result<Vec<PartitionIndex>> {
        Self::check_point(p)?;
        let (mut y, mut z) = (p.y, p.z);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = self.index(&CubePoint::new(0.0, y, z));
            out.push(idx);
            let (y_new, z_new) = self.branch_yz(idx, y, z);
            y = y_new.clamp(-1.0, BELOW_ONE);
            z = z_new.clamp(-1.0, BELOW_ONE);
        }
        Ok(out)
    }
}

pub fn partition_index(p: &CubePoint, ifs: &IfsSpec, m: u32) -> Result<PartitionIndex> {
    CubeMap::check_point(p)?;
    Ok(CubeMap::new(ifs, 0.0, m, Theorem::T3)?.index(p))
}

pub fn step(p: &CubePoint, ifs: &IfsSpec, epsilon: f64, m: u32, variant: Theorem) -> Result<CubePoint> {
    CubeMap::new(ifs, epsilon, m, variant)?.step(p)
}

pub fn jacobian(p: &CubePoint, ifs: &IfsSpec, epsilon: f64, m: u32, variant: Theorem) -> Result<Matrix3> {
    CubeMap::new(ifs, epsilon, m, variant)?.jacobian(p)
}

pub fn cone_halfwidth(ifs: &IfsSpec, epsilon: f64, m: u32, variant: Theorem) -> Result<f64> {
    CubeMap::new(ifs, epsilon, m, variant)?.cone_halfwidth()
}

pub fn itinerary(p: &CubePoint, ifs: &IfsSpec, m: u32, n: usize) -> Result<Vec<PartitionIndex>> {
    CubeMap::new(ifs, 0.0, m, Theorem::T3)?.itinerary(p, n)
}

/// Uniform point of `Q` at distance more than `margin` from every y/z edge.
fn interior_point(map: &CubeMap, rng: &mut impl Rng, margin: f64) -> CubePoint {
    loop {
        let p = CubePoint::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        );
        let (y_lo, y_hi, z_lo, z_hi) = map.piece_bounds(map.index(&p));
        if (p.y - y_lo).min(y_hi - p.y) > margin && (p.z - z_lo).min(z_hi - p.z) > margin {
            return p;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianCheck {
    pub points: usize,
    /// Largest `max |J_fd - J| / max |J|` over the points.
    pub max_rel_error: f64,
    pub worst_point: Option<CubePoint>,
}

/// Compares the analytic Jacobian with central differences of `step`.
pub fn jacobian_check(ifs: &IfsSpec, epsilon: f64, m: u32, variant: Theorem, points: usize, seed: u64) -> Result<JacobianCheck> {
    let map = CubeMap::new(ifs, epsilon, m, variant)?;
    let results = map_indexed(points, |t| -> Result<(f64, CubePoint)> {
        let mut rng = stream_rng(seed, t as u64);
        // keep the x-stencil inside the domain as well
        let p = loop {
            let p = interior_point(&map, &mut rng, 10.0 * FD_STEP);
            if p.x.abs() < 1.0 - 10.0 * FD_STEP {
                break p;
            }
        };
        let exact = map.jacobian(&p)?;
        let mut err: f64 = 0.0;
        let scale = exact.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        #[allow(clippy::needless_range_loop)]
        for col in 0..3 {
            let mut plus = p;
            let mut minus = p;
            match col {
                0 => {
                    plus.x += FD_STEP;
                    minus.x -= FD_STEP;
                }
                1 => {
                    plus.y += FD_STEP;
                    minus.y -= FD_STEP;
                }
                _ => {
                    plus.z += FD_STEP;
                    minus.z -= FD_STEP;
                }
            }
            let (fp, fm) = (map.step(&plus)?, map.step(&minus)?);
            let diff = [(fp.x - fm.x), (fp.y - fm.y), (fp.z - fm.z)].map(|v| v / (2.0 * FD_STEP));
            for row in 0..3 {
                err = err.max((diff[row] - exact[row][col]).abs());
            }
        }
        Ok((err / scale, p))
    });
    let mut report = JacobianCheck {
        points,
        max_rel_error: 0.0,
        worst_point: None,
    };
    for r in results {
        let (e, p) = r?;
        if report.worst_point.is_none() || e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_point = Some(p);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeWitness {
    pub point: CubePoint,
    pub tangent: TangentVector,
    pub image: TangentVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub variant: Theorem,
    pub epsilon: f64,
    pub m: u32,
    pub tau: f64,
    /// `2^m - max x-rate`; must be positive.
    pub expansion_margin: f64,
    /// `min_i p_i 2^m`; must exceed 1.
    pub min_p_scale: f64,
    pub side_conditions_hold: bool,
    pub trials: usize,
    pub violations: usize,
    pub max_u_ratio: f64,
    pub max_v_ratio: f64,
    pub witnesses: Vec<ConeWitness>,
}

impl ConeReport {
    pub fn passed(&self) -> bool {
        self.side_conditions_hold && self.violations == 0
    }
}

/// Pushes tangent vectors from the boundary of the cone through the Jacobian
/// at random interior points and checks that the images land inside the cone.
pub fn check_cone_invariance(ifs: &IfsSpec, epsilon: f64, m: u32, variant: Theorem, trials: usize, seed: u64) -> Result<ConeReport> {
    let map = CubeMap::new(ifs, epsilon, m, variant)?;
    let expansion_margin = map.scale - map.max_rate();
    let min_p = ifs.probabilities.iter().copied().fold(f64::INFINITY, f64::min);
    let min_p_scale = min_p * map.scale;
    let side_conditions_hold = expansion_margin > 0.0 && min_p_scale > 1.0;
    let mut report = ConeReport {
        variant,
        epsilon,
        m,
        tau: f64::NAN,
        expansion_margin,
        min_p_scale,
        side_conditions_hold,
        trials: 0,
        violations: 0,
        max_u_ratio: 0.0,
        max_v_ratio: 0.0,
        witnesses: Vec::new(),
    };
    if !side_conditions_hold {
        return Ok(report);
    }
    let tau = map.cone_halfwidth()?;
    report.tau = tau;
    report.trials = trials;
    let results = map_indexed(trials, |t| -> Result<ConeWitness> {
        let mut rng = stream_rng(seed, t as u64);
        let point = interior_point(&map, &mut rng, BOUNDARY_TOL);
        let w = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let free = (rng.random::<f64>() * 2.0 - 1.0) * tau;
        let tangent = if rng.random::<bool>() {
            TangentVector::new(sign * tau * w, free * w, w)
        } else {
            TangentVector::new(free * w, sign * tau * w, w)
        };
        let image = mat_vec(&map.jacobian(&point)?, tangent);
        Ok(ConeWitness { point, tangent, image })
    });
    for r in results {
        let wit = r?;
        let (ru, rv) = wit.image.ratios();
        report.max_u_ratio = report.max_u_ratio.max(ru);
        report.max_v_ratio = report.max_v_ratio.max(rv);
        let inside = if tau > 0.0 { wit.image.in_cone(tau) } else { ru <= tau && rv <= tau };
        if !inside {
            report.violations += 1;
            if report.witnesses.len() < MAX_WITNESSES {
                report.witnesses.push(wit);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapWitness {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub z_p: f64,
    pub z_q: f64,
    pub d_p: f64,
    pub d_q: f64,
    /// 0: `x >= max a`, 1: between the fixpoints, 2: `x < min a`.
    pub regime: usize,
    /// Whether `x` is an image of both branches at these multipliers.
    pub common_image: bool,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub variant: Theorem,
    pub epsilon: f64,
    pub m: u32,
    pub trials: usize,
    pub min_gap: f64,
    pub threshold: f64,
    pub passes: bool,
    pub regime_trials: [usize; 3],
    pub regime_common_image: [usize; 3],
    pub worst: Option<GapWitness>,
}

/// Distance between the u-intervals of the image cones of two distinct
/// branches meeting at the same image abscissa `x`.
///
/// A cone vector `(u, v, 1)` at a preimage `x_p` of branch `i` maps to a
/// direction whose u-slope lies within `|d f_i'(x_p)| tau / 2^m` of
/// `eps (x - a_i) / d`. When `x` is not reachable from a branch the slope is
/// replaced by its bound `lambda_max`, which is what the estimate uses.
pub fn transversality_gap(
    ifs: &IfsSpec,
    epsilon: f64,
    m: u32,
    variant: Theorem,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<TransversalityReport> {
    let map = CubeMap::new(ifs, epsilon, m, variant)?;
    let l = ifs.len();
    if l < 2 {
        return Err(IfsError::Hypothesis("transversality needs at least two maps".into()));
    }
    if trials == 0 {
        return Err(IfsError::InvalidArgument("trials must be >= 1".into()));
    }
    let constant = match variant {
        Theorem::T3 => c_eps_m_lemma1(ifs, epsilon, Some(m))?,
        Theorem::T5 => {
            let ratios = ifs.ratios()?;
            let margin = t5_corner_margin(ifs, epsilon)?;
            if ratios.iter().any(|&r| r - epsilon <= 0.0) || margin <= 0.0 {
                return Err(IfsError::EpsilonOutOfRange {
                    epsilon,
                    reason: format!("noise rectangles violate transversality (corner margin {margin})"),
                });
            }
            c_double_prime_t5(ifs, sigma)?
        }
    };
    let threshold = constant * epsilon;
    if !(threshold > 0.0) {
        return Err(IfsError::NonPositiveConstant {
            name: "transversality threshold",
            value: threshold,
        });
    }
    let tau = map.cone_halfwidth()?;
    let bounds = ifs.lambda_bounds();
    let witnesses = map_indexed(trials, |t| {
        let mut rng = stream_rng(seed, t as u64);
        let i = rng.random_range(0..l);
        let j = (i + rng.random_range(1..l)) % l;
        let (ai, aj) = (ifs.maps[i].fixpoint(), ifs.maps[j].fixpoint());
        let (lo, hi) = (ai.min(aj), ai.max(aj));
        let regimes = [(hi, 1.0), (lo, hi), (-1.0, lo)];
        let mut regime = t % 3;
        while regimes[regime].1 - regimes[regime].0 <= 0.0 {
            regime = (regime + 1) % 3;
        }
        let (r_lo, r_hi) = regimes[regime];
        let x = r_lo + (r_hi - r_lo) * rng.random::<f64>();
        let z_p = rng.random::<f64>() * 2.0 - 1.0;
        let z_q = rng.random::<f64>() * 2.0 - 1.0;
        let branch = |b: usize, z: f64| {
            let idx = map.index(&CubePoint::new(0.0, 0.0, z));
            let (_, z_image) = map.branch_yz(PartitionIndex { i: b, k: idx.k }, 0.0, z);
            let d = map.multiplier(b, z_image);
            let a = ifs.maps[b].fixpoint();
            let target = (x - a * (1.0 - d)) / d;
            let pre = match variant {
                Theorem::T3 => ifs.maps[b].inverse(target),
                Theorem::T5 => Some(target),
            }
            .filter(|v| (-1.0..1.0).contains(v));
            let slope = match (variant, pre) {
                (Theorem::T3, Some(xp)) => d * ifs.maps[b].derivative(xp).abs(),
                (Theorem::T3, None) => d * bounds[b].1,
                (Theorem::T5, _) => d,
            };
            let centre = epsilon * (x - a) / d;
            (d, centre, slope * tau / map.scale, pre.is_some())
        };
        let (d_p, c_p, h_p, ok_p) = branch(i, z_p);
        let (d_q, c_q, h_q, ok_q) = branch(j, z_q);
        GapWitness {
            i,
            j,
            x,
            z_p,
            z_q,
            d_p,
            d_q,
            regime,
            common_image: ok_p && ok_q,
            gap: (c_p - c_q).abs() - h_p - h_q,
        }
    });
    let mut report = TransversalityReport {
        variant,
        epsilon,
        m,
        trials,
        min_gap: f64::INFINITY,
        threshold,
        passes: false,
        regime_trials: [0; 3],
        regime_common_image: [0; 3],
        worst: None,
    };
    for w in witnesses {
        report.regime_trials[w.regime] += 1;
        if w.common_image {
            report.regime_common_image[w.regime] += 1;
        }
        if w.gap < report.min_gap {
            report.min_gap = w.gap;
            report.worst = Some(w);
        }
    }
    report.passes = report.min_gap > threshold;
    Ok(report)
}

/// Orbit of the cube map kept in symbolic form.
///
/// Iterating `z -> 2^m z + c` in floating point discards `m` bits per step,
/// so after a few dozen steps every float orbit collapses onto a dyadic
/// rational (typically `z = -1`) and the noise freezes. Here `(z + 1) / 2` is
/// held as a queue of base-`2^m` digits and `(y + 1) / 2` as a queue of branch
/// symbols; each step drops the leading symbol and appends a fresh random
/// one, which is exactly the shift the map performs on a uniformly drawn
/// starting point.
struct SymbolicOrbit {
    digits: VecDeque<u64>,
    branches: VecDeque<usize>,
    branch_mass: f64,
    fixed_y: Option<f64>,
    x: f64,
    /// Companion chain: same branches, noise from the leading digit plus an independent uniform.
    direct_x: f64,
}

struct Recorded {
    point: CubePoint,
    slab: usize,
    direct_x: f64,
}

impl SymbolicOrbit {
    fn start(map: &CubeMap, chooser: &Option<WeightedIndex<f64>>, rng: &mut impl Rng) -> Self {
        let n_digits = 56usize.div_ceil(map.m as usize) + 1;
        let digits = (0..n_digits).map(|_| rng.random_range(0..map.slabs())).collect();
        let x = rng.random::<f64>() * 2.0 - 1.0;
        let mut orbit = SymbolicOrbit {
            digits,
            branches: VecDeque::new(),
            branch_mass: 1.0,
            fixed_y: None,
            x,
            direct_x: x,
        };
        match chooser {
            Some(c) => {
                orbit.branches.push_back(c.sample(rng));
                orbit.branch_mass = map.ifs.probabilities[orbit.branches[0]];
                orbit.refill(map, c, rng);
            }
            None => {
                orbit.branches.push_back(0);
                orbit.fixed_y = Some(rng.random::<f64>() * 2.0 - 1.0);
            }
        }
        orbit
    }

    fn refill(&mut self, map: &CubeMap, chooser: &WeightedIndex<f64>, rng: &mut impl Rng) {
        while self.branch_mass > f64::EPSILON / 2.0 && self.branches.len() < 4096 {
            let b = chooser.sample(rng);
            self.branch_mass *= map.ifs.probabilities[b];
            self.branches.push_back(b);
        }
    }

    fn zeta(&self, scale: f64) -> f64 {
        self.digits.iter().rev().fold(0.0, |v, &d| (d as f64 + v) / scale)
    }

    fn point(&self, map: &CubeMap) -> CubePoint {
        let z = (2.0 * self.zeta(map.scale) - 1.0).min(BELOW_ONE);
        let y = match self.fixed_y {
            Some(y) => y,
            None => {
                let cum = map.ifs.cumulative();
                let eta = self
                    .branches
                    .iter()
                    .rev()
                    .fold(0.5, |v, &b| cum[b] + map.ifs.probabilities[b] * v);
                (2.0 * eta - 1.0).clamp(-1.0, BELOW_ONE)
            }
        };
        CubePoint::new(self.x, y, z)
    }

    fn advance(&mut self, map: &CubeMap, chooser: &Option<WeightedIndex<f64>>, rng: &mut impl Rng, t: usize) -> Result<()> {
        let i = self.branches[0];
        self.digits.pop_front();
        self.digits.push_back(rng.random_range(0..map.slabs()));
        let z_image = 2.0 * self.zeta(map.scale) - 1.0;
        let lead = self.digits[0] as f64;
        let u = (lead + rng.random::<f64>()) / map.scale;
        let d = map.multiplier(i, z_image);
        let d_direct = map.multiplier(i, 2.0 * u - 1.0);
        self.x = map.ifs.apply_perturbed(i, d, self.x);
        self.direct_x = map.ifs.apply_perturbed(i, d_direct, self.direct_x);
        for v in [self.x, self.direct_x] {
            if !(v.abs() <= 1.0 + ESCAPE_TOL) {
                return Err(IfsError::Escape { value: v, step: t });
            }
        }
        if let Some(c) = chooser {
            let b = self.branches.pop_front().unwrap_or(0);
            self.branch_mass /= map.ifs.probabilities[b];
            self.refill(map, c, rng);
        }
        Ok(())
    }
}

/// Forward-orbit approximation of the SRB measure and its projections.
#[derive(Debug, Clone)]
pub struct Pushforward {
    pub samples: Vec<CubePoint>,
    /// x-marginal, the approximation of `nu_{eps,m}`.
    pub projection: EmpiricalMeasure,
    /// Companion chain with independent noise along the same branch sequence:
    /// a sample of `nu_eps` coupled to the projection.
    pub direct: EmpiricalMeasure,
    pub y_marginal: EmpiricalMeasure,
    pub z_marginal: EmpiricalMeasure,
    /// Occupation frequency of each y-slab.
    pub slab_mass: Vec<f64>,
    pub slice_level: u32,
    /// Conditional x-measures on the `2^slice_level` equal z-slices, weighted
    /// by slice length; `None` when some slice received no samples.
    pub slices: Option<Vec<(f64, EmpiricalMeasure)>>,
}

impl Pushforward {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Conditional x-measures on `2^level` equal z-slices.
    pub fn slices_at(&self, level: u32) -> Result<Vec<(f64, EmpiricalMeasure)>> {
        if level > 24 {
            return Err(IfsError::InvalidArgument(format!("slice level {level} exceeds 24")));
        }
        let count = 1usize << level;
        let mut buckets = vec![Vec::new(); count];
        for p in &self.samples {
            let s = ((p.z + 1.0) / 2.0 * count as f64).floor() as usize;
            buckets[s.min(count - 1)].push(p.x);
        }
        let width = 2.0 / count as f64;
        buckets
            .iter()
            .map(|b| {
                if b.is_empty() {
                    Err(IfsError::Empty("z-slice without samples"))
                } else {
                    Ok((width, EmpiricalMeasure::from_samples(b)?))
                }
            })
            .collect()
    }
}

/// Runs `n_points` orbits of `n_steps` steps from uniform starting points and
/// keeps the states visited during the second half of each orbit.
pub fn pushforward_measure(
    ifs: &IfsSpec,
    epsilon: f64,
    m: u32,
    variant: Theorem,
    n_points: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Pushforward> {
    pushforward_with_slices(ifs, epsilon, m, variant, n_points, n_steps, seed, m)
}

#[allow(clippy::too_many_arguments)]
pub fn pushforward_with_slices(
    ifs: &IfsSpec,
    epsilon: f64,
    m: u32,
    variant: Theorem,
    n_points: usize,
    n_steps: usize,
    seed: u64,
    slice_level: u32,
) -> Result<Pushforward> {
    if n_points == 0 || n_steps == 0 {
        return Err(IfsError::InvalidArgument("n_points and n_steps must be >= 1".into()));
    }
    if m == 0 {
        return Err(IfsError::DepthTooSmall {
            m,
            reason: "the z-map is the identity at m = 0".into(),
        });
    }
    let map = CubeMap::new(ifs, epsilon, m, variant)?;
    let chooser = if ifs.len() > 1 { Some(map.ifs.chooser()?) } else { None };
    let burn = n_steps / 2;
    let runs = map_indexed(n_points, |o| -> Result<Vec<Recorded>> {
        let mut rng = stream_rng(seed, o as u64);
        let mut orbit = SymbolicOrbit::start(&map, &chooser, &mut rng);
        let mut out = Vec::with_capacity(n_steps - burn);
        for t in 0..n_steps {
            orbit.advance(&map, &chooser, &mut rng, t)?;
            if t >= burn {
                out.push(Recorded {
                    point: orbit.point(&map),
                    slab: orbit.branches[0],
                    direct_x: orbit.direct_x,
                });
            }
        }
        Ok(out)
    });
    let mut samples = Vec::with_capacity(n_points * (n_steps - burn));
    let mut direct = Vec::with_capacity(samples.capacity());
    let mut slab_count = vec![0usize; ifs.len()];
    for run in runs {
        for r in run? {
            samples.push(r.point);
            direct.push(r.direct_x);
            slab_count[r.slab] += 1;
        }
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = samples.iter().map(|p| p.y).collect();
    let zs: Vec<f64> = samples.iter().map(|p| p.z).collect();
    let mut pf = Pushforward {
        projection: EmpiricalMeasure::from_samples(&xs)?,
        direct: EmpiricalMeasure::from_samples(&direct)?,
        y_marginal: EmpiricalMeasure::from_samples(&ys)?,
        z_marginal: EmpiricalMeasure::from_samples(&zs)?,
        slab_mass: slab_count.iter().map(|&c| c as f64 / n).collect(),
        slice_level,
        slices: None,
        samples,
    };
    pf.slices = pf.slices_at(slice_level).ok();
    Ok(pf)
}
