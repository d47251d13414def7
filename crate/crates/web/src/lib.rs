//! Browser bindings for the `rifs` lab: the stationary density of a two-map
//! system, its L2 correlation curve, and the x-projection of the cube map.

use rifs::constants::{bounds_report, Theorem};
use rifs::ifs::{IfsSpec, MapSpec, Perturbation};
use rifs::measure::{l2_estimate, EmpiricalMeasure};
use rifs::sampler::{default_depth, SampleModel};
use rifs::skewprod::{pushforward_measure, CubeMap, CubePoint};
use rifs::study::sample;
use wasm_bindgen::prelude::*;

const MAX_SAMPLES: usize = 2_000_000;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// A two-map affine system `f_i(x) = lambda_i x + a_i (1 - lambda_i)`.
#[wasm_bindgen]
pub struct Lab {
    ifs: IfsSpec,
}

#[wasm_bindgen]
impl Lab {
    #[wasm_bindgen(constructor)]
    pub fn new(lambda1: f64, a1: f64, lambda2: f64, a2: f64, p1: f64, epsilon: f64, additive: bool) -> Result<Lab, JsError> {
        let perturbation = if additive { Perturbation::AdditiveRatio } else { Perturbation::Multiplicative };
        let ifs = IfsSpec::new(
            vec![MapSpec::affine(lambda1, a1), MapSpec::affine(lambda2, a2)],
            vec![p1, 1.0 - p1],
            perturbation,
            epsilon,
        )
        .map_err(js_err)?;
        let report = ifs.validate();
        if let Some(c) = report.failures().next() {
            return Err(JsError::new(&format!("check failed: {}", c.name)));
        }
        Ok(Lab { ifs })
    }

    fn model(&self) -> SampleModel {
        match self.ifs.perturbation {
            Perturbation::Multiplicative => SampleModel::ZEpsilon,
            Perturbation::AdditiveRatio => SampleModel::XLambda,
        }
    }

    fn measure(&self, n: usize, seed: u64) -> Result<EmpiricalMeasure, JsError> {
        let n = n.clamp(1, MAX_SAMPLES);
        let eps = self.ifs.epsilon;
        let depth = default_depth(&self.ifs, eps, self.model()).map_err(js_err)?;
        let batch = sample(&self.ifs, self.model(), eps, n, depth, seed).map_err(js_err)?;
        EmpiricalMeasure::from_samples(&batch.values).map_err(js_err)
    }

    /// Histogram densities of the stationary measure on `bins` equal bins of `[-1, 1)`.
    pub fn density(&self, n: usize, bins: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        let mu = self.measure(n, seed)?.with_histogram(bins.max(1)).map_err(js_err)?;
        Ok(mu.histogram().map(|h| h.densities()).unwrap_or_default())
    }

    /// `(1/r^2)(nu, nu)_r` at `r = 0.05 2^-j`, `j = 0..levels`, as
    /// `[r_0, value_0, r_1, value_1, ..., liminf_proxy]`.
    pub fn l2_curve(&self, n: usize, levels: u32, seed: u64) -> Result<Vec<f64>, JsError> {
        let mu = self.measure(n, seed)?;
        let radii: Vec<f64> = (0..levels.clamp(2, 16)).map(|j| 0.05 * 0.5f64.powi(j as i32)).collect();
        let est = l2_estimate(&mu, &radii).map_err(js_err)?;
        let mut out: Vec<f64> = est.points.iter().flat_map(|p| [p.r, p.scaled]).collect();
        out.push(est.liminf_proxy);
        Ok(out)
    }

    /// `C'/sqrt(eps)` at partition depth `m`, or NaN where the bound does not apply.
    pub fn l2_bound(&self, m: u32) -> f64 {
        bounds_report(&self.ifs, self.ifs.epsilon, Some(m), 0.5)
            .map(|r| r.l2_bound)
            .unwrap_or(f64::NAN)
    }

    /// Histogram densities of the x-projection of the cube map's SRB measure.
    pub fn projection(&self, m: u32, points: usize, steps: usize, bins: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        let pf = pushforward_measure(
            &self.ifs,
            self.ifs.epsilon,
            m,
            Theorem::for_model(self.ifs.perturbation),
            points.clamp(1, 20_000),
            steps.clamp(2, 400),
            seed,
        )
        .map_err(js_err)?;
        let mu = pf.projection.with_histogram(bins.max(1)).map_err(js_err)?;
        Ok(mu.histogram().map(|h| h.densities()).unwrap_or_default())
    }

    /// One cube-map orbit as `[x_0, y_0, z_0, x_1, ...]`.
    pub fn orbit(&self, m: u32, x: f64, y: f64, z: f64, steps: usize) -> Result<Vec<f64>, JsError> {
        let map = CubeMap::new(&self.ifs, self.ifs.epsilon, m, Theorem::for_model(self.ifs.perturbation)).map_err(js_err)?;
        let rec = map.orbit(&CubePoint { x, y, z }, steps.min(10_000)).map_err(js_err)?;
        Ok(rec.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
    }
}
