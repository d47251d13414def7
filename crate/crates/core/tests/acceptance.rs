//! Acceptance suite, one test per criterion. Run with `--nocapture` to see
//! the PASS/FAIL line and measured values of each.

use std::time::{Duration, Instant};

use rand::Rng;
use rifs::constants::{bounds_report, c_eps_m_lemma1, Theorem};
use rifs::ifs::{IfsSpec, MapSpec, Perturbation};
use rifs::measure::{ks_distance, l2_estimate, EmpiricalMeasure};
use rifs::sampler::{invariance_pushforward, sample_z_epsilon, SampleModel};
use rifs::skewprod::{check_cone_invariance, jacobian_check, pushforward_with_slices, transversality_gap};
use rifs::study::{decreasing_with_inversions, ks_vs_depth, ks_vs_epsilon, recursion_check};

fn reference() -> IfsSpec {
    IfsSpec::new(
        vec![MapSpec::affine(0.6, -0.5), MapSpec::affine(0.6, 0.5)],
        vec![0.5, 0.5],
        Perturbation::Multiplicative,
        0.01,
    )
    .unwrap()
}

fn additive() -> IfsSpec {
    IfsSpec::new(
        vec![MapSpec::affine(0.5, -0.5), MapSpec::affine(0.6, 0.5)],
        vec![0.5, 0.5],
        Perturbation::AdditiveRatio,
        0.01,
    )
    .unwrap()
}

fn r_ladder() -> Vec<f64> {
    (0..7).map(|j| 0.05 * 0.5f64.powi(j)).collect()
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn run(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let ok = out.passed && in_time;
    println!(
        "[{}] criterion {id:>2} {name}: {} ({:.2?} of {:?}{})",
        if ok { "PASS" } else { "FAIL" },
        out.detail,
        elapsed,
        budget,
        if in_time { "" } else { ", over budget" }
    );
    ok
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn constants_oracle() -> Outcome {
    // plain scalar arithmetic on the closed forms
    let (eps, lambda, m) = (0.01f64, 0.6f64, 10);
    let b = 2.0 * 0.25 * (1.0 + eps) * lambda / ((1.0 - eps) * lambda).powi(2);
    let c2 = (1.0 - eps * 2.0) / (1.0 - eps * eps);
    let cm = c2 - 4.0 * (1.0 + eps) * lambda / (2f64.powi(m) - lambda * (1.0 + eps));
    let cp = (32.0 / ((1.0 - b) * c2)).sqrt();
    let l2 = cp / eps.sqrt();

    let ifs = reference();
    let rep = bounds_report(&ifs, eps, Some(m as u32), 0.5).unwrap();
    let checks = [
        ("b", rep.b_factor, b, 0.858756),
        ("C''", rep.c_double_prime, c2, 0.980098),
        ("C_eps,10", rep.c_eps_m, cm, f64::NAN),
        ("C'", rep.c_prime, cp, 15.204),
        ("L2 bound", rep.l2_bound, l2, 152.04),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, got, oracle, quoted) in checks {
        let ok = rel(got, oracle) < 1e-6 && (quoted.is_nan() || rel(got, quoted) < 5e-4);
        passed &= ok;
        parts.push(format!("{name}={got:.7}"));
    }
    Outcome {
        passed,
        detail: parts.join(" "),
    }
}

fn l2_bound_consistency() -> Outcome {
    let ifs = reference();
    let batch = sample_z_epsilon(&ifs, 0.01, 1_000_000, 60, 2024).unwrap();
    let mu = EmpiricalMeasure::from_samples(&batch.values).unwrap();
    let est = l2_estimate(&mu, &r_ladder()).unwrap();
    let bound2 = bounds_report(&ifs, 0.01, Some(10), 0.5).unwrap().l2_bound_squared();
    let usable = est.points.iter().filter(|p| p.usable).count();
    let passed = est.liminf_proxy.is_finite() && est.stable && !est.diverging && est.liminf_proxy < 0.5 * bound2;
    Outcome {
        passed,
        detail: format!(
            "proxy={:.4} usable={usable}/7 ratios={:?} bound^2={bound2:.1}",
            est.liminf_proxy,
            est.tail_ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    }
}

fn calibration() -> Outcome {
    let mut rng = rifs::stream_rng(77, 0);
    let samples: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mu = EmpiricalMeasure::from_samples(&samples).unwrap();
    let est = l2_estimate(&mu, &r_ladder()).unwrap();
    Outcome {
        passed: (est.liminf_proxy - 2.0).abs() <= 0.2,
        detail: format!("proxy={:.4} (target 2)", est.liminf_proxy),
    }
}

fn cone_invariance() -> Outcome {
    let t3 = check_cone_invariance(&reference(), 0.01, 10, Theorem::T3, 10_000, 11).unwrap();
    let t5 = check_cone_invariance(&additive(), 0.01, 10, Theorem::T5, 10_000, 12).unwrap();
    Outcome {
        passed: t3.passed() && t5.passed() && t3.trials == 10_000 && t5.trials == 10_000,
        detail: format!(
            "T3 violations={} max|u/w|/tau={:.4}; T5 violations={} max|u/w|/tau={:.4}",
            t3.violations,
            t3.max_u_ratio / t3.tau,
            t5.violations,
            t5.max_u_ratio / t5.tau
        ),
    }
}

fn transversality() -> Outcome {
    let ifs = reference();
    let t3 = transversality_gap(&ifs, 0.01, 10, Theorem::T3, 0.5, 10_000, 21).unwrap();
    let t5 = transversality_gap(&additive(), 0.01, 10, Theorem::T5, 0.5, 10_000, 22).unwrap();
    let c = c_eps_m_lemma1(&ifs, 0.01, Some(10)).unwrap();
    let all_regimes = t3.regime_trials.iter().all(|&n| n > 0);
    let passed = t3.passes && t3.min_gap > 0.0080550 && rel(t3.threshold, c * 0.01) < 1e-12 && all_regimes && t5.passes && rel(t5.threshold, 0.75 * 0.01) < 1e-12;
    Outcome {
        passed,
        detail: format!(
            "T3 min_gap={:.6} > {:.6} regimes={:?}; T5 min_gap={:.6} > {:.6}",
            t3.min_gap, t3.threshold, t3.regime_trials, t5.min_gap, t5.threshold
        ),
    }
}

fn jacobians() -> Outcome {
    let t3 = jacobian_check(&reference(), 0.01, 10, Theorem::T3, 1000, 31).unwrap();
    let t5 = jacobian_check(&additive(), 0.01, 10, Theorem::T5, 1000, 32).unwrap();
    Outcome {
        passed: t3.max_rel_error < 1e-6 && t5.max_rel_error < 1e-6,
        detail: format!("T3 max rel err={:.2e}; T5 max rel err={:.2e}", t3.max_rel_error, t5.max_rel_error),
    }
}

fn weak_convergence() -> Outcome {
    let ladder = [0.2, 0.1, 0.05, 0.025];
    let z = ks_vs_epsilon(&reference(), SampleModel::ZEpsilon, &ladder, 100_000, 60, 41).unwrap();
    let x = ks_vs_epsilon(&additive(), SampleModel::XLambda, &ladder, 100_000, 60, 42).unwrap();
    let kz: Vec<f64> = z.iter().map(|r| r.ks).collect();
    let kx: Vec<f64> = x.iter().map(|r| r.ks).collect();
    Outcome {
        passed: decreasing_with_inversions(&kz, 1, 0.01) && decreasing_with_inversions(&kx, 1, 0.01),
        detail: format!("Z_eps KS={:.4?}; X_lambda KS={:.4?}", kz, kx),
    }
}

fn skew_consistency() -> Outcome {
    let rows = ks_vs_depth(&reference(), 0.01, Theorem::T3, &[4, 8, 12], 2500, 80, 60, 51).unwrap();
    let coupled: Vec<f64> = rows.iter().map(|r| r.ks_coupled).collect();
    let independent: Vec<f64> = rows.iter().map(|r| r.ks_independent).collect();
    let last = rows.last().unwrap();
    let passed = decreasing_with_inversions(&coupled, 0, 0.0) && last.ks_coupled < 0.03 && last.ks_independent < 0.03 && last.samples == 100_000;
    Outcome {
        passed,
        detail: format!("coupled KS={coupled:.5?}; vs independent batch KS={independent:.4?}"),
    }
}

fn invariance() -> Outcome {
    let ifs = reference();
    let batch = sample_z_epsilon(&ifs, 0.0, 100_000, 60, 61).unwrap();
    let mu = EmpiricalMeasure::from_samples(&batch.values).unwrap();
    let pushed = invariance_pushforward(&ifs, &mu).unwrap();
    let d = ks_distance(&mu, &pushed);
    Outcome {
        passed: d < 0.02,
        detail: format!("KS={d:.5}"),
    }
}

fn recursion() -> Outcome {
    let ifs = reference();
    let pf = pushforward_with_slices(&ifs, 0.01, 10, Theorem::T3, 2500, 80, 71, 4).unwrap();
    let slices = pf.slices.as_ref().unwrap();
    let rows = recursion_check(&ifs, 0.01, 10, Theorem::T3, slices, &[0.02, 0.01], 2.0).unwrap();
    Outcome {
        passed: rows.iter().all(|r| r.holds),
        detail: rows
            .iter()
            .map(|r| format!("r={} J={:.3} <= 2*{:.1}", r.r, r.j, r.rhs))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn check(id: u32, name: &str, budget_secs: u64, f: impl FnOnce() -> Outcome) {
    assert!(run(id, name, Duration::from_secs(budget_secs), f), "criterion {id} failed");
}

#[test]
fn criterion_01_constants_oracle() {
    check(1, "constants oracle", 1, constants_oracle);
}

#[test]
fn criterion_02_l2_bound_consistency() {
    check(2, "L2 bound consistency", 120, l2_bound_consistency);
}

#[test]
fn criterion_03_estimator_calibration() {
    check(3, "estimator calibration", 60, calibration);
}

#[test]
fn criterion_04_cone_invariance() {
    check(4, "cone invariance", 10, cone_invariance);
}

#[test]
fn criterion_05_transversality_gap() {
    check(5, "transversality gap", 10, transversality);
}

#[test]
fn criterion_06_jacobian_check() {
    check(6, "Jacobian check", 5, jacobians);
}

#[test]
fn criterion_07_weak_convergence_in_eps() {
    check(7, "weak convergence in eps", 120, weak_convergence);
}

#[test]
fn criterion_08_skew_product_consistency() {
    check(8, "skew-product consistency", 180, skew_consistency);
}

#[test]
fn criterion_09_invariance_self_consistency() {
    check(9, "invariance self-consistency", 30, invariance);
}

#[test]
fn criterion_10_recursion_inequality() {
    check(10, "recursion inequality", 120, recursion);
}
