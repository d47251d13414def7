//! The `rifs` command-line tool: config loading, subcommand dispatch and
//! report writing.
//!
//! Every subcommand writes `<out>/<command>.json`, wrapping its result in an
//! envelope with the tool version and the SHA-256 of the effective config.
//! CSV artifacts are written next to it. Exit codes: 0 when every enabled
//! assertion passed, 1 for usage and I/O errors, 2 when a hypothesis of the
//! model fails, 3 when an acceptance assertion fails.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::constants::{admissibility, bounds_report, max_admissible_epsilon, BoundsReport, Theorem, DEFAULT_SIGMA};
use crate::error::IfsError;
use crate::ifs::{IfsSpec, Perturbation};
use crate::measure::{ks_distance, l2_estimate, EmpiricalMeasure, Histogram};
use crate::sampler::{default_depth, invariance_pushforward, SampleModel};
use crate::skewprod::{check_cone_invariance, jacobian_check, pushforward_with_slices, transversality_gap, CubeMap, CubePoint};
use crate::study::{decreasing_with_inversions, ks_vs_depth, ks_vs_epsilon, projection_consistency, recursion_check, sample};

pub const TOOL: &str = "rifs";
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("RIFS_GIT_HASH"));

/// Jacobian agreement required of the finite-difference check.
pub const JACOBIAN_TOL: f64 = 1e-6;
/// KS ceiling for the invariance and finest-depth consistency checks.
pub const KS_TOL: f64 = 0.02;
pub const DEPTH_KS_TOL: f64 = 0.03;
/// Size of the one step up allowed in the KS-vs-eps table.
pub const INVERSION_TOL: f64 = 0.01;
pub const RECURSION_SLACK: f64 = 2.0;
pub const PROJECTION_TOL: f64 = 0.25;

#[derive(Debug, Parser)]
#[command(name = "rifs", version = VERSION, about = "Randomly perturbed IFS lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_name = "X")]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub m: Option<u32>,
    #[arg(long, global = true, value_name = "X")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the system's structural and theorem hypotheses.
    Validate,
    /// Constants of the L2 bound and the admissible epsilon range.
    Bounds,
    /// Draw the random fixed point; writes samples.csv and histogram.csv.
    Sample,
    /// Correlation-integral estimate of the L2 norm; writes l2.csv.
    L2,
    /// Cone, transversality and Jacobian checks on the cube map, plus the
    /// projected SRB measure.
    Skewprod,
    /// KS distance tables in epsilon and in the partition depth.
    Converge,
    /// Everything above in one summary.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Bounds => "bounds",
            Command::Sample => "sample",
            Command::L2 => "l2",
            Command::Skewprod => "skewprod",
            Command::Converge => "converge",
            Command::Report => "report",
        }
    }
}

fn default_epsilon_ladder() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_m() -> u32 {
    10
}
fn default_m_ladder() -> Vec<u32> {
    vec![4, 8, 12]
}
fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}
fn default_samples() -> usize {
    100_000
}
fn default_bins() -> usize {
    200
}
fn default_r_ladder() -> Vec<f64> {
    (0..7).map(|j| 0.05 * 0.5f64.powi(j)).collect()
}
fn default_trials() -> usize {
    10_000
}
fn default_jacobian_points() -> usize {
    1000
}
fn default_orbit_points() -> usize {
    2500
}
fn default_orbit_steps() -> usize {
    80
}
fn default_slice_level() -> u32 {
    4
}
fn default_lyapunov_samples() -> usize {
    100_000
}

/// One experiment. Only `ifs` and `seed` are required; `ifs.epsilon` is the
/// working noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ifs: IfsSpec,
    pub seed: u64,
    #[serde(default = "default_epsilon_ladder")]
    pub epsilon_ladder: Vec<f64>,
    #[serde(default = "default_m")]
    pub m: u32,
    #[serde(default = "default_m_ladder")]
    pub m_ladder: Vec<u32>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Truncation depth; derived from the contraction rate when absent.
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_r_ladder")]
    pub r_ladder: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_jacobian_points")]
    pub jacobian_points: usize,
    #[serde(default = "default_orbit_points")]
    pub orbit_points: usize,
    #[serde(default = "default_orbit_steps")]
    pub orbit_steps: usize,
    /// z-slices used for `J(r)` are `2^slice_level` equal intervals.
    #[serde(default = "default_slice_level")]
    pub slice_level: u32,
    #[serde(default = "default_lyapunov_samples")]
    pub lyapunov_samples: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Structural checks that do not depend on the theorems.
    pub fn check(&self) -> Result<(), CliError> {
        self.ifs.check_structure().map_err(|e| CliError::Config(e.to_string()))?;
        let positive = [
            ("samples", self.samples),
            ("bins", self.bins),
            ("trials", self.trials),
            ("jacobian_points", self.jacobian_points),
            ("orbit_points", self.orbit_points),
            ("lyapunov_samples", self.lyapunov_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.orbit_steps < 2 {
            return Err(CliError::Config("orbit_steps must be >= 2".into()));
        }
        if self.r_ladder.is_empty() || self.r_ladder.windows(2).any(|w| !(w[1] < w[0])) || self.r_ladder.iter().any(|&r| !(r > 0.0)) {
            return Err(CliError::Config("r_ladder must be positive and strictly decreasing".into()));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(CliError::Config(format!("sigma = {} is outside (0, 1)", self.sigma)));
        }
        Ok(())
    }

    /// Applies the command-line overrides.
    pub fn apply(&mut self, cli: &Cli) {
        if let Some(seed) = cli.seed {
            self.seed = seed;
        }
        if let Some(eps) = cli.epsilon {
            self.ifs.epsilon = eps;
        }
        if let Some(m) = cli.m {
            self.m = m;
        }
        if let Some(sigma) = cli.sigma {
            self.sigma = sigma;
        }
        if let Some(out) = &cli.out {
            self.out_dir = Some(out.clone());
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.ifs.epsilon
    }

    pub fn model(&self) -> SampleModel {
        match self.ifs.perturbation {
            Perturbation::Multiplicative => SampleModel::ZEpsilon,
            Perturbation::AdditiveRatio => SampleModel::XLambda,
        }
    }

    pub fn theorem(&self) -> Theorem {
        Theorem::for_model(self.ifs.perturbation)
    }

    /// SHA-256 of the serialized effective config, output location excluded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&ExperimentConfig { out_dir: None, ..self.clone() }).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn depth(&self, epsilon: f64) -> crate::Result<usize> {
        match self.depth {
            Some(d) => Ok(d),
            None => default_depth(&self.ifs, epsilon, self.model()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("hypothesis failed: {0}")]
    Model(#[from] IfsError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(_) => 2,
            _ => 1,
        }
    }
}

/// What a subcommand produced: its JSON result, a human summary and whether
/// its acceptance assertions held.
pub struct Outcome {
    pub result: Value,
    pub summary: String,
    pub exit_code: i32,
}

impl Outcome {
    fn new(result: Value, summary: String, accepted: bool) -> Self {
        Outcome {
            result,
            summary,
            exit_code: if accepted { 0 } else { 3 },
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    tool: &'a str,
    version: &'a str,
    config_hash: &'a str,
    command: &'a str,
    exit_code: i32,
    result: &'a Value,
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        // fails only if a pool already exists, which then keeps serving
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(cli.command, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    cfg.apply(cli);
    cfg.check()?;
    Ok(cfg)
}

/// Runs one subcommand and writes its artifacts. A hypothesis failure still
/// produces the JSON report, with exit code 2.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)?;
    let outcome = match dispatch(command, cfg, &out) {
        Ok(o) => o,
        Err(CliError::Model(e)) => {
            eprintln!("error: hypothesis failed: {e}");
            Outcome {
                result: json!({ "error": e.to_string() }),
                summary: format!("{}: hypothesis failed: {e}", command.name()),
                exit_code: 2,
            }
        }
        Err(e) => return Err(e),
    };
    let hash = cfg.hash();
    let envelope = Envelope {
        tool: TOOL,
        version: VERSION,
        config_hash: &hash,
        command: command.name(),
        exit_code: outcome.exit_code,
        result: &outcome.result,
    };
    let mut text = serde_json::to_string_pretty(&envelope).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(out.join(format!("{}.json", command.name())), text)?;
    println!("{}", outcome.summary);
    Ok(outcome.exit_code)
}

fn dispatch(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    match command {
        Command::Validate => validate(cfg),
        Command::Bounds => bounds(cfg),
        Command::Sample => sample_cmd(cfg, out),
        Command::L2 => l2(cfg, out),
        Command::Skewprod => skewprod(cfg, out),
        Command::Converge => converge(cfg, out),
        Command::Report => report(cfg, out),
    }
}

fn validate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let ifs = &cfg.ifs;
    let report = ifs.validate();
    let l2 = ifs.check_l2_condition();
    let a1 = ifs.check_transversality_a1().ok();
    let theorem = cfg.theorem();
    let mut failed: Vec<String> = report.failures().map(|c| c.name.clone()).collect();
    if ifs.len() < 2 {
        failed.push("at_least_two_maps".into());
    }
    if !l2.passes {
        failed.push("l2_condition".into());
    }
    if theorem == Theorem::T5 && !a1.map(|c| c.passes).unwrap_or(false) {
        failed.push("transversality_a1".into());
    }
    let lyapunov = ifs.lyapunov(cfg.lyapunov_samples, cfg.seed.wrapping_add(1))?;
    let result = json!({
        "theorem": theorem,
        "checks": report.checks,
        "l2_condition": l2,
        "transversality_a1": a1,
        "max_epsilon": ifs.max_epsilon(),
        "entropy": ifs.entropy(),
        "lyapunov": lyapunov,
        "dimension_bound": ifs.entropy() / lyapunov.value.abs(),
        "failed": failed,
    });
    let mut summary = format!("validate ({} model, {} maps)\n", theorem_label(theorem), ifs.len());
    for c in &report.checks {
        let mark = if c.passed {
            "ok"
        } else if c.warning {
            "warn"
        } else {
            "FAIL"
        };
        summary.push_str(&format!("  {:<32} {:<5} {:.6e}\n", c.name, mark, c.value));
    }
    summary.push_str(&format!("  {:<32} {:<5} {:.6}\n", "l2_condition", pass(l2.passes), l2.value));
    if let Some(a1) = a1 {
        summary.push_str(&format!("  {:<32} {:<5} {:.6}\n", "transversality_a1", pass(a1.passes), a1.value));
    }
    summary.push_str(&format!("  lyapunov {:.6} +- {:.1e}", lyapunov.value, lyapunov.std_error));
    let mut outcome = Outcome::new(result, summary, true);
    if !failed.is_empty() {
        outcome.exit_code = 2;
        outcome.summary.push_str(&format!("\nfailed conditions: {}", failed.join(", ")));
    }
    Ok(outcome)
}

fn pass(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn theorem_label(t: Theorem) -> &'static str {
    match t {
        Theorem::T3 => "multiplicative",
        Theorem::T5 => "additive-ratio",
    }
}

fn bounds(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let rep = bounds_report(&cfg.ifs, cfg.epsilon(), Some(cfg.m), cfg.sigma)?;
    let limit = bounds_report(&cfg.ifs, cfg.epsilon(), None, cfg.sigma)?;
    let max_eps = max_admissible_epsilon(&cfg.ifs, cfg.sigma);
    let result = json!({
        "report": rep,
        "limit_m_infinity": limit,
        "l2_bound": rep.l2_bound,
        "admissibility": admissibility(&cfg.ifs, cfg.epsilon(), cfg.sigma),
        "admissible_epsilon": { "min_exclusive": 0.0, "max": max_eps },
    });
    let summary = bounds_table(&rep, max_eps);
    Ok(Outcome::new(result, summary, true))
}

fn bounds_table(rep: &BoundsReport, max_eps: Option<f64>) -> String {
    let mut s = format!("bounds ({} model, eps = {})\n", theorem_label(rep.theorem), rep.epsilon);
    let m = rep.m.map(|m| m.to_string()).unwrap_or_else(|| "inf".into());
    let rows = [
        ("C''".to_string(), rep.c_double_prime),
        (format!("C_eps,{m}"), rep.c_eps_m),
        ("b".to_string(), rep.b_factor),
        ("C'".to_string(), rep.c_prime),
        ("C'/sqrt(eps)".to_string(), rep.l2_bound),
        ("sum p^2 lmax/lmin^2".to_string(), rep.l2_condition),
    ];
    for (name, v) in rows {
        s.push_str(&format!("  {name:<22} {v:>16.10}\n"));
    }
    match max_eps {
        Some(e) => s.push_str(&format!("  admissible eps         (0, {e:.6}]")),
        None => s.push_str("  admissible eps         none"),
    }
    s
}

fn write_histogram(path: &Path, h: &Histogram) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_left", "bin_right", "mass"])?;
    for (b, mass) in h.masses.iter().enumerate() {
        let (l, r) = h.edges(b);
        w.write_record([l.to_string(), r.to_string(), mass.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn sample_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let eps = cfg.epsilon();
    let depth = cfg.depth(eps)?;
    let batch = sample(&cfg.ifs, cfg.model(), eps, cfg.samples, depth, cfg.seed)?;
    let mu = EmpiricalMeasure::from_samples(&batch.values)?.with_histogram(cfg.bins)?;

    let mut w = csv::Writer::from_path(out.join("samples.csv"))?;
    w.write_record(["value"])?;
    for v in &batch.values {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    write_histogram(&out.join("histogram.csv"), mu.histogram().expect("histogram attached"))?;

    let result = json!({
        "model": batch.model,
        "epsilon": eps,
        "n": batch.n,
        "truncation_depth": batch.truncation_depth,
        "truncation_bound": batch.truncation_bound,
        "seed": batch.seed,
        "mean": mu.mean(),
        "bins": cfg.bins,
        "files": ["samples.csv", "histogram.csv"],
    });
    let summary = format!(
        "sample: {} values at eps = {eps}, depth {} (truncation <= {:.1e}), mean {:.6}",
        batch.n, batch.truncation_depth, batch.truncation_bound, mu.mean()
    );
    Ok(Outcome::new(result, summary, true))
}

fn l2(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let eps = cfg.epsilon();
    let depth = cfg.depth(eps)?;
    let batch = sample(&cfg.ifs, cfg.model(), eps, cfg.samples, depth, cfg.seed)?;
    let mu = EmpiricalMeasure::from_samples(&batch.values)?;
    let est = l2_estimate(&mu, &cfg.r_ladder)?;

    let mut w = csv::Writer::from_path(out.join("l2.csv"))?;
    w.write_record(["r", "form_value", "j_value"])?;
    for p in &est.points {
        w.write_record([p.r.to_string(), p.form.to_string(), p.scaled.to_string()])?;
    }
    w.flush()?;

    let no_density = est.diverging || !est.liminf_proxy.is_finite();
    // the bound only exists where the theorem applies
    let (bound, bound_note) = match bounds_report(&cfg.ifs, eps, Some(cfg.m), cfg.sigma) {
        Ok(rep) => (Some(rep.l2_bound), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let bound_squared = bound.map(|b| b * b);
    let within_bound = bound_squared.map(|b2| !no_density && est.liminf_proxy <= b2);
    let result = json!({
        "epsilon": eps,
        "n": batch.n,
        "estimate": est,
        "liminf_proxy": est.liminf_proxy,
        "no_density": no_density,
        "l2_bound": bound,
        "l2_bound_squared": bound_squared,
        "bound_note": bound_note,
        "within_bound": within_bound,
        "files": ["l2.csv"],
    });
    let mut summary = format!("l2: liminf proxy {:.6} over {} radii", est.liminf_proxy, est.points.len());
    if no_density {
        summary.push_str(" (no density: the proxy diverges as r -> 0)");
    }
    match bound_squared {
        Some(b2) => summary.push_str(&format!(", bound (C'/sqrt(eps))^2 = {b2:.4}")),
        None => summary.push_str(&format!(", no bound: {}", bound_note.unwrap_or_default())),
    }
    Ok(Outcome::new(result, summary, within_bound.unwrap_or(true)))
}

fn skewprod(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let (ifs, eps, m, variant) = (&cfg.ifs, cfg.epsilon(), cfg.m, cfg.theorem());
    let cone = check_cone_invariance(ifs, eps, m, variant, cfg.trials, cfg.seed.wrapping_add(2))?;
    let gap = transversality_gap(ifs, eps, m, variant, cfg.sigma, cfg.trials, cfg.seed.wrapping_add(3))?;
    let jac = jacobian_check(ifs, eps, m, variant, cfg.jacobian_points, cfg.seed.wrapping_add(4))?;
    let pf = pushforward_with_slices(ifs, eps, m, variant, cfg.orbit_points, cfg.orbit_steps, cfg.seed.wrapping_add(5), cfg.slice_level)?;

    let projection = pf.projection.clone().with_histogram(cfg.bins)?;
    write_histogram(&out.join("projection.csv"), projection.histogram().expect("histogram attached"))?;
    let mut w = csv::Writer::from_path(out.join("occupation.csv"))?;
    w.write_record(["slab", "mass"])?;
    for (k, mass) in pf.slab_mass.iter().enumerate() {
        w.write_record([k.to_string(), mass.to_string()])?;
    }
    w.flush()?;
    write_orbit(&out.join("orbit.csv"), ifs, eps, m, variant, cfg.orbit_steps)?;

    let (recursion, projection_rows, slice_note) = match &pf.slices {
        Some(slices) => (
            Some(recursion_check(ifs, eps, m, variant, slices, &cfg.r_ladder, RECURSION_SLACK)?),
            Some(projection_consistency(&pf, slices, &cfg.r_ladder, PROJECTION_TOL)?),
            None,
        ),
        None => (None, None, Some("some z-slice received no samples; lower slice_level")),
    };
    let recursion_ok = recursion.as_ref().map(|r| r.iter().all(|row| row.holds)).unwrap_or(true);
    let projection_ok = projection_rows.as_ref().map(|r| r.iter().all(|row| row.holds)).unwrap_or(true);
    let jac_ok = jac.max_rel_error < JACOBIAN_TOL;
    let accepted = cone.passed() && gap.passes && jac_ok && recursion_ok && projection_ok;

    let result = json!({
        "variant": variant,
        "epsilon": eps,
        "m": m,
        "cone": cone,
        "transversality": gap,
        "jacobian": jac,
        "jacobian_tolerance": JACOBIAN_TOL,
        "pushforward": {
            "samples": pf.len(),
            "slice_level": pf.slice_level,
            "mean": pf.projection.mean(),
            "slab_mass": pf.slab_mass,
        },
        "recursion": recursion,
        "projection_consistency": projection_rows,
        "slice_note": slice_note,
        "files": ["projection.csv", "occupation.csv", "orbit.csv"],
    });
    let summary = format!(
        "skewprod ({} variant, eps = {eps}, m = {m})\n  cone invariance        {} ({} violations / {} trials)\n  transversality gap     {} (min {:.6} vs {:.6})\n  jacobian               {} (max rel err {:.2e})\n  recursion inequality   {}\n  projection inequality  {}\n  projection samples     {}",
        theorem_label(variant),
        pass(cone.passed()),
        cone.violations,
        cone.trials,
        pass(gap.passes),
        gap.min_gap,
        gap.threshold,
        pass(jac_ok),
        jac.max_rel_error,
        if recursion.is_some() { pass(recursion_ok) } else { "skipped" },
        if projection_rows.is_some() { pass(projection_ok) } else { "skipped" },
        pf.len()
    );
    Ok(Outcome::new(result, summary, accepted))
}

/// One orbit from the cube's centre, as `step,x,y,z,i,k`.
fn write_orbit(path: &Path, ifs: &IfsSpec, eps: f64, m: u32, variant: Theorem, steps: usize) -> Result<(), CliError> {
    let map = CubeMap::new(ifs, eps, m, variant)?;
    let start = CubePoint { x: 0.1, y: 0.1, z: 0.1 };
    let orbit = map.orbit(&start, steps)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "x", "y", "z", "i", "k"])?;
    for (t, (p, idx)) in orbit.points.iter().zip(&orbit.itinerary).enumerate() {
        w.write_record([t.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string(), idx.i.to_string(), idx.k.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn converge(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let mut ladder = cfg.epsilon_ladder.clone();
    ladder.sort_by(|a, b| b.total_cmp(a));
    let depth = cfg.depth(ladder.first().copied().unwrap_or(0.0))?;
    let eps_rows = ks_vs_epsilon(&cfg.ifs, cfg.model(), &ladder, cfg.samples, depth, cfg.seed.wrapping_add(6))?;
    let mut w = csv::Writer::from_path(out.join("ks_epsilon.csv"))?;
    w.write_record(["epsilon", "ks"])?;
    for r in &eps_rows {
        w.write_record([r.epsilon.to_string(), r.ks.to_string()])?;
    }
    w.flush()?;

    let mut m_ladder = cfg.m_ladder.clone();
    m_ladder.sort_unstable();
    let depth_rows = ks_vs_depth(
        &cfg.ifs,
        cfg.epsilon(),
        cfg.theorem(),
        &m_ladder,
        cfg.orbit_points,
        cfg.orbit_steps,
        cfg.depth(cfg.epsilon())?,
        cfg.seed.wrapping_add(7),
    )?;
    let mut w = csv::Writer::from_path(out.join("ks_depth.csv"))?;
    w.write_record(["m", "ks_coupled", "ks_independent", "samples"])?;
    for r in &depth_rows {
        w.write_record([r.m.to_string(), r.ks_coupled.to_string(), r.ks_independent.to_string(), r.samples.to_string()])?;
    }
    w.flush()?;

    // invariance of the unperturbed stationary measure
    let base = sample(&cfg.ifs, cfg.model(), 0.0, cfg.samples, cfg.depth(0.0)?, cfg.seed.wrapping_add(8))?;
    let mu = EmpiricalMeasure::from_samples(&base.values)?;
    let invariance_ks = ks_distance(&mu, &invariance_pushforward(&cfg.ifs, &mu)?);

    let ks_eps: Vec<f64> = eps_rows.iter().map(|r| r.ks).collect();
    let ks_m: Vec<f64> = depth_rows.iter().map(|r| r.ks_coupled).collect();
    let eps_ok = decreasing_with_inversions(&ks_eps, 1, INVERSION_TOL);
    let depth_ok = decreasing_with_inversions(&ks_m, 0, 0.0)
        && depth_rows.last().map(|r| r.ks_coupled < DEPTH_KS_TOL && r.ks_independent < DEPTH_KS_TOL).unwrap_or(true);
    let invariance_ok = invariance_ks < KS_TOL;
    let result = json!({
        "ks_vs_epsilon": eps_rows,
        "ks_vs_depth": depth_rows,
        "invariance_ks": invariance_ks,
        "epsilon_monotone": eps_ok,
        "depth_monotone": depth_ok,
        "invariance_ok": invariance_ok,
        "files": ["ks_epsilon.csv", "ks_depth.csv"],
    });
    let mut summary = String::from("converge\n  eps        KS(nu_eps, nu_0)\n");
    for r in &eps_rows {
        summary.push_str(&format!("  {:<10} {:.6}\n", r.epsilon, r.ks));
    }
    summary.push_str("  m          KS coupled   KS independent\n");
    for r in &depth_rows {
        summary.push_str(&format!("  {:<10} {:.6}     {:.6}\n", r.m, r.ks_coupled, r.ks_independent));
    }
    summary.push_str(&format!(
        "  invariance KS {invariance_ks:.6}\n  eps table {}, depth table {}, invariance {}",
        pass(eps_ok),
        pass(depth_ok),
        pass(invariance_ok)
    ));
    Ok(Outcome::new(result, summary, eps_ok && depth_ok && invariance_ok))
}

fn report(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let mut sections = serde_json::Map::new();
    let mut summary = Vec::new();
    let mut hypothesis_failed = false;
    let mut accepted = true;
    for command in [Command::Validate, Command::Bounds, Command::Sample, Command::L2, Command::Skewprod, Command::Converge] {
        let outcome = match dispatch(command, cfg, out) {
            Ok(o) => o,
            Err(CliError::Model(e)) => Outcome {
                result: json!({ "error": e.to_string() }),
                summary: format!("{}: hypothesis failed: {e}", command.name()),
                exit_code: 2,
            },
            Err(e) => return Err(e),
        };
        hypothesis_failed |= outcome.exit_code == 2;
        accepted &= outcome.exit_code != 3;
        sections.insert(
            command.name().into(),
            json!({ "exit_code": outcome.exit_code, "result": outcome.result }),
        );
        summary.push(outcome.summary);
    }
    let exit_code = if hypothesis_failed {
        2
    } else if !accepted {
        3
    } else {
        0
    };
    Ok(Outcome {
        result: Value::Object(sections),
        summary: summary.join("\n\n"),
        exit_code,
    })
}
