//! Experiment orchestration: the rate study for the local limit theorem,
//! cross-module invariant suites, and report import/export.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain;
use crate::error::{Error, Result};
use crate::flow;
use crate::frozen;
use crate::grid::Grid;
use crate::model::{self, builtin, SamplePlan};
use crate::parametrix::{self, QuadSpec};
use crate::polykernel::{KernelSample, PolyKernel};

/// Declarative experiment setup, read from a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Built-in model pair name.
    pub model: String,
    /// Numeric model parameters (kappa, delta_b, ...).
    pub params: BTreeMap<String, f64>,
    /// Step counts for the rate sweep; strictly increasing.
    pub n_list: Vec<usize>,
    /// Time anchors in [0, 1]; snapped to each lattice.
    pub t_start: f64,
    pub t_end: f64,
    /// Probe start points and terminal points (d = 1).
    pub probes_x: Vec<f64>,
    pub probes_y: Vec<f64>,
    /// Reference density: "exact" (closed form) or "series".
    pub reference: String,
    pub series_order: usize,
    /// Series tail estimate above this flags the experiment inconclusive.
    pub tail_tolerance: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "ou".into(),
            params: BTreeMap::new(),
            n_list: vec![8, 16, 32, 64, 128],
            t_start: 0.0,
            t_end: 1.0,
            probes_x: vec![0.0, 0.5],
            probes_y: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            reference: "exact".into(),
            series_order: 3,
            tail_tolerance: 0.01,
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) || self.n_list.is_empty() {
            return Err(Error::Config("n_list must be strictly increasing".into()));
        }
        if !(0.0..1.0).contains(&self.t_start)
            || self.t_end > 1.0
            || self.t_start >= self.t_end
        {
            return Err(Error::Config("need 0 <= t_start < t_end <= 1".into()));
        }
        if self.probes_x.is_empty() || self.probes_y.is_empty() {
            return Err(Error::Config("probe lists must be nonempty".into()));
        }
        if self.reference != "exact" && self.reference != "series" {
            return Err(Error::Config("reference must be 'exact' or 'series'".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub sup_raw: f64,
    pub sup_normalized: f64,
    /// Least-squares slope over rows up to and including this one.
    pub slope_so_far: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RateReport {
    pub model: String,
    pub rows: Vec<RateRow>,
    /// Final least-squares log-log slope of the normalized error.
    pub slope: f64,
    /// min(gamma/2, alpha, beta).
    pub theoretical_exponent: f64,
    /// Measured coefficient discrepancies of the pair.
    pub delta_b: f64,
    pub delta_a: f64,
    /// Slope of the last three points stays above -0.15.
    pub floor_detected: bool,
    /// Set when a series reference had tail estimate above tolerance.
    pub inconclusive: bool,
    /// The ln(e (j-i)) envelope factor is included but not separately
    /// testable at desk scale.
    pub envelope_caveat: String,
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Closed-form transition density of the built-in diffusion side, where one
/// exists.
fn exact_density(name: &str, params: &BTreeMap<String, f64>, dt: f64, x: f64, y: f64) -> Result<f64> {
    let normal = |mean: f64, var: f64| {
        (-(y - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    };
    match name {
        "constant" => Ok(normal(x, dt)),
        "ou" | "perturbed_pair" => {
            let kappa = params.get("kappa").copied().unwrap_or(1.0);
            let mean = x * (-kappa * dt).exp();
            let var = (1.0 - (-2.0 * kappa * dt).exp()) / (2.0 * kappa);
            Ok(normal(mean, var))
        }
        other => Err(Error::Config(format!("no closed-form density for '{other}'"))),
    }
}

/// Rate study for the local limit theorem: sup over probe points of
/// |p - p_n| divided by the flow-transported polynomial envelope, per n,
/// with a fitted log-log slope and an error-floor flag.
pub fn run_rate_experiment(config: &ExperimentConfig) -> Result<RateReport> {
    config.validate()?;
    if config.n_list.len() < 4 {
        return Err(Error::Config("rate slope needs at least 4 n values".into()));
    }
    let (model0, chain0) = builtin(&config.model, &config.params)?;
    if model0.dim != 1 {
        return Err(Error::DimensionTooLarge(model0.dim));
    }
    let meta = model0.regularity;
    let rho = (meta.gamma / 2.0).min(meta.alpha).min(meta.beta);
    let plan = SamplePlan::unit_box(1, 2000, config.seed);
    let (delta_b, delta_a) = model::measure_pair_discrepancy(&model0, &chain0, &plan);

    let s_tail = chain0.innovations.tail_exponent;
    let weight_exp = s_tail - 1.0 - 2.0; // S - d - 2 with d = 1
    let env_kernel = PolyKernel::new(s_tail - 1.0 - 6.0, 1)?;

    let mut inconclusive = false;
    let mut sups: Vec<(usize, f64, f64)> = config
        .n_list
        .par_iter()
        .map(|&n| -> Result<(usize, f64, f64)> {
            let mut params = config.params.clone();
            params.insert("n".into(), n as f64);
            let (model, ch) = builtin(&config.model, &params)?;
            let i = (config.t_start * n as f64).round() as usize;
            let j = (config.t_end * n as f64).round() as usize;
            if j <= i {
                return Err(Error::Config(format!("n = {n} cannot resolve the time anchors")));
            }
            let dt = (j - i) as f64 / n as f64;
            let t = ch.time(i);
            let s = ch.time(j);

            let y_lo = config.probes_y.iter().cloned().fold(f64::INFINITY, f64::min);
            let y_hi = config.probes_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let x_lo = config.probes_x.iter().cloned().fold(f64::INFINITY, f64::min);
            let x_hi = config.probes_x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let center = 0.5 * (y_lo.min(x_lo) + y_hi.max(x_hi));
            let radius = 0.5 * (y_hi.max(x_hi) - y_lo.min(x_lo)) + 6.0 * dt.sqrt() + 0.5;
            let grid = Grid::centered_1d(center, radius, 0.25 / (n as f64).sqrt())?;

            let mut sup_raw: f64 = 0.0;
            let mut sup_norm: f64 = 0.0;
            let mut tail_exceeded = false;
            for &px in &config.probes_x {
                let x = DVector::from_vec(vec![px]);
                let pn = chain::chain_density_grid(&ch, i, j, &x, &grid)?;
                for &py in &config.probes_y {
                    let y = DVector::from_vec(vec![py]);
                    let p_ref = match config.reference.as_str() {
                        "exact" => exact_density(&config.model, &config.params, dt, px, py)?,
                        _ => {
                            let quad = QuadSpec::for_gamma(meta.gamma);
                            let sa = parametrix::series(
                                &model,
                                t,
                                s,
                                &x,
                                &y,
                                config.series_order.min(4),
                                &quad,
                            )?;
                            if sa.tail_estimate > config.tail_tolerance {
                                tail_exceeded = true;
                            }
                            sa.value()
                        }
                    };
                    let raw = (p_ref - pn.value_at(&y)).abs();

                    let theta_n =
                        flow::discrete_backward_flow(&ch, i, j, &y)?.endpoint().clone();
                    let theta = flow::backward_flow(&model, t, s, &y, flow::default_steps(t, s))?
                        .endpoint()
                        .clone();
                    let envelope = (std::f64::consts::E * (j - i) as f64).ln()
                        * (1.0 + px.abs().powf(weight_exp) + py.abs().powf(weight_exp))
                        * (env_kernel.scaled_eval(dt, &(&x - &theta_n))?
                            + env_kernel.scaled_eval(dt, &(&x - &theta))?);
                    sup_raw = sup_raw.max(raw);
                    sup_norm = sup_norm.max(raw / envelope);
                }
            }
            if tail_exceeded {
                // signalled through a sentinel handled below
                return Ok((n, sup_raw, -sup_norm));
            }
            Ok((n, sup_raw, sup_norm))
        })
        .collect::<Result<_>>()?;

    for entry in sups.iter_mut() {
        if entry.2 < 0.0 {
            inconclusive = true;
            entry.2 = -entry.2;
        }
    }

    let log_points: Vec<(f64, f64)> = sups
        .iter()
        .map(|&(n, _, sn)| ((n as f64).ln(), sn.max(1e-300).ln()))
        .collect();
    let rows: Vec<RateRow> = sups
        .iter()
        .enumerate()
        .map(|(idx, &(n, sr, sn))| RateRow {
            n,
            sup_raw: sr,
            sup_normalized: sn,
            slope_so_far: (idx >= 1).then(|| least_squares_slope(&log_points[..=idx])),
        })
        .collect();
    let slope = least_squares_slope(&log_points);
    let tail_slope = least_squares_slope(&log_points[log_points.len() - 3..]);
    Ok(RateReport {
        model: config.model.clone(),
        rows,
        slope,
        theoretical_exponent: rho,
        delta_b,
        delta_a,
        floor_detected: tail_slope > -0.15,
        inconclusive,
        envelope_caveat: "ln(e(j-i)) factor included, not separately testable at desk scale"
            .into(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SuiteCheck {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<SuiteCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const ALL_MODULES: &[&str] = &["model", "flow", "frozen", "parametrix", "chain", "polykernel"];

/// Run the per-module invariant checks for the requested modules ("all" or a
/// subset). Failures are report entries, never panics.
pub fn run_invariant_suite(scope: &[String], seed: u64) -> Result<SuiteReport> {
    let wanted: Vec<&str> = if scope.is_empty() || scope.iter().any(|s| s == "all") {
        ALL_MODULES.to_vec()
    } else {
        let mut v = Vec::new();
        for s in scope {
            if !ALL_MODULES.contains(&s.as_str()) {
                return Err(Error::Config(format!("unknown module '{s}'")));
            }
            v.push(s.as_str());
        }
        v
    };
    let mut checks = Vec::new();
    for m in wanted {
        match m {
            "model" => model_checks(seed, &mut checks),
            "flow" => flow_checks(seed, &mut checks)?,
            "frozen" => frozen_checks(seed, &mut checks)?,
            "parametrix" => parametrix_checks(&mut checks)?,
            "chain" => chain_checks(&mut checks)?,
            "polykernel" => polykernel_checks(seed, &mut checks)?,
            _ => unreachable!(),
        }
    }
    Ok(SuiteReport { checks })
}

fn push(
    checks: &mut Vec<SuiteCheck>,
    module: &str,
    name: &str,
    passed: bool,
    measured: f64,
    detail: String,
) {
    checks.push(SuiteCheck {
        module: module.into(),
        name: name.into(),
        passed,
        measured,
        detail,
    });
}

fn model_checks(seed: u64, checks: &mut Vec<SuiteCheck>) {
    for name in ["constant", "ou", "holder_drift"] {
        match builtin(name, &BTreeMap::new()) {
            Ok((m, c)) => {
                let plan = SamplePlan::unit_box(1, 500, seed);
                let rm = model::validate_diffusion(&m, &plan);
                let rc = model::validate_chain(&c, &plan);
                push(
                    checks,
                    "model",
                    &format!("{name}: assumptions hold on sample box"),
                    rm.passed() && rc.passed(),
                    0.0,
                    format!(
                        "diffusion {}/{} chain {}/{} checks passed",
                        rm.checks.iter().filter(|c| c.passed).count(),
                        rm.checks.len(),
                        rc.checks.iter().filter(|c| c.passed).count(),
                        rc.checks.len()
                    ),
                );
            }
            Err(e) => push(checks, "model", name, false, f64::NAN, format!("{e}")),
        }
    }
}

fn flow_checks(seed: u64, checks: &mut Vec<SuiteCheck>) -> Result<()> {
    let (m, _) = builtin("ou", &BTreeMap::new())?;
    let b_const = m.regularity.b_const;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // semigroup theta_{t,u} o theta_{u,s} = theta_{t,s}
    let mut worst_semi: f64 = 0.0;
    for _ in 0..50 {
        let t = rng.gen_range(0.0..0.4);
        let u = rng.gen_range(0.45..0.6);
        let s = rng.gen_range(0.65..1.0);
        let y = DVector::from_vec(vec![rng.gen_range(-2.0..2.0)]);
        let steps = 512;
        let full = flow::backward_flow(&m, t, s, &y, steps)?.endpoint().clone();
        let half = flow::backward_flow(&m, u, s, &y, steps)?.endpoint().clone();
        let comp = flow::backward_flow(&m, t, u, &half, steps)?.endpoint().clone();
        worst_semi = worst_semi.max((full - comp).norm());
    }
    push(
        checks,
        "flow",
        "semigroup composition",
        worst_semi <= 1e-7,
        worst_semi,
        format!("max |theta_(t,s) - theta_(t,u) o theta_(u,s)| = {worst_semi:.2e}"),
    );

    // Lipschitz in the terminal point, constant bounded by e^{B (s-t)}
    let mut worst_lip: f64 = 0.0;
    let mut worst_growth: f64 = 0.0;
    for _ in 0..1000 {
        let t = rng.gen_range(0.0..0.5);
        let s = rng.gen_range(0.55..1.0);
        let y1 = DVector::from_vec(vec![rng.gen_range(-2.0..2.0)]);
        let y2 = DVector::from_vec(vec![rng.gen_range(-2.0..2.0)]);
        if (&y1 - &y2).norm() < 1e-6 {
            continue;
        }
        let th1 = flow::backward_flow(&m, t, s, &y1, 64)?.endpoint().clone();
        let th2 = flow::backward_flow(&m, t, s, &y2, 64)?.endpoint().clone();
        let lip = (&th1 - &th2).norm() / (&y1 - &y2).norm() / (b_const * (s - t)).exp();
        worst_lip = worst_lip.max(lip);
        worst_growth = worst_growth
            .max((1.0 + th1.norm()) / ((1.0 + y1.norm()) * (b_const * (s - t)).exp()));
    }
    push(
        checks,
        "flow",
        "Lipschitz constant within e^{B(s-t)}",
        worst_lip <= 1.0 + 1e-6,
        worst_lip,
        format!("max normalized Lipschitz ratio = {worst_lip:.6}"),
    );
    push(
        checks,
        "flow",
        "linear growth envelope",
        worst_growth.is_finite() && worst_growth <= 1.0 + 1e-6,
        worst_growth,
        format!("max (1+|theta|)/((1+|y|) e^(B(s-t))) = {worst_growth:.6}"),
    );

    // near-inverse: forward after backward returns the anchor
    let mut worst_inv: f64 = 0.0;
    for _ in 0..50 {
        let t = rng.gen_range(0.0..0.4);
        let s = rng.gen_range(0.6..1.0);
        let y = DVector::from_vec(vec![rng.gen_range(-2.0..2.0)]);
        let back = flow::backward_flow(&m, t, s, &y, 256)?.endpoint().clone();
        let fwd = flow::forward_flow(&m, t, s, &back, 256)?.endpoint().clone();
        worst_inv = worst_inv.max((fwd - &y).norm());
    }
    push(
        checks,
        "flow",
        "forward inverts backward",
        worst_inv <= 1e-8,
        worst_inv,
        format!("max round-trip error = {worst_inv:.2e}"),
    );

    // discrete/continuous discrepancy decays like 1/n
    let mut pts = Vec::new();
    for n in [8usize, 16, 32, 64] {
        let mut params = BTreeMap::new();
        params.insert("n".to_string(), n as f64);
        let (_, c) = builtin("ou", &params)?;
        let mut sup: f64 = 0.0;
        for &y0 in &[-1.5, -0.5, 0.5, 1.5] {
            let y = DVector::from_vec(vec![y0]);
            sup = sup.max(flow::flow_discrepancy(&m, &c, 0, n, &y, 1024)?);
        }
        pts.push(((n as f64).ln(), sup.ln()));
    }
    let slope = least_squares_slope(&pts);
    push(
        checks,
        "flow",
        "flow discrepancy slope -1 +- 0.15",
        (slope + 1.0).abs() <= 0.15,
        slope,
        format!("fitted slope = {slope:.3}"),
    );
    Ok(())
}

fn frozen_checks(seed: u64, checks: &mut Vec<SuiteCheck>) -> Result<()> {
    let (m, _) = builtin("ou", &BTreeMap::new())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf0);
    // each analytic order vs a central difference of the analytic order
    // below it, |nu| <= 4, 100 well-conditioned points; differencing the
    // density directly loses orders 3-4 to cancellation
    let mut worst_rel: f64 = 0.0;
    let mut count = 0usize;
    while count < 100 {
        let t = rng.gen_range(0.05..0.4);
        let s = rng.gen_range(0.6..0.95);
        let x0 = rng.gen_range(-1.0..1.0);
        let y = DVector::from_vec(vec![rng.gen_range(-1.0..1.0)]);
        let order = 1 + count % 4;
        let exact = frozen::frozen_derivative(
            &m,
            t,
            s,
            &DVector::from_vec(vec![x0]),
            &y,
            &[order],
            256,
        )?;
        if exact.abs() < 1e-2 {
            continue; // keep the comparison well conditioned
        }
        let lower = |x: f64| {
            frozen::frozen_derivative(
                &m,
                t,
                s,
                &DVector::from_vec(vec![x]),
                &y,
                &[order - 1],
                256,
            )
            .unwrap()
        };
        let h = 1e-4;
        let fd = (lower(x0 + h) - lower(x0 - h)) / (2.0 * h);
        worst_rel = worst_rel.max((exact - fd).abs() / exact.abs());
        count += 1;
    }
    push(
        checks,
        "frozen",
        "derivatives match finite differences (1e-5)",
        worst_rel <= 1e-5,
        worst_rel,
        format!("max relative error over 100 points = {worst_rel:.2e}"),
    );

    // normalization in the first argument: for fixed anchor y the frozen
    // law is an exact Gaussian in x
    let y = DVector::from_vec(vec![0.5]);
    let slice = frozen::FrozenSlice::solve(&m, 0.0, 1.0, &y, 64)?;
    let center = slice.at(0.0).0[0];
    let grid = Grid::centered_1d(center, 8.0, 0.05)?;
    let mut mass = 0.0;
    for idx in 0..grid.len() {
        mass += grid.trapezoid_weight(idx) * slice.params(0.0, &grid.node(idx))?.density()?;
    }
    push(
        checks,
        "frozen",
        "frozen density integrates to 1 over x",
        (mass - 1.0).abs() < 1e-6,
        mass,
        format!("grid mass = {mass:.8}"),
    );
    Ok(())
}

fn parametrix_checks(checks: &mut Vec<SuiteCheck>) -> Result<()> {
    // constant model: every correction term is exactly zero
    let (cm, _) = builtin("constant", &BTreeMap::new())?;
    let quad = QuadSpec::for_gamma(1.0);
    let x = DVector::from_vec(vec![0.0]);
    let y = DVector::from_vec(vec![0.4]);
    let sa = parametrix::series(&cm, 0.0, 1.0, &x, &y, 3, &quad)?;
    let worst = sa.terms[1..].iter().fold(0.0f64, |a, t| a.max(t.abs()));
    push(
        checks,
        "parametrix",
        "constant model corrections vanish",
        worst == 0.0,
        worst,
        format!("max |term r>=1| = {worst:.2e}"),
    );

    // OU closed form: a is constant so only the drift part survives and
    // H(t,s,x,y) = kappa u^2 phi_{s-t}(u) / (s-t) with u = theta_{t,s}(y) - x
    let (m, _) = builtin("ou", &BTreeMap::new())?;
    let (t, s) = (0.3, 0.8);
    let kappa = m.regularity.b_const;
    let mut worst: f64 = 0.0;
    for &(x0, y0) in &[(0.4, 0.0), (0.0, 0.6), (-0.5, 0.3)] {
        let xk = DVector::from_vec(vec![x0]);
        let yk = DVector::from_vec(vec![y0]);
        let h = parametrix::kernel_h(&m, t, s, &xk, &yk, 128)?;
        let u = y0 * (kappa * (s - t)).exp() - x0;
        let c = s - t;
        let phi = (-0.5 * u * u / c).exp() / (2.0 * std::f64::consts::PI * c).sqrt();
        let exact = kappa * u * u * phi / c;
        worst = worst.max((h - exact).abs() / exact.abs().max(1e-12));
    }
    push(
        checks,
        "parametrix",
        "kernel matches OU closed form",
        worst <= 1e-6,
        worst,
        format!("max relative error = {worst:.2e}"),
    );
    Ok(())
}

fn chain_checks(checks: &mut Vec<SuiteCheck>) -> Result<()> {
    let mut params = BTreeMap::new();
    params.insert("n".to_string(), 16.0);
    let (_, c) = builtin("ou", &params)?;
    let x0 = DVector::from_vec(vec![0.3]);
    let grid = Grid::centered_1d(0.0, 5.0, 0.0625)?;
    let gd = chain::chain_density_grid(&c, 0, 16, &x0, &grid)?;
    push(
        checks,
        "chain",
        "grid recursion conserves mass",
        gd.mass >= 0.98 && gd.mass <= 1.001,
        gd.mass,
        format!("mass = {:.6}, deficit = {:.2e}", gd.mass, gd.mass_deficit),
    );

    // Chapman-Kolmogorov through an intermediate lattice time
    let direct = chain::chain_density_grid(&c, 0, 8, &x0, &grid)?;
    let first = chain::chain_density_grid(&c, 0, 4, &x0, &grid)?;
    let y = DVector::from_vec(vec![0.2]);
    let mut composed = 0.0;
    for idx in 0..grid.len() {
        let z = grid.node(idx);
        // far-tail starts contribute below tolerance and their step law
        // would fall off the grid
        if first.values[idx] < 1e-12 {
            continue;
        }
        let second = chain::chain_density_grid(&c, 4, 8, &z, &grid)?;
        composed += grid.trapezoid_weight(idx) * first.values[idx] * second.value_at(&y);
    }
    let rel = (composed - direct.value_at(&y)).abs() / direct.value_at(&y);
    push(
        checks,
        "chain",
        "Markov consistency through t_4",
        rel <= 1e-3,
        rel,
        format!("relative error = {rel:.2e}"),
    );
    Ok(())
}

fn polykernel_checks(seed: u64, checks: &mut Vec<SuiteCheck>) -> Result<()> {
    let kernel = PolyKernel::new(9.0, 1)?;
    let mass = kernel.mass_by_quadrature();
    push(
        checks,
        "polykernel",
        "Q_S mass equals 1 (1e-6)",
        (mass - 1.0).abs() <= 1e-6,
        mass,
        format!("quadrature mass = {mass:.8}"),
    );

    let q_half = kernel.eval(&DVector::from_vec(vec![0.5]));
    let q_one = kernel.eval(&DVector::from_vec(vec![1.0]));
    push(
        checks,
        "polykernel",
        "Q_S strictly decreasing in |z|",
        q_half > q_one,
        q_half - q_one,
        format!("Q(0.5) - Q(1.0) = {:.4}", q_half - q_one),
    );

    // CK-type inequality constant, stable under node doubling
    let (m, _) = builtin("ou", &BTreeMap::new())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let samples: Vec<KernelSample> = (0..100)
        .map(|_| {
            let t_i = rng.gen_range(0.0..0.3);
            let t_k = rng.gen_range(0.35..0.6);
            let t_j = rng.gen_range(0.65..1.0);
            KernelSample {
                t_i,
                t_k,
                t_j,
                x: vec![rng.gen_range(-1.5..1.5)],
                y: vec![rng.gen_range(-1.5..1.5)],
            }
        })
        .collect();
    let r1 = crate::polykernel::ck_inequality_constant(&kernel, &m, &samples, 512)?;
    let r2 = crate::polykernel::ck_inequality_constant(&kernel, &m, &samples, 1024)?;
    let drift =
        (r1.constant_backward - r2.constant_backward).abs() / r2.constant_backward;
    push(
        checks,
        "polykernel",
        "CK constant finite, stable under node doubling (<1%)",
        r2.constant_backward.is_finite() && drift < 0.01,
        r2.constant_backward,
        format!(
            "C_back = {:.4}, C_fwd = {:.4}, doubling drift = {:.3e}",
            r2.constant_backward, r2.constant_forward, drift
        ),
    );

    // argument-swap constant approaches the weighted identity as n grows
    let mut dists = Vec::new();
    for n in [16usize, 64, 256] {
        let mut params = BTreeMap::new();
        params.insert("n".to_string(), n as f64);
        let (m, c) = builtin("ou", &params)?;
        let samples = vec![(0usize, n, vec![0.7], vec![0.9])];
        let rep = crate::polykernel::swap_inequality_check(&kernel, &m, &c, &samples)?;
        dists.push((rep.constant * (1.0 + 0.7f64.powf(9.0)) - 1.0).abs());
    }
    let monotone = dists.windows(2).all(|w| w[1] < w[0] + 1e-12);
    push(
        checks,
        "polykernel",
        "swap constant approaches 1 with n",
        monotone && *dists.last().unwrap() < 0.05,
        *dists.last().unwrap(),
        format!("weighted distances over n: {dists:?}"),
    );
    Ok(())
}

/// CSV export of a rate report: n, sup_raw, sup_normalized, slope_so_far.
pub fn rate_report_csv<W: std::io::Write>(report: &RateReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["n", "sup_raw", "sup_normalized", "slope_so_far"])
        .map_err(csv_err)?;
    for row in &report.rows {
        wtr.write_record([
            row.n.to_string(),
            format!("{}", row.sup_raw),
            format!("{}", row.sup_normalized),
            row.slope_so_far.map(|s| format!("{s}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
    Ok(())
}

/// CSV export of a suite report: module, check, passed, measured.
pub fn suite_report_csv<W: std::io::Write>(report: &SuiteReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["module", "check", "passed", "measured", "detail"])
        .map_err(csv_err)?;
    for c in &report.checks {
        wtr.write_record([
            c.module.clone(),
            c.name.clone(),
            c.passed.to_string(),
            format!("{}", c.measured),
            c.detail.clone(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e),
    }
}

/// JSON export with path context on failure.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    fs::write(path, text)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad report JSON: {e}")))
}
