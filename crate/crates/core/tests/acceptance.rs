//! End-to-end acceptance gate: one check per headline claim, each printing a
//! single PASS/FAIL line with the measured quantity.

use std::collections::BTreeMap;

use nalgebra::DVector;

use loclim::grid::Grid;
use loclim::harness::{run_invariant_suite, run_rate_experiment, ExperimentConfig};
use loclim::model::builtin;
use loclim::chain;
use loclim::parametrix::{self, QuadSpec};

fn v(x: f64) -> DVector<f64> {
    DVector::from_vec(vec![x])
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn report(&mut self, idx: usize, name: &str, passed: bool, detail: String) {
        println!(
            "criterion {idx} [{}] {name}: {detail}",
            if passed { "PASS" } else { "FAIL" }
        );
        if !passed {
            self.failures.push(format!("criterion {idx}: {name} ({detail})"));
        }
    }
}

/// 1. Matched constant pair: the chain density equals the Gaussian closed
/// form to 1e-4 sup norm and every series correction vanishes identically.
fn constant_pair_is_exact(gate: &mut Gate) {
    let run = || -> loclim::error::Result<(f64, f64, f64)> {
        let (model, ch) = builtin("constant", &params(&[("n", 64.0)]))?;
        let x0 = v(0.2);
        let grid = Grid::centered_1d(0.2, 6.0, 0.25 / 8.0)?;
        let gd = chain::chain_density_grid(&ch, 0, 64, &x0, &grid)?;
        let mut sup: f64 = 0.0;
        for idx in 0..grid.len() {
            let y = grid.node(idx)[0];
            let exact = (-(y - 0.2f64).powi(2) / 2.0).exp()
                / (2.0 * std::f64::consts::PI).sqrt();
            sup = sup.max((gd.values[idx] - exact).abs());
        }
        let quad = QuadSpec::for_gamma(1.0);
        let sa = parametrix::series(&model, 0.0, 1.0, &x0, &v(-0.3), 3, &quad)?;
        let cont_corr = sa.terms[1..].iter().fold(0.0f64, |a, t| a.max(t.abs()));
        // corrections vanish identically for the constant pair at any n;
        // n = 8 keeps the kernel-table assembly cheap
        let (_, ch8) = builtin("constant", &params(&[("n", 8.0)]))?;
        let sd = chain::discrete_series(&ch8, 0, 8, &x0, &v(-0.3), 3)?;
        let disc_corr = sd.terms[1..].iter().fold(0.0f64, |a, t| a.max(t.abs()));
        Ok((sup, cont_corr, disc_corr))
    };
    match run() {
        Ok((sup, cc, dc)) => gate.report(
            1,
            "matched constant pair is exact",
            sup <= 1e-4 && cc == 0.0 && dc < 1e-12,
            format!("sup|p_n - N(x,1)| = {sup:.2e}, corrections: continuous {cc:.1e}, discrete {dc:.1e}"),
        ),
        Err(e) => gate.report(1, "matched constant pair is exact", false, format!("{e}")),
    }
}

/// 2. Truncated series vs the OU closed form at 9 probe points, order 3:
/// relative error within max(2 * tail estimate, 5e-3) at every point.
fn ou_series_matches_closed_form(gate: &mut Gate) {
    let run = || -> loclim::error::Result<(f64, f64)> {
        let (model, _) = builtin("ou", &BTreeMap::new())?;
        let quad = QuadSpec::for_gamma(1.0);
        let (t, s) = (0.25, 0.75);
        let dt = s - t;
        let var = (1.0 - (-2.0f64 * dt).exp()) / 2.0;
        let mut worst_rel: f64 = 0.0;
        let mut worst_tol = f64::INFINITY;
        for &px in &[-0.5, 0.0, 0.5] {
            for &py in &[-0.5, 0.0, 0.5] {
                let sa = parametrix::series(&model, t, s, &v(px), &v(py), 3, &quad)?;
                let mean = px * (-dt).exp();
                let exact = (-(py - mean).powi(2) / (2.0 * var)).exp()
                    / (2.0 * std::f64::consts::PI * var).sqrt();
                let rel = (sa.value() - exact).abs() / exact;
                let tol = (2.0 * sa.tail_estimate).max(5e-3);
                if rel / tol > worst_rel / worst_tol {
                    worst_rel = rel;
                    worst_tol = tol;
                }
            }
        }
        Ok((worst_rel, worst_tol))
    };
    match run() {
        Ok((rel, tol)) => gate.report(
            2,
            "order-3 series matches OU closed form at 9 probes",
            rel <= tol,
            format!("worst relative error = {rel:.2e} (tolerance {tol:.2e})"),
        ),
        Err(e) => gate.report(2, "order-3 series matches OU closed form at 9 probes", false, format!("{e}")),
    }
}

/// 3. Rate experiment: matched OU pair shows the theoretical decay of the
/// normalized sup error; an injected drift perturbation shows an error floor.
fn rate_slope_and_floor(gate: &mut Gate) {
    let run = || -> loclim::error::Result<(f64, f64, bool, bool)> {
        let config = ExperimentConfig {
            n_list: vec![8, 16, 32, 64],
            probes_y: vec![-0.5, 0.0, 0.5],
            ..ExperimentConfig::default()
        };
        let report = run_rate_experiment(&config)?;
        let perturbed = ExperimentConfig {
            model: "perturbed_pair".into(),
            params: params(&[("delta_b", 0.05)]),
            ..config.clone()
        };
        let floor_report = run_rate_experiment(&perturbed)?;
        Ok((
            report.slope,
            report.theoretical_exponent,
            report.floor_detected,
            floor_report.floor_detected,
        ))
    };
    match run() {
        Ok((slope, rho, matched_floor, perturbed_floor)) => gate.report(
            3,
            "normalized error decays for matched pair, floors for perturbed pair",
            slope <= -0.35 && !matched_floor && perturbed_floor,
            format!(
                "matched slope = {slope:.3} (theory -{rho:.2}), matched floor = {matched_floor}, perturbed floor = {perturbed_floor}"
            ),
        ),
        Err(e) => gate.report(3, "normalized error decays for matched pair, floors for perturbed pair", false, format!("{e}")),
    }
}

/// 4-6. Invariant suites for the flow, kernel, and frozen-density modules.
fn invariant_suites(gate: &mut Gate) {
    for (idx, scope, name) in [
        (4usize, "flow", "transport flow invariants"),
        (5, "polykernel", "polynomial kernel inequalities"),
        (6, "frozen", "frozen density derivatives and normalization"),
    ] {
        match run_invariant_suite(&[scope.to_string()], 7) {
            Ok(rep) => {
                let failed: Vec<&str> = rep
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                gate.report(
                    idx,
                    name,
                    rep.passed(),
                    if failed.is_empty() {
                        format!("{} checks passed", rep.checks.len())
                    } else {
                        format!("failing: {failed:?}")
                    },
                );
            }
            Err(e) => gate.report(idx, name, false, format!("{e}")),
        }
    }
}

/// 7. Discrete series identity: at full order the partial sum reproduces the
/// exact chain density within 1% wherever the density exceeds 0.05.
fn discrete_series_identity(gate: &mut Gate) {
    let run = || -> loclim::error::Result<f64> {
        let (_, ch) = builtin("ou", &params(&[("n", 16.0)]))?;
        let (i, j) = (4usize, 8usize);
        let x0 = v(0.3);
        let grid = Grid::centered_1d(0.0, 4.0, 0.0625)?;
        let exact = chain::chain_density_grid(&ch, i, j, &x0, &grid)?;
        let mut worst: f64 = 0.0;
        for &py in &[-0.4, 0.0, 0.3, 0.7] {
            let y = v(py);
            let p = exact.value_at(&y);
            if p <= 0.05 {
                continue;
            }
            let sa = chain::discrete_series(&ch, i, j, &x0, &y, j - i)?;
            worst = worst.max((sa.value() - p).abs() / p);
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => gate.report(
            7,
            "full-order discrete series reproduces the chain density",
            worst <= 0.01,
            format!("worst relative deviation = {worst:.2e}"),
        ),
        Err(e) => gate.report(7, "full-order discrete series reproduces the chain density", false, format!("{e}")),
    }
}

#[test]
fn acceptance_gate() {
    let mut gate = Gate { failures: Vec::new() };
    constant_pair_is_exact(&mut gate);
    ou_series_matches_closed_form(&mut gate);
    rate_slope_and_floor(&mut gate);
    invariant_suites(&mut gate);
    discrete_series_identity(&mut gate);
    assert!(gate.failures.is_empty(), "failed criteria:\n{}", gate.failures.join("\n"));
}
