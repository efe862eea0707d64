//! Normalized polynomial kernels Q_S, their diffusive scaling, and numerical
//! checks of the Chapman-Kolmogorov-type and argument-swap inequalities.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow;
use crate::model::{ChainModel, DiffusionModel};

/// Q_S(z) = C_S / (1 + |z|)^S with C_S normalizing the integral to 1.
#[derive(Debug, Clone, Copy)]
pub struct PolyKernel {
    pub exponent: f64,
    pub dim: usize,
    pub normalization: f64,
}

/// Surface area of the unit sphere in R^d.
fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => {
            let d = d as f64;
            2.0 * std::f64::consts::PI.powf(d / 2.0)
                / statrs::function::gamma::gamma(d / 2.0)
        }
    }
}

impl PolyKernel {
    pub fn new(exponent: f64, dim: usize) -> Result<Self> {
        if exponent <= dim as f64 {
            return Err(Error::TailExponentTooSmall {
                s: exponent,
                min: dim as f64,
                d: dim,
            });
        }
        let normalization = match dim {
            // int_R (1+|z|)^{-S} dz = 2/(S-1)
            1 => (exponent - 1.0) / 2.0,
            // radial quadrature of int r^{d-1} (1+r)^{-S} dr
            _ => {
                let s = exponent;
                let d = dim as f64;
                // int_0^inf r^{d-1}(1+r)^{-s} dr = B(d, s-d)
                let log_beta = statrs::function::gamma::ln_gamma(d)
                    + statrs::function::gamma::ln_gamma(s - d)
                    - statrs::function::gamma::ln_gamma(s);
                1.0 / (sphere_area(dim) * log_beta.exp())
            }
        };
        Ok(PolyKernel { exponent, dim, normalization })
    }

    /// Q_S(z).
    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        self.normalization / (1.0 + z.norm()).powf(self.exponent)
    }

    /// Scaled kernel: t^{-d/2} Q_S(z / sqrt(t)); integrates to 1 in z.
    pub fn scaled_eval(&self, t: f64, z: &DVector<f64>) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::BadTimeInterval { t, s: t });
        }
        Ok(t.powf(-(self.dim as f64) / 2.0) * self.eval(&(z / t.sqrt())))
    }

    /// Radial quadrature of the kernel mass (self-check).
    ///
    /// Substituting u = 1/(1+r) maps the half-line integral of
    /// r^{d-1}(1+r)^{-S} onto int_0^1 (1-u)^{d-1} u^{S-d-1} du, which is
    /// smooth, so composite Simpson converges fast.
    pub fn mass_by_quadrature(&self) -> f64 {
        let m = 4000usize; // even
        let h = 1.0 / m as f64;
        let f = |u: f64| {
            (1.0 - u).powi(self.dim as i32 - 1) * u.powf(self.exponent - self.dim as f64 - 1.0)
        };
        // u = 0 endpoint: the power is S - d - 1; zero for S > d + 1, one at
        // equality (0^0 = 1 under powf), and the u-integrand is singular only
        // for S < d + 1, where we drop the endpoint of the improper integral
        let at_zero = if self.exponent >= self.dim as f64 + 1.0 { f(0.0) } else { 0.0 };
        let mut acc = at_zero + f(1.0);
        for k in 1..m {
            acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        sphere_area(self.dim) * self.normalization * acc * h / 3.0
    }
}

/// One sampled time/space configuration for the kernel inequalities.
#[derive(Debug, Clone, Serialize)]
pub struct KernelSample {
    pub t_i: f64,
    pub t_k: f64,
    pub t_j: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CkConstantReport {
    /// Per-sample ratio with the backward orientation of the first slot.
    pub ratios_backward: Vec<f64>,
    /// Per-sample ratio with the forward orientation of the first slot.
    pub ratios_forward: Vec<f64>,
    pub constant_backward: f64,
    pub constant_forward: f64,
}

/// Empirical constant in the Chapman-Kolmogorov-type inequality for scaled
/// polynomial kernels: the z-integral of the two-kernel product divided by
/// the one-interval kernel, maximized over samples.
///
/// The printed argument convention applies the flow to x in the first slot;
/// both flow orientations of that slot are evaluated and reported.
pub fn ck_inequality_constant(
    kernel: &PolyKernel,
    model: &DiffusionModel,
    samples: &[KernelSample],
    quad_nodes: usize,
) -> Result<CkConstantReport> {
    let mut ratios_backward = Vec::with_capacity(samples.len());
    let mut ratios_forward = Vec::with_capacity(samples.len());
    for sample in samples {
        let (ti, tk, tj) = (sample.t_i, sample.t_k, sample.t_j);
        if !(ti < tk && tk < tj) {
            return Err(Error::BadTimeInterval { t: ti, s: tj });
        }
        let x = DVector::from_vec(sample.x.clone());
        let y = DVector::from_vec(sample.y.clone());
        let steps = flow::default_steps(ti, tj);

        let theta_back = flow::backward_flow(model, ti, tk, &x, steps)?.endpoint().clone();
        let theta_fwd = flow::forward_flow(model, ti, tk, &x, steps)?.endpoint().clone();
        let theta_ij = flow::backward_flow(model, ti, tj, &y, steps)?.endpoint().clone();
        let denom = kernel.scaled_eval(tj - ti, &(&x - &theta_ij))?;
        if denom <= 0.0 {
            return Err(Error::QuadratureUnderflow);
        }

        // z-quadrature with geometrically graded nodes around every kernel
        // center; the scaled kernels have a kinked core of width ~ sqrt(dt)/S
        // that a uniform grid cannot resolve at sane node counts
        let radius = 12.0 * (tj - ti).sqrt().max(1.0) + x.norm() + y.norm();
        let m = quad_nodes.max(64);
        // the second kernel is centered where theta_{tk,tj}(z) = y
        let c2 = flow::forward_flow(model, tk, tj, &y, steps)?.endpoint().clone();
        let centers = [theta_back[0], theta_fwd[0], c2[0]];
        let per_side = (m / 6).max(8);
        let r0 = 1e-4 * (tj - ti).sqrt();
        let ratio = (radius / r0).ln() / per_side as f64;
        let mut nodes = Vec::with_capacity(centers.len() * (2 * per_side + 1));
        for &c in &centers {
            nodes.push(c);
            for k in 1..=per_side {
                let s = r0 * (ratio * k as f64).exp();
                nodes.push(c - s);
                nodes.push(c + s);
            }
        }
        nodes.sort_by(|a, b| a.total_cmp(b));
        nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let mut values_back = Vec::with_capacity(nodes.len());
        let mut values_fwd = Vec::with_capacity(nodes.len());
        for &zi in &nodes {
            let z = DVector::from_vec(vec![zi]);
            let theta_kj_z = flow::backward_flow(model, tk, tj, &z, flow::default_steps(tk, tj))?
                .endpoint()
                .clone();
            let second = kernel.scaled_eval(tj - tk, &(&y - &theta_kj_z))?;
            values_back.push(kernel.scaled_eval(tk - ti, &(&z - &theta_back))? * second);
            values_fwd.push(kernel.scaled_eval(tk - ti, &(&z - &theta_fwd))? * second);
        }
        let mut integral_back = 0.0;
        let mut integral_fwd = 0.0;
        for w in 0..nodes.len().saturating_sub(1) {
            let dz = nodes[w + 1] - nodes[w];
            integral_back += 0.5 * dz * (values_back[w] + values_back[w + 1]);
            integral_fwd += 0.5 * dz * (values_fwd[w] + values_fwd[w + 1]);
        }
        ratios_backward.push(integral_back / denom);
        ratios_forward.push(integral_fwd / denom);
    }
    let max = |v: &[f64]| v.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(CkConstantReport {
        constant_backward: max(&ratios_backward),
        constant_forward: max(&ratios_forward),
        ratios_backward,
        ratios_forward,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SwapCheckReport {
    /// Max over samples of Q_S-ratio / (1 + |x|^S), discrete-over-continuous.
    pub constant: f64,
    /// Same with the kernels swapped.
    pub constant_reverse: f64,
    pub per_sample: Vec<f64>,
}

/// Checks the argument-swap inequality between kernels centered at the
/// discrete and continuous flows, reporting the max empirical constants in
/// both directions.
pub fn swap_inequality_check(
    kernel: &PolyKernel,
    model: &DiffusionModel,
    chain: &ChainModel,
    samples: &[(usize, usize, Vec<f64>, Vec<f64>)],
) -> Result<SwapCheckReport> {
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut constant: f64 = 0.0;
    let mut constant_reverse: f64 = 0.0;
    for (i, j, x, y) in samples {
        let x = DVector::from_vec(x.clone());
        let y = DVector::from_vec(y.clone());
        let t = chain.time(*i);
        let s = chain.time(*j);
        let dt = s - t;
        let theta_n = flow::discrete_backward_flow(chain, *i, *j, &y)?.endpoint().clone();
        let theta = flow::backward_flow(model, t, s, &y, flow::default_steps(t, s))?
            .endpoint()
            .clone();
        let q_disc = kernel.scaled_eval(dt, &(&x - &theta_n))?;
        let q_cont = kernel.scaled_eval(dt, &(&x - &theta))?;
        let weight = 1.0 + x.norm().powf(kernel.exponent);
        let c = q_disc / (weight * q_cont);
        per_sample.push(c);
        constant = constant.max(c);
        constant_reverse = constant_reverse.max(q_cont / (weight * q_disc));
    }
    Ok(SwapCheckReport { constant, constant_reverse, per_sample })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn normalization_1d_analytic() {
        let k = PolyKernel::new(9.0, 1).unwrap();
        assert_relative_eq!(k.normalization, 4.0, epsilon = 1e-12);
        assert_relative_eq!(k.eval(&v(0.0)), 4.0, epsilon = 1e-12);
        assert_relative_eq!(k.eval(&v(1.0)), 4.0 / 512.0, epsilon = 1e-12);
        assert_relative_eq!(k.eval(&v(-1.0)), k.eval(&v(1.0)), epsilon = 1e-15);
    }

    #[test]
    fn mass_quadrature_agrees_1d_and_2d() {
        let k1 = PolyKernel::new(9.0, 1).unwrap();
        assert_relative_eq!(k1.mass_by_quadrature(), 1.0, epsilon = 1e-6);
        let k2 = PolyKernel::new(10.0, 2).unwrap();
        // d = 2 analytic value: C_S = (S-1)(S-2)/(2 pi)
        assert_relative_eq!(
            k2.normalization,
            (10.0 - 1.0) * (10.0 - 2.0) / (2.0 * std::f64::consts::PI),
            epsilon = 1e-10
        );
        assert_relative_eq!(k2.mass_by_quadrature(), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn scaled_kernel_identities() {
        let k = PolyKernel::new(9.0, 1).unwrap();
        let z = v(0.7);
        assert_relative_eq!(k.scaled_eval(1.0, &z).unwrap(), k.eval(&z), epsilon = 1e-15);
        let t = 0.3;
        assert_relative_eq!(
            k.scaled_eval(t, &(&z * t.sqrt())).unwrap(),
            t.powf(-0.5) * k.eval(&z),
            epsilon = 1e-13
        );
    }

    #[test]
    fn scaled_mass_is_one() {
        let k = PolyKernel::new(9.0, 1).unwrap();
        let t = 0.25f64;
        let radius = 50.0 * t.sqrt();
        let m = 200_000;
        let h = 2.0 * radius / m as f64;
        let mut acc = 0.0;
        for j in 0..=m {
            let w = if j == 0 || j == m { 0.5 * h } else { h };
            acc += w * k.scaled_eval(t, &v(-radius + j as f64 * h)).unwrap();
        }
        assert_relative_eq!(acc, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn raw_kernel_decreasing_in_radius_and_exponent() {
        let k = PolyKernel::new(9.0, 1).unwrap();
        assert!(k.eval(&v(0.5)) > k.eval(&v(1.0)));
        // unnormalized form decreasing in S for |z| > 0
        let raw = |s: f64, r: f64| (1.0f64 + r).powf(-s);
        assert!(raw(10.0, 0.5) < raw(9.0, 0.5));
    }

    #[test]
    fn ck_constant_zero_drift_is_finite_and_orientation_symmetric() {
        let k = PolyKernel::new(9.0, 1).unwrap();
        let (m, _) = crate::model::builtin("constant", &BTreeMap::new()).unwrap();
        let samples = vec![KernelSample {
            t_i: 0.0,
            t_k: 0.5,
            t_j: 1.0,
            x: vec![0.0],
            y: vec![0.0],
        }];
        let rep = ck_inequality_constant(&k, &m, &samples, 2048).unwrap();
        assert!(rep.constant_backward.is_finite());
        assert!(rep.constant_backward > 0.0, "C = {}", rep.constant_backward);
        // midpoint symmetric configuration: quadrature of Q_{1/2}^2 over the
        // scaled kernel at zero, computable in closed form up to the radial
        // integral int Q^2 = 2 C_S^2 / (2S - 1); here sqrt(2) * (32/17) / 4
        let expect = std::f64::consts::SQRT_2 * (32.0 / 17.0) / 4.0;
        assert_relative_eq!(rep.constant_backward, expect, epsilon = 5e-3);
        // zero drift: both orientations coincide
        assert_relative_eq!(
            rep.constant_backward,
            rep.constant_forward,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ck_constant_stable_under_node_doubling() {
        let k = PolyKernel::new(9.0, 1).unwrap();
        let (m, _) = crate::model::builtin("constant", &BTreeMap::new()).unwrap();
        let samples = vec![KernelSample {
            t_i: 0.0,
            t_k: 0.4,
            t_j: 0.9,
            x: vec![0.3],
            y: vec![-0.2],
        }];
        let c1 = ck_inequality_constant(&k, &m, &samples, 512).unwrap().constant_backward;
        let c2 = ck_inequality_constant(&k, &m, &samples, 1024).unwrap().constant_backward;
        assert!((c1 - c2).abs() / c2 < 0.01, "c1={c1}, c2={c2}");
    }

    #[test]
    fn swap_constant_is_one_for_matched_zero_drift() {
        let k = PolyKernel::new(9.0, 1).unwrap();
        let (m, c) =
            crate::model::builtin("constant", &BTreeMap::new()).unwrap();
        let samples = vec![(0usize, 16usize, vec![0.5], vec![-0.3])];
        let rep = swap_inequality_check(&k, &m, &c, &samples).unwrap();
        // theta = theta^n, so ratio = 1/(1+|x|^S)
        let expect = 1.0 / (1.0 + 0.5f64.powf(9.0));
        assert_relative_eq!(rep.constant, expect, epsilon = 1e-9);
    }

    #[test]
    fn swap_constant_shrinks_toward_weighted_identity_as_n_grows() {
        let k = PolyKernel::new(9.0, 1).unwrap();
        let mut prev = f64::INFINITY;
        for n in [16.0, 64.0, 256.0] {
            let mut p = BTreeMap::new();
            p.insert("n".to_string(), n);
            let (m, c) = crate::model::builtin("ou", &p).unwrap();
            let samples = vec![(0usize, n as usize, vec![0.7], vec![0.9])];
            let rep = swap_inequality_check(&k, &m, &c, &samples).unwrap();
            let dist = (rep.constant * (1.0 + 0.7f64.powf(9.0)) - 1.0).abs();
            assert!(dist < prev + 1e-12, "n={n}: dist={dist} prev={prev}");
            prev = dist;
        }
        assert!(prev < 0.05, "final distance {prev}");
    }
}
