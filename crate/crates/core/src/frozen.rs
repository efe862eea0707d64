//! Frozen (Gaussian) transition densities: the diffusion frozen along the
//! backward transport flow, its spatial derivatives up to order 4, and the
//! discrete frozen chain density on grids.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::{self, FlowDirection, FlowPath};
use crate::grid::{Grid, GridDensity};
use crate::linalg::spd_inverse_logdet;
use crate::model::{ChainModel, DiffusionModel};

/// Mean and covariance of the frozen process over [t, s] with terminal
/// anchor (s, y) and start x.
#[derive(Debug, Clone)]
pub struct FrozenGaussian {
    pub t: f64,
    pub s: f64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// theta~_{t,s}(x) = x + y - theta_{t,s}(y)
    pub mean: DVector<f64>,
    /// C~_{t,s} = int_t^s a(u, theta_{u,s}(y)) du
    pub cov: DMatrix<f64>,
    /// Transported terminal point theta_{t,s}(y).
    pub transported: DVector<f64>,
}

/// Backward flow from (s, y) with the covariance integral C(u) = int_u^s a
/// carried along the same RK4 trajectory. Reused by the parametrix module so
/// one solve serves every intermediate time.
pub struct FrozenSlice {
    pub s: f64,
    pub y: DVector<f64>,
    /// (u, theta_{u,s}(y), C(u)) in decreasing u from s down to t_min.
    nodes: Vec<(f64, DVector<f64>, DMatrix<f64>)>,
}

impl FrozenSlice {
    /// Solve down to `t_min` with `m` RK4 steps.
    pub fn solve(
        model: &DiffusionModel,
        t_min: f64,
        s: f64,
        y: &DVector<f64>,
        m: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&t_min) || s > 1.0 || t_min >= s {
            return Err(Error::BadTimeInterval { t: t_min, s });
        }
        let d = model.dim;
        let m = m.max(2);
        let h = (t_min - s) / m as f64;
        let mut theta = y.clone();
        let mut cov = DMatrix::zeros(d, d);
        let mut u = s;
        let mut nodes = Vec::with_capacity(m + 1);
        nodes.push((u, theta.clone(), cov.clone()));
        // augmented RK4: d theta/du = b, dC/du = -a (C(u) = int_u^s a dv)
        for step in 0..m {
            let f = |u: f64, th: &DVector<f64>| {
                (model.drift_at(u, th), model.diffusion_at(u, th) * -1.0)
            };
            let (k1t, k1c) = f(u, &theta);
            let (k2t, k2c) = f(u + 0.5 * h, &(&theta + &k1t * (0.5 * h)));
            let (k3t, k3c) = f(u + 0.5 * h, &(&theta + &k2t * (0.5 * h)));
            let (k4t, k4c) = f(u + h, &(&theta + &k3t * h));
            theta += (k1t + k2t * 2.0 + k3t * 2.0 + k4t) * (h / 6.0);
            cov += (k1c + k2c * 2.0 + k3c * 2.0 + k4c) * (h / 6.0);
            u = if step + 1 == m { t_min } else { u + h };
            if !theta.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteCoefficient {
                    t: u,
                    x: theta.iter().copied().collect(),
                });
            }
            nodes.push((u, theta.clone(), cov.clone()));
        }
        Ok(FrozenSlice { s, y: y.clone(), nodes })
    }

    pub fn t_min(&self) -> f64 {
        self.nodes.last().unwrap().0
    }

    /// theta_{u,s}(y) and C~_{u,s} by linear interpolation between RK4 nodes.
    pub fn at(&self, u: f64) -> (DVector<f64>, DMatrix<f64>) {
        let s = self.s;
        let t_min = self.t_min();
        let u = u.clamp(t_min, s);
        let m = self.nodes.len() - 1;
        let frac = (s - u) / (s - t_min) * m as f64;
        let k = (frac.floor() as usize).min(m - 1);
        let w = frac - k as f64;
        let (_, th0, c0) = &self.nodes[k];
        let (_, th1, c1) = &self.nodes[k + 1];
        (th0 * (1.0 - w) + th1 * w, c0 * (1.0 - w) + c1 * w)
    }

    /// Frozen Gaussian parameters for the sub-interval [t, s] and start x.
    pub fn params(&self, t: f64, x: &DVector<f64>) -> Result<FrozenGaussian> {
        let (theta, cov) = self.at(t);
        let (lo, _) = crate::linalg::sym_eig_range(&cov);
        if lo <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(FrozenGaussian {
            t,
            s: self.s,
            x: x.clone(),
            y: self.y.clone(),
            mean: x + &self.y - &theta,
            cov,
            transported: theta,
        })
    }

    /// Borrow the stored flow trajectory as a [`FlowPath`].
    pub fn flow_path(&self) -> FlowPath {
        FlowPath {
            direction: FlowDirection::Backward,
            anchor_time: self.s,
            anchor_point: self.y.clone(),
            nodes: self.nodes.iter().map(|(u, th, _)| (*u, th.clone())).collect(),
        }
    }
}

impl FrozenGaussian {
    /// Gaussian density value at the terminal point y.
    pub fn density(&self) -> Result<f64> {
        crate::linalg::gaussian_pdf(&self.mean, &self.cov, &self.y)
    }

    /// Analytic spatial derivative D_x^nu of the density, |nu| <= 4.
    ///
    /// With u = y - mean = theta_{t,s}(y) - x the density is phi(u), and
    /// each x-derivative flips the sign of the corresponding u-derivative.
    pub fn derivative(&self, nu: &[usize]) -> Result<f64> {
        let order: usize = nu.iter().sum();
        if order > 4 {
            return Err(Error::DerivativeOrderTooLarge(order));
        }
        if nu.len() != self.mean.len() {
            return Err(Error::Config("multi-index dimension mismatch".into()));
        }
        let (inv, logdet) = spd_inverse_logdet(&self.cov)?;
        let u = &self.transported - &self.x;
        let d = u.len();

        // Hermite-polynomial form: D_u^nu phi = P(u) phi with
        // P <- d_i P - P * (Sigma^{-1} u)_i per unit derivative.
        let mut poly = Poly::one(d);
        for (axis, &reps) in nu.iter().enumerate() {
            for _ in 0..reps {
                let row: Vec<f64> = (0..d).map(|j| inv[(axis, j)]).collect();
                poly = poly.diff(axis).sub(&poly.mul_linear(&row));
            }
        }
        let quad = (&inv * &u).dot(&u);
        let phi = (-0.5 * quad
            - 0.5 * logdet
            - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln())
        .exp();
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        Ok(sign * poly.eval(&u) * phi)
    }
}

/// Sparse multivariate polynomial over u_1..u_d.
#[derive(Clone)]
struct Poly {
    dim: usize,
    terms: HashMap<Vec<u8>, f64>,
}

impl Poly {
    fn one(dim: usize) -> Self {
        let mut terms = HashMap::new();
        terms.insert(vec![0u8; dim], 1.0);
        Poly { dim, terms }
    }

    fn diff(&self, axis: usize) -> Self {
        let mut terms = HashMap::new();
        for (deg, &c) in &self.terms {
            if deg[axis] > 0 {
                let mut nd = deg.clone();
                nd[axis] -= 1;
                *terms.entry(nd).or_insert(0.0) += c * deg[axis] as f64;
            }
        }
        Poly { dim: self.dim, terms }
    }

    /// Multiply by the linear form sum_j coeffs[j] u_j.
    fn mul_linear(&self, coeffs: &[f64]) -> Self {
        let mut terms = HashMap::new();
        for (deg, &c) in &self.terms {
            for (j, &cj) in coeffs.iter().enumerate() {
                if cj == 0.0 {
                    continue;
                }
                let mut nd = deg.clone();
                nd[j] += 1;
                *terms.entry(nd).or_insert(0.0) += c * cj;
            }
        }
        Poly { dim: self.dim, terms }
    }

    fn sub(&self, other: &Poly) -> Self {
        let mut terms = self.terms.clone();
        for (deg, &c) in &other.terms {
            *terms.entry(deg.clone()).or_insert(0.0) -= c;
        }
        Poly { dim: self.dim, terms }
    }

    fn eval(&self, u: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(deg, &c)| {
                c * deg
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| u[j].powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }
}

/// Frozen Gaussian parameters of the diffusion over [t, s] anchored at (s, y).
pub fn frozen_params(
    model: &DiffusionModel,
    t: f64,
    s: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    quad_nodes: usize,
) -> Result<FrozenGaussian> {
    let slice = FrozenSlice::solve(model, t, s, y, quad_nodes)?;
    slice.params(t, x)
}

/// Frozen Gaussian density p~(t, s, x, y).
pub fn frozen_density(
    model: &DiffusionModel,
    t: f64,
    s: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    quad_nodes: usize,
) -> Result<f64> {
    frozen_params(model, t, s, x, y, quad_nodes)?.density()
}

/// D_x^nu p~(t, s, x, y) in closed Hermite form, |nu| <= 4.
pub fn frozen_derivative(
    model: &DiffusionModel,
    t: f64,
    s: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    nu: &[usize],
    quad_nodes: usize,
) -> Result<f64> {
    frozen_params(model, t, s, x, y, quad_nodes)?.derivative(nu)
}

/// Centered law of the frozen chain increment over steps i..j anchored at
/// (t_j, y): the density of the scaled innovation sum on an offset grid,
/// plus the deterministic drift displacement.
///
/// p~_n(t_i, t_j, x, y) = rho(y - x - drift_sum) for the returned rho.
pub(crate) struct FrozenChainLaw {
    pub offset_density: GridDensity,
    pub drift_sum: DVector<f64>,
}

pub(crate) fn frozen_chain_law(
    chain: &ChainModel,
    i: usize,
    j: usize,
    y_anchor: &DVector<f64>,
    spacing: f64,
) -> Result<FrozenChainLaw> {
    if j <= i || j > chain.n {
        return Err(Error::IndexOutOfRange { i, j, n: chain.n });
    }
    let n = chain.n as f64;
    let d = chain.dim;
    if d > 2 {
        return Err(Error::DimensionTooLarge(d));
    }
    let h_max = 0.25 / n.sqrt();
    if spacing > h_max {
        return Err(Error::GridTooCoarse { h: spacing, max: h_max });
    }
    let dt = (j - i) as f64 / n;
    let radius = (8.0 * dt.sqrt()).max(8.0 / n.sqrt());

    let flow = flow::discrete_backward_flow(chain, i, j, y_anchor)?;
    // flow nodes run from t_j down to t_i; anchor_at(k) = theta^n_{t_k, t_j}(y)
    let anchor_at = |k: usize| -> &DVector<f64> { &flow.nodes[j - k].1 };

    let mut drift_sum = DVector::zeros(d);
    for k in i..j {
        drift_sum += chain.drift_at(chain.time(k), anchor_at(k)) / n;
    }

    let work = match d {
        1 => Grid::centered_1d(0.0, radius, spacing)?,
        _ => {
            let half = (radius / spacing).ceil() as usize;
            Grid::new(
                vec![-(half as f64) * spacing; 2],
                spacing,
                vec![2 * half + 1; 2],
            )?
        }
    };

    // scaled one-step innovation density at grid offset v: n^{d/2} q(sqrt(n) v)
    let scaled = |k: usize, v: &DVector<f64>| -> Result<f64> {
        let z = v * n.sqrt();
        Ok(n.powf(d as f64 / 2.0)
            * chain.innovation_density(chain.time(k), anchor_at(k), &z)?)
    };

    let mut values: Vec<f64> = (0..work.len())
        .map(|idx| scaled(i, &work.node(idx)))
        .collect::<Result<_>>()?;
    for k in i + 1..j {
        let mut next = vec![0.0; work.len()];
        for (out_idx, slot) in next.iter_mut().enumerate() {
            let u = work.node(out_idx);
            let mut acc = 0.0;
            for v_idx in 0..work.len() {
                let f = values[v_idx];
                if f == 0.0 {
                    continue;
                }
                let v = work.node(v_idx);
                acc += work.trapezoid_weight(v_idx) * f * scaled(k, &(&u - &v))?;
            }
            *slot = acc;
        }
        values = next;
    }

    let mut density = GridDensity::new(work, values)?;
    density.mass_deficit = (1.0 - density.mass).max(0.0);
    Ok(FrozenChainLaw { offset_density: density, drift_sum })
}

/// Discrete frozen chain density p~_n(t_i, t_j, x0, .) sampled on `grid`.
pub fn frozen_chain_density_grid(
    chain: &ChainModel,
    i: usize,
    j: usize,
    x0: &DVector<f64>,
    y_anchor: &DVector<f64>,
    grid: &Grid,
) -> Result<GridDensity> {
    let law = frozen_chain_law(chain, i, j, y_anchor, grid.spacing)?;
    let values: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let y = grid.node(idx);
            law.offset_density.value_at(&(&y - x0 - &law.drift_sum))
        })
        .collect();
    let mut out = GridDensity::new(grid.clone(), values)?;
    out.mass_deficit = law.offset_density.mass_deficit;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn constant_model_params_are_trivial() {
        let (m, _) = builtin("constant", &BTreeMap::new()).unwrap();
        let fg = frozen_params(&m, 0.0, 1.0, &v(0.3), &v(0.9), 64).unwrap();
        assert_relative_eq!(fg.mean[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(fg.cov[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ou_mean_uses_transported_terminal_point() {
        // theta_{0,1}(1) = e, so mean = 0 + 1 - e
        let (m, _) = builtin("ou", &BTreeMap::new()).unwrap();
        let fg = frozen_params(&m, 0.0, 1.0, &v(0.0), &v(1.0), 128).unwrap();
        assert_relative_eq!(fg.mean[0], 1.0 - std::f64::consts::E, epsilon = 1e-7);
        assert_relative_eq!(fg.cov[(0, 0)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn time_dependent_diffusion_integrates_analytically() {
        // a(t,x) = 1 + t, C~ over [0,1] = 3/2
        let meta = crate::model::RegularityMeta {
            lambda: 2.0,
            a_const: 1.0,
            b_const: 0.0,
            k_const: 0.0,
            gamma: 1.0,
            alpha: 1.0,
            beta: 1.0,
        };
        let m = DiffusionModel {
            dim: 1,
            drift: std::sync::Arc::new(|_t, x: &DVector<f64>| DVector::zeros(x.len())),
            diffusion: std::sync::Arc::new(|t, x: &DVector<f64>| {
                DMatrix::identity(x.len(), x.len()) * (1.0 + t)
            }),
            regularity: meta,
        };
        let fg = frozen_params(&m, 0.0, 1.0, &v(0.0), &v(0.0), 64).unwrap();
        assert_relative_eq!(fg.cov[(0, 0)], 1.5, epsilon = 1e-10);
    }

    #[test]
    fn density_matches_standard_normal_values() {
        let (m, _) = builtin("constant", &BTreeMap::new()).unwrap();
        let p0 = frozen_density(&m, 0.0, 1.0, &v(0.2), &v(0.2), 32).unwrap();
        assert_relative_eq!(p0, 0.3989422804014327, epsilon = 1e-10);
        let p1 = frozen_density(&m, 0.0, 1.0, &v(0.0), &v(1.0), 32).unwrap();
        assert_relative_eq!(p1, 0.24197072451914337, epsilon = 1e-10);
    }

    #[test]
    fn density_matches_standard_normal_2d() {
        let (m, _) = builtin("constant", &params(&[("d", 2.0)])).unwrap();
        let x = DVector::from_vec(vec![0.1, -0.4]);
        let p = frozen_density(&m, 0.0, 1.0, &x, &x, 32).unwrap();
        assert_relative_eq!(p, 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-10);
    }

    #[test]
    fn derivatives_match_standard_normal_hermite_values() {
        let (m, _) = builtin("constant", &BTreeMap::new()).unwrap();
        // nu = 0 equals the density
        let d0 = frozen_derivative(&m, 0.0, 1.0, &v(0.0), &v(0.0), &[0], 32).unwrap();
        assert_relative_eq!(d0, 0.3989422804014327, epsilon = 1e-12);
        // first derivative at x = y vanishes by symmetry
        let d1 = frozen_derivative(&m, 0.0, 1.0, &v(0.0), &v(0.0), &[1], 32).unwrap();
        assert!(d1.abs() < 1e-14);
        // second derivative at x = y is -1/sqrt(2 pi)
        let d2 = frozen_derivative(&m, 0.0, 1.0, &v(0.0), &v(0.0), &[2], 32).unwrap();
        assert_relative_eq!(d2, -0.3989422804014327, epsilon = 1e-12);
    }

    #[test]
    fn derivative_order_capped_at_four() {
        let (m, _) = builtin("constant", &BTreeMap::new()).unwrap();
        assert!(frozen_derivative(&m, 0.0, 1.0, &v(0.0), &v(0.0), &[5], 32).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // verify each order against a central difference of the analytic
        // order below it; differencing the density directly drowns orders
        // three and four in floating-point cancellation
        let (m, _) = builtin("ou", &BTreeMap::new()).unwrap();
        let (t, s) = (0.1, 0.9);
        let y = v(0.4);
        let x0 = 0.2;
        let h = 1e-4;
        for nu in 1..=4usize {
            let exact = frozen_derivative(&m, t, s, &v(x0), &y, &[nu], 256).unwrap();
            let lower = |x: f64| {
                frozen_derivative(&m, t, s, &v(x), &y, &[nu - 1], 256).unwrap()
            };
            let fd = (lower(x0 + h) - lower(x0 - h)) / (2.0 * h);
            assert_relative_eq!(exact, fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn frozen_normalization_in_first_argument() {
        // for fixed anchor y the frozen law is an exact Gaussian in x:
        // p~(t,s,x,y) = phi_C(theta_{t,s}(y) - x) integrates to one over x
        let (m, _) = builtin("ou", &BTreeMap::new()).unwrap();
        let y = v(0.5);
        let slice = FrozenSlice::solve(&m, 0.0, 1.0, &y, 64).unwrap();
        let center = slice.at(0.0).0[0];
        let grid = Grid::centered_1d(center, 8.0, 0.05).unwrap();
        let mut mass = 0.0;
        for idx in 0..grid.len() {
            let x = grid.node(idx);
            mass += grid.trapezoid_weight(idx) * slice.params(0.0, &x).unwrap().density().unwrap();
        }
        assert_relative_eq!(mass, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn one_step_frozen_chain_matches_single_gaussian() {
        let (_, c) = builtin("constant", &params(&[("n", 16.0)])).unwrap();
        let grid = Grid::centered_1d(0.0, 2.0, 0.05).unwrap();
        let gd =
            frozen_chain_density_grid(&c, 0, 1, &v(0.0), &v(0.0), &grid).unwrap();
        let sd = (1.0 / 16.0f64).sqrt();
        for idx in (0..grid.len()).step_by(7) {
            let y = grid.node(idx)[0];
            let exact = (-(y * y) / (2.0 * sd * sd)).exp()
                / (sd * (2.0 * std::f64::consts::PI).sqrt());
            assert_relative_eq!(gd.values[idx], exact, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn full_horizon_frozen_chain_is_standard_gaussian() {
        let (_, c) = builtin("constant", &params(&[("n", 16.0)])).unwrap();
        let grid = Grid::centered_1d(0.0, 5.0, 0.05).unwrap();
        let gd =
            frozen_chain_density_grid(&c, 0, 16, &v(0.0), &v(0.0), &grid).unwrap();
        let mut worst: f64 = 0.0;
        for idx in 0..grid.len() {
            let y = grid.node(idx)[0];
            let exact = (-(y * y) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            worst = worst.max((gd.values[idx] - exact).abs());
        }
        assert!(worst < 1e-4, "sup error = {worst}");
    }

    #[test]
    fn two_step_student_matches_dense_convolution_oracle() {
        let (_, c) = builtin("constant", &params(&[("n", 16.0), ("student", 1.0)])).unwrap();
        let n = 16.0f64;
        let t0 = c.time(0);
        let t1 = c.time(1);
        let anchor = v(0.0);
        let q = |k: f64, z: f64| {
            let t = if k == 0.0 { t0 } else { t1 };
            c.innovation_density(t, &anchor, &v(z)).unwrap()
        };
        // dense quadrature oracle for the 2-fold convolution of scaled laws
        let oracle = |u: f64| {
            let m = 4001;
            let radius = 2.5;
            let h = 2.0 * radius / (m - 1) as f64;
            let mut acc = 0.0;
            for k in 0..m {
                let vv = -radius + k as f64 * h;
                let w = if k == 0 || k == m - 1 { 0.5 * h } else { h };
                acc += w
                    * (n.sqrt() * q(0.0, n.sqrt() * vv))
                    * (n.sqrt() * q(1.0, n.sqrt() * (u - vv)));
            }
            acc
        };
        let grid = Grid::centered_1d(0.0, 1.5, 0.02).unwrap();
        let gd = frozen_chain_density_grid(&c, 0, 2, &v(0.0), &v(0.0), &grid).unwrap();
        for idx in (0..grid.len()).step_by(11) {
            let u = grid.node(idx)[0];
            assert_relative_eq!(gd.values[idx], oracle(u), max_relative = 2e-3, epsilon = 1e-6);
        }
    }

    #[test]
    fn coarse_grid_rejected() {
        let (_, c) = builtin("constant", &params(&[("n", 16.0)])).unwrap();
        let grid = Grid::centered_1d(0.0, 2.0, 0.2).unwrap();
        assert!(matches!(
            frozen_chain_density_grid(&c, 0, 16, &v(0.0), &v(0.0), &grid),
            Err(Error::GridTooCoarse { .. })
        ));
    }
}
