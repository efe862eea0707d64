//! Deterministic transport flows: the drift ODE (continuous) and the Euler
//! difference equation (discrete), plus their discrepancy.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{ChainModel, DiffusionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    /// Anchored at the later time; transported against the drift.
    Backward,
    /// Anchored at the earlier time.
    Forward,
}

/// Discretized transport trajectory. Nodes are stored in integration order,
/// starting at the anchor, with strictly monotone times.
#[derive(Debug, Clone)]
pub struct FlowPath {
    pub direction: FlowDirection,
    pub anchor_time: f64,
    pub anchor_point: DVector<f64>,
    pub nodes: Vec<(f64, DVector<f64>)>,
}

impl FlowPath {
    pub fn endpoint(&self) -> &DVector<f64> {
        &self.nodes.last().expect("flow path has nodes").1
    }

    pub fn endpoint_time(&self) -> f64 {
        self.nodes.last().expect("flow path has nodes").0
    }
}

/// Default solver step count so ODE error is negligible against
/// statistical/quadrature error elsewhere.
pub fn default_steps(t: f64, s: f64) -> usize {
    64usize.max(((s - t).abs() * 512.0).ceil() as usize)
}

fn check_interval(t: f64, s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&s) || t >= s {
        return Err(Error::BadTimeInterval { t, s });
    }
    Ok(())
}

/// Classical 4-stage Runge-Kutta step for dx/du = b(u, x); h may be negative.
fn rk4_step(
    model: &DiffusionModel,
    u: f64,
    x: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let f = |u: f64, x: &DVector<f64>| model.drift_at(u, x);
    let k1 = f(u, x);
    let k2 = f(u + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(u + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(u + h, &(x + &k3 * h));
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFiniteCoefficient { t: u, x: x.iter().copied().collect() })
    }
}

/// Backward transport flow theta_{t,s}(y): solve d theta/du = b(u, theta)
/// with terminal condition theta(s) = y, reported at u = t.
pub fn backward_flow(
    model: &DiffusionModel,
    t: f64,
    s: f64,
    y: &DVector<f64>,
    m: usize,
) -> Result<FlowPath> {
    check_interval(t, s)?;
    let m = m.max(1);
    let h = (t - s) / m as f64;
    let mut nodes = Vec::with_capacity(m + 1);
    let mut x = y.clone();
    let mut u = s;
    nodes.push((u, x.clone()));
    for _ in 0..m {
        x = rk4_step(model, u, &x, h)?;
        u += h;
        nodes.push((u, x.clone()));
    }
    // pin the endpoint time exactly
    nodes.last_mut().unwrap().0 = t;
    Ok(FlowPath {
        direction: FlowDirection::Backward,
        anchor_time: s,
        anchor_point: y.clone(),
        nodes,
    })
}

/// Forward transport flow theta_{s,t}(x): initial condition theta(t) = x,
/// reported at u = s.
pub fn forward_flow(
    model: &DiffusionModel,
    t: f64,
    s: f64,
    x: &DVector<f64>,
    m: usize,
) -> Result<FlowPath> {
    check_interval(t, s)?;
    let m = m.max(1);
    let h = (s - t) / m as f64;
    let mut nodes = Vec::with_capacity(m + 1);
    let mut p = x.clone();
    let mut u = t;
    nodes.push((u, p.clone()));
    for _ in 0..m {
        p = rk4_step(model, u, &p, h)?;
        u += h;
        nodes.push((u, p.clone()));
    }
    nodes.last_mut().unwrap().0 = s;
    Ok(FlowPath {
        direction: FlowDirection::Forward,
        anchor_time: t,
        anchor_point: x.clone(),
        nodes,
    })
}

/// Discrete backward flow theta^n_{t_i, t_j}(y): exact iteration of the
/// downward difference recursion, no solver error.
pub fn discrete_backward_flow(
    chain: &ChainModel,
    i: usize,
    j: usize,
    y: &DVector<f64>,
) -> Result<FlowPath> {
    if i >= j || j > chain.n {
        return Err(Error::IndexOutOfRange { i, j, n: chain.n });
    }
    let n = chain.n as f64;
    let mut nodes = Vec::with_capacity(j - i + 1);
    let mut theta = y.clone();
    nodes.push((chain.time(j), theta.clone()));
    // theta^n_{t_{k+1}} = theta^n_{t_k} + b^n(t_k, theta^n_{t_k})/n, solved
    // downward: theta_{t_k} recovered as the fixed point of one upward step.
    // The recursion defines theta at t_k from t_{k+1} implicitly; iterate.
    for k in (i..j).rev() {
        let t_k = chain.time(k);
        // solve z + b(t_k, z)/n = theta for z by fixed-point iteration
        let mut z = theta.clone();
        for _ in 0..100 {
            let z_next = &theta - chain.drift_at(t_k, &z) / n;
            let delta = (&z_next - &z).norm();
            z = z_next;
            if delta < 1e-14 {
                break;
            }
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteCoefficient { t: t_k, x: z.iter().copied().collect() });
        }
        theta = z;
        nodes.push((t_k, theta.clone()));
    }
    Ok(FlowPath {
        direction: FlowDirection::Backward,
        anchor_time: chain.time(j),
        anchor_point: y.clone(),
        nodes,
    })
}

/// Discrete forward flow: exact upward iteration from t_i to t_j.
pub fn discrete_forward_flow(
    chain: &ChainModel,
    i: usize,
    j: usize,
    x: &DVector<f64>,
) -> Result<FlowPath> {
    if i >= j || j > chain.n {
        return Err(Error::IndexOutOfRange { i, j, n: chain.n });
    }
    let n = chain.n as f64;
    let mut nodes = Vec::with_capacity(j - i + 1);
    let mut theta = x.clone();
    nodes.push((chain.time(i), theta.clone()));
    for k in i..j {
        theta = &theta + chain.drift_at(chain.time(k), &theta) / n;
        nodes.push((chain.time(k + 1), theta.clone()));
    }
    Ok(FlowPath {
        direction: FlowDirection::Forward,
        anchor_time: chain.time(i),
        anchor_point: x.clone(),
        nodes,
    })
}

/// |theta_{t_i,t_j}(y) - theta^n_{t_i,t_j}(y)| with a high-accuracy
/// continuous flow as reference.
pub fn flow_discrepancy(
    model: &DiffusionModel,
    chain: &ChainModel,
    i: usize,
    j: usize,
    y: &DVector<f64>,
    m: usize,
) -> Result<f64> {
    let t = chain.time(i);
    let s = chain.time(j);
    let cont = backward_flow(model, t, s, y, m)?;
    let disc = discrete_backward_flow(chain, i, j, y)?;
    Ok((cont.endpoint() - disc.endpoint()).norm())
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
    fn zero_drift_flows_are_identity() {
        let (m, c) = builtin("constant", &params(&[("n", 8.0)])).unwrap();
        let p = backward_flow(&m, 0.0, 1.0, &v(0.7), 32).unwrap();
        assert_relative_eq!(p.endpoint()[0], 0.7, epsilon = 1e-14);
        let p = forward_flow(&m, 0.0, 1.0, &v(-0.3), 32).unwrap();
        assert_relative_eq!(p.endpoint()[0], -0.3, epsilon = 1e-14);
        let p = discrete_backward_flow(&c, 0, 8, &v(0.4)).unwrap();
        for (_, node) in &p.nodes {
            assert_relative_eq!(node[0], 0.4, epsilon = 1e-14);
        }
    }

    #[test]
    fn linear_drift_matches_closed_form() {
        // b = -x: backward flow theta_{t,s}(y) = y e^{s-t}
        let (m, _) = builtin("ou", &params(&[("kappa", 1.0)])).unwrap();
        let p = backward_flow(&m, 0.0, 1.0, &v(1.0), 64).unwrap();
        assert_relative_eq!(p.endpoint()[0], std::f64::consts::E, epsilon = 1e-8);
        let p = forward_flow(&m, 0.0, 1.0, &v(1.0), 64).unwrap();
        assert_relative_eq!(p.endpoint()[0], (-1.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn constant_drift_integrates_directly() {
        // b = 1: theta_{t,s}(y) = y - (s - t)
        let meta = crate::model::RegularityMeta {
            lambda: 1.0,
            a_const: 0.0,
            b_const: 0.0,
            k_const: 1.0,
            gamma: 1.0,
            alpha: 1.0,
            beta: 1.0,
        };
        let m = DiffusionModel {
            dim: 1,
            drift: std::sync::Arc::new(|_t, x: &DVector<f64>| DVector::from_element(x.len(), 1.0)),
            diffusion: std::sync::Arc::new(|_t, x: &DVector<f64>| {
                nalgebra::DMatrix::identity(x.len(), x.len())
            }),
            regularity: meta,
        };
        let p = backward_flow(&m, 0.0, 1.0, &v(0.0), 16).unwrap();
        assert_relative_eq!(p.endpoint()[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn forward_then_backward_inverts() {
        let (m, _) = builtin("ou", &params(&[("kappa", 1.0)])).unwrap();
        let x0 = v(0.8);
        let fwd = forward_flow(&m, 0.2, 0.9, &x0, 256).unwrap();
        let back = backward_flow(&m, 0.2, 0.9, fwd.endpoint(), 256).unwrap();
        assert!((back.endpoint() - &x0).norm() < 1e-8);
    }

    #[test]
    fn discrete_flow_constant_drift_hand_iteration() {
        // b^n = 1, n = 4: four downward steps of the recursion from y = 0
        // give theta^n_{0,1}(0) = -1.
        let meta = crate::model::RegularityMeta {
            lambda: 1.0,
            a_const: 0.0,
            b_const: 0.0,
            k_const: 1.0,
            gamma: 1.0,
            alpha: 1.0,
            beta: 1.0,
        };
        let chain = ChainModel {
            n: 4,
            drift: std::sync::Arc::new(|_t, x: &DVector<f64>| DVector::from_element(x.len(), 1.0)),
            diffusion: std::sync::Arc::new(|_t, x: &DVector<f64>| {
                nalgebra::DMatrix::identity(x.len(), x.len())
            }),
            innovations: crate::model::InnovationFamily::gaussian(1),
            regularity: meta,
            dim: 1,
        };
        let p = discrete_backward_flow(&chain, 0, 4, &v(0.0)).unwrap();
        assert_relative_eq!(p.endpoint()[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn discrete_ou_flow_approaches_continuous() {
        let (_, c) = builtin("ou", &params(&[("kappa", 1.0), ("n", 100.0)])).unwrap();
        let p = discrete_backward_flow(&c, 0, 100, &v(1.0)).unwrap();
        let err = (p.endpoint()[0] - std::f64::consts::E).abs();
        assert!(err < 3.0 / 100.0, "err = {err}");
    }

    #[test]
    fn discrepancy_zero_for_matched_zero_drift() {
        let (m, c) = builtin("constant", &params(&[("n", 8.0)])).unwrap();
        let d = flow_discrepancy(&m, &c, 0, 8, &v(1.0), 64).unwrap();
        assert!(d < 1e-14);
    }

    #[test]
    fn discrete_backward_then_forward_inverts_exactly() {
        let (_, c) = builtin("ou", &params(&[("kappa", 1.0), ("n", 32.0)])).unwrap();
        let y = v(0.6);
        let back = discrete_backward_flow(&c, 3, 20, &y).unwrap();
        let fwd = discrete_forward_flow(&c, 3, 20, back.endpoint()).unwrap();
        assert!((fwd.endpoint() - &y).norm() < 1e-12);
    }

    #[test]
    fn index_out_of_range_rejected() {
        let (_, c) = builtin("constant", &params(&[("n", 4.0)])).unwrap();
        assert!(discrete_backward_flow(&c, 2, 2, &v(0.0)).is_err());
        assert!(discrete_backward_flow(&c, 0, 5, &v(0.0)).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn forward_backward_inversion_holds_everywhere(
            x0 in -2.0f64..2.0,
            t in 0.0f64..0.5,
            gap in 0.1f64..0.5,
            kappa in 0.2f64..2.0,
        ) {
            let (m, _) = builtin("ou", &params(&[("kappa", kappa)])).unwrap();
            let s = t + gap;
            let fwd = forward_flow(&m, t, s, &v(x0), 128).unwrap();
            let back = backward_flow(&m, t, s, fwd.endpoint(), 128).unwrap();
            proptest::prop_assert!((back.endpoint()[0] - x0).abs() < 1e-7);
        }

        #[test]
        fn discrete_flows_invert_exactly(
            y in -2.0f64..2.0,
            kappa in 0.2f64..2.0,
            i in 0usize..8,
            len in 1usize..24,
        ) {
            let (_, c) = builtin("ou", &params(&[("kappa", kappa), ("n", 32.0)])).unwrap();
            let j = (i + len).min(32);
            let back = discrete_backward_flow(&c, i, j, &v(y)).unwrap();
            let fwd = discrete_forward_flow(&c, i, j, back.endpoint()).unwrap();
            proptest::prop_assert!((fwd.endpoint()[0] - y).abs() < 1e-10);
        }
    }
}
