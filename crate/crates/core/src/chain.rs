//! Markov chain simulation, exact transition densities by Chapman-Kolmogorov
//! grid recursion, and the discrete parametrix objects H^n, (x)_n and the
//! finite series.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::flow;
use crate::grid::{Grid, GridDensity};
use crate::model::ChainModel;
use crate::parametrix::SeriesApprox;

/// One simulated trajectory on the full lattice t_k = k/n.
#[derive(Debug, Clone)]
pub struct ChainPath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub seed: u64,
}

impl ChainPath {
    pub fn endpoint(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    /// CSV rows: step, time, coordinates.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let d = self.states[0].len();
        let mut header = vec!["step".to_string(), "time".to_string()];
        header.extend((0..d).map(|i| format!("x{}", i + 1)));
        wtr.write_record(&header).map_err(csv_err)?;
        for (k, st) in self.states.iter().enumerate() {
            let mut rec = vec![format!("{k}"), format!("{}", self.times[k])];
            rec.extend(st.iter().map(|v| format!("{v}")));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e),
    }
}

/// Simulate the chain from x0 at t_0 up to step j, reproducibly from `seed`.
pub fn simulate(chain: &ChainModel, x0: &DVector<f64>, j: usize, seed: u64) -> Result<ChainPath> {
    if j > chain.n {
        return Err(Error::IndexOutOfRange { i: 0, j, n: chain.n });
    }
    let n = chain.n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(j + 1);
    let mut times = Vec::with_capacity(j + 1);
    let mut x = x0.clone();
    states.push(x.clone());
    times.push(0.0);
    for k in 0..j {
        let t = chain.time(k);
        let xi = chain.sample_innovation(t, &x, &mut rng)?;
        x = &x + chain.drift_at(t, &x) / n + xi / n.sqrt();
        states.push(x.clone());
        times.push(chain.time(k + 1));
    }
    Ok(ChainPath { times, states, seed })
}

/// Endpoints of `paths` independent trajectories, parallel over paths with
/// per-path seeds derived from `seed`.
pub fn simulate_endpoints(
    chain: &ChainModel,
    x0: &DVector<f64>,
    j: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    (0..paths)
        .into_par_iter()
        .map(|p| Ok(simulate(chain, x0, j, seed.wrapping_add(p as u64))?.states.pop().unwrap()))
        .collect()
}

/// Exact one-step transition density of the chain at step i:
/// n^{d/2} q_{t_i, x}(sqrt(n) (y - x - b^n(t_i, x)/n)).
pub fn one_step_density(
    chain: &ChainModel,
    i: usize,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    if i >= chain.n {
        return Err(Error::IndexOutOfRange { i, j: i + 1, n: chain.n });
    }
    let n = chain.n as f64;
    let t = chain.time(i);
    let arg = (y - x - chain.drift_at(t, x) / n) * n.sqrt();
    Ok(n.powf(chain.dim as f64 / 2.0) * chain.innovation_density(t, x, &arg)?)
}

/// Exact chain density p_n(t_i, t_j, x0, .) on `grid` by Chapman-Kolmogorov
/// recursion with trapezoid quadrature per step.
pub fn chain_density_grid(
    chain: &ChainModel,
    i: usize,
    j: usize,
    x0: &DVector<f64>,
    grid: &Grid,
) -> Result<GridDensity> {
    let n = chain.n as f64;
    if j <= i || j > chain.n {
        return Err(Error::IndexOutOfRange { i, j, n: chain.n });
    }
    if chain.dim > 2 {
        return Err(Error::DimensionTooLarge(chain.dim));
    }
    let h_max = 0.25 / n.sqrt();
    if grid.spacing > h_max {
        return Err(Error::GridTooCoarse { h: grid.spacing, max: h_max });
    }

    let nodes: Vec<DVector<f64>> = (0..grid.len()).map(|idx| grid.node(idx)).collect();
    let weights: Vec<f64> = (0..grid.len()).map(|idx| grid.trapezoid_weight(idx)).collect();

    let mut vals: Vec<f64> = nodes
        .par_iter()
        .map(|y| one_step_density(chain, i, x0, y))
        .collect::<Result<_>>()?;
    let mut deficit = check_step_mass(&vals, &weights, i)?;

    for k in i + 1..j {
        let next: Vec<f64> = nodes
            .par_iter()
            .map(|u| {
                let mut acc = 0.0;
                for v_idx in 0..nodes.len() {
                    let f = vals[v_idx];
                    if f == 0.0 {
                        continue;
                    }
                    acc += weights[v_idx] * f * one_step_density(chain, k, &nodes[v_idx], u)?;
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        vals = next;
        deficit = deficit.max(check_step_mass(&vals, &weights, k)?);
    }

    let mut out = GridDensity::new(grid.clone(), vals)?;
    out.mass_deficit = deficit;
    Ok(out)
}

fn check_step_mass(vals: &[f64], weights: &[f64], step: usize) -> Result<f64> {
    let mass: f64 = vals.iter().zip(weights).map(|(v, w)| v * w).sum();
    let deficit = (1.0 - mass).max(0.0);
    if mass < 0.98 || mass > 1.001 {
        return Err(Error::MassDeficit { deficit, tol: 0.02, step });
    }
    Ok(deficit)
}

/// Centered odd lattice around the origin (or `center`) per axis.
fn centered_lattice(center: &[f64], radius: f64, spacing: f64, d: usize) -> Result<Grid> {
    let half = (radius / spacing).ceil() as usize;
    let origin: Vec<f64> = (0..d).map(|ax| center[ax] - half as f64 * spacing).collect();
    Grid::new(origin, spacing, vec![2 * half + 1; d])
}

/// Discrete convolution of f on a centered lattice against g on the same
/// lattice: (f * g)[u] = sum_v w(v) f[v] g[u - v], zero outside the lattice.
fn lattice_convolve(grid: &Grid, f: &[f64], g: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    let shape = grid.shape.clone();
    let halves: Vec<isize> = shape.iter().map(|&s| (s as isize - 1) / 2).collect();
    let coords: Vec<Vec<isize>> = (0..grid.len())
        .map(|idx| {
            let mut rem = idx;
            let mut c = vec![0isize; d];
            for ax in (0..d).rev() {
                c[ax] = (rem % shape[ax]) as isize;
                rem /= shape[ax];
            }
            c
        })
        .collect();
    let weights: Vec<f64> = (0..grid.len()).map(|idx| grid.trapezoid_weight(idx)).collect();

    (0..grid.len())
        .into_par_iter()
        .map(|u| {
            let cu = &coords[u];
            let mut acc = 0.0;
            'outer: for v in 0..grid.len() {
                let fv = f[v];
                if fv == 0.0 {
                    continue;
                }
                let cv = &coords[v];
                let mut idx = 0usize;
                for ax in 0..d {
                    let k = cu[ax] - cv[ax] + halves[ax];
                    if k < 0 || k >= shape[ax] as isize {
                        continue 'outer;
                    }
                    idx = idx * shape[ax] + k as usize;
                }
                acc += weights[v] * fv * g[idx];
            }
            acc
        })
        .collect()
}

/// Linear interpolation of lattice values at a point, zero outside (d = 1).
fn interp1(vals: &[f64], origin: f64, h: f64, p: f64) -> f64 {
    let t = (p - origin) / h;
    if t < 0.0 || t > (vals.len() - 1) as f64 {
        return 0.0;
    }
    let k = (t.floor() as usize).min(vals.len() - 2);
    let w = t - k as f64;
    vals[k] * (1.0 - w) + vals[k + 1] * w
}

fn interp_grid(grid: &Grid, vals: &[f64], p: &DVector<f64>) -> f64 {
    if grid.dim() == 1 {
        return interp1(vals, grid.origin[0], grid.spacing, p[0]);
    }
    // fall back to the shared multilinear routine for d = 2
    let gd = GridDensity {
        grid: grid.clone(),
        values: vals.to_vec(),
        mass: 0.0,
        mass_deficit: 0.0,
    };
    gd.value_at(p)
}

/// Frozen-chain prefix laws anchored at (t_l, w): for every k in i..l the
/// centered density rho_k of the scaled innovation sum over steps k..l-1 with
/// coefficients frozen along the discrete backward flow, so that
/// p~_n(t_k, t_l, z, w) = rho_k(w - z - driftsum_k).
struct AnchorLaws {
    i: usize,
    l: usize,
    w: DVector<f64>,
    lattice: Grid,
    /// prefixes[k - i] for k in i..l; the k = l entry is the empty identity.
    prefixes: Vec<Vec<f64>>,
    /// driftsum[k - i] = sum_{m=k}^{l-1} b^n(t_m, theta_m)/n; zero at k = l.
    driftsum: Vec<DVector<f64>>,
    /// anchors[k - i] = theta^n_{t_k, t_l}(w); anchors[l - i] = w.
    anchors: Vec<DVector<f64>>,
    /// one-step quadrature lattice (centered at 0).
    step_lattice: Grid,
}

impl AnchorLaws {
    fn build(chain: &ChainModel, i: usize, l: usize, w: &DVector<f64>, spacing: f64) -> Result<Self> {
        let n = chain.n as f64;
        let d = chain.dim;
        if l <= i || l > chain.n {
            return Err(Error::IndexOutOfRange { i, j: l, n: chain.n });
        }
        if d > 2 {
            return Err(Error::DimensionTooLarge(d));
        }
        let h_max = 0.25 / n.sqrt();
        if spacing > h_max {
            return Err(Error::GridTooCoarse { h: spacing, max: h_max });
        }

        let path = flow::discrete_backward_flow(chain, i, l, w)?;
        // path nodes run from t_l down to t_i
        let anchors: Vec<DVector<f64>> =
            (i..=l).map(|k| path.nodes[l - k].1.clone()).collect();

        let mut driftsum = vec![DVector::zeros(d); l - i + 1];
        for k in (i..l).rev() {
            driftsum[k - i] =
                &driftsum[k + 1 - i] + chain.drift_at(chain.time(k), &anchors[k - i]) / n;
        }

        let dt = (l - i) as f64 / n;
        let radius = (8.0 * dt.sqrt()).max(8.0 / n.sqrt());
        let lattice = centered_lattice(&vec![0.0; d], radius, spacing, d)?;

        // scaled innovation density of step k on the lattice
        let scaled = |k: usize| -> Result<Vec<f64>> {
            let t = chain.time(k);
            let th = &anchors[k - i];
            (0..lattice.len())
                .map(|idx| {
                    let v = lattice.node(idx) * n.sqrt();
                    Ok(n.powf(d as f64 / 2.0) * chain.innovation_density(t, th, &v)?)
                })
                .collect()
        };

        let mut prefixes = vec![Vec::new(); l - i + 1];
        prefixes[l - 1 - i] = scaled(l - 1)?;
        for k in (i..l - 1).rev() {
            let qk = scaled(k)?;
            prefixes[k - i] = lattice_convolve(&lattice, &qk, &prefixes[k + 1 - i]);
        }

        let step_radius = 8.0 * chain.regularity.lambda.sqrt() / n.sqrt();
        let step_lattice = centered_lattice(&vec![0.0; d], step_radius, spacing, d)?;

        Ok(AnchorLaws {
            i,
            l,
            w: w.clone(),
            lattice,
            prefixes,
            driftsum,
            anchors,
            step_lattice,
        })
    }

    /// p~_n(t_k, t_l, z, w) for i <= k < l.
    fn ptilde(&self, k: usize, z: &DVector<f64>) -> f64 {
        let p = &self.w - z - &self.driftsum[k - self.i];
        interp_grid(&self.lattice, &self.prefixes[k - self.i], &p)
    }

    /// One-step expectation weights at (t_k, state): trapezoid weight times
    /// the scaled innovation density over the step lattice offsets.
    fn step_weights(&self, chain: &ChainModel, k: usize, state: &DVector<f64>) -> Result<Vec<f64>> {
        let n = chain.n as f64;
        let d = chain.dim as f64;
        let t = chain.time(k);
        (0..self.step_lattice.len())
            .map(|m| {
                let off = self.step_lattice.node(m) * n.sqrt();
                Ok(self.step_lattice.trapezoid_weight(m)
                    * n.powf(d / 2.0)
                    * chain.innovation_density(t, state, &off)?)
            })
            .collect()
    }

    /// H^n(t_k, t_l, z, w) = n (L^n - L~^n) p~_n(t_{k+1}, t_l, ., w)(z),
    /// with precomputed true/frozen one-step weights for (t_k, z) and
    /// (t_k, theta^n_{t_k,t_l}(w)).
    fn hn_value(
        &self,
        chain: &ChainModel,
        k: usize,
        z: &DVector<f64>,
        true_w: &[f64],
        froz_w: &[f64],
    ) -> Result<f64> {
        let n = chain.n as f64;
        let t = chain.time(k);
        let theta = &self.anchors[k - self.i];
        if k + 1 == self.l {
            // gap 1: p~_n over one step is itself a one-step density with
            // frozen coefficients, no quadrature needed
            let p_true = one_step_density(chain, k, z, &self.w)?;
            let arg = (&self.w - z - chain.drift_at(t, theta) / n) * n.sqrt();
            let p_froz = n.powf(chain.dim as f64 / 2.0)
                * chain.innovations.density(&chain.diffusion_at(t, theta), &arg)?;
            return Ok(n * (p_true - p_froz));
        }

        let rho = &self.prefixes[k + 1 - self.i];
        let ds = &self.driftsum[k + 1 - self.i];
        let c_true = z + chain.drift_at(t, z) / n;
        let c_froz = z + chain.drift_at(t, theta) / n;
        let base_true = &self.w - &c_true - ds;
        let base_froz = &self.w - &c_froz - ds;

        let mut e_true = 0.0;
        let mut e_froz = 0.0;
        if chain.dim == 1 {
            let (o, h) = (self.lattice.origin[0], self.lattice.spacing);
            let (so, sh) = (self.step_lattice.origin[0], self.step_lattice.spacing);
            for m in 0..true_w.len() {
                let off = so + m as f64 * sh;
                e_true += true_w[m] * interp1(rho, o, h, base_true[0] - off);
                e_froz += froz_w[m] * interp1(rho, o, h, base_froz[0] - off);
            }
        } else {
            for m in 0..true_w.len() {
                let off = self.step_lattice.node(m);
                e_true += true_w[m] * interp_grid(&self.lattice, rho, &(&base_true - &off));
                e_froz += froz_w[m] * interp_grid(&self.lattice, rho, &(&base_froz - &off));
            }
        }
        Ok(n * (e_true - e_froz))
    }
}

/// Discrete parametrix kernel H^n(t_i, t_j, x, y); requires j - i >= 2 so the
/// inner p~_n is a genuine density. `grid` fixes the quadrature spacing.
pub fn discrete_kernel_hn(
    chain: &ChainModel,
    i: usize,
    j: usize,
    x: &DVector<f64>,
    y: &DVector<f64>,
    grid: &Grid,
) -> Result<f64> {
    if j < i + 2 || j > chain.n {
        return Err(Error::IndexOutOfRange { i, j, n: chain.n });
    }
    let laws = AnchorLaws::build(chain, i, j, y, grid.spacing)?;
    let true_w = laws.step_weights(chain, i, x)?;
    let froz_w = laws.step_weights(chain, i, &laws.anchors[0].clone())?;
    laws.hn_value(chain, i, x, &true_w, &froz_w)
}

/// Discrete time-space convolution (f (x)_n g)(t_i, t_j, x, y):
/// sum over k of (1/n) times the spatial quadrature on `grid`, with the k = 0
/// term using the identity convention f(t_i, t_i, ., .) = point mass.
pub fn discrete_convolve(
    chain: &ChainModel,
    f: &dyn Fn(usize, usize, &DVector<f64>, &DVector<f64>) -> Result<f64>,
    g: &dyn Fn(usize, usize, &DVector<f64>, &DVector<f64>) -> Result<f64>,
    i: usize,
    j: usize,
    x: &DVector<f64>,
    y: &DVector<f64>,
    grid: &Grid,
) -> Result<f64> {
    if j <= i || j > chain.n {
        return Err(Error::IndexOutOfRange { i, j, n: chain.n });
    }
    let n = chain.n as f64;
    let mut acc = g(i, j, x, y)? / n;
    for k in i + 1..j {
        let mut inner = 0.0;
        for idx in 0..grid.len() {
            let z = grid.node(idx);
            let gv = g(k, j, &z, y)?;
            if gv == 0.0 {
                continue;
            }
            inner += grid.trapezoid_weight(idx) * f(i, k, x, &z)? * gv;
        }
        acc += inner / n;
    }
    Ok(acc)
}

/// Finite discrete parametrix series p_n = sum_{r=0}^{j-i} p~_n (x)_n H^n'r,
/// truncated at order R.
///
/// Kernel powers and the leading p~_n are assembled over a shared work
/// lattice; at R = j - i the partial sum reproduces the exact chain density
/// up to quadrature error.
pub fn discrete_series(
    chain: &ChainModel,
    i: usize,
    j: usize,
    x: &DVector<f64>,
    y: &DVector<f64>,
    r_max: usize,
) -> Result<SeriesApprox> {
    let n = chain.n as f64;
    if j <= i || j > chain.n {
        return Err(Error::IndexOutOfRange { i, j, n: chain.n });
    }
    if r_max > j - i {
        return Err(Error::SeriesOrderExceedsSteps { r: r_max, gap: j - i });
    }
    if chain.dim > 2 {
        return Err(Error::DimensionTooLarge(chain.dim));
    }

    let d = chain.dim;
    let h = 0.25 / n.sqrt();
    let dt = (j - i) as f64 / n;
    let center: Vec<f64> = (0..d).map(|ax| 0.5 * (x[ax] + y[ax])).collect();
    let radius = 6.0 * dt.sqrt().max(1.0 / n.sqrt()) + 0.5 * (x - y).norm() + 0.5;
    let work = centered_lattice(&center, radius, h, d)?;
    let nw = work.len();
    let wq: Vec<f64> = (0..nw).map(|idx| work.trapezoid_weight(idx)).collect();
    // z-samples: the work nodes plus the off-lattice start point x
    let mut z_list: Vec<DVector<f64>> = (0..nw).map(|idx| work.node(idx)).collect();
    z_list.push(x.clone());
    let nz = z_list.len();

    // true one-step expectation weights per (k, z), shared across anchors
    let probe = AnchorLaws::build(chain, i, j, y, h)?;
    let true_weights: Vec<Vec<Vec<f64>>> = (i..j)
        .map(|k| {
            z_list
                .par_iter()
                .map(|z| probe.step_weights(chain, k, z))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    // anchor (t_j, y): term 0 and the first kernel power S_1(k, z) = H^n(k, j, z, y)
    let term0 = probe.ptilde(i, x);
    let mut s_prev: Vec<Vec<f64>> = vec![vec![0.0; nz]; j - i];
    if r_max >= 1 {
        for k in i..j {
            let froz_w = probe.step_weights(chain, k, &probe.anchors[k - i].clone())?;
            let row: Vec<f64> = z_list
                .par_iter()
                .enumerate()
                .map(|(zi, z)| probe.hn_value(chain, k, z, &true_weights[k - i][zi], &froz_w))
                .collect::<Result<_>>()?;
            s_prev[k - i] = row;
        }
    }

    // intermediate anchors (t_l, w): kernel table H^n(k, l, z, w) and the
    // leading factors p~_n(t_i, t_l, x, w)
    let mut hn: Vec<Vec<f64>> = Vec::new(); // [(k,l) pair][z * nw + w]
    let mut pair_index = vec![vec![usize::MAX; j - i]; j - i]; // [k-i][l-i]
    let mut ptx: Vec<Vec<f64>> = vec![vec![0.0; nw]; j - i]; // [l-i][w], l in i+1..j
    if r_max >= 1 && j - i >= 2 {
        let mut pairs = 0usize;
        for k in i..j - 1 {
            for l in k + 1..j {
                pair_index[k - i][l - i] = pairs;
                pairs += 1;
            }
        }
        hn = vec![vec![0.0; nz * nw]; pairs];

        type AnchorOut = (usize, usize, f64, Vec<(usize, Vec<f64>)>);
        let jobs: Vec<(usize, usize)> =
            (i + 1..j).flat_map(|l| (0..nw).map(move |wi| (l, wi))).collect();
        let results: Vec<AnchorOut> = jobs
            .into_par_iter()
            .map(|(l, wi)| -> Result<AnchorOut> {
                let w = work.node(wi);
                let laws = AnchorLaws::build(chain, i, l, &w, h)?;
                let p_lead = laws.ptilde(i, x);
                let mut cols = Vec::with_capacity(l - i);
                for k in i..l {
                    let froz_w =
                        laws.step_weights(chain, k, &laws.anchors[k - i].clone())?;
                    let col: Vec<f64> = (0..nz)
                        .map(|zi| {
                            laws.hn_value(
                                chain,
                                k,
                                &z_list[zi],
                                &true_weights[k - i][zi],
                                &froz_w,
                            )
                        })
                        .collect::<Result<_>>()?;
                    cols.push((k, col));
                }
                Ok((l, wi, p_lead, cols))
            })
            .collect::<Result<_>>()?;
        for (l, wi, p_lead, cols) in results {
            ptx[l - i][wi] = p_lead;
            for (k, col) in cols {
                let pair = pair_index[k - i][l - i];
                for (zi, v) in col.into_iter().enumerate() {
                    hn[pair][zi * nw + wi] = v;
                }
            }
        }
    }

    // series assembly: term_r = (1/n) S_r(i, x) + sum_{k>i} (1/n) <p~_n(i,k,x,.), S_r(k,.)>
    let mut terms = vec![term0];
    let mut partial_sums = vec![term0];
    let mut sum = term0;
    for r in 1..=r_max {
        if r >= 2 {
            let mut s_next: Vec<Vec<f64>> = vec![vec![0.0; nz]; j - i];
            for k in i..j - 1 {
                let row: Vec<f64> = (0..nz)
                    .into_par_iter()
                    .map(|zi| {
                        let mut acc = 0.0;
                        for l in k + 1..j {
                            let pair = pair_index[k - i][l - i];
                            if pair == usize::MAX {
                                continue;
                            }
                            let hrow = &hn[pair][zi * nw..(zi + 1) * nw];
                            let sl = &s_prev[l - i];
                            let mut inner = 0.0;
                            for wi in 0..nw {
                                inner += wq[wi] * hrow[wi] * sl[wi];
                            }
                            acc += inner / n;
                        }
                        acc
                    })
                    .collect();
                s_next[k - i] = row;
            }
            s_prev = s_next;
        }
        let mut term = s_prev[0][nz - 1] / n; // k = 0 identity picks S_r(i, x)
        for k in i + 1..j {
            let sk = &s_prev[k - i];
            let pk = &ptx[k - i];
            let mut inner = 0.0;
            for wi in 0..nw {
                inner += wq[wi] * pk[wi] * sk[wi];
            }
            term += inner / n;
        }
        sum += term;
        terms.push(term);
        partial_sums.push(sum);
    }

    let gamma_exp = chain.regularity.gamma;
    let c_fit = if terms.len() > 1 && terms[0].abs() > 1e-300 {
        (terms[1].abs() / terms[0].abs()) * gamma(1.0 + gamma_exp / 2.0)
            / (gamma(gamma_exp / 2.0) * dt.powf(gamma_exp / 2.0))
    } else {
        0.0
    };
    let tail_estimate = if c_fit > 0.0 && r_max < j - i {
        crate::parametrix::tail_bound(r_max, gamma_exp, dt, c_fit)?
    } else {
        0.0
    };

    Ok(SeriesApprox {
        t: chain.time(i),
        s: chain.time(j),
        x: x.iter().copied().collect(),
        y: y.iter().copied().collect(),
        order: r_max,
        terms,
        partial_sums,
        tail_estimate,
        c_fit,
    })
}
