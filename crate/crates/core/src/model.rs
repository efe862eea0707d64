//! Diffusion and chain models, built-in reference pairs, and sampling-based
//! validation of the standing assumptions.
//!
//! Coefficients are opaque callables, so assumptions are checked empirically
//! on a user-declared box rather than symbolically.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{sym_eig_range, sym_sqrt};

pub type DriftFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Ellipticity / Hölder metadata declared for a model.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegularityMeta {
    /// Ellipticity bound, >= 1; eigenvalues of `a` lie in [1/lambda, lambda].
    pub lambda: f64,
    /// Hölder constant for the diffusion coefficient.
    pub a_const: f64,
    /// Lipschitz constant for the drift.
    pub b_const: f64,
    /// Bound on |b(t, 0)|.
    pub k_const: f64,
    /// Spatial Hölder exponent of `a`.
    pub gamma: f64,
    /// Temporal Hölder exponent of `a`.
    pub alpha: f64,
    /// Temporal Hölder exponent of `b`.
    pub beta: f64,
}

impl RegularityMeta {
    pub fn check(&self) -> Result<()> {
        let ok = self.lambda >= 1.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && self.alpha > 0.0
            && self.alpha <= 1.0
            && self.beta > 0.0
            && self.beta <= 1.0
            && self.a_const.is_finite()
            && self.b_const.is_finite()
            && self.k_const.is_finite()
            && self.a_const >= 0.0
            && self.b_const >= 0.0
            && self.k_const >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("regularity metadata out of range".into()))
        }
    }
}

/// Time-inhomogeneous diffusion dX = b dt + sigma dW with a = sigma sigma*.
#[derive(Clone)]
pub struct DiffusionModel {
    pub dim: usize,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub regularity: RegularityMeta,
}

impl DiffusionModel {
    pub fn drift_at(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(t, x)
    }

    pub fn diffusion_at(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(t, x)
    }

    /// sigma(t, x) as the symmetric square root of a(t, x).
    pub fn sigma_at(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        sym_sqrt(&self.diffusion_at(t, x))
    }
}

/// Innovation law family for the chain: light-tailed Gaussian or a
/// heavy-tailed Student-type family with polynomial tail exponent S.
///
/// Either family has zero mean and covariance equal to the supplied a^n(t, x).
#[derive(Clone)]
pub struct InnovationFamily {
    pub kind: InnovationKind,
    /// Polynomial tail exponent S; the density is O(|z|^{-S}) at infinity
    /// (trivially satisfied by the Gaussian family).
    pub tail_exponent: f64,
    radial_table: Arc<OnceLock<RadialTable>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnovationKind {
    Gaussian,
    /// Multivariate Student-type with nu = S - d degrees of freedom, scaled
    /// so the covariance matches the chain coefficient exactly.
    Student,
}

impl InnovationFamily {
    pub fn gaussian(dim: usize) -> Self {
        InnovationFamily {
            kind: InnovationKind::Gaussian,
            tail_exponent: 2.0 * dim as f64 + 8.0,
            radial_table: Arc::new(OnceLock::new()),
        }
    }

    pub fn student(dim: usize, tail_exponent: f64) -> Result<Self> {
        let min = 2.0 * dim as f64 + 6.0;
        if tail_exponent <= min {
            return Err(Error::TailExponentTooSmall { s: tail_exponent, min, d: dim });
        }
        Ok(InnovationFamily {
            kind: InnovationKind::Student,
            tail_exponent,
            radial_table: Arc::new(OnceLock::new()),
        })
    }

    /// Density of the innovation with covariance `cov` at `z`.
    pub fn density(&self, cov: &DMatrix<f64>, z: &DVector<f64>) -> Result<f64> {
        match self.kind {
            InnovationKind::Gaussian => {
                crate::linalg::gaussian_pdf(&DVector::zeros(z.len()), cov, z)
            }
            InnovationKind::Student => {
                let d = z.len() as f64;
                let nu = self.tail_exponent - d;
                // scale so that Cov = Sigma * nu / (nu - 2) equals `cov`
                let sigma = cov * ((nu - 2.0) / nu);
                let (inv, logdet) = crate::linalg::spd_inverse_logdet(&sigma)?;
                let q = (&inv * z).dot(z);
                let log_norm = ln_gamma((nu + d) / 2.0)
                    - ln_gamma(nu / 2.0)
                    - 0.5 * d * (nu * std::f64::consts::PI).ln()
                    - 0.5 * logdet;
                Ok((log_norm - 0.5 * (nu + d) * (1.0 + q / nu).ln()).exp())
            }
        }
    }

    /// Draw one innovation with covariance `cov`.
    pub fn sample<R: Rng>(&self, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let d = cov.nrows();
        match self.kind {
            InnovationKind::Gaussian => {
                let l = sym_sqrt(cov)?;
                let g = DVector::from_iterator(
                    d,
                    (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
                );
                Ok(l * g)
            }
            InnovationKind::Student => {
                let nu = self.tail_exponent - d as f64;
                let table = self
                    .radial_table
                    .get_or_init(|| RadialTable::student(d, nu));
                let r = table.inverse_cdf(rng.gen::<f64>());
                let dir = sample_direction(d, rng);
                let sigma = cov * ((nu - 2.0) / nu);
                let l = sym_sqrt(&sigma)?;
                Ok(l * (dir * r))
            }
        }
    }
}

fn sample_direction<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    if d == 1 {
        return DVector::from_vec(vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }]);
    }
    loop {
        let g = DVector::from_iterator(
            d,
            (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
        );
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Tabulated radial CDF for inverse-transform sampling.
struct RadialTable {
    radii: Vec<f64>,
    cdf: Vec<f64>,
}

impl RadialTable {
    /// Radial profile of the spherical Student-type law with identity scale:
    /// g(r) ~ r^{d-1} (1 + r^2/nu)^{-(nu+d)/2}.
    fn student(d: usize, nu: f64) -> Self {
        let n = 16384usize;
        let r_max = 128.0f64;
        let h = r_max / (n - 1) as f64;
        let dens = |r: f64| r.powi(d as i32 - 1) * (1.0 + r * r / nu).powf(-(nu + d as f64) / 2.0);
        let mut radii = Vec::with_capacity(n);
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut prev = dens(0.0);
        radii.push(0.0);
        cdf.push(0.0);
        for k in 1..n {
            let r = k as f64 * h;
            let cur = dens(r);
            acc += 0.5 * (prev + cur) * h;
            prev = cur;
            radii.push(r);
            cdf.push(acc);
        }
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        RadialTable { radii, cdf }
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(k) => self.radii[k],
            Err(0) => self.radii[0],
            Err(k) if k >= self.cdf.len() => *self.radii.last().unwrap(),
            Err(k) => {
                let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
                let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
                self.radii[k - 1] + w * (self.radii[k] - self.radii[k - 1])
            }
        }
    }
}

/// Euler-type Markov chain on the lattice t_k = k/n.
#[derive(Clone)]
pub struct ChainModel {
    pub n: usize,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub innovations: InnovationFamily,
    pub regularity: RegularityMeta,
    pub dim: usize,
}

impl ChainModel {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.n as f64
    }

    pub fn drift_at(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(t, x)
    }

    pub fn diffusion_at(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(t, x)
    }

    /// q^n_{t,x}(z): the innovation density conditioned on state x at time t.
    pub fn innovation_density(&self, t: f64, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        self.innovations.density(&self.diffusion_at(t, x), z)
    }

    pub fn sample_innovation<R: Rng>(
        &self,
        t: f64,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        self.innovations.sample(&self.diffusion_at(t, x), rng)
    }
}

/// Sampling plan for assumption checks.
#[derive(Debug, Clone, Serialize)]
pub struct SamplePlan {
    pub points: usize,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub seed: u64,
}

impl SamplePlan {
    pub fn unit_box(dim: usize, points: usize, seed: u64) -> Self {
        SamplePlan {
            points,
            box_lo: vec![-2.0; dim],
            box_hi: vec![2.0; dim],
            seed,
        }
    }

    fn sample_point<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.box_lo.len(),
            self.box_lo
                .iter()
                .zip(&self.box_hi)
                .map(|(&lo, &hi)| rng.gen_range(lo..hi)),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed constant (empirical Lambda, Hölder ratio, ...).
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const CHECK_SLACK: f64 = 1e-7;

fn finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

fn mat_sup_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

struct CoeffChecks {
    checks: Vec<AssumptionCheck>,
}

impl CoeffChecks {
    /// Shared (A1)-(A3) sampling checks for a (drift, diffusion) pair.
    fn run(
        label: &str,
        drift: &DriftFn,
        diffusion: &DiffusionFn,
        meta: &RegularityMeta,
        plan: &SamplePlan,
        dim: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        let mut emp_lambda: f64 = 1.0;
        let mut emp_a: f64 = 0.0;
        let mut emp_b: f64 = 0.0;
        let mut emp_k: f64 = 0.0;
        let mut growth_ratio: f64 = 0.0;
        let mut smooth_worst: f64 = 0.0;
        let mut nonfinite = None;

        for _ in 0..plan.points {
            let t = rng.gen_range(0.0..1.0);
            let s = rng.gen_range(0.0..1.0);
            let x = plan.sample_point(&mut rng);
            let y = plan.sample_point(&mut rng);

            let ax = diffusion(t, &x);
            let bx = drift(t, &x);
            if !finite_mat(&ax) || !finite_vec(&bx) {
                nonfinite = Some((t, x.iter().copied().collect::<Vec<_>>()));
                break;
            }
            let (lo, hi) = sym_eig_range(&ax);
            emp_lambda = emp_lambda.max(hi).max(if lo > 0.0 { 1.0 / lo } else { f64::INFINITY });

            // Hölder difference quotients against the declared constants
            let ay = diffusion(s, &y);
            let by = drift(s, &y);
            let denom_a = (&x - &y).norm().powf(meta.gamma) + (t - s).abs().powf(meta.alpha);
            if denom_a > 1e-9 {
                emp_a = emp_a.max(mat_sup_norm(&(&ax - &ay)) / denom_a);
            }
            let denom_b = (&x - &y).norm() + (t - s).abs().powf(meta.beta);
            if denom_b > 1e-9 {
                emp_b = emp_b.max((&bx - &by).norm() / denom_b);
            }

            let b0 = drift(t, &DVector::zeros(dim));
            emp_k = emp_k.max(b0.norm());
            growth_ratio = growth_ratio.max(bx.norm() / (1.0 + x.norm()));

            // finite-difference smoothness probe (A3 second sentence)
            let h = 1e-4;
            for ax_idx in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[ax_idx] += h;
                xm[ax_idx] -= h;
                let d2b = (drift(t, &xp) + drift(t, &xm) - 2.0 * bx.clone()) / (h * h);
                let d2a = (diffusion(t, &xp) + diffusion(t, &xm) - 2.0 * ax.clone()) / (h * h);
                smooth_worst = smooth_worst.max(d2b.norm()).max(mat_sup_norm(&d2a));
            }
        }

        let mut checks = Vec::new();
        if let Some((t, x)) = nonfinite {
            checks.push(AssumptionCheck {
                name: format!("{label}: finite coefficients"),
                passed: false,
                worst: f64::NAN,
                detail: format!("non-finite value at t={t}, x={x:?}"),
            });
            return CoeffChecks { checks };
        }

        checks.push(AssumptionCheck {
            name: format!("{label}: A1 uniform ellipticity"),
            passed: emp_lambda <= meta.lambda * (1.0 + CHECK_SLACK),
            worst: emp_lambda,
            detail: format!("empirical Lambda = {emp_lambda:.6}, declared {}", meta.lambda),
        });
        checks.push(AssumptionCheck {
            name: format!("{label}: A2 diffusion Hölder ratio"),
            passed: emp_a <= meta.a_const * (1.0 + CHECK_SLACK) + 1e-12,
            worst: emp_a,
            detail: format!("empirical A = {emp_a:.6}, declared {}", meta.a_const),
        });
        checks.push(AssumptionCheck {
            name: format!("{label}: A2 drift Lipschitz ratio"),
            passed: emp_b <= meta.b_const * (1.0 + CHECK_SLACK) + 1e-12,
            worst: emp_b,
            detail: format!("empirical B = {emp_b:.6}, declared {}", meta.b_const),
        });
        checks.push(AssumptionCheck {
            name: format!("{label}: A3 drift bounded at zero"),
            passed: emp_k <= meta.k_const * (1.0 + CHECK_SLACK) + 1e-12,
            worst: emp_k,
            detail: format!("empirical K = {emp_k:.6}, declared {}", meta.k_const),
        });
        checks.push(AssumptionCheck {
            name: format!("{label}: A3 linear growth"),
            passed: growth_ratio
                <= (meta.k_const + meta.b_const) * (1.0 + CHECK_SLACK) + 1e-12,
            worst: growth_ratio,
            detail: format!(
                "sup |b|/(1+|x|) = {growth_ratio:.6}, bound K+B = {}",
                meta.k_const + meta.b_const
            ),
        });
        checks.push(AssumptionCheck {
            name: format!("{label}: A3 smoothness probe"),
            passed: smooth_worst.is_finite(),
            worst: smooth_worst,
            detail: format!("max |finite-difference D^2| = {smooth_worst:.6}"),
        });
        CoeffChecks { checks }
    }
}

/// Check assumptions (A1)-(A3) for a diffusion model by sampling.
pub fn validate_diffusion(model: &DiffusionModel, plan: &SamplePlan) -> ValidationReport {
    let checks = CoeffChecks::run(
        "diffusion",
        &model.drift,
        &model.diffusion,
        &model.regularity,
        plan,
        model.dim,
    )
    .checks;
    ValidationReport { checks }
}

/// Check assumptions (A1)-(A4) plus the B < n flag for a chain model.
pub fn validate_chain(chain: &ChainModel, plan: &SamplePlan) -> ValidationReport {
    let mut checks = CoeffChecks::run(
        "chain",
        &chain.drift,
        &chain.diffusion,
        &chain.regularity,
        plan,
        chain.dim,
    )
    .checks;

    checks.push(AssumptionCheck {
        name: "chain: A2 constant bound B < n".into(),
        passed: chain.regularity.b_const < chain.n as f64,
        worst: chain.regularity.b_const,
        detail: format!("B = {}, n = {}", chain.regularity.b_const, chain.n),
    });

    // (A4) + (cov_1): innovation normalization, zero mean, covariance match,
    // and the polynomial envelope fit. Quadrature is feasible for d <= 2.
    if chain.dim <= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x5eed);
        let kernel = crate::polykernel::PolyKernel::new(chain.innovations.tail_exponent, chain.dim);
        let mut worst_mass: f64 = 0.0;
        let mut worst_mean: f64 = 0.0;
        let mut worst_cov: f64 = 0.0;
        let mut env_c: f64 = 0.0;
        let probes = 8usize.min(plan.points.max(1));
        let mut quad_failed = false;
        for _ in 0..probes {
            let t = rng.gen_range(0.0..1.0);
            let x = plan.sample_point(&mut rng);
            let a = chain.diffusion_at(t, &x);
            match innovation_moments(chain, t, &x) {
                Ok((mass, mean, cov)) => {
                    worst_mass = worst_mass.max((mass - 1.0).abs());
                    worst_mean = worst_mean.max(mean.norm());
                    worst_cov = worst_cov.max(mat_sup_norm(&(&cov - &a)) / mat_sup_norm(&a));
                }
                Err(_) => quad_failed = true,
            }
            if let Ok(k) = &kernel {
                for _ in 0..32 {
                    let z = plan.sample_point(&mut rng) * 4.0;
                    if let Ok(q) = chain.innovation_density(t, &x, &z) {
                        env_c = env_c.max(q / k.eval(&z));
                    }
                }
            }
        }
        checks.push(AssumptionCheck {
            name: "chain: innovations normalized".into(),
            passed: !quad_failed && worst_mass < 2e-3,
            worst: worst_mass,
            detail: format!("max |mass - 1| = {worst_mass:.2e}"),
        });
        checks.push(AssumptionCheck {
            name: "chain: innovations zero mean".into(),
            passed: !quad_failed && worst_mean < 2e-3,
            worst: worst_mean,
            detail: format!("max |mean| = {worst_mean:.2e}"),
        });
        checks.push(AssumptionCheck {
            name: "chain: cov_1 innovation covariance equals a^n".into(),
            passed: !quad_failed && worst_cov < 5e-3,
            worst: worst_cov,
            detail: format!("max relative covariance mismatch = {worst_cov:.2e}"),
        });
        checks.push(AssumptionCheck {
            name: "chain: A4 polynomial envelope q <= C Q_S".into(),
            passed: env_c.is_finite() && env_c > 0.0,
            worst: env_c,
            detail: format!("fitted C = {env_c:.4}, S = {}", chain.innovations.tail_exponent),
        });
    }

    ValidationReport { checks }
}

/// Grid quadrature of the innovation mass, mean and covariance at (t, x).
fn innovation_moments(
    chain: &ChainModel,
    t: f64,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let d = chain.dim;
    // heavy tails: second-moment truncation error at radius R scales like R^{-(S-d-2)}
    let radius = 60.0;
    let m: usize = if d == 1 { 4001 } else { 201 };
    let h = 2.0 * radius / (m - 1) as f64;
    let mut mass = 0.0;
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    let total = m.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut z = DVector::zeros(d);
        let mut w = h.powi(d as i32);
        for ax in (0..d).rev() {
            let k = rem % m;
            rem /= m;
            z[ax] = -radius + k as f64 * h;
            if k == 0 || k == m - 1 {
                w *= 0.5;
            }
        }
        let q = chain.innovation_density(t, x, &z)?;
        mass += w * q;
        mean += &z * (w * q);
        cov += &z * z.transpose() * (w * q);
    }
    Ok((mass, mean, cov))
}

/// Measured sup-discrepancies between a diffusion/chain coefficient pair.
pub fn measure_pair_discrepancy(
    model: &DiffusionModel,
    chain: &ChainModel,
    plan: &SamplePlan,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut db: f64 = 0.0;
    let mut da: f64 = 0.0;
    for _ in 0..plan.points {
        let t = rng.gen_range(0.0..1.0);
        let x = plan.sample_point(&mut rng);
        db = db.max((model.drift_at(t, &x) - chain.drift_at(t, &x)).norm());
        da = da.max(mat_sup_norm(&(model.diffusion_at(t, &x) - chain.diffusion_at(t, &x))));
    }
    (db, da)
}

/// Built-in reference model pairs.
///
/// Recognized params: `d`, `n`, `kappa`, `gamma`, `delta_b`, `delta_a`,
/// `student` (nonzero selects the heavy-tailed family), `s_tail`.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<(DiffusionModel, ChainModel)> {
    let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
    let d = get("d", 1.0) as usize;
    let n = get("n", 16.0) as usize;
    if d == 0 || n == 0 {
        return Err(Error::InvalidParameter("d and n must be positive".into()));
    }

    let innovations = if get("student", 0.0) != 0.0 {
        InnovationFamily::student(d, get("s_tail", 2.0 * d as f64 + 8.0))?
    } else {
        InnovationFamily::gaussian(d)
    };

    let (drift, diffusion, drift_n, diffusion_n, meta, meta_n): (
        DriftFn,
        DiffusionFn,
        DriftFn,
        DiffusionFn,
        RegularityMeta,
        RegularityMeta,
    ) = match name {
        "constant" => {
            let b: DriftFn = Arc::new(move |_t, x: &DVector<f64>| DVector::zeros(x.len()));
            let a: DiffusionFn = Arc::new(move |_t, x: &DVector<f64>| DMatrix::identity(x.len(), x.len()));
            let meta = RegularityMeta {
                lambda: 1.0,
                a_const: 0.0,
                b_const: 0.0,
                k_const: 0.0,
                gamma: 1.0,
                alpha: 1.0,
                beta: 1.0,
            };
            (b.clone(), a.clone(), b, a, meta, meta)
        }
        "ou" => {
            let kappa = get("kappa", 1.0);
            if !(kappa > 0.0) {
                return Err(Error::InvalidParameter("ou requires kappa > 0".into()));
            }
            let b: DriftFn = Arc::new(move |_t, x: &DVector<f64>| x * (-kappa));
            let a: DiffusionFn = Arc::new(move |_t, x: &DVector<f64>| DMatrix::identity(x.len(), x.len()));
            let meta = RegularityMeta {
                lambda: 1.0,
                a_const: 0.0,
                b_const: kappa,
                k_const: 0.0,
                gamma: 1.0,
                alpha: 1.0,
                beta: 1.0,
            };
            (b.clone(), a.clone(), b, a, meta, meta)
        }
        "holder_drift" => {
            let gamma = get("gamma", 0.5);
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::InvalidParameter("holder_drift requires gamma in (0,1]".into()));
            }
            let lambda = 2.0;
            // a(t,x) = 1 + 1/2 min(1,|x|^gamma) (1 + 1/Lambda)/2, inside [1/Lambda, Lambda]
            let bump = 0.5 * (1.0 + 1.0 / lambda) / 2.0;
            let b: DriftFn = Arc::new(move |_t, x: &DVector<f64>| DVector::zeros(x.len()));
            let a: DiffusionFn = Arc::new(move |_t, x: &DVector<f64>| {
                let v = 1.0 + bump * x.norm().powf(gamma).min(1.0);
                DMatrix::identity(x.len(), x.len()) * v
            });
            let meta = RegularityMeta {
                lambda,
                a_const: bump,
                b_const: 0.0,
                k_const: 0.0,
                gamma,
                alpha: 1.0,
                beta: 1.0,
            };
            (b.clone(), a.clone(), b, a, meta, meta)
        }
        "perturbed_pair" => {
            let kappa = get("kappa", 1.0);
            let delta_b = get("delta_b", 0.0);
            let delta_a = get("delta_a", 0.0);
            if delta_a <= -0.5 {
                return Err(Error::InvalidParameter("delta_a must keep a^n elliptic".into()));
            }
            let b: DriftFn = Arc::new(move |_t, x: &DVector<f64>| x * (-kappa));
            let a: DiffusionFn = Arc::new(move |_t, x: &DVector<f64>| DMatrix::identity(x.len(), x.len()));
            let bn: DriftFn = Arc::new(move |_t, x: &DVector<f64>| {
                x * (-kappa) + DVector::from_element(x.len(), delta_b)
            });
            let an: DiffusionFn = Arc::new(move |_t, x: &DVector<f64>| {
                DMatrix::identity(x.len(), x.len()) * (1.0 + delta_a)
            });
            let lambda = (1.0 + delta_a).max(1.0 / (1.0 + delta_a)).max(1.0);
            let meta = RegularityMeta {
                lambda,
                a_const: 0.0,
                b_const: kappa,
                k_const: 0.0,
                gamma: 1.0,
                alpha: 1.0,
                beta: 1.0,
            };
            let meta_n = RegularityMeta {
                k_const: delta_b.abs() * (d as f64).sqrt(),
                ..meta
            };
            (b, a, bn, an, meta, meta_n)
        }
        other => return Err(Error::UnknownModel(other.into())),
    };

    meta.check()?;
    meta_n.check()?;

    let model = DiffusionModel { dim: d, drift, diffusion, regularity: meta };
    let chain = ChainModel {
        n,
        drift: drift_n,
        diffusion: diffusion_n,
        innovations,
        regularity: meta_n,
        dim: d,
    };
    Ok((model, chain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn constant_pair_validates_clean() {
        let (m, c) = builtin("constant", &params(&[("d", 1.0)])).unwrap();
        let plan = SamplePlan::unit_box(1, 200, 7);
        let rm = validate_diffusion(&m, &plan);
        assert!(rm.passed(), "{rm:?}");
        let a1 = rm.checks.iter().find(|c| c.name.contains("A1")).unwrap();
        assert_relative_eq!(a1.worst, 1.0, epsilon = 1e-12);
        let k = rm.checks.iter().find(|c| c.name.contains("bounded at zero")).unwrap();
        assert_relative_eq!(k.worst, 0.0, epsilon = 1e-12);
        let rc = validate_chain(&c, &plan);
        assert!(rc.passed(), "{rc:?}");
    }

    #[test]
    fn ou_validates_with_unit_lipschitz() {
        let (m, _) = builtin("ou", &params(&[("kappa", 1.0), ("d", 1.0)])).unwrap();
        let plan = SamplePlan::unit_box(1, 300, 11);
        let r = validate_diffusion(&m, &plan);
        assert!(r.passed(), "{r:?}");
        let b = r.checks.iter().find(|c| c.name.contains("Lipschitz")).unwrap();
        assert!(b.worst <= 1.0 + 1e-9 && b.worst > 0.5, "empirical B = {}", b.worst);
    }

    #[test]
    fn quadratic_drift_fails_linear_growth() {
        let meta = RegularityMeta {
            lambda: 1.0,
            a_const: 0.0,
            b_const: 1.0,
            k_const: 0.0,
            gamma: 1.0,
            alpha: 1.0,
            beta: 1.0,
        };
        let model = DiffusionModel {
            dim: 1,
            drift: Arc::new(|_t, x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0]])),
            diffusion: Arc::new(|_t, x: &DVector<f64>| DMatrix::identity(x.len(), x.len())),
            regularity: meta,
        };
        let plan = SamplePlan::unit_box(1, 400, 3);
        let r = validate_diffusion(&model, &plan);
        assert!(!r.passed());
        let growth = r.checks.iter().find(|c| c.name.contains("linear growth")).unwrap();
        let lip = r.checks.iter().find(|c| c.name.contains("Lipschitz")).unwrap();
        assert!(!growth.passed || !lip.passed);
    }

    #[test]
    fn non_finite_coefficient_reported_not_crashed() {
        let meta = RegularityMeta {
            lambda: 1.0,
            a_const: 0.0,
            b_const: 0.0,
            k_const: 0.0,
            gamma: 1.0,
            alpha: 1.0,
            beta: 1.0,
        };
        let model = DiffusionModel {
            dim: 1,
            drift: Arc::new(|_t, x: &DVector<f64>| DVector::from_vec(vec![1.0 / (x[0] - x[0])])),
            diffusion: Arc::new(|_t, x: &DVector<f64>| DMatrix::identity(x.len(), x.len())),
            regularity: meta,
        };
        let plan = SamplePlan::unit_box(1, 10, 3);
        let r = validate_diffusion(&model, &plan);
        assert!(!r.passed());
        assert!(r.checks.iter().any(|c| c.name.contains("finite")));
    }

    #[test]
    fn holder_drift_diffusion_stays_elliptic() {
        let (m, _) = builtin("holder_drift", &params(&[("gamma", 0.5)])).unwrap();
        let plan = SamplePlan::unit_box(1, 1000, 17);
        let r = validate_diffusion(&m, &plan);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn perturbed_pair_realizes_requested_offsets() {
        let (m, c) = builtin(
            "perturbed_pair",
            &params(&[("delta_b", 0.1), ("delta_a", 0.05)]),
        )
        .unwrap();
        let plan = SamplePlan::unit_box(1, 10_000, 5);
        let (db, da) = measure_pair_discrepancy(&m, &c, &plan);
        assert_relative_eq!(db, 0.1, max_relative = 0.05);
        assert_relative_eq!(da, 0.05, max_relative = 0.05);
    }

    #[test]
    fn unknown_builtin_rejected() {
        assert!(matches!(
            builtin("nope", &BTreeMap::new()),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn student_tail_exponent_floor_enforced() {
        assert!(InnovationFamily::student(1, 7.9).is_err());
        assert!(InnovationFamily::student(1, 10.0).is_ok());
    }

    #[test]
    fn student_innovations_have_matching_covariance() {
        let fam = InnovationFamily::student(1, 10.0).unwrap();
        let cov = DMatrix::from_row_slice(1, 1, &[1.3]);
        // quadrature of the density second moment
        let m = 40001;
        let radius = 200.0;
        let h = 2.0 * radius / (m - 1) as f64;
        let mut mass = 0.0;
        let mut second = 0.0;
        for k in 0..m {
            let z = DVector::from_vec(vec![-radius + k as f64 * h]);
            let w = if k == 0 || k == m - 1 { 0.5 * h } else { h };
            let q = fam.density(&cov, &z).unwrap();
            mass += w * q;
            second += w * q * z[0] * z[0];
        }
        assert_relative_eq!(mass, 1.0, epsilon = 1e-5);
        assert_relative_eq!(second, 1.3, max_relative = 1e-3);
    }

    #[test]
    fn student_sampler_matches_density_moments() {
        let fam = InnovationFamily::student(1, 10.0).unwrap();
        let cov = DMatrix::identity(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z = fam.sample(&cov, &mut rng).unwrap()[0];
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert_relative_eq!(var, 1.0, max_relative = 0.03);
    }
}
