//! Centralized fitting of [`GmmParams`]: MAP estimation under a Dirichlet prior
//! on the weights and Normal–Wishart priors on each component's mean and
//! precision, plus plain maximum-likelihood EM as the baseline.
//!
//! Both fits alternate an E-step that computes per-component sufficient
//! statistics with an M-step that maps statistics to parameters. The MAP
//! M-step returns the posterior mode, so the log-posterior never decreases;
//! the EM M-step returns the likelihood maximiser, so the log-likelihood never
//! decreases. Both properties are checked at every iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{GmmParams, DIM};
use crate::json::{vec17, Sig17};
use crate::linalg::{self, Mat2, Vec2};

const D: f64 = DIM as f64;

/// Relative slack allowed on the log-objective between iterations.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// Components whose soft count falls to this fraction of the data are degenerate.
pub const DEGENERATE_FRACTION: f64 = 1e-8;
/// Relative size of the covariance eigenvalue floor.
pub const COV_FLOOR_FRACTION: f64 = 1e-8;
/// Absolute floor for the prior scale matrix on constant data.
pub const MIN_PRIOR_SCALE: f64 = 1e-6;

/// Prior hyperparameters of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentPrior {
    /// Dirichlet pseudo-count `v_j > 0`.
    pub dirichlet_count: f64,
    /// Prior mean `λ_j` (MW).
    pub prior_mean: [f64; 2],
    /// Strength `τ_j ≥ 0` of the prior mean.
    pub mean_strength: f64,
    /// Wishart degrees of freedom `α_j > d − 1`.
    pub wishart_dof: f64,
    /// Wishart scale matrix `σ_j` (MW²), row-major.
    pub wishart_scale: [[f64; 2]; 2],
}

impl ComponentPrior {
    pub fn lambda(&self) -> Vec2 {
        Vec2::new(self.prior_mean[0], self.prior_mean[1])
    }

    pub fn sigma(&self) -> Mat2 {
        let s = &self.wishart_scale;
        Mat2::new(s[0][0], s[0][1], s[1][0], s[1][1])
    }

    fn validate(&self, j: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidHyperparams(format!("component {j}: {what}")));
        if !(self.dirichlet_count > 0.0 && self.dirichlet_count.is_finite()) {
            return bad("Dirichlet count must be positive");
        }
        if !(self.mean_strength >= 0.0 && self.mean_strength.is_finite()) {
            return bad("mean strength must be non-negative");
        }
        if !(self.wishart_dof > D - 1.0 && self.wishart_dof.is_finite()) {
            return bad("Wishart degrees of freedom must exceed d - 1");
        }
        if !self.prior_mean.iter().all(|v| v.is_finite()) {
            return bad("prior mean must be finite");
        }
        let s = self.sigma();
        if !s.iter().all(|v| v.is_finite())
            || !linalg::is_symmetric(&s, 1e-12)
            || linalg::min_eigenvalue(&s) <= 0.0
        {
            return bad("Wishart scale must be symmetric positive definite");
        }
        Ok(())
    }
}

/// Per-component priors; serialized as a TOML array of tables `[[component]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    #[serde(rename = "component")]
    components: Vec<ComponentPrior>,
}

impl Hyperparams {
    pub fn new(components: Vec<ComponentPrior>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidHyperparams("no components".into()));
        }
        for (j, c) in components.iter().enumerate() {
            c.validate(j)?;
        }
        Ok(Hyperparams { components })
    }

    /// The same prior for every one of `j` components.
    pub fn uniform(prior: ComponentPrior, j: usize) -> Result<Self> {
        Self::new(vec![prior; j])
    }

    pub fn components(&self) -> &[ComponentPrior] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn without(&self, removed: &[usize]) -> Self {
        Hyperparams {
            components: keep_except(&self.components, removed),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("hyperparameters serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: Hyperparams = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(raw.components)
    }

    /// `ln π(φ)` up to its normalizing constant.
    pub fn ln_prior(&self, params: &GmmParams) -> f64 {
        let precisions = params.precisions();
        self.components
            .iter()
            .zip(params.weights())
            .zip(params.means())
            .zip(&precisions)
            .map(|(((h, &w), mu), rho)| {
                let dm = mu - h.lambda();
                let quad = (dm.transpose() * rho * dm)[(0, 0)];
                (h.dirichlet_count - 1.0) * w.ln()
                    + 0.5 * (h.wishart_dof - D) * rho.determinant().ln()
                    - 0.5 * h.mean_strength * quad
                    - 0.5 * (h.sigma() * rho).trace()
            })
            .sum()
    }
}

/// Overrides for [`default_hyperparams`]; unset fields keep the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub dirichlet_count: Option<f64>,
    pub mean_strength: Option<f64>,
    pub wishart_dof: Option<f64>,
    /// Multiplier applied to the default Wishart scale.
    pub scale_factor: Option<f64>,
}

/// Data-driven default priors.
///
/// `v = 1.01`, `λ` = data mean, `τ = 0.01`, `α = d + 2` and
/// `σ = tr(cov) / (2 J^{2/d}) · I`, floored at `1e-6 · I`.
pub fn default_hyperparams(data: &[Vec2], j: usize) -> Result<Hyperparams> {
    default_hyperparams_with(data, j, &HyperOverrides::default())
}

pub fn default_hyperparams_with(
    data: &[Vec2],
    j: usize,
    overrides: &HyperOverrides,
) -> Result<Hyperparams> {
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "default hyperparameters need at least 2 points, got {}",
            data.len()
        )));
    }
    if j == 0 {
        return Err(Error::InvalidConfig(
            "component count must be positive".into(),
        ));
    }
    let (mean, cov) = mean_and_covariance(data);
    let scale = (cov.trace() / (2.0 * (j as f64).powf(2.0 / D))).max(MIN_PRIOR_SCALE)
        * overrides.scale_factor.unwrap_or(1.0);
    let prior = ComponentPrior {
        dirichlet_count: overrides.dirichlet_count.unwrap_or(1.01),
        prior_mean: [mean[0], mean[1]],
        mean_strength: overrides.mean_strength.unwrap_or(0.01),
        wishart_dof: overrides.wishart_dof.unwrap_or(D + 2.0),
        wishart_scale: [[scale, 0.0], [0.0, scale]],
    };
    Hyperparams::uniform(prior, j)
}

/// Mean and biased (divide-by-N) covariance of a point set.
pub fn mean_and_covariance(data: &[Vec2]) -> (Vec2, Mat2) {
    let n = data.len() as f64;
    let mean = data.iter().fold(Vec2::zeros(), |acc, z| acc + z) / n;
    let cov = data.iter().fold(Mat2::zeros(), |acc, z| {
        acc + linalg::outer(&(z - mean), &(z - mean))
    }) / n;
    (mean, linalg::symmetrize(&cov))
}

/// Covariance floor `ε = 1e-8 · tr(cov) / d` used after every M-step.
pub fn covariance_floor(cov: &Mat2) -> f64 {
    (COV_FLOOR_FRACTION * cov.trace() / D).max(f64::MIN_POSITIVE)
}

/// Per-component statistics of a data set under fixed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Row-major `N × J` posterior component probabilities; empty when the
    /// statistics were reconstructed from network sums.
    pub responsibilities: Vec<f64>,
    /// Soft counts `C_j`.
    pub counts: Vec<f64>,
    /// Weighted means `χ_j`.
    pub means: Vec<Vec2>,
    /// Scatter matrices `ψ_j = Σ_i C_{j,i} (z_i − χ_j)(z_i − χ_j)ᵀ`.
    pub scatters: Vec<Mat2>,
    /// Number of points the statistics summarize.
    pub n_points: f64,
    /// `Σ_i ln f(z_i | θ)` under the parameters used for the E-step.
    pub log_likelihood: f64,
}

impl SufficientStats {
    pub fn n_components(&self) -> usize {
        self.counts.len()
    }

    pub fn responsibility(&self, i: usize, j: usize) -> f64 {
        self.responsibilities[i * self.n_components() + j]
    }

    /// Indices of components whose count is at most `DEGENERATE_FRACTION · N`.
    pub fn degenerate_components(&self) -> Vec<usize> {
        let limit = DEGENERATE_FRACTION * self.n_points;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c <= limit)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn without(&self, removed: &[usize]) -> Self {
        let j = self.n_components();
        let responsibilities = if self.responsibilities.is_empty() {
            Vec::new()
        } else {
            self.responsibilities
                .chunks(j)
                .flat_map(|row| keep_except(row, removed))
                .collect()
        };
        SufficientStats {
            responsibilities,
            counts: keep_except(&self.counts, removed),
            means: keep_except(&self.means, removed),
            scatters: keep_except(&self.scatters, removed),
            n_points: self.n_points,
            log_likelihood: self.log_likelihood,
        }
    }
}

fn keep_except<T: Clone>(items: &[T], removed: &[usize]) -> Vec<T> {
    items
        .iter()
        .enumerate()
        .filter(|(k, _)| !removed.contains(k))
        .map(|(_, v)| v.clone())
        .collect()
}

/// Posterior component probabilities of every point, row-major `N × J`, and
/// the total log-likelihood.
pub(crate) fn responsibilities(data: &[Vec2], params: &GmmParams) -> Result<(Vec<f64>, f64)> {
    let j = params.n_components();
    let dens = params.densities();
    let mut out = vec![0.0; data.len() * j];
    let mut total = 0.0;
    for (i, (z, row)) in data.iter().zip(out.chunks_mut(j)).enumerate() {
        dens.ln_joint_terms(z, row);
        let lse = linalg::log_sum_exp(row);
        if !lse.is_finite() {
            return Err(Error::ZeroLikelihood { index: i });
        }
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
        total += lse;
    }
    Ok((out, total))
}

/// E-step: responsibilities and per-component count, weighted mean and scatter.
pub fn e_step_statistics(data: &[Vec2], params: &GmmParams) -> Result<SufficientStats> {
    if data.is_empty() {
        return Err(Error::InsufficientData(
            "E-step needs at least one point".into(),
        ));
    }
    let j = params.n_components();
    let (resp, log_likelihood) = responsibilities(data, params)?;
    let mut counts = vec![0.0; j];
    let mut sums = vec![Vec2::zeros(); j];
    for (z, row) in data.iter().zip(resp.chunks(j)) {
        for k in 0..j {
            counts[k] += row[k];
            sums[k] += row[k] * z;
        }
    }
    let means: Vec<Vec2> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0.0 { s / c } else { Vec2::zeros() })
        .collect();
    let mut scatters = vec![Mat2::zeros(); j];
    for (z, row) in data.iter().zip(resp.chunks(j)) {
        for k in 0..j {
            let d = z - means[k];
            scatters[k] += row[k] * linalg::outer(&d, &d);
        }
    }
    Ok(SufficientStats {
        responsibilities: resp,
        counts,
        means,
        scatters: scatters.iter().map(linalg::symmetrize).collect(),
        n_points: data.len() as f64,
        log_likelihood,
    })
}

/// M-step of MAP estimation: the joint posterior mode of weights, means and
/// precisions given the statistics and priors.
///
/// `cov_floor` bounds every covariance eigenvalue from below.
pub fn m_step_map(
    stats: &SufficientStats,
    hyper: &Hyperparams,
    cov_floor: f64,
) -> Result<GmmParams> {
    let j = stats.n_components();
    if hyper.n_components() != j {
        return Err(Error::InvalidHyperparams(format!(
            "{} priors for {} components",
            hyper.n_components(),
            j
        )));
    }
    let mut weight_mass = Vec::with_capacity(j);
    let mut means = Vec::with_capacity(j);
    let mut covariances = Vec::with_capacity(j);
    for (k, h) in hyper.components().iter().enumerate() {
        let c = stats.counts[k];
        let chi = stats.means[k];
        let mass = h.dirichlet_count + c - 1.0;
        if !(mass > 0.0) {
            return Err(Error::InvalidPosterior {
                component: k,
                dof: mass,
            });
        }
        weight_mass.push(mass);
        let tau = h.mean_strength;
        let lambda = h.lambda();
        let mean = (tau * lambda + c * chi) / (tau + c);
        let dof = h.wishart_dof + c - D;
        if !(dof > 0.0) {
            return Err(Error::InvalidPosterior { component: k, dof });
        }
        let dl = lambda - chi;
        let shrink = if tau + c > 0.0 {
            tau * c / (tau + c)
        } else {
            0.0
        };
        let b =
            linalg::symmetrize(&(h.sigma() + stats.scatters[k] + shrink * linalg::outer(&dl, &dl)));
        if !(linalg::min_eigenvalue(&b) > 0.0) {
            return Err(Error::Degenerate(format!(
                "posterior scale of component {k} is not positive definite"
            )));
        }
        // ρ = dof · B⁻¹, so Σ = B / dof.
        let cov = b / dof;
        covariances.push(floor_covariance(&cov, cov_floor));
        means.push(mean);
    }
    let total: f64 = weight_mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidPosterior {
            component: 0,
            dof: total,
        });
    }
    let weights = normalize(weight_mass.iter().map(|m| m / total).collect());
    GmmParams::new(weights, means, covariances).map_err(|e| Error::Degenerate(e.to_string()))
}

/// Maximum-likelihood M-step.
pub fn m_step_em(stats: &SufficientStats, cov_floor: f64) -> Result<GmmParams> {
    let mut means = Vec::new();
    let mut covariances = Vec::new();
    for k in 0..stats.n_components() {
        let c = stats.counts[k];
        if !(c > 0.0) {
            return Err(Error::Degenerate(format!("component {k} has no mass")));
        }
        means.push(stats.means[k]);
        covariances.push(floor_covariance(&(stats.scatters[k] / c), cov_floor));
    }
    let total: f64 = stats.counts.iter().sum();
    let weights = normalize(stats.counts.iter().map(|c| c / total).collect());
    GmmParams::new(weights, means, covariances).map_err(|e| Error::Degenerate(e.to_string()))
}

fn floor_covariance(cov: &Mat2, floor: f64) -> Mat2 {
    let sym = linalg::symmetrize(cov);
    if linalg::min_eigenvalue(&sym) < floor {
        linalg::clamp_eigenvalues(&sym, floor)
    } else {
        sym
    }
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// What to do with a component whose soft count collapses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegeneratePolicy {
    /// Drop the component and renormalize the rest.
    #[default]
    Prune,
    /// Abort the fit.
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Stop when the relative change of the log-objective falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Covariance eigenvalue floor; derived from the data when unset.
    pub cov_floor: Option<f64>,
    pub degenerate: DegeneratePolicy,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-6,
            max_iter: 500,
            cov_floor: None,
            degenerate: DegeneratePolicy::Prune,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig(format!(
                "fit tolerance must be >= 0 and max_iter > 0 (got {}, {})",
                self.tol, self.max_iter
            )));
        }
        if let Some(f) = self.cov_floor {
            if !(f > 0.0) {
                return Err(Error::InvalidConfig(
                    "covariance floor must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Relative change used as the convergence test of every fit.
pub fn relative_change(previous: f64, current: f64) -> f64 {
    (current - previous).abs() / previous.abs().max(f64::MIN_POSITIVE)
}

pub(crate) fn is_decrease(previous: f64, current: f64) -> bool {
    current < previous - MONOTONE_SLACK * previous.abs().max(1.0)
}

/// Outcome of an iterative fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: GmmParams,
    /// Number of M-steps applied.
    pub iterations: usize,
    /// Log-objective of the parameters entering each E-step, the last entry
    /// belonging to `params`.
    pub log_posterior_trace: Vec<f64>,
    pub converged: bool,
    /// Original indices of components removed as degenerate.
    pub pruned: Vec<usize>,
}

#[derive(Serialize)]
struct FitReportJson<'a> {
    params: &'a GmmParams,
    iterations: usize,
    converged: bool,
    pruned: &'a [usize],
    log_posterior_trace: Vec<Sig17>,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&FitReportJson {
            params: &self.params,
            iterations: self.iterations,
            converged: self.converged,
            pruned: &self.pruned,
            log_posterior_trace: vec17(&self.log_posterior_trace),
        })
        .expect("report serializes")
    }

    pub fn final_log_posterior(&self) -> f64 {
        *self
            .log_posterior_trace
            .last()
            .expect("trace is never empty")
    }
}

/// Bookkeeping shared by the centralized fits and each distributed node.
#[derive(Debug, Clone)]
pub(crate) struct FitTracker {
    pub trace: Vec<f64>,
    pub pruned_any: Vec<bool>,
    /// Positions (in the current component list) mapped to original indices.
    pub alive: Vec<usize>,
    pub pruned: Vec<usize>,
    pub converged: bool,
}

impl FitTracker {
    pub fn new(j: usize) -> Self {
        FitTracker {
            trace: Vec::new(),
            pruned_any: Vec::new(),
            alive: (0..j).collect(),
            pruned: Vec::new(),
            converged: false,
        }
    }

    /// Records the objective of the current parameters; returns whether the
    /// relative change against the previous entry is below `tol`.
    pub fn record(&mut self, value: f64, tol: f64, check_monotone: bool) -> Result<bool> {
        let after_prune = self.pruned_any.last().copied().unwrap_or(false);
        if let Some(&prev) = self.trace.last() {
            if check_monotone && !after_prune && is_decrease(prev, value) {
                return Err(Error::NonMonotone {
                    iteration: self.trace.len(),
                    previous: prev,
                    current: value,
                });
            }
        }
        let done = match self.trace.last() {
            Some(&prev) if !after_prune => relative_change(prev, value) < tol,
            _ => false,
        };
        self.trace.push(value);
        Ok(done)
    }

    /// Applies the degeneracy policy; returns positions removed this step.
    pub fn prune(
        &mut self,
        stats: &SufficientStats,
        policy: DegeneratePolicy,
    ) -> Result<Vec<usize>> {
        self.remove(stats.degenerate_components(), stats.n_components(), policy)
    }

    /// Removes the given positions out of `n_components` under `policy`.
    pub fn remove(
        &mut self,
        removed: Vec<usize>,
        n_components: usize,
        policy: DegeneratePolicy,
    ) -> Result<Vec<usize>> {
        if removed.is_empty() {
            self.pruned_any.push(false);
            return Ok(removed);
        }
        match policy {
            DegeneratePolicy::Error => Err(Error::Degenerate(format!(
                "components {:?} collapsed (soft count <= {:e} of the data)",
                removed.iter().map(|&k| self.alive[k]).collect::<Vec<_>>(),
                DEGENERATE_FRACTION
            ))),
            DegeneratePolicy::Prune => {
                if removed.len() == n_components {
                    return Err(Error::Degenerate("every component collapsed".into()));
                }
                for &k in &removed {
                    self.pruned.push(self.alive[k]);
                }
                self.alive = keep_except(&self.alive, &removed);
                self.pruned_any.push(true);
                Ok(removed)
            }
        }
    }
}

/// Iterative MAP fit.
pub fn fit_map(
    data: &[Vec2],
    hyper: &Hyperparams,
    init: &GmmParams,
    config: &FitConfig,
) -> Result<FitReport> {
    if hyper.n_components() != init.n_components() {
        return Err(Error::InvalidHyperparams(format!(
            "{} priors for {} initial components",
            hyper.n_components(),
            init.n_components()
        )));
    }
    run_fit(data, init, config, Some(hyper.clone()))
}

/// Iterative maximum-likelihood EM fit.
pub fn fit_em(data: &[Vec2], init: &GmmParams, config: &FitConfig) -> Result<FitReport> {
    run_fit(data, init, config, None)
}

/// Shared loop; `hyper` selects MAP (`Some`) or maximum likelihood (`None`).
fn run_fit(
    data: &[Vec2],
    init: &GmmParams,
    config: &FitConfig,
    mut hyper: Option<Hyperparams>,
) -> Result<FitReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData(
            "fit needs at least one point".into(),
        ));
    }
    let floor = config
        .cov_floor
        .unwrap_or_else(|| covariance_floor(&mean_and_covariance(data).1));
    let mut params = init.clone();
    let mut tracker = FitTracker::new(init.n_components());
    let mut iterations = 0;
    loop {
        let stats = e_step_statistics(data, &params)?;
        let objective = match &hyper {
            Some(h) => stats.log_likelihood + h.ln_prior(&params),
            None => stats.log_likelihood,
        };
        if tracker.record(objective, config.tol, true)? {
            tracker.converged = true;
            break;
        }
        if iterations == config.max_iter {
            break;
        }
        let removed = tracker.prune(&stats, config.degenerate)?;
        let stats = if removed.is_empty() {
            stats
        } else {
            stats.without(&removed)
        };
        params = match &mut hyper {
            Some(h) => {
                if !removed.is_empty() {
                    *h = h.without(&removed);
                }
                m_step_map(&stats, h, floor)?
            }
            None => m_step_em(&stats, floor)?,
        };
        iterations += 1;
    }
    Ok(FitReport {
        params,
        iterations,
        log_posterior_trace: tracker.trace,
        converged: tracker.converged,
        pruned: tracker.pruned,
    })
}

/// k-means++-style initial parameters: means seeded from data points with
/// probability proportional to squared distance, uniform weights, and every
/// covariance equal to the data covariance.
pub fn init_params(data: &[Vec2], j: usize, seed: u64) -> Result<GmmParams> {
    if j == 0 {
        return Err(Error::InvalidConfig(
            "component count must be positive".into(),
        ));
    }
    if data.len() < j {
        return Err(Error::InsufficientData(format!(
            "{} points cannot seed {} components",
            data.len(),
            j
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..data.len())];
    let mut d2: Vec<f64> = data
        .iter()
        .map(|z| (z - data[chosen[0]]).norm_squared())
        .collect();
    while chosen.len() < j {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // Every remaining point coincides with a chosen mean.
            let free: Vec<usize> = (0..data.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, z) in d2.iter_mut().zip(data) {
            *d = d.min((z - data[next]).norm_squared());
        }
        d2[next] = 0.0;
    }
    let (_, cov) = mean_and_covariance(data);
    let cov = floor_covariance(&cov, covariance_floor(&cov).max(MIN_PRIOR_SCALE));
    GmmParams::new(
        vec![1.0 / j as f64; j],
        chosen.iter().map(|&i| data[i]).collect(),
        vec![cov; j],
    )
}

/// Greedy component matching by mean distance: entry `k` of the result is the
/// index in `other` paired with component `k` of `reference`.
pub fn align_components(reference: &GmmParams, other: &GmmParams) -> Result<Vec<usize>> {
    let j = reference.n_components();
    if other.n_components() != j {
        return Err(Error::InvalidParams(format!(
            "cannot align {} components with {}",
            j,
            other.n_components()
        )));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(j * j);
    for (a, ma) in reference.means().iter().enumerate() {
        for (b, mb) in other.means().iter().enumerate() {
            pairs.push(((ma - mb).norm(), a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut order = vec![usize::MAX; j];
    let mut used = vec![false; j];
    for (_, a, b) in pairs {
        if order[a] == usize::MAX && !used[b] {
            order[a] = b;
            used[b] = true;
        }
    }
    Ok(order)
}

/// Largest absolute difference over weights, means and covariances after
/// aligning `other` to `reference`.
pub fn aligned_max_difference(reference: &GmmParams, other: &GmmParams) -> Result<f64> {
    let order = align_components(reference, other)?;
    let o = other.permuted(&order);
    let mut worst: f64 = 0.0;
    for k in 0..reference.n_components() {
        worst = worst.max((reference.weights()[k] - o.weights()[k]).abs());
        worst = worst.max((reference.means()[k] - o.means()[k]).abs().max());
        worst = worst.max(
            (reference.covariances()[k] - o.covariances()[k])
                .abs()
                .max(),
        );
    }
    Ok(worst)
}
