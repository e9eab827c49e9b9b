//! Synthetic wind-farm scenarios with exactly known aggregated distributions.

use chrono::{DateTime, Duration, Utc};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::io::data::WindSeries;
use crate::linalg::{Mat2, Vec2};

/// Upper bound on the component count of a convolved truth.
pub const MAX_CONVOLVED_COMPONENTS: usize = 1 << 20;

/// Generated series, how many values were clamped to zero, and the exact
/// distribution of the hourly farm sum before clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub series: Vec<WindSeries>,
    pub clamped: usize,
    pub aggregated_truth: GmmParams,
}

fn hourly_timestamps(n: usize) -> Vec<String> {
    let start: DateTime<Utc> = DateTime::from_timestamp(1_735_689_600, 0).expect("valid epoch");
    (0..n)
        .map(|h| {
            (start + Duration::hours(h as i64))
                .format("%Y-%m-%dT%H:%M:%SZ")
                .to_string()
        })
        .collect()
}

fn clamp_series(samples: Vec<Vec<Vec2>>, capacities: &[Option<f64>]) -> (Vec<WindSeries>, usize) {
    let n = samples.first().map_or(0, Vec::len);
    let stamps = hourly_timestamps(n);
    let mut clamped = 0;
    let series = samples
        .into_iter()
        .enumerate()
        .map(|(m, mut obs)| {
            for v in obs.iter_mut().flat_map(|o| o.iter_mut()) {
                if *v < 0.0 {
                    *v = 0.0;
                    clamped += 1;
                }
            }
            WindSeries {
                farm_id: m + 1,
                timestamps: stamps.clone(),
                observations: obs,
                capacity_mw: capacities.get(m).copied().flatten(),
            }
        })
        .collect();
    (series, clamped)
}

/// Independent farms, each drawn from its own mixture.
pub fn generate_synthetic(truth: &[GmmParams], n: usize, seed: u64) -> Result<SyntheticData> {
    if truth.is_empty() {
        return Err(Error::InvalidConfig("no farms".into()));
    }
    let aggregated_truth = convolve(truth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = truth.iter().map(|t| t.sample_with(n, &mut rng)).collect();
    let (series, clamped) = clamp_series(samples, &[]);
    Ok(SyntheticData {
        series,
        clamped,
        aggregated_truth,
    })
}

/// Distribution of the sum of independent mixtures: every combination of
/// components, with multiplied weights and summed means and covariances.
pub fn convolve(parts: &[GmmParams]) -> Result<GmmParams> {
    let count = parts
        .iter()
        .try_fold(1usize, |acc, p| acc.checked_mul(p.n_components()))
        .filter(|&c| c <= MAX_CONVOLVED_COMPONENTS)
        .ok_or_else(|| Error::InvalidConfig("convolved mixture would be too large".into()))?;
    let mut weights = vec![1.0];
    let mut means = vec![Vec2::zeros()];
    let mut covs = vec![Mat2::zeros()];
    for p in parts {
        let mut w2 = Vec::with_capacity(count);
        let mut m2 = Vec::with_capacity(count);
        let mut c2 = Vec::with_capacity(count);
        for k in 0..weights.len() {
            for j in 0..p.n_components() {
                w2.push(weights[k] * p.weights()[j]);
                m2.push(means[k] + p.means()[j]);
                c2.push(covs[k] + p.covariances()[j]);
            }
        }
        (weights, means, covs) = (w2, m2, c2);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmParams::new(weights, means, covs)
}

/// One farm's behaviour under each shared weather regime.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmRegimes {
    pub capacity_mw: f64,
    pub means: Vec<Vec2>,
    pub covariances: Vec<Mat2>,
}

/// Farms driven by a common weather regime drawn each hour.
///
/// Within regime `k` farm `m` is Gaussian with mean `μ_mk` and covariance
/// `S_mk = L_mk L_mkᵀ`; a shared standard normal draw `g` and a private one
/// `e_m` combine as `μ_mk + L_mk (√r g + √(1−r) e_m)`, so farms `m ≠ n`
/// covary by `r L_mk L_nkᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeScenario {
    pub weights: Vec<f64>,
    pub farms: Vec<FarmRegimes>,
    /// Cross-farm coupling `r` in `[0, 1]`.
    pub coupling: f64,
}

impl RegimeScenario {
    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if self.farms.is_empty() || k == 0 {
            return Err(Error::InvalidConfig(
                "scenario needs farms and regimes".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::InvalidConfig(format!(
                "coupling {} outside [0, 1]",
                self.coupling
            )));
        }
        for (m, f) in self.farms.iter().enumerate() {
            if f.means.len() != k || f.covariances.len() != k {
                return Err(Error::InvalidConfig(format!(
                    "farm {} does not cover {k} regimes",
                    m + 1
                )));
            }
            GmmParams::new(self.weights.clone(), f.means.clone(), f.covariances.clone())?;
        }
        Ok(())
    }

    pub fn n_farms(&self) -> usize {
        self.farms.len()
    }

    /// Marginal mixture of one farm.
    pub fn farm_truth(&self, m: usize) -> Result<GmmParams> {
        let f = &self.farms[m];
        GmmParams::new(self.weights.clone(), f.means.clone(), f.covariances.clone())
    }

    fn cholesky(&self) -> Result<Vec<Vec<Mat2>>> {
        self.farms
            .iter()
            .map(|f| {
                f.covariances
                    .iter()
                    .map(|c| {
                        c.cholesky().map(|ch| ch.l()).ok_or_else(|| {
                            Error::InvalidParams("regime covariance not positive definite".into())
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Exact distribution of the hourly farm sum.
    pub fn aggregated_truth(&self) -> Result<GmmParams> {
        self.validate()?;
        let chol = self.cholesky()?;
        let r = self.coupling;
        let k = self.weights.len();
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for j in 0..k {
            let mean: Vec2 = self.farms.iter().map(|f| f.means[j]).sum();
            let own: Mat2 = self.farms.iter().map(|f| f.covariances[j]).sum();
            let l: Mat2 = chol.iter().map(|c| c[j]).sum();
            means.push(mean);
            covs.push(own * (1.0 - r) + l * l.transpose() * r);
        }
        GmmParams::new(self.weights.clone(), means, covs)
    }

    /// `n` hours of every farm, clamped at zero.
    pub fn generate(&self, n: usize, seed: u64) -> Result<SyntheticData> {
        let aggregated_truth = self.aggregated_truth()?;
        let chol = self.cholesky()?;
        let pick =
            WeightedIndex::new(&self.weights).map_err(|e| Error::InvalidParams(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (self.coupling.sqrt(), (1.0 - self.coupling).sqrt());
        let mut samples = vec![Vec::with_capacity(n); self.n_farms()];
        let normal2 = |rng: &mut ChaCha8Rng| {
            Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        };
        for _ in 0..n {
            let k = pick.sample(&mut rng);
            let g = normal2(&mut rng);
            for (m, f) in self.farms.iter().enumerate() {
                let e = normal2(&mut rng);
                samples[m].push(f.means[k] + chol[m][k] * (g * a + e * b));
            }
        }
        let caps: Vec<Option<f64>> = self.farms.iter().map(|f| Some(f.capacity_mw)).collect();
        let (series, clamped) = clamp_series(samples, &caps);
        Ok(SyntheticData {
            series,
            clamped,
            aggregated_truth,
        })
    }
}

/// Farm sites of the bundled scenario, in km.
pub const BUNDLED_COORDINATES: [[f64; 2]; 10] = [
    [0.0, 0.0],
    [3.0, 0.6],
    [6.3, 0.2],
    [1.0, 3.3],
    [4.0, 3.4],
    [7.6, 3.1],
    [0.3, 6.9],
    [3.3, 6.5],
    [6.1, 6.6],
    [9.6, 6.2],
];

pub const BUNDLED_THRESHOLD_KM: f64 = 4.0;

const BUNDLED_CAPACITY_MW: [f64; 10] = [0.55, 0.75, 0.45, 0.65, 0.35, 0.6, 0.5, 0.75, 0.45, 0.5];

/// Per-site exposure: a windier site produces a larger share of capacity.
const BUNDLED_EXPOSURE: [f64; 10] = [1.0, 0.95, 1.05, 0.9, 1.1, 1.0, 0.92, 1.04, 0.97, 1.08];

/// Regime weights, output level as a share of capacity, and spread.
const BUNDLED_REGIMES: [(f64, f64, f64); 5] = [
    (0.30, 0.10, 0.035),
    (0.25, 0.28, 0.06),
    (0.20, 0.46, 0.07),
    (0.15, 0.64, 0.07),
    (0.10, 0.82, 0.05),
];

/// Correlation of a farm's actual and forecast output inside a regime.
const BUNDLED_FORECAST_CORRELATION: f64 = 0.75;

/// Multiplier on the default Wishart scale used with the bundled scenario.
pub const BUNDLED_PRIOR_SCALE: f64 = 3.0;

/// Ten nearby farms sharing five weather regimes.
pub fn bundled_scenario() -> RegimeScenario {
    let rho = BUNDLED_FORECAST_CORRELATION;
    let farms = BUNDLED_CAPACITY_MW
        .iter()
        .zip(BUNDLED_EXPOSURE)
        .map(|(&cap, x)| {
            let (means, covariances) = BUNDLED_REGIMES
                .iter()
                .map(|&(_, level, spread)| {
                    let awo = level * x * cap;
                    // Forecasts lean towards the middle of the range.
                    let fwo = awo + 0.05 * (0.45 - level) * cap;
                    let v = (spread * cap).powi(2);
                    (Vec2::new(awo, fwo), Mat2::new(v, rho * v, rho * v, v))
                })
                .unzip();
            FarmRegimes {
                capacity_mw: cap,
                means,
                covariances,
            }
        })
        .collect();
    RegimeScenario {
        weights: BUNDLED_REGIMES.iter().map(|r| r.0).collect(),
        farms,
        coupling: 0.7,
    }
}
