//! Bivariate Gaussian mixtures over (aggregated actual output, aggregated
//! forecast output), with their marginals and the conditional density of the
//! forecast error given a forecast value.
//!
//! Densities are evaluated in log space and exponentiated at the end so that
//! points far from every component do not underflow prematurely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::json::{vec17, Sig17};
use crate::linalg::{self, Gaussian2, Mat2, Vec2};

/// Dimension of the joint variable (AWO, FWO).
pub const DIM: usize = 2;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
/// Below this mixture likelihood a forecast value is treated as out of support.
const MIN_CONDITIONING_LIKELIHOOD: f64 = 1e-300;

/// Which coordinate of the joint variable to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Aggregated actual output.
    Actual,
    /// Aggregated forecast output.
    Forecast,
}

impl Axis {
    /// Position of this coordinate in a `[actual, forecast]` pair.
    pub fn index(self) -> usize {
        match self {
            Axis::Actual => 0,
            Axis::Forecast => 1,
        }
    }
}

/// Parameters of a `J`-component bivariate Gaussian mixture.
///
/// Means are ordered `[actual, forecast]`; each covariance carries the blocks
/// `[[AA, AF], [FA, FF]]`. Construction validates and exactly symmetrizes the
/// covariances, so every value of this type is a usable density.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<Vec2>,
    covariances: Vec<Mat2>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec2>, covariances: Vec<Mat2>) -> Result<Self> {
        let j = weights.len();
        if j == 0 {
            return Err(Error::InvalidParams(
                "mixture needs at least one component".into(),
            ));
        }
        if means.len() != j || covariances.len() != j {
            return Err(Error::InvalidParams(format!(
                "component count mismatch: {} weights, {} means, {} covariances",
                j,
                means.len(),
                covariances.len()
            )));
        }
        for (k, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParams(format!("weight {k} is {w}")));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParams(format!(
                "weights sum to {total}, not 1"
            )));
        }
        for (k, m) in means.iter().enumerate() {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParams(format!("mean {k} is not finite")));
            }
        }
        let mut sym = Vec::with_capacity(j);
        for (k, c) in covariances.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "covariance {k} is not finite"
                )));
            }
            if !linalg::is_symmetric(c, SYMMETRY_TOL) {
                return Err(Error::InvalidParams(format!(
                    "covariance {k} is not symmetric"
                )));
            }
            let s = linalg::symmetrize(c);
            let min_eig = linalg::min_eigenvalue(&s);
            if !(min_eig > 0.0) || Gaussian2::new(Vec2::zeros(), &s).is_none() {
                return Err(Error::InvalidParams(format!(
                    "covariance {k} is not positive definite (smallest eigenvalue {min_eig:e})"
                )));
            }
            sym.push(s);
        }
        Ok(GmmParams {
            weights,
            means,
            covariances: sym,
        })
    }

    /// Builds the parameter set from the precision form `{w, μ, ρ}`.
    pub fn from_precisions(
        weights: Vec<f64>,
        means: Vec<Vec2>,
        precisions: &[Mat2],
    ) -> Result<Self> {
        let covariances = precisions
            .iter()
            .enumerate()
            .map(|(k, p)| {
                linalg::spd_inverse(&linalg::symmetrize(p)).ok_or_else(|| {
                    Error::InvalidParams(format!("precision {k} is not positive definite"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, means, covariances)
    }

    /// A single Gaussian with unit weight.
    pub fn single(mean: Vec2, covariance: Mat2) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![covariance])
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        DIM
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec2] {
        &self.means
    }

    pub fn covariances(&self) -> &[Mat2] {
        &self.covariances
    }

    /// Precision matrices `ρ_j = Σ_j⁻¹`.
    pub fn precisions(&self) -> Vec<Mat2> {
        self.covariances
            .iter()
            .map(|c| linalg::spd_inverse(c).expect("validated covariance is invertible"))
            .collect()
    }

    /// Per-component Gaussians with cached inverses, for repeated evaluation.
    pub fn densities(&self) -> MixtureDensity {
        MixtureDensity {
            ln_weights: self.weights.iter().map(|w| w.ln()).collect(),
            components: self
                .means
                .iter()
                .zip(&self.covariances)
                .map(|(m, c)| Gaussian2::new(*m, c).expect("validated covariance"))
                .collect(),
        }
    }

    pub fn ln_pdf(&self, point: &Vec2) -> f64 {
        self.densities().ln_pdf(point)
    }

    /// Joint density `Σ_j w_j N(point; μ_j, Σ_j)` in 1/MW².
    pub fn pdf(&self, point: &Vec2) -> f64 {
        self.ln_pdf(point).exp()
    }

    pub fn marginal(&self, axis: Axis) -> Gmm1D {
        let i = axis.index();
        Gmm1D {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m[i]).collect(),
            variances: self.covariances.iter().map(|c| c[(i, i)]).collect(),
        }
    }

    /// Conditional mixture of the actual output given a forecast value `z_f`.
    pub fn condition_on_forecast(&self, z_f: f64) -> Result<ConditionalGmm> {
        if !z_f.is_finite() {
            return Err(Error::InvalidParams(format!(
                "forecast value {z_f} is not finite"
            )));
        }
        let ln_w: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.covariances)
            .map(|((w, m), c)| w.ln() + linalg::ln_normal_1d(z_f, m[1], c[(1, 1)]))
            .collect();
        let ln_total = linalg::log_sum_exp(&ln_w);
        if !(ln_total >= MIN_CONDITIONING_LIKELIHOOD.ln()) {
            return Err(Error::OutOfSupport { z_f });
        }
        let mut weights = Vec::with_capacity(ln_w.len());
        let mut means = Vec::with_capacity(ln_w.len());
        let mut variances = Vec::with_capacity(ln_w.len());
        for ((lw, m), c) in ln_w.iter().zip(&self.means).zip(&self.covariances) {
            let gain = c[(0, 1)] / c[(1, 1)];
            weights.push((lw - ln_total).exp());
            means.push(m[0] + gain * (z_f - m[1]));
            let schur = c[(0, 0)] - gain * c[(1, 0)];
            if !(schur > 0.0) {
                return Err(Error::Degenerate(format!(
                    "conditional variance {schur:e} is not positive"
                )));
            }
            variances.push(schur);
        }
        // Exact renormalization against accumulated rounding.
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        Ok(ConditionalGmm {
            given_forecast: z_f,
            weights,
            means,
            variances,
        })
    }

    /// Draws `n` i.i.d. points; deterministic for a given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec2> {
        let picker = WeightedIndex::new(&self.weights).expect("validated weights");
        let factors: Vec<Mat2> = self
            .covariances
            .iter()
            .map(|c| c.cholesky().expect("validated covariance").l())
            .collect();
        (0..n)
            .map(|_| {
                let j = picker.sample(rng);
                let eps = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                self.means[j] + factors[j] * eps
            })
            .collect()
    }

    /// Same mixture with components reordered: output component `k` is input `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        GmmParams {
            weights: order.iter().map(|&k| self.weights[k]).collect(),
            means: order.iter().map(|&k| self.means[k]).collect(),
            covariances: order.iter().map(|&k| self.covariances[k]).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Cached component densities of a mixture.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    ln_weights: Vec<f64>,
    components: Vec<Gaussian2>,
}

impl MixtureDensity {
    /// Fills `out[j] = ln w_j + ln N(point; μ_j, Σ_j)`.
    pub fn ln_joint_terms(&self, point: &Vec2, out: &mut [f64]) {
        for ((o, lw), g) in out.iter_mut().zip(&self.ln_weights).zip(&self.components) {
            *o = lw + g.ln_pdf(point);
        }
    }

    pub fn ln_pdf(&self, point: &Vec2) -> f64 {
        let mut terms = vec![0.0; self.components.len()];
        self.ln_joint_terms(point, &mut terms);
        linalg::log_sum_exp(&terms)
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

/// A univariate mixture, e.g. a marginal of [`GmmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm1D {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Gmm1D {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w.ln() + linalg::ln_normal_1d(x, *m, *v))
            .collect();
        linalg::log_sum_exp(&terms)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * 0.5 * libm::erfc((m - x) / (2.0 * v).sqrt()))
            .sum()
    }

    /// Smallest `x` with `cdf(x) >= p`, by bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = self.means.iter().zip(&self.variances).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), (m, v)| {
                let r = 40.0 * v.sqrt();
                (lo.min(m - r), hi.max(m + r))
            },
        );
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Central interval leaving `tail / 2` of the mass on each side.
    pub fn mass_interval(&self, tail: f64) -> (f64, f64) {
        (self.quantile(0.5 * tail), self.quantile(1.0 - 0.5 * tail))
    }
}

/// Mixture density of the forecast error `Z^E = Z^A − z^F` for a fixed forecast.
///
/// The component means and variances live in actual-output space; the density
/// of an error value `e` is the mixture evaluated at `e + z^F`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGmm {
    pub given_forecast: f64,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl ConditionalGmm {
    pub fn ln_pdf(&self, z_e: f64) -> f64 {
        let x = z_e + self.given_forecast;
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w.ln() + linalg::ln_normal_1d(x, *m, *v))
            .collect();
        linalg::log_sum_exp(&terms)
    }

    /// Density of the forecast error at `z_e`, in 1/MW.
    pub fn pdf(&self, z_e: f64) -> f64 {
        self.ln_pdf(z_e).exp()
    }

    /// The error-space mixture as a plain univariate mixture.
    pub fn error_mixture(&self) -> Gmm1D {
        Gmm1D {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m - self.given_forecast).collect(),
            variances: self.variances.clone(),
        }
    }
}

impl Serialize for GmmParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let means: Vec<Vec<Sig17>> = self.means.iter().map(|m| vec17(m.as_slice())).collect();
        let covs: Vec<[Vec<Sig17>; 2]> = self
            .covariances
            .iter()
            .map(|c| {
                [
                    vec17(&[c[(0, 0)], c[(0, 1)]]),
                    vec17(&[c[(1, 0)], c[(1, 1)]]),
                ]
            })
            .collect();
        let mut st = serializer.serialize_struct("GmmParams", 3)?;
        st.serialize_field("weights", &vec17(&self.weights))?;
        st.serialize_field("means", &means)?;
        st.serialize_field("covariances", &covs)?;
        st.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    weights: Vec<f64>,
    means: Vec<[f64; 2]>,
    covariances: Vec<[[f64; 2]; 2]>,
}

impl<'de> Deserialize<'de> for GmmParams {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let raw = RawParams::deserialize(deserializer)?;
        GmmParams::new(
            raw.weights,
            raw.means.iter().map(|m| Vec2::new(m[0], m[1])).collect(),
            raw.covariances
                .iter()
                .map(|c| Mat2::new(c[0][0], c[0][1], c[1][0], c[1][1]))
                .collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}
