//! Empirical densities, RMSE scoring and conditional-error binning.

use std::io::Write;

use crate::consensus::Topology;
use crate::error::{Error, Result};
use crate::gmm::{Gmm1D, GmmParams};
use crate::json::format_f64;
use crate::linalg::Vec2;

/// Default number of grid points for curve comparisons.
pub const GRID_POINTS: usize = 100;

/// Probability mass a mixture may leave outside its support.
pub const SUPPORT_TAIL: f64 = 1e-4;

/// A univariate density that can be put on a common grid with another.
pub trait Density1D {
    fn density(&self, x: f64) -> f64;
    /// Interval holding essentially all of the mass.
    fn support(&self) -> (f64, f64);
}

impl Density1D for Gmm1D {
    fn density(&self, x: f64) -> f64 {
        self.pdf(x)
    }

    fn support(&self) -> (f64, f64) {
        self.mass_interval(SUPPORT_TAIL)
    }
}

/// Equal-width histogram normalized to unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPdf {
    edges: Vec<f64>,
    densities: Vec<f64>,
    n_samples: usize,
}

impl EmpiricalPdf {
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_bins(&self) -> usize {
        self.densities.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// `Σ density · width`.
    pub fn integral(&self) -> f64 {
        self.edges
            .windows(2)
            .zip(&self.densities)
            .map(|(w, d)| d * (w[1] - w[0]))
            .sum()
    }
}

impl Density1D for EmpiricalPdf {
    /// Piecewise-constant lookup; zero outside the histogram range.
    fn density(&self, x: f64) -> f64 {
        let lo = self.edges[0];
        let hi = *self.edges.last().expect("edges");
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        let width = (hi - lo) / self.n_bins() as f64;
        let k = (((x - lo) / width) as usize).min(self.n_bins() - 1);
        self.densities[k]
    }

    fn support(&self) -> (f64, f64) {
        (self.edges[0], *self.edges.last().expect("edges"))
    }
}

/// Histogram of `samples` with `bin_count` equal bins spanning `[min, max]`.
pub fn empirical_pdf(samples: &[f64], bin_count: usize) -> Result<EmpiricalPdf> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "an empirical density needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if bin_count == 0 {
        return Err(Error::InvalidConfig("bin count must be positive".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("samples must be finite".into()));
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| {
            (a.min(s), b.max(s))
        });
    if lo == hi {
        return Err(Error::DegenerateSample(format!(
            "all {} samples equal {lo}",
            samples.len()
        )));
    }
    let width = (hi - lo) / bin_count as f64;
    let mut counts = vec![0usize; bin_count];
    for &s in samples {
        let k = (((s - lo) / width) as usize).min(bin_count - 1);
        counts[k] += 1;
    }
    let edges: Vec<f64> = (0..=bin_count)
        .map(|k| {
            if k == bin_count {
                hi
            } else {
                lo + k as f64 * width
            }
        })
        .collect();
    let total = samples.len() as f64;
    let densities = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (total * (w[1] - w[0])))
        .collect();
    Ok(EmpiricalPdf {
        edges,
        densities,
        n_samples: samples.len(),
    })
}

/// Root mean squared difference of two curves sampled on the same grid.
pub fn rmse(model: &[f64], reference: &[f64]) -> Result<f64> {
    if model.len() != reference.len() {
        return Err(Error::GridMismatch(format!(
            "curves have {} and {} points",
            model.len(),
            reference.len()
        )));
    }
    if model.is_empty() {
        return Err(Error::GridMismatch("empty grid".into()));
    }
    let sq: f64 = model
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sq / model.len() as f64).sqrt())
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|k| if k == n - 1 { hi } else { lo + k as f64 * step })
                .collect()
        }
    }
}

/// Grid of `n` points over the union of both supports.
pub fn union_grid(a: &dyn Density1D, b: &dyn Density1D, n: usize) -> Vec<f64> {
    let (a_lo, a_hi) = a.support();
    let (b_lo, b_hi) = b.support();
    linspace(a_lo.min(b_lo), a_hi.max(b_hi), n)
}

pub fn curve(d: &dyn Density1D, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&x| d.density(x)).collect()
}

/// RMSE between two densities on a [`GRID_POINTS`] grid over their union support.
pub fn density_rmse(model: &dyn Density1D, reference: &dyn Density1D) -> f64 {
    let grid = union_grid(model, reference, GRID_POINTS);
    rmse(&curve(model, &grid), &curve(reference, &grid)).expect("same grid")
}

/// One forecast-level bin of the conditional error analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBin {
    /// `n_b`, starting at 1.
    pub index: usize,
    /// `n_b · y_c`, the forecast value the model is conditioned on.
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    /// Aggregated forecast errors `AWO − FWO` of the pairs in this bin.
    pub errors: Vec<f64>,
    /// `None` when the bin holds fewer than two distinct errors.
    pub pdf: Option<EmpiricalPdf>,
}

/// Data pairs split by forecast level into `N_b` bins of half-width
/// `a = 0.05·y_max` around `n_b · y_c`, `y_c = 0.1·y_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalBins {
    pub y_max: f64,
    pub y_c: f64,
    pub a: f64,
    pub bins: Vec<ForecastBin>,
    /// Pairs whose forecast falls in no bin.
    pub outside: usize,
}

impl ConditionalBins {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn empty_bins(&self) -> Vec<usize> {
        self.bins
            .iter()
            .filter(|b| b.pdf.is_none())
            .map(|b| b.index)
            .collect()
    }
}

/// Allocates `(AWO, FWO)` pairs to forecast bins and builds each bin's error
/// histogram with `hist_bins` bins. `y_max` defaults to the largest forecast.
///
/// Bins are half-open `[n_b·y_c − a, n_b·y_c + a)` so adjacent bins share no
/// pair; the last bin also takes its upper edge.
pub fn conditional_empirical(
    pairs: &[Vec2],
    n_bins: usize,
    hist_bins: usize,
    y_max: Option<f64>,
) -> Result<ConditionalBins> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig(
            "forecast bin count must be positive".into(),
        ));
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no data pairs to bin".into()));
    }
    let y_max =
        y_max.unwrap_or_else(|| pairs.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max));
    if !(y_max > 0.0 && y_max.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "maximum forecast must be positive, got {y_max}"
        )));
    }
    let y_c = 0.1 * y_max;
    let a = 0.05 * y_max;
    let mut bins: Vec<ForecastBin> = (1..=n_bins)
        .map(|k| {
            let center = k as f64 * y_c;
            ForecastBin {
                index: k,
                center,
                lo: center - a,
                hi: center + a,
                errors: Vec::new(),
                pdf: None,
            }
        })
        .collect();
    let mut outside = 0;
    for p in pairs {
        let f = p[1];
        let hit = bins
            .iter()
            .position(|b| f >= b.lo && (f < b.hi || (b.index == n_bins && f <= b.hi)));
        match hit {
            Some(k) => bins[k].errors.push(p[0] - p[1]),
            None => outside += 1,
        }
    }
    for b in &mut bins {
        b.pdf = match empirical_pdf(&b.errors, hist_bins) {
            Ok(pdf) => Some(pdf),
            Err(Error::InsufficientData(_) | Error::DegenerateSample(_)) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(ConditionalBins {
        y_max,
        y_c,
        a,
        bins,
        outside,
    })
}

/// Score of one forecast bin; `rmse` is `None` for bins skipped as empty.
#[derive(Debug, Clone, PartialEq)]
pub struct BinScore {
    pub bin: usize,
    pub n_samples: usize,
    pub rmse: Option<f64>,
}

/// Per-bin RMSE between the model's conditional error density at the bin
/// center and the bin's histogram, evaluated at the histogram bin centers.
pub fn evaluate_conditional_fit(
    params: &GmmParams,
    bins: &ConditionalBins,
) -> Result<Vec<BinScore>> {
    bins.bins
        .iter()
        .map(|b| {
            let Some(pdf) = &b.pdf else {
                return Ok(BinScore {
                    bin: b.index,
                    n_samples: b.errors.len(),
                    rmse: None,
                });
            };
            let cond = params
                .condition_on_forecast(b.center)
                .map_err(|e| Error::AtBin {
                    bin: b.index,
                    source: Box::new(e),
                })?;
            let grid = pdf.centers();
            let model: Vec<f64> = grid.iter().map(|&e| cond.pdf(e)).collect();
            Ok(BinScore {
                bin: b.index,
                n_samples: b.errors.len(),
                rmse: Some(rmse(&model, pdf.densities())?),
            })
        })
        .collect()
}

/// Removes links for a robustness rerun; fails naming the first link whose
/// removal disconnects the graph.
pub fn cut_links(topology: &Topology, edges: &[(usize, usize)]) -> Result<Topology> {
    topology.without_edges(edges)
}

/// Links longer than `min_km` whose individual removal keeps the graph connected.
pub fn admissible_long_links(topology: &Topology, min_km: f64) -> Vec<(usize, usize)> {
    topology
        .edges()
        .into_iter()
        .filter(|&(a, b)| topology.edge_length(a, b) > min_km)
        .filter(|&e| topology.without_edges(&[e]).is_ok())
        .collect()
}

/// `bin,rmse` table; skipped bins are written with an empty rmse field.
pub fn write_bin_rmse<W: Write>(out: W, scores: &[BinScore]) -> Result<()> {
    let rows = scores.iter().map(|s| {
        [
            s.bin.to_string(),
            s.rmse.map(format_f64).unwrap_or_default(),
        ]
    });
    write_table(out, ["bin", "rmse"], rows)
}

/// `node,rmse` table with node ids.
pub fn write_node_rmse<W: Write>(out: W, rows: &[(usize, f64)]) -> Result<()> {
    write_table(
        out,
        ["node", "rmse"],
        rows.iter().map(|&(n, r)| [n.to_string(), format_f64(r)]),
    )
}

/// `model,rmse` table, one row per labelled model.
pub fn write_model_rmse<W: Write>(out: W, rows: &[(String, f64)]) -> Result<()> {
    write_table(
        out,
        ["model", "rmse"],
        rows.iter().map(|(m, r)| [m.clone(), format_f64(*r)]),
    )
}

/// `x,density` curve.
pub fn write_curve<W: Write>(out: W, grid: &[f64], density: &[f64]) -> Result<()> {
    if grid.len() != density.len() {
        return Err(Error::GridMismatch(format!(
            "{} x values, {} densities",
            grid.len(),
            density.len()
        )));
    }
    write_table(
        out,
        ["x", "density"],
        grid.iter()
            .zip(density)
            .map(|(&x, &d)| [format_f64(x), format_f64(d)]),
    )
}

fn write_table<W: Write, const K: usize>(
    out: W,
    header: [&str; K],
    rows: impl Iterator<Item = [String; K]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))
}
