//! Distributed MAP estimation over the wind-farm communication graph.
//!
//! Each farm first learns the aggregated output series by consensus, then the
//! farms iterate: compute local statistics under their own parameters, agree
//! on the network sums with the control center listening, and take a MAP step
//! from the reconstructed global statistics.

use serde::Serialize;

use crate::consensus::{self, ConsensusConfig, Message, Topology};
use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::json::{vec17, Sig17};
use crate::linalg::{self, Mat2, Vec2};
use crate::map::{
    self, covariance_floor, FitConfig, FitReport, FitTracker, Hyperparams, SufficientStats,
};

/// Floats per component in a packed statistics payload.
const COMPONENT_WIDTH: usize = 9;

/// Per-component sums over the points a node holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentSums {
    /// `C_j = Σ_i C_{j,i}`.
    pub count: f64,
    /// `β_j = Σ_i C_{j,i} z_i`.
    pub beta: Vec2,
    /// `γ_j = Σ_i C_{j,i} z_iᵀ`, kept as a column.
    pub gamma: Vec2,
    /// `S_j = Σ_i C_{j,i} z_i z_iᵀ`.
    pub second_moment: Mat2,
}

impl ComponentSums {
    /// `χ_j = β_j / C_j`, zero for an empty component.
    pub fn chi(&self) -> Vec2 {
        if self.count > 0.0 {
            self.beta / self.count
        } else {
            Vec2::zeros()
        }
    }
}

/// Statistics a node can compute from its own series without communicating.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    pub components: Vec<ComponentSums>,
    /// `Σ_i ln f(z_i | θ)` under the parameters used.
    pub log_likelihood: f64,
    pub n_points: f64,
}

impl LocalStats {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Flat consensus payload: nine floats per component, then the
    /// log-likelihood.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.components.len() * COMPONENT_WIDTH + 1);
        for c in &self.components {
            let s = &c.second_moment;
            out.extend_from_slice(&[
                c.count,
                c.beta[0],
                c.beta[1],
                c.gamma[0],
                c.gamma[1],
                s[(0, 0)],
                s[(0, 1)],
                s[(1, 0)],
                s[(1, 1)],
            ]);
        }
        out.push(self.log_likelihood);
        out
    }

    pub fn unpack(payload: &[f64], n_points: f64) -> Result<Self> {
        if payload.is_empty() || !(payload.len() - 1).is_multiple_of(COMPONENT_WIDTH) {
            return Err(Error::InvalidConfig(format!(
                "statistics payload of length {}",
                payload.len()
            )));
        }
        let (body, tail) = payload.split_at(payload.len() - 1);
        let components = body
            .chunks(COMPONENT_WIDTH)
            .map(|p| ComponentSums {
                count: p[0],
                beta: Vec2::new(p[1], p[2]),
                gamma: Vec2::new(p[3], p[4]),
                second_moment: Mat2::new(p[5], p[6], p[7], p[8]),
            })
            .collect();
        Ok(LocalStats {
            components,
            log_likelihood: tail[0],
            n_points,
        })
    }

    /// Field-wise sum of statistics with matching component counts.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a LocalStats>) -> Option<LocalStats> {
        let mut iter = parts.into_iter();
        let mut acc = iter.next()?.clone();
        for p in iter {
            assert_eq!(
                p.n_components(),
                acc.n_components(),
                "component counts differ"
            );
            for (a, b) in acc.components.iter_mut().zip(&p.components) {
                a.count += b.count;
                a.beta += b.beta;
                a.gamma += b.gamma;
                a.second_moment += b.second_moment;
            }
            acc.log_likelihood += p.log_likelihood;
            acc.n_points += p.n_points;
        }
        Some(acc)
    }

    /// Scales every additive field by `factor`.
    fn scaled(mut self, factor: f64) -> Self {
        for c in &mut self.components {
            c.count *= factor;
            c.beta *= factor;
            c.gamma *= factor;
            c.second_moment *= factor;
        }
        self.log_likelihood *= factor;
        self
    }
}

/// Network sums of every node's [`LocalStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStats(pub LocalStats);

impl GlobalStats {
    /// Turns a node's consensus average into sums over `m` nodes of `n` points each.
    pub fn from_average(average: &[f64], m: usize, n: usize) -> Result<Self> {
        let total = (m * n) as f64;
        Ok(GlobalStats(
            LocalStats::unpack(average, total / m as f64)?
                .scaled(m as f64)
                .with_points(total),
        ))
    }

    /// Covariance of all pooled points implied by the sums.
    pub fn pooled_covariance(&self) -> Mat2 {
        let c: f64 = self.0.components.iter().map(|s| s.count).sum();
        let beta: Vec2 = self.0.components.iter().map(|s| s.beta).sum();
        let second: Mat2 = self.0.components.iter().map(|s| s.second_moment).sum();
        let mean = beta / c;
        linalg::symmetrize(&(second / c - linalg::outer(&mean, &mean)))
    }
}

impl LocalStats {
    fn with_points(mut self, n: f64) -> Self {
        self.n_points = n;
        self
    }
}

/// Local statistics of a node's series under `params`.
pub fn local_statistics(z: &[Vec2], params: &GmmParams) -> Result<LocalStats> {
    if z.is_empty() {
        return Err(Error::InsufficientData("node holds no points".into()));
    }
    let j = params.n_components();
    let (resp, log_likelihood) = map::responsibilities(z, params)?;
    let mut components = vec![
        ComponentSums {
            count: 0.0,
            beta: Vec2::zeros(),
            gamma: Vec2::zeros(),
            second_moment: Mat2::zeros(),
        };
        j
    ];
    for (p, row) in z.iter().zip(resp.chunks(j)) {
        let pp = linalg::outer(p, p);
        for (c, &r) in components.iter_mut().zip(row) {
            c.count += r;
            c.beta += r * p;
            c.second_moment += r * pp;
        }
    }
    for c in &mut components {
        c.gamma = c.beta;
    }
    Ok(LocalStats {
        components,
        log_likelihood,
        n_points: z.len() as f64,
    })
}

/// Sufficient statistics for the M-step from global sums:
/// `χ = β / C` and `Ψ = S + χχᵀC − βχᵀ − χγ`.
pub fn reconstruct_global(global: &GlobalStats) -> SufficientStats {
    let g = &global.0;
    let mut means = Vec::with_capacity(g.n_components());
    let mut scatters = Vec::with_capacity(g.n_components());
    for c in &g.components {
        let chi = c.chi();
        let psi = c.second_moment + linalg::outer(&chi, &chi) * c.count
            - linalg::outer(&c.beta, &chi)
            - linalg::outer(&chi, &c.gamma);
        means.push(chi);
        scatters.push(linalg::symmetrize(&psi));
    }
    SufficientStats {
        responsibilities: Vec::new(),
        counts: g.components.iter().map(|c| c.count).collect(),
        means,
        scatters,
        n_points: g.n_points,
        log_likelihood: g.log_likelihood,
    }
}

/// Consensus cost of one phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Traffic {
    pub rounds: usize,
    pub messages: u64,
    pub floats: u64,
}

impl Traffic {
    fn add(&mut self, rounds: usize, messages: u64, width: usize) {
        self.rounds += rounds;
        self.messages += messages;
        self.floats += messages * width as u64;
    }
}

/// Every node's estimate of the aggregated series and the cost of obtaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub per_node: Vec<Vec<Vec2>>,
    pub traffic: Traffic,
}

/// Runs consensus on the farms' observation blocks and scales the averages
/// to sums, giving node `m` its estimate of the aggregated series.
pub fn estimate_aggregated_outputs(
    farms: &[Vec<Vec2>],
    topology: &Topology,
    config: &ConsensusConfig,
) -> Result<Aggregation> {
    estimate_aggregated_outputs_observed(farms, topology, config, &mut |_| {})
}

pub fn estimate_aggregated_outputs_observed(
    farms: &[Vec<Vec2>],
    topology: &Topology,
    config: &ConsensusConfig,
    observer: &mut dyn FnMut(&Message),
) -> Result<Aggregation> {
    let m = topology.n_real();
    if farms.len() != m {
        return Err(Error::InvalidConfig(format!(
            "{} farms for {} nodes",
            farms.len(),
            m
        )));
    }
    let n = farms[0].len();
    if n == 0 || farms.iter().any(|f| f.len() != n) {
        return Err(Error::InsufficientData(
            "every farm needs the same positive number of observations".into(),
        ));
    }
    let payloads: Vec<Vec<f64>> = farms
        .iter()
        .map(|f| f.iter().flat_map(|p| [p[0], p[1]]).collect())
        .collect();
    let base = topology.detach_virtual_node();
    let outcome = consensus::acf_consensus_observed(&payloads, &base, config, observer)?;
    let per_node = outcome
        .estimates
        .iter()
        .map(|avg| {
            consensus::scale_to_sum(avg, m)
                .chunks(2)
                .map(|p| Vec2::new(p[0], p[1]))
                .collect()
        })
        .collect();
    let mut traffic = Traffic::default();
    traffic.add(outcome.rounds, outcome.messages, 2 * n);
    Ok(Aggregation { per_node, traffic })
}

/// Settings of a distributed fit beyond hyperparameters and initial values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmapConfig {
    /// Share of real nodes linked to the control center.
    pub key_fraction: f64,
    pub consensus: ConsensusConfig,
    pub fit: FitConfig,
}

impl Default for DmapConfig {
    fn default() -> Self {
        DmapConfig {
            key_fraction: 0.3,
            consensus: ConsensusConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

/// One node's part of a distributed fit.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEstimate {
    /// Node index; the control center is `M`.
    pub node: usize,
    pub is_virtual: bool,
    /// The node's estimate of the aggregated series; empty for the control center.
    pub aggregated: Vec<Vec2>,
    pub report: FitReport,
}

impl NodeEstimate {
    pub fn params(&self) -> &GmmParams {
        &self.report.params
    }
}

/// Outcome of [`fit_dmap`].
#[derive(Debug, Clone, PartialEq)]
pub struct DmapReport {
    /// Real nodes in index order, then the control center.
    pub nodes: Vec<NodeEstimate>,
    pub key_nodes: Vec<usize>,
    pub coreness: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub aggregation: Traffic,
    pub statistics: Traffic,
    /// Consensus rounds spent in each outer iteration.
    pub rounds_per_iteration: Vec<usize>,
    /// Number of farms and observations, for the centralized cost comparison.
    pub n_farms: usize,
    pub n_points: usize,
}

impl DmapReport {
    /// The control center's fit, the designated decision output.
    pub fn decision(&self) -> &NodeEstimate {
        self.nodes.last().expect("control center present")
    }

    /// The farms' own fits, usable as backups when the control center fails.
    pub fn real_nodes(&self) -> &[NodeEstimate] {
        &self.nodes[..self.nodes.len() - 1]
    }

    /// Messages a centralized scheme needs: every farm uploads once.
    pub fn centralized_messages(&self) -> u64 {
        self.n_farms as u64
    }

    /// Floats a centralized scheme moves: every raw observation pair.
    pub fn centralized_floats(&self) -> u64 {
        (self.n_farms * self.n_points * 2) as u64
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct NodeJson<'a> {
            id: usize,
            #[serde(rename = "virtual")]
            is_virtual: bool,
            decision_output: bool,
            iterations: usize,
            converged: bool,
            pruned: &'a [usize],
            final_log_posterior: Sig17,
            params: &'a GmmParams,
        }
        #[derive(Serialize)]
        struct Cost {
            distributed_messages: u64,
            distributed_floats: u64,
            centralized_messages: u64,
            centralized_floats: u64,
        }
        #[derive(Serialize)]
        struct ReportJson<'a> {
            iterations: usize,
            converged: bool,
            key_nodes: Vec<usize>,
            coreness: &'a [usize],
            aggregation: Traffic,
            statistics: Traffic,
            rounds_per_iteration: &'a [usize],
            communication: Cost,
            nodes: Vec<NodeJson<'a>>,
            log_posterior_trace_decision: Vec<Sig17>,
        }
        let vn = self.decision();
        let doc = ReportJson {
            iterations: self.iterations,
            converged: self.converged,
            key_nodes: self.key_nodes.iter().map(|k| k + 1).collect(),
            coreness: &self.coreness,
            aggregation: self.aggregation,
            statistics: self.statistics,
            rounds_per_iteration: &self.rounds_per_iteration,
            communication: Cost {
                distributed_messages: self.aggregation.messages + self.statistics.messages,
                distributed_floats: self.aggregation.floats + self.statistics.floats,
                centralized_messages: self.centralized_messages(),
                centralized_floats: self.centralized_floats(),
            },
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.node + 1,
                    is_virtual: n.is_virtual,
                    decision_output: n.is_virtual,
                    iterations: n.report.iterations,
                    converged: n.report.converged,
                    pruned: &n.report.pruned,
                    final_log_posterior: Sig17(n.report.final_log_posterior()),
                    params: &n.report.params,
                })
                .collect(),
            log_posterior_trace_decision: vec17(&vn.report.log_posterior_trace),
        };
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }
}

/// Full distributed MAP procedure on `farms` (one `(AWO, FWO)` series per
/// real node of `topology`, which must not carry a control center yet).
pub fn fit_dmap(
    farms: &[Vec<Vec2>],
    topology: &Topology,
    hyper: &Hyperparams,
    init: &GmmParams,
    config: &DmapConfig,
) -> Result<DmapReport> {
    fit_dmap_observed(farms, topology, hyper, init, config, &mut |_| {})
}

/// [`fit_dmap`] reporting every transmitted message to `observer`.
pub fn fit_dmap_observed(
    farms: &[Vec<Vec2>],
    topology: &Topology,
    hyper: &Hyperparams,
    init: &GmmParams,
    config: &DmapConfig,
    observer: &mut dyn FnMut(&Message),
) -> Result<DmapReport> {
    if topology.virtual_node().is_some() {
        return Err(Error::Topology(
            "the control center is attached by the fit itself".into(),
        ));
    }
    if hyper.n_components() != init.n_components() {
        return Err(Error::InvalidHyperparams(format!(
            "{} priors for {} initial components",
            hyper.n_components(),
            init.n_components()
        )));
    }
    config.fit.validate()?;
    config.consensus.rate_for(topology)?;

    let aggregation =
        estimate_aggregated_outputs_observed(farms, topology, &config.consensus, observer)?;
    let m = topology.n_real();
    let n = farms[0].len();

    let coreness = consensus::k_shell(topology);
    let key_nodes = consensus::select_key_nodes(topology, &coreness, config.key_fraction)?;
    let with_vn = topology.attach_virtual_node(&key_nodes)?;

    let nodes = m + 1;
    let mut params = vec![init.clone(); nodes];
    let mut hyper = hyper.clone();
    let mut trackers = vec![FitTracker::new(init.n_components()); nodes];
    let mut floors: Option<Vec<f64>> = config.fit.cov_floor.map(|f| vec![f; nodes]);
    let mut statistics = Traffic::default();
    let mut rounds_per_iteration = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let t = iterations;
        let payloads = aggregation
            .per_node
            .iter()
            .zip(&params)
            .enumerate()
            .map(|(k, (z, p))| {
                local_statistics(z, p)
                    .map(|s| s.pack())
                    .map_err(|e| e.at_node(k, t))
            })
            .collect::<Result<Vec<_>>>()?;
        let width = payloads[0].len();
        let outcome =
            consensus::acf_with_vn_observed(&payloads, &with_vn, &config.consensus, observer)
                .map_err(|e| Error::AtIteration {
                    iteration: t,
                    source: Box::new(e),
                })?;
        statistics.add(outcome.rounds, outcome.messages, width);
        rounds_per_iteration.push(outcome.rounds);

        let globals = outcome
            .estimates
            .iter()
            .map(|avg| GlobalStats::from_average(avg, m, n))
            .collect::<Result<Vec<_>>>()?;
        let floors = floors.get_or_insert_with(|| {
            globals
                .iter()
                .map(|g| covariance_floor(&g.pooled_covariance()))
                .collect()
        });
        let stats: Vec<SufficientStats> = globals.iter().map(reconstruct_global).collect();

        let mut all_done = true;
        for (k, tracker) in trackers.iter_mut().enumerate() {
            let objective = stats[k].log_likelihood + hyper.ln_prior(&params[k]);
            all_done &= tracker
                .record(objective, config.fit.tol, false)
                .map_err(|e| e.at_node(k, t))?;
        }
        if all_done {
            converged = true;
            break;
        }
        if iterations == config.fit.max_iter {
            break;
        }

        let mut removed: Vec<usize> = stats
            .iter()
            .flat_map(|s| s.degenerate_components())
            .collect();
        removed.sort_unstable();
        removed.dedup();
        let j = hyper.n_components();
        for (k, tracker) in trackers.iter_mut().enumerate() {
            tracker
                .remove(removed.clone(), j, config.fit.degenerate)
                .map_err(|e| e.at_node(k, t))?;
        }
        if !removed.is_empty() {
            hyper = hyper.without(&removed);
        }
        for k in 0..nodes {
            let s = if removed.is_empty() {
                stats[k].clone()
            } else {
                stats[k].without(&removed)
            };
            params[k] = map::m_step_map(&s, &hyper, floors[k]).map_err(|e| e.at_node(k, t))?;
        }
        iterations += 1;
    }

    let estimates = params
        .into_iter()
        .zip(trackers)
        .enumerate()
        .map(|(k, (p, tracker))| NodeEstimate {
            node: k,
            is_virtual: k == m,
            aggregated: if k == m {
                Vec::new()
            } else {
                aggregation.per_node[k].clone()
            },
            report: FitReport {
                params: p,
                iterations,
                log_posterior_trace: tracker.trace,
                converged,
                pruned: tracker.pruned,
            },
        })
        .collect();

    Ok(DmapReport {
        nodes: estimates,
        key_nodes,
        coreness,
        iterations,
        converged,
        aggregation: aggregation.traffic,
        statistics,
        rounds_per_iteration,
        n_farms: m,
        n_points: n,
    })
}

/// MAP fit on one node's aggregated estimate alone, ignoring every other node.
pub fn fit_naive_single_node(
    z: &[Vec2],
    hyper: &Hyperparams,
    init: &GmmParams,
    config: &FitConfig,
) -> Result<FitReport> {
    map::fit_map(z, hyper, init, config)
}
