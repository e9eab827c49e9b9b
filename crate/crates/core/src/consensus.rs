//! The wind-farm communication graph and the average consensus filter that
//! runs over it.
//!
//! Nodes are indexed from zero; user-facing ids are `index + 1`. The optional
//! virtual node (the control center) always takes index `M`.
//!
//! # Consensus update
//!
//! Every real node `m` holds a transmitted state `x_m` and a private input
//! filter `u_m`, both starting at zero. One synchronous round is
//!
//! ```text
//! x_m ← x_m + η [ (y_m − u_m) + Σ_{n ∈ Ω_m, n real} (x_n − x_m) ]
//! u_m ← u_m + η (y_m − u_m)
//! ```
//!
//! The neighbour term preserves `Σ x`, and the input term injects exactly
//! `Σ y` over time, so `Σ_m x_m = Σ_m u_m → Σ_m y_m` and every state converges
//! to the arithmetic mean of the inputs. Only `x` is ever transmitted. The
//! virtual node listens to its key neighbours and sets its state to their
//! average from the previous round; it never feeds back into real nodes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Communication graph over real nodes plus an optional virtual node.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    coordinates: Vec<[f64; 2]>,
    threshold_km: f64,
    /// Sorted neighbour lists; entry `M` exists iff the virtual node is attached.
    neighbors: Vec<Vec<usize>>,
    key_nodes: Vec<usize>,
}

impl Topology {
    /// Links every pair of real nodes closer than `threshold_km`.
    pub fn build(coordinates: Vec<[f64; 2]>, threshold_km: f64) -> Result<Self> {
        if coordinates.is_empty() {
            return Err(Error::Topology("no nodes".into()));
        }
        if !(threshold_km > 0.0 && threshold_km.is_finite()) {
            return Err(Error::Topology(format!(
                "threshold must be positive, got {threshold_km}"
            )));
        }
        if coordinates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Topology("coordinates must be finite".into()));
        }
        let m = coordinates.len();
        let mut neighbors = vec![Vec::new(); m];
        for a in 0..m {
            for b in (a + 1)..m {
                if distance(&coordinates[a], &coordinates[b]) < threshold_km {
                    neighbors[a].push(b);
                    neighbors[b].push(a);
                }
            }
        }
        let topo = Topology {
            coordinates,
            threshold_km,
            neighbors,
            key_nodes: Vec::new(),
        };
        topo.ensure_connected()?;
        Ok(topo)
    }

    /// Number of real nodes `M`.
    pub fn n_real(&self) -> usize {
        self.coordinates.len()
    }

    pub fn coordinates(&self) -> &[[f64; 2]] {
        &self.coordinates
    }

    pub fn threshold_km(&self) -> f64 {
        self.threshold_km
    }

    pub fn virtual_node(&self) -> Option<usize> {
        (self.neighbors.len() > self.n_real()).then_some(self.n_real())
    }

    pub fn key_nodes(&self) -> &[usize] {
        &self.key_nodes
    }

    /// `Ω_m`, including the virtual node for key nodes.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Real neighbours only.
    pub fn real_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.n_real();
        self.neighbors[node].iter().copied().filter(move |&n| n < m)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors
            .get(a)
            .is_some_and(|n| n.binary_search(&b).is_ok())
    }

    /// Undirected real-node edges `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n_real())
            .flat_map(|a| {
                self.real_neighbors(a)
                    .filter(move |&b| b > a)
                    .map(move |b| (a, b))
            })
            .collect()
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        distance(&self.coordinates[a], &self.coordinates[b])
    }

    /// Connected components of the real-node graph, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let m = self.n_real();
        let mut seen = vec![false; m];
        let mut out = Vec::new();
        for start in 0..m {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                let v = comp[k];
                for n in self.real_neighbors(v) {
                    if !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                    }
                }
                k += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    fn ensure_connected(&self) -> Result<()> {
        let components = self.components();
        if components.len() > 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(())
    }

    /// Removes real-node links, failing on the first removal that disconnects
    /// the graph. The virtual node, if attached, is kept.
    pub fn without_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        let mut out = self.clone();
        for &(a, b) in edges {
            let m = self.n_real();
            if a >= m || b >= m {
                return Err(Error::Topology(format!(
                    "link {}-{} does not join two real nodes",
                    a + 1,
                    b + 1
                )));
            }
            if !out.has_edge(a, b) {
                return Err(Error::Topology(format!(
                    "link {}-{} does not exist",
                    a + 1,
                    b + 1
                )));
            }
            out.neighbors[a].retain(|&n| n != b);
            out.neighbors[b].retain(|&n| n != a);
            if out.components().len() > 1 {
                return Err(Error::CutDisconnects(a, b));
            }
        }
        Ok(out)
    }

    /// Attaches the virtual node `M`, linked to every key node.
    pub fn attach_virtual_node(&self, key_nodes: &[usize]) -> Result<Self> {
        if self.virtual_node().is_some() {
            return Err(Error::Topology("virtual node already attached".into()));
        }
        let keys: BTreeSet<usize> = key_nodes.iter().copied().collect();
        if keys.is_empty() {
            return Err(Error::Topology(
                "virtual node needs at least one key node".into(),
            ));
        }
        if keys.len() != key_nodes.len() {
            return Err(Error::Topology("duplicate key nodes".into()));
        }
        let m = self.n_real();
        if let Some(&bad) = keys.iter().find(|&&k| k >= m) {
            return Err(Error::Topology(format!(
                "key node {} is not a real node",
                bad + 1
            )));
        }
        let mut out = self.clone();
        for &k in &keys {
            out.neighbors[k].push(m);
        }
        out.neighbors.push(keys.iter().copied().collect());
        out.key_nodes = keys.into_iter().collect();
        Ok(out)
    }

    /// Same graph with the virtual node removed.
    pub fn detach_virtual_node(&self) -> Self {
        let m = self.n_real();
        let mut out = self.clone();
        out.neighbors.truncate(m);
        for n in &mut out.neighbors {
            n.retain(|&v| v < m);
        }
        out.key_nodes.clear();
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&TopologyFile::from(self)).expect("topology serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TopologyFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_topology()
    }
}

fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// On-disk form: a node table with ids and km coordinates, the threshold, links
/// within range that were cut, and the key nodes when a virtual node is attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub threshold_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_node: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub key_nodes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cut_links: Vec<[usize; 2]>,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

impl From<&Topology> for TopologyFile {
    fn from(t: &Topology) -> Self {
        TopologyFile {
            threshold_km: t.threshold_km,
            virtual_node: t.virtual_node().map(|v| v + 1),
            key_nodes: t.key_nodes.iter().map(|k| k + 1).collect(),
            cut_links: (0..t.n_real())
                .flat_map(|a| (a + 1..t.n_real()).map(move |b| (a, b)))
                .filter(|&(a, b)| {
                    distance(&t.coordinates[a], &t.coordinates[b]) < t.threshold_km
                        && !t.has_edge(a, b)
                })
                .map(|(a, b)| [a + 1, b + 1])
                .collect(),
            nodes: t
                .coordinates
                .iter()
                .enumerate()
                .map(|(i, c)| NodeEntry {
                    id: i + 1,
                    x: c[0],
                    y: c[1],
                })
                .collect(),
        }
    }
}

impl TopologyFile {
    pub fn into_topology(self) -> Result<Topology> {
        let mut nodes = self.nodes;
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i + 1 {
                return Err(Error::Topology(format!(
                    "node ids must be 1..={} without gaps; found {}",
                    nodes.len(),
                    n.id
                )));
            }
        }
        let mut base = Topology::build(
            nodes.iter().map(|n| [n.x, n.y]).collect(),
            self.threshold_km,
        )?;
        if !self.cut_links.is_empty() {
            let cuts = self
                .cut_links
                .iter()
                .map(|&[a, b]| match (a.checked_sub(1), b.checked_sub(1)) {
                    (Some(a), Some(b)) => Ok((a, b)),
                    _ => Err(Error::Topology("link ids start at 1".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            base = base.without_edges(&cuts)?;
        }
        match (self.virtual_node, self.key_nodes.is_empty()) {
            (None, true) => Ok(base),
            (Some(v), false) if v == base.n_real() + 1 => {
                let keys: Vec<usize> = self
                    .key_nodes
                    .iter()
                    .map(|&k| {
                        k.checked_sub(1)
                            .ok_or_else(|| Error::Topology("key node id 0".into()))
                    })
                    .collect::<Result<_>>()?;
                base.attach_virtual_node(&keys)
            }
            _ => Err(Error::Topology(format!(
                "virtual node must be id {} and come with key nodes",
                base.n_real() + 1
            ))),
        }
    }
}

/// Parameters of the consensus iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    /// Updating rate; `0.9 / (1 + max degree)` when unset.
    pub eta: Option<f64>,
    /// Converged once no entry moves by more than `tol · max(1, |entry|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            eta: None,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl ConsensusConfig {
    pub fn with_tol(tol: f64) -> Self {
        ConsensusConfig {
            tol,
            ..Self::default()
        }
    }

    /// The updating rate to use on `topology`, validated against its degree bound.
    pub fn rate_for(&self, topology: &Topology) -> Result<f64> {
        let bound = 1.0 / (1.0 + topology.max_degree() as f64);
        let eta = self.eta.unwrap_or(0.9 * bound);
        if !(eta > 0.0 && eta < bound) {
            return Err(Error::InvalidConfig(format!(
                "updating rate {eta} outside (0, {bound}) for max degree {}",
                topology.max_degree()
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig(format!(
                "consensus tolerance must be positive and max_iter > 0 (got {}, {})",
                self.tol, self.max_iter
            )));
        }
        Ok(eta)
    }
}

/// One transmitted state vector.
#[derive(Debug, Clone, Copy)]
pub struct Message<'a> {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub payload: &'a [f64],
}

/// Result of a converged consensus run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    /// One estimate of the input average per node (virtual node last, if any).
    pub estimates: Vec<Vec<f64>>,
    pub rounds: usize,
    /// Largest scaled per-entry change in the final round.
    pub residual: f64,
    /// Point-to-point state transmissions.
    pub messages: u64,
}

/// Synchronous consensus state, exposed for step-by-step inspection.
#[derive(Debug, Clone)]
pub struct ConsensusFilter<'a> {
    topology: &'a Topology,
    eta: f64,
    width: usize,
    inputs: Vec<f64>,
    state: Vec<f64>,
    filtered: Vec<f64>,
    next: Vec<f64>,
    with_vn: bool,
    round: usize,
}

impl<'a> ConsensusFilter<'a> {
    /// Zero-initialized filter over one payload per real node. When
    /// `with_vn` is set the topology must carry a virtual node.
    pub fn new(
        inputs: &[Vec<f64>],
        topology: &'a Topology,
        eta: f64,
        with_vn: bool,
    ) -> Result<Self> {
        let m = topology.n_real();
        if inputs.len() != m {
            return Err(Error::InvalidConfig(format!(
                "{} payloads for {} nodes",
                inputs.len(),
                m
            )));
        }
        let width = inputs[0].len();
        if inputs.iter().any(|p| p.len() != width) {
            return Err(Error::InvalidConfig("payloads differ in length".into()));
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("payloads must be finite".into()));
        }
        if with_vn && topology.virtual_node().is_none() {
            return Err(Error::Topology("virtual node not attached".into()));
        }
        let nodes = m + usize::from(with_vn);
        Ok(ConsensusFilter {
            topology,
            eta,
            width,
            inputs: inputs.concat(),
            state: vec![0.0; nodes * width],
            filtered: vec![0.0; m * width],
            next: vec![0.0; nodes * width],
            with_vn,
            round: 0,
        })
    }

    /// Overrides the starting point: transmitted states (virtual node last
    /// when present) and the real nodes' input filters.
    pub fn set_state(&mut self, state: &[Vec<f64>], filtered: &[Vec<f64>]) -> Result<()> {
        let flat = state.concat();
        let filt = filtered.concat();
        if flat.len() != self.state.len() || filt.len() != self.filtered.len() {
            return Err(Error::InvalidConfig("state shape mismatch".into()));
        }
        self.state = flat;
        self.filtered = filt;
        Ok(())
    }

    pub fn state(&self, node: usize) -> &[f64] {
        &self.state[node * self.width..(node + 1) * self.width]
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Performs one synchronous round and returns the largest scaled change.
    pub fn step(&mut self, observer: &mut dyn FnMut(&Message)) -> f64 {
        let m = self.topology.n_real();
        let w = self.width;
        let eta = self.eta;
        let round = self.round;
        for node in 0..m {
            let own = &self.state[node * w..(node + 1) * w];
            for &n in self.topology.neighbors(node) {
                if n < m || self.with_vn {
                    observer(&Message {
                        round,
                        from: node,
                        to: n,
                        payload: own,
                    });
                }
            }
        }
        let mut worst: f64 = 0.0;
        for node in 0..m {
            let base = node * w;
            for e in 0..w {
                let x = self.state[base + e];
                let mut coupling = 0.0;
                for n in self.topology.real_neighbors(node) {
                    coupling += self.state[n * w + e] - x;
                }
                let y = self.inputs[base + e];
                let u = self.filtered[base + e];
                let x_new = x + eta * ((y - u) + coupling);
                self.next[base + e] = x_new;
                self.filtered[base + e] = u + eta * (y - u);
                worst = worst.max((x_new - x).abs() / x_new.abs().max(1.0));
            }
        }
        if self.with_vn {
            let vn = m;
            let keys = self.topology.neighbors(vn);
            let inv = 1.0 / keys.len() as f64;
            for e in 0..w {
                let avg = keys.iter().map(|&k| self.state[k * w + e]).sum::<f64>() * inv;
                let old = self.state[vn * w + e];
                self.next[vn * w + e] = avg;
                worst = worst.max((avg - old).abs() / avg.abs().max(1.0));
            }
        }
        std::mem::swap(&mut self.state, &mut self.next);
        self.round += 1;
        worst
    }

    /// Runs until the scaled change drops to `tol` or `max_iter` rounds pass.
    pub fn run(
        mut self,
        tol: f64,
        max_iter: usize,
        observer: &mut dyn FnMut(&Message),
    ) -> Result<ConsensusOutcome> {
        let per_round: u64 = (0..self.topology.n_real())
            .map(|n| {
                self.topology
                    .neighbors(n)
                    .iter()
                    .filter(|&&v| v < self.topology.n_real() || self.with_vn)
                    .count() as u64
            })
            .sum();
        let mut residual = f64::INFINITY;
        while self.round < max_iter {
            residual = self.step(observer);
            if residual <= tol {
                let nodes = self.state.len() / self.width.max(1);
                return Ok(ConsensusOutcome {
                    estimates: (0..nodes).map(|n| self.state(n).to_vec()).collect(),
                    rounds: self.round,
                    residual,
                    messages: per_round * self.round as u64,
                });
            }
        }
        Err(Error::NonConvergence {
            iterations: self.round,
            residual,
        })
    }
}

/// Average consensus over the real nodes; each estimate converges to the
/// arithmetic mean of `inputs`.
pub fn acf_consensus(
    inputs: &[Vec<f64>],
    topology: &Topology,
    config: &ConsensusConfig,
) -> Result<ConsensusOutcome> {
    acf_consensus_observed(inputs, topology, config, &mut |_| {})
}

pub fn acf_consensus_observed(
    inputs: &[Vec<f64>],
    topology: &Topology,
    config: &ConsensusConfig,
    observer: &mut dyn FnMut(&Message),
) -> Result<ConsensusOutcome> {
    let eta = config.rate_for(topology)?;
    let filter = ConsensusFilter::new(inputs, topology, eta, false)?;
    if topology.n_real() == 1 {
        return Ok(isolated(inputs, false));
    }
    filter.run(config.tol, config.max_iter, observer)
}

/// Consensus with the virtual node listening to its key neighbours; the
/// virtual node's estimate is returned last.
pub fn acf_with_vn(
    inputs: &[Vec<f64>],
    topology: &Topology,
    config: &ConsensusConfig,
) -> Result<ConsensusOutcome> {
    acf_with_vn_observed(inputs, topology, config, &mut |_| {})
}

pub fn acf_with_vn_observed(
    inputs: &[Vec<f64>],
    topology: &Topology,
    config: &ConsensusConfig,
    observer: &mut dyn FnMut(&Message),
) -> Result<ConsensusOutcome> {
    let eta = config.rate_for(topology)?;
    let filter = ConsensusFilter::new(inputs, topology, eta, true)?;
    if topology.n_real() == 1 {
        return Ok(isolated(inputs, true));
    }
    filter.run(config.tol, config.max_iter, observer)
}

/// A lone node already holds the average and has nobody to talk to.
fn isolated(inputs: &[Vec<f64>], with_vn: bool) -> ConsensusOutcome {
    let mut estimates = inputs.to_vec();
    if with_vn {
        estimates.push(inputs[0].clone());
    }
    ConsensusOutcome {
        estimates,
        rounds: 0,
        residual: 0.0,
        messages: 0,
    }
}

/// Converts a converged average into the network sum.
pub fn scale_to_sum(average: &[f64], m: usize) -> Vec<f64> {
    let s = m as f64;
    average.iter().map(|v| v * s).collect()
}

/// Coreness of every real node by iterated minimum-degree peeling.
pub fn k_shell(topology: &Topology) -> Vec<usize> {
    let real: Vec<Vec<usize>> = (0..topology.n_real())
        .map(|v| topology.real_neighbors(v).collect())
        .collect();
    core_numbers(&real)
}

/// Coreness of every vertex of an undirected graph given as adjacency lists.
pub fn core_numbers(neighbors: &[Vec<usize>]) -> Vec<usize> {
    let m = neighbors.len();
    let mut degree: Vec<usize> = neighbors.iter().map(Vec::len).collect();
    let mut removed = vec![false; m];
    let mut core = vec![0; m];
    let mut k = 0;
    for _ in 0..m {
        let v = (0..m)
            .filter(|&v| !removed[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("a node remains");
        k = k.max(degree[v]);
        core[v] = k;
        removed[v] = true;
        for &n in &neighbors[v] {
            if !removed[n] {
                degree[n] -= 1;
            }
        }
    }
    core
}

/// The top `⌈fraction · M⌉` nodes by coreness, then degree, then lower index.
pub fn select_key_nodes(
    topology: &Topology,
    coreness: &[usize],
    fraction: f64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "key fraction {fraction} outside (0, 1]"
        )));
    }
    let m = topology.n_real();
    if coreness.len() != m {
        return Err(Error::InvalidConfig(
            "coreness length differs from node count".into(),
        ));
    }
    // Guard against products like 0.3 · 10 landing a hair above an integer.
    let count = ((fraction * m as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        coreness[b]
            .cmp(&coreness[a])
            .then(
                topology
                    .real_neighbors(b)
                    .count()
                    .cmp(&topology.real_neighbors(a).count()),
            )
            .then(a.cmp(&b))
    });
    let mut keys: Vec<usize> = order.into_iter().take(count.min(m)).collect();
    keys.sort_unstable();
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64], threshold: f64) -> Result<Topology> {
        Topology::build(xs.iter().map(|&x| [x, 0.0]).collect(), threshold)
    }

    /// Ring of `m` nodes on a circle whose chord to the next node is 1 km.
    pub(crate) fn ring(m: usize) -> Topology {
        let r = 0.5 / (std::f64::consts::PI / m as f64).sin();
        let coords = (0..m)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        Topology::build(coords, 1.01).unwrap()
    }

    #[test]
    fn collinear_path() {
        let t = line(&[0.0, 3.0, 6.0], 4.0).unwrap();
        assert_eq!(t.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(t.degree(1), 2);
    }

    #[test]
    fn threshold_too_small_disconnects() {
        match line(&[0.0, 3.0, 6.0], 2.0) {
            Err(Error::Disconnected { components }) => assert_eq!(components.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn large_threshold_gives_complete_graph() {
        let coords: Vec<[f64; 2]> = (0..10)
            .map(|i| [(i * 7 % 10) as f64, (i * 3 % 10) as f64])
            .collect();
        let t = Topology::build(coords, 100.0).unwrap();
        assert!((0..10).all(|m| t.degree(m) == 9));
    }

    #[test]
    fn path_consensus_reaches_mean() {
        let t = line(&[0.0, 3.0, 6.0], 4.0).unwrap();
        let inputs = vec![vec![0.0], vec![3.0], vec![6.0]];
        let out = acf_consensus(&inputs, &t, &ConsensusConfig::with_tol(1e-12)).unwrap();
        for e in &out.estimates {
            assert!((e[0] - 3.0).abs() < 1e-6);
        }
        let total = scale_to_sum(&out.estimates[0], 3);
        assert!((total[0] - 9.0).abs() < 1e-6);
    }

    #[test]
    fn equal_payloads_at_rest_do_not_move() {
        let t = line(&[0.0, 3.0, 6.0], 4.0).unwrap();
        let c = 2.5;
        let inputs = vec![vec![c]; 3];
        let mut f = ConsensusFilter::new(&inputs, &t, 0.2, false).unwrap();
        f.set_state(&vec![vec![c]; 3], &vec![vec![c]; 3]).unwrap();
        assert_eq!(f.step(&mut |_| {}), 0.0);
        assert!((0..3).all(|n| f.state(n) == [c]));
    }

    #[test]
    fn virtual_node_tracks_constant_after_first_round() {
        let t = line(&[0.0, 3.0, 6.0], 4.0)
            .unwrap()
            .attach_virtual_node(&[1])
            .unwrap();
        let c = -4.0;
        let inputs = vec![vec![c]; 3];
        let mut f = ConsensusFilter::new(&inputs, &t, 0.2, true).unwrap();
        f.set_state(&[vec![c], vec![c], vec![c], vec![0.0]], &vec![vec![c]; 3])
            .unwrap();
        for _ in 0..5 {
            f.step(&mut |_| {});
            assert_eq!(f.state(3), [c]);
        }
    }

    #[test]
    fn non_convergence_carries_residual() {
        let t = line(&[0.0, 3.0, 6.0], 4.0).unwrap();
        let cfg = ConsensusConfig {
            max_iter: 3,
            tol: 1e-12,
            eta: None,
        };
        match acf_consensus(&[vec![0.0], vec![3.0], vec![6.0]], &t, &cfg) {
            Err(Error::NonConvergence {
                iterations: 3,
                residual,
            }) => assert!(residual > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rate_bound_is_enforced() {
        let t = line(&[0.0, 3.0, 6.0], 4.0).unwrap();
        let cfg = ConsensusConfig {
            eta: Some(0.5),
            ..ConsensusConfig::default()
        };
        assert!(cfg.rate_for(&t).is_err());
        assert!((ConsensusConfig::default().rate_for(&t).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cycle_and_star_coreness() {
        assert_eq!(k_shell(&ring(7)), vec![2; 7]);
        let mut coords = vec![[0.0, 0.0]];
        for i in 0..3 {
            let a = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
            coords.push([a.cos(), a.sin()]);
        }
        let star = Topology::build(coords, 1.05).unwrap();
        assert_eq!(star.degree(0), 3);
        assert_eq!(k_shell(&star), vec![1; 4]);
    }

    #[test]
    fn key_nodes_tie_break_by_degree_then_index() {
        // Path 0-1-2-3-4-5-6-7-8-9: all coreness 1, interior degree 2.
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let t = line(&xs, 1.5).unwrap();
        let core = k_shell(&t);
        assert!(core.iter().all(|&c| c == 1));
        assert_eq!(select_key_nodes(&t, &core, 0.3).unwrap(), vec![1, 2, 3]);
        assert_eq!(
            select_key_nodes(&t, &core, 1.0).unwrap(),
            (0..10).collect::<Vec<_>>()
        );
        assert!(select_key_nodes(&t, &core, 0.0).is_err());
    }

    #[test]
    fn attach_virtual_node_updates_degrees() {
        let t = ring(10);
        let v = t.attach_virtual_node(&[0, 4, 7]).unwrap();
        assert_eq!(v.virtual_node(), Some(10));
        assert_eq!(v.degree(10), 3);
        for k in [0, 4, 7] {
            assert_eq!(v.degree(k), t.degree(k) + 1);
        }
        for n in [1, 2, 3, 5, 6, 8, 9] {
            assert_eq!(v.neighbors(n), t.neighbors(n));
        }
        assert!(v.attach_virtual_node(&[1]).is_err());
        assert!(t.attach_virtual_node(&[]).is_err());
        assert!(t.attach_virtual_node(&[10]).is_err());
        assert_eq!(v.detach_virtual_node(), t);
    }

    #[test]
    fn cut_cycle_edge_then_bridge() {
        let t = ring(5);
        let p = t.without_edges(&[(0, 1)]).unwrap();
        assert_eq!(p.edges().len(), 4);
        assert!(matches!(
            p.without_edges(&[(1, 2)]),
            Err(Error::CutDisconnects(1, 2))
        ));
        assert!(p.without_edges(&[(0, 1)]).is_err());
    }

    #[test]
    fn topology_toml_round_trip() {
        let t = ring(6).attach_virtual_node(&[2, 3]).unwrap();
        let text = t.to_toml();
        assert!(text.contains("threshold_km"));
        assert_eq!(Topology::from_toml(&text).unwrap(), t);
    }

    #[test]
    fn cut_links_survive_toml() {
        let t = ring(6).without_edges(&[(0, 1)]).unwrap();
        let text = t.to_toml();
        assert!(text.contains("cut_links = [[1, 2]]"), "{text}");
        assert_eq!(Topology::from_toml(&text).unwrap(), t);
    }
}
