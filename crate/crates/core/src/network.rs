//! Network structure: junctions, ordinary links, onramp queues, and turning
//! ratios.
//!
//! Construction enforces referential integrity only (ids resolve, split
//! entries connect a link to a link leaving its head junction). Everything
//! that can be meaningfully *reported* — parameter signs, missing split
//! ratios, cycles, junctions without inflow — lands in [`validate`] instead,
//! so malformed inputs can still be loaded and diagnosed.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagram::{Demand, Supply};
use crate::tolerances::GAMMA_UNIFORM_ABS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// Bounded density, both demand and supply curves.
    Ordinary,
    /// Unbounded queue feeding a junction; demand curve only.
    Onramp,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub id: String,
    pub kind: LinkKind,
    /// Upstream junction; onramps have none.
    pub tail: Option<usize>,
    /// Downstream junction the link flows into.
    pub head: usize,
    pub demand: Demand,
    /// Present exactly on ordinary links.
    pub supply: Option<Supply>,
    /// Metering rate cap on the outflow; onramps only.
    pub meter: Option<f64>,
}

impl Link {
    pub fn is_onramp(&self) -> bool {
        self.kind == LinkKind::Onramp
    }

    /// Jam density for ordinary links.
    pub fn jam(&self) -> Option<f64> {
        self.supply.as_ref().map(|s| s.jam())
    }

    /// Demand at `rho`; a saturated queue sends its supremum. The metering
    /// cap applies after either branch.
    pub fn demand_at(&self, rho: f64, saturated: bool) -> f64 {
        let base = if saturated { self.demand.sup() } else { self.demand.value(rho) };
        match self.meter {
            Some(m) => base.min(m),
            None => base,
        }
    }

    /// One-sided slope of the effective (possibly metered) demand.
    pub fn demand_deriv_at(&self, rho: f64, saturated: bool) -> f64 {
        if saturated {
            return 0.0;
        }
        match self.meter {
            Some(m) if self.demand.value(rho) >= m => 0.0,
            _ => self.demand.deriv(rho),
        }
    }

    /// Supremum of the effective demand.
    pub fn demand_sup(&self) -> f64 {
        match self.meter {
            Some(m) => self.demand.sup().min(m),
            None => self.demand.sup(),
        }
    }

    /// Whether the effective supremum is reached at a finite density.
    pub fn demand_sup_attained(&self) -> bool {
        match self.meter {
            Some(m) if m < self.demand.sup() => true,
            _ => self.demand.sup_attained(),
        }
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("duplicate junction id {0:?}")]
    DuplicateJunction(String),
    #[error("duplicate link id {0:?}")]
    DuplicateLink(String),
    #[error("link {link:?} references unknown junction {junction:?}")]
    UnknownJunction { link: String, junction: String },
    #[error("split entry references unknown link {0:?}")]
    UnknownLink(String),
    #[error("split {from:?} -> {to:?} does not leave the head junction of {from:?}")]
    SplitEndpoints { from: String, to: String },
    #[error("duplicate split entry {from:?} -> {to:?}")]
    DuplicateSplit { from: String, to: String },
    #[error("link {link:?} is malformed: {msg}")]
    Malformed { link: String, msg: String },
    #[error("demand entry {0:?} is not an onramp id")]
    BadDemandKey(String),
    #[error("the link graph contains a cycle")]
    CycleDetected,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// A single turn ratio: fraction `beta` of the outflow of `from` that is
/// routed into `to`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEntry {
    pub from: String,
    pub to: String,
    pub beta: f64,
}

/// On-disk schema of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub junctions: Vec<String>,
    pub links: Vec<LinkFile>,
    #[serde(default)]
    pub split: Vec<SplitEntry>,
    /// Default constant input flow per onramp id.
    #[serde(default)]
    pub demands: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkFile {
    pub id: String,
    pub kind: LinkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<String>,
    pub head: String,
    pub demand: Demand,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply: Option<Supply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meter: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    junction_ids: Vec<String>,
    links: Vec<Link>,
    link_index: HashMap<String, usize>,
    junction_index: HashMap<String, usize>,
    in_links: Vec<Vec<usize>>,
    out_links: Vec<Vec<usize>>,
    beta: HashMap<(usize, usize), f64>,
    /// Per link: outgoing split entries (target link, ratio).
    split_out: Vec<Vec<(usize, f64)>>,
    /// Default input flow per onramp, aligned with [`Network::onramps`].
    default_demands: Vec<f64>,
    onramps: Vec<usize>,
    ordinaries: Vec<usize>,
    /// Junctions in topological order; `None` when the graph has a cycle.
    topo_junctions: Option<Vec<usize>>,
    /// Link enumeration rank consistent with the topological order.
    link_rank: Option<Vec<usize>>,
}

impl Network {
    pub fn from_parts(
        junctions: Vec<String>,
        links: Vec<LinkFile>,
        split: Vec<SplitEntry>,
        demands: BTreeMap<String, f64>,
    ) -> Result<Self, NetworkError> {
        let mut junction_index = HashMap::new();
        for (i, id) in junctions.iter().enumerate() {
            if junction_index.insert(id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateJunction(id.clone()));
            }
        }
        let mut link_index = HashMap::new();
        let mut resolved = Vec::with_capacity(links.len());
        for (i, lf) in links.into_iter().enumerate() {
            if link_index.insert(lf.id.clone(), i).is_some() {
                return Err(NetworkError::DuplicateLink(lf.id));
            }
            let head = *junction_index.get(&lf.head).ok_or_else(|| {
                NetworkError::UnknownJunction { link: lf.id.clone(), junction: lf.head.clone() }
            })?;
            let tail = match &lf.tail {
                Some(t) => Some(*junction_index.get(t).ok_or_else(|| {
                    NetworkError::UnknownJunction { link: lf.id.clone(), junction: t.clone() }
                })?),
                None => None,
            };
            match lf.kind {
                LinkKind::Ordinary => {
                    if tail.is_none() {
                        return Err(NetworkError::Malformed {
                            link: lf.id,
                            msg: "ordinary link needs a tail junction".into(),
                        });
                    }
                    if lf.supply.is_none() {
                        return Err(NetworkError::Malformed {
                            link: lf.id,
                            msg: "ordinary link needs a supply curve".into(),
                        });
                    }
                    if lf.meter.is_some() {
                        return Err(NetworkError::Malformed {
                            link: lf.id,
                            msg: "metering applies to onramps only".into(),
                        });
                    }
                }
                LinkKind::Onramp => {
                    if tail.is_some() {
                        return Err(NetworkError::Malformed {
                            link: lf.id,
                            msg: "onramp cannot have a tail junction".into(),
                        });
                    }
                    if lf.supply.is_some() {
                        return Err(NetworkError::Malformed {
                            link: lf.id,
                            msg: "onramp has no supply curve".into(),
                        });
                    }
                    if let Some(m) = lf.meter {
                        if !(m.is_finite() && m >= 0.0) {
                            return Err(NetworkError::Malformed {
                                link: lf.id,
                                msg: format!("metering rate {m} must be finite and nonnegative"),
                            });
                        }
                    }
                }
            }
            resolved.push(Link {
                id: lf.id,
                kind: lf.kind,
                tail,
                head,
                demand: lf.demand,
                supply: lf.supply,
                meter: lf.meter,
            });
        }

        let mut beta = HashMap::new();
        for s in &split {
            let from = *link_index.get(&s.from).ok_or_else(|| NetworkError::UnknownLink(s.from.clone()))?;
            let to = *link_index.get(&s.to).ok_or_else(|| NetworkError::UnknownLink(s.to.clone()))?;
            if !s.beta.is_finite() {
                return Err(NetworkError::Malformed {
                    link: s.from.clone(),
                    msg: format!("split ratio to {:?} is not finite", s.to),
                });
            }
            if resolved[to].tail != Some(resolved[from].head) {
                return Err(NetworkError::SplitEndpoints { from: s.from.clone(), to: s.to.clone() });
            }
            if beta.insert((from, to), s.beta).is_some() {
                return Err(NetworkError::DuplicateSplit { from: s.from.clone(), to: s.to.clone() });
            }
        }

        let mut in_links = vec![Vec::new(); junctions.len()];
        let mut out_links = vec![Vec::new(); junctions.len()];
        for (i, l) in resolved.iter().enumerate() {
            in_links[l.head].push(i);
            if let Some(t) = l.tail {
                out_links[t].push(i);
            }
        }
        let mut split_out = vec![Vec::new(); resolved.len()];
        for (&(from, to), &b) in &beta {
            split_out[from].push((to, b));
        }
        for s in &mut split_out {
            s.sort_by_key(|&(to, _)| to);
        }

        let mut default_demands = Vec::new();
        let onramps: Vec<usize> =
            (0..resolved.len()).filter(|&i| resolved[i].is_onramp()).collect();
        let ordinaries: Vec<usize> =
            (0..resolved.len()).filter(|&i| !resolved[i].is_onramp()).collect();
        for &r in &onramps {
            default_demands.push(demands.get(&resolved[r].id).copied().unwrap_or(0.0));
        }
        for key in demands.keys() {
            match link_index.get(key) {
                Some(&i) if resolved[i].is_onramp() => {}
                _ => return Err(NetworkError::BadDemandKey(key.clone())),
            }
        }

        let mut net = Network {
            junction_ids: junctions,
            links: resolved,
            link_index,
            junction_index,
            in_links,
            out_links,
            beta,
            split_out,
            default_demands,
            onramps,
            ordinaries,
            topo_junctions: None,
            link_rank: None,
        };
        if let Some(topo) = net.topological_junctions() {
            let mut rank = vec![usize::MAX; net.links.len()];
            let mut next = 0;
            for &v in &topo {
                for &l in &net.in_links[v] {
                    rank[l] = next;
                    next += 1;
                }
            }
            net.link_rank = Some(rank);
            net.topo_junctions = Some(topo);
        }
        Ok(net)
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile = serde_json::from_str(text)?;
        Self::from_parts(file.junctions, file.links, file.split, file.demands)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_schema(&self) -> NetworkFile {
        let mut split: Vec<SplitEntry> = self
            .beta
            .iter()
            .map(|(&(from, to), &beta)| SplitEntry {
                from: self.links[from].id.clone(),
                to: self.links[to].id.clone(),
                beta,
            })
            .collect();
        split.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
        NetworkFile {
            junctions: self.junction_ids.clone(),
            links: self
                .links
                .iter()
                .map(|l| LinkFile {
                    id: l.id.clone(),
                    kind: l.kind,
                    tail: l.tail.map(|t| self.junction_ids[t].clone()),
                    head: self.junction_ids[l.head].clone(),
                    demand: l.demand.clone(),
                    supply: l.supply.clone(),
                    meter: l.meter,
                })
                .collect(),
            split,
            demands: self
                .onramps
                .iter()
                .zip(&self.default_demands)
                .map(|(&r, &d)| (self.links[r].id.clone(), d))
                .collect(),
        }
    }

    fn topological_junctions(&self) -> Option<Vec<usize>> {
        let n = self.junction_ids.len();
        let mut indeg = vec![0usize; n];
        for l in &self.links {
            if l.tail.is_some() {
                indeg[l.head] += 1;
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut done = vec![false; n];
        for _ in 0..n {
            // Smallest-index zero-indegree junction keeps the order stable.
            let v = (0..n).find(|&v| !done[v] && indeg[v] == 0)?;
            done[v] = true;
            order.push(v);
            for &l in &self.out_links[v] {
                indeg[self.links[l].head] -= 1;
            }
        }
        Some(order)
    }

    // --- accessors ---

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_junctions(&self) -> usize {
        self.junction_ids.len()
    }

    pub fn link(&self, i: usize) -> &Link {
        &self.links[i]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn junction_id(&self, v: usize) -> &str {
        &self.junction_ids[v]
    }

    pub fn link_id(&self, i: usize) -> &str {
        &self.links[i].id
    }

    pub fn link_by_id(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    pub fn junction_by_id(&self, id: &str) -> Option<usize> {
        self.junction_index.get(id).copied()
    }

    pub fn in_links(&self, v: usize) -> &[usize] {
        &self.in_links[v]
    }

    pub fn out_links(&self, v: usize) -> &[usize] {
        &self.out_links[v]
    }

    pub fn is_sink(&self, v: usize) -> bool {
        self.out_links[v].is_empty()
    }

    pub fn beta(&self, from: usize, to: usize) -> f64 {
        self.beta.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn split_out(&self, from: usize) -> &[(usize, f64)] {
        &self.split_out[from]
    }

    /// Fraction of the outflow of `l` that leaves the network at its head.
    pub fn gamma(&self, l: usize) -> f64 {
        1.0 - self.split_out[l].iter().map(|&(_, b)| b).sum::<f64>()
    }

    /// Onramp link indices in declaration order; demand vectors align with
    /// this order everywhere in the crate.
    pub fn onramps(&self) -> &[usize] {
        &self.onramps
    }

    pub fn ordinaries(&self) -> &[usize] {
        &self.ordinaries
    }

    pub fn default_demands(&self) -> &[f64] {
        &self.default_demands
    }

    /// Demand vector from the file defaults plus `overrides` by onramp id.
    pub fn demands_with_overrides(
        &self,
        overrides: &BTreeMap<String, f64>,
    ) -> Result<Vec<f64>, NetworkError> {
        for key in overrides.keys() {
            match self.link_by_id(key) {
                Some(i) if self.links[i].is_onramp() => {}
                _ => return Err(NetworkError::BadDemandKey(key.clone())),
            }
        }
        Ok(self
            .onramps
            .iter()
            .zip(&self.default_demands)
            .map(|(&r, &d)| overrides.get(&self.links[r].id).copied().unwrap_or(d))
            .collect())
    }

    /// Enumeration rank of each link, grouping incoming links junction by
    /// junction along the topological order. `None` when the graph is cyclic.
    pub fn link_rank(&self, l: usize) -> Option<usize> {
        self.link_rank.as_ref().map(|r| r[l])
    }

    pub fn topological_order(&self) -> Option<&[usize]> {
        self.topo_junctions.as_deref()
    }

    pub fn is_acyclic(&self) -> bool {
        self.topo_junctions.is_some()
    }

    /// Largest jam density over ordinary links (sizing for clamps).
    pub fn max_jam(&self) -> f64 {
        self.ordinaries
            .iter()
            .filter_map(|&l| self.links[l].jam())
            .fold(0.0, f64::max)
    }
}

/// One assumption violation found by [`validate`].
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    /// Offending link or junction id when one exists.
    pub subject: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "network OK");
        }
        for v in &self.violations {
            match &v.subject {
                Some(s) => writeln!(f, "{}: {}", s, v.message)?,
                None => writeln!(f, "{}", v.message)?,
            }
        }
        Ok(())
    }
}

/// Check the structural and parametric assumptions the dynamics rely on:
/// positive diagram parameters, acyclicity, inflow at every junction,
/// onramps feeding junctions that can discharge, and split ratios that are
/// present, positive, and sum to at most one.
pub fn validate(net: &Network) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |subject: Option<String>, message: String| {
        violations.push(Violation { subject, message });
    };

    for l in net.links() {
        for msg in l.demand.check() {
            push(Some(l.id.clone()), msg);
        }
        if let Some(s) = &l.supply {
            for msg in s.check() {
                push(Some(l.id.clone()), msg);
            }
        }
    }

    if !net.is_acyclic() {
        push(None, "link graph contains a cycle".into());
    }

    for v in 0..net.num_junctions() {
        if net.in_links(v).is_empty() {
            push(
                Some(net.junction_id(v).to_string()),
                "junction has no incoming link".into(),
            );
        }
    }
    for &r in net.onramps() {
        if net.is_sink(net.link(r).head) {
            push(
                Some(net.link_id(r).to_string()),
                "onramp feeds a junction with no outgoing link".into(),
            );
        }
    }

    for v in 0..net.num_junctions() {
        if net.is_sink(v) {
            continue;
        }
        for &l in net.in_links(v) {
            let mut sum = 0.0;
            for &k in net.out_links(v) {
                let b = net.beta(l, k);
                if b <= 0.0 {
                    push(
                        Some(net.link_id(l).to_string()),
                        format!("split ratio to {:?} must be positive", net.link_id(k)),
                    );
                } else if b > 1.0 {
                    push(
                        Some(net.link_id(l).to_string()),
                        format!("split ratio to {:?} exceeds one", net.link_id(k)),
                    );
                }
                sum += b.max(0.0);
            }
            if sum > 1.0 + 1e-12 {
                push(
                    Some(net.link_id(l).to_string()),
                    format!("split ratios sum to {sum} > 1"),
                );
            }
        }
    }

    for (&r, &d) in net.onramps().iter().zip(net.default_demands()) {
        if !(d.is_finite() && d >= 0.0) {
            push(
                Some(net.link_id(r).to_string()),
                format!("default demand {d} must be finite and nonnegative"),
            );
        }
    }

    ValidationReport { violations }
}

/// Routing matrices of an acyclic network under the link enumeration.
///
/// `a[l][k]` is the share of the outflow of ordinary link `k` entering
/// ordinary link `l`, strictly lower triangular in enumeration order;
/// `b[l][r]` routes onramp outflows. Columns of `b` follow
/// [`Network::onramps`] declaration order.
#[derive(Debug, Clone)]
pub struct RoutingMatrices {
    /// Ordinary link indices sorted by enumeration rank (row/column order of `a`).
    pub ordinary: Vec<usize>,
    /// Onramp link indices in declaration order (column order of `b`).
    pub onramps: Vec<usize>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

pub fn routing_matrices(net: &Network) -> Result<RoutingMatrices, NetworkError> {
    if !net.is_acyclic() {
        return Err(NetworkError::CycleDetected);
    }
    let mut ordinary: Vec<usize> = net.ordinaries().to_vec();
    ordinary.sort_by_key(|&l| net.link_rank(l).unwrap());
    let pos: HashMap<usize, usize> =
        ordinary.iter().enumerate().map(|(p, &l)| (l, p)).collect();
    let onramps = net.onramps().to_vec();
    let n = ordinary.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, onramps.len());
    for (col, &k) in ordinary.iter().enumerate() {
        for &(to, beta) in net.split_out(k) {
            a[(pos[&to], col)] = beta;
        }
    }
    for (col, &r) in onramps.iter().enumerate() {
        for &(to, beta) in net.split_out(r) {
            b[(pos[&to], col)] = beta;
        }
    }
    Ok(RoutingMatrices { ordinary, onramps, a, b })
}

impl RoutingMatrices {
    /// Solve `(I - A) x = B d` by forward substitution; `d` follows the
    /// onramp declaration order, the result follows `self.ordinary`.
    pub fn equilibrium_flows(&self, d: &[f64]) -> Vec<f64> {
        assert_eq!(d.len(), self.onramps.len(), "demand vector length");
        let n = self.ordinary.len();
        let mut x = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for (col, &dr) in d.iter().enumerate() {
                acc += self.b[(i, col)] * dr;
            }
            for j in 0..i {
                acc += self.a[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        x
    }
}

/// Critical point (density, flow) of every ordinary link; `None` entries are
/// onramps.
pub fn critical_points(
    net: &Network,
) -> Result<Vec<Option<(f64, f64)>>, crate::diagram::DiagramError> {
    net.links()
        .iter()
        .map(|l| match (&l.supply, l.kind) {
            (Some(supply), LinkKind::Ordinary) => {
                crate::diagram::critical_point(&l.demand, supply).map(Some)
            }
            _ => Ok(None),
        })
        .collect()
}

/// Largest critical flow over ordinary links; the capacity scale of the
/// network.
pub fn max_critical_flow(net: &Network) -> Result<f64, crate::diagram::DiagramError> {
    Ok(critical_points(net)?
        .into_iter()
        .flatten()
        .map(|(_, flow)| flow)
        .fold(0.0, f64::max))
}

/// True when the undirected skeleton over junctions and ordinary links is a
/// tree: directed-acyclic, connected, and without parallel paths.
pub fn is_polytree(net: &Network) -> bool {
    if !net.is_acyclic() {
        return false;
    }
    let n = net.num_junctions();
    if n == 0 {
        return false;
    }
    // Edge-indexed DFS over the undirected skeleton; reusing any edge other
    // than the arrival edge closes a cycle (parallel edges included).
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, l) in net.links().iter().enumerate() {
        if let Some(t) = l.tail {
            adj[t].push((l.head, e));
            adj[l.head].push((t, e));
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![(0usize, usize::MAX)];
    seen[0] = true;
    while let Some((v, via)) = stack.pop() {
        for &(w, e) in &adj[v] {
            if e == via {
                continue;
            }
            if seen[w] {
                return false;
            }
            seen[w] = true;
            stack.push((w, e));
        }
    }
    seen.into_iter().all(|s| s)
}

/// True when no junction splits its inflow between two outgoing links.
pub fn is_merge_only(net: &Network) -> bool {
    (0..net.num_junctions()).all(|v| net.out_links(v).len() <= 1)
}

#[derive(Debug, Error)]
pub enum GammaError {
    #[error("junction {junction:?} has non-uniform off-network fractions (spread {spread:.3e})")]
    NonUniform { junction: String, spread: f64 },
}

/// Off-network fraction per junction: one minus the split-ratio sum of its
/// incoming links, which must agree across those links; sinks report one.
pub fn junction_gammas(net: &Network) -> Result<Vec<f64>, GammaError> {
    let mut gammas = Vec::with_capacity(net.num_junctions());
    for v in 0..net.num_junctions() {
        if net.is_sink(v) {
            gammas.push(1.0);
            continue;
        }
        let values: Vec<f64> = net.in_links(v).iter().map(|&l| net.gamma(l)).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > GAMMA_UNIFORM_ABS {
            return Err(GammaError::NonUniform {
                junction: net.junction_id(v).to_string(),
                spread: hi - lo,
            });
        }
        gammas.push(values.first().copied().unwrap_or(1.0));
    }
    Ok(gammas)
}
