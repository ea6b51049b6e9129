//! Trader groups from the grouping SVN.
//!
//! The SVN multigraph is collapsed to a weighted undirected graph and split by
//! minimising the two-level map equation of an undirected random walk. The
//! search moves nodes between neighbouring modules, aggregates modules into
//! super-nodes, and fine-tunes at the node level, keeping the best of several
//! seeded restarts.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsen::{CellFlow, SliceGrid, State, StateMatrix};
use crate::error::{Error, Result};
use crate::ingest::TraderId;
use crate::validate::Svn;

const EPS: f64 = 1e-12;

#[inline]
fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// A weighted undirected graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<Vec<(u32, f64)>>,
    strength: Vec<f64>,
    total: f64,
}

impl WeightedGraph {
    /// Builds a graph on `n` nodes; parallel edges are summed.
    pub fn from_edges(n: usize, edges: &[(u32, u32, f64)]) -> Result<Self> {
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for &(u, v, w) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(Error::input(format!("edge ({u}, {v}) outside a graph of {n} nodes")));
            }
            if u == v {
                return Err(Error::input(format!("self-loop on node {u}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::input(format!("edge ({u}, {v}) has weight {w}")));
            }
            adj[u as usize].push((v, w));
            adj[v as usize].push((u, w));
        }
        for row in &mut adj {
            row.sort_by_key(|e| e.0);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        let strength: Vec<f64> = adj.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
        let total = strength.iter().sum();
        Ok(WeightedGraph { adj, strength, total })
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbours(&self, u: usize) -> &[(u32, f64)] {
        &self.adj[u]
    }

    pub fn strength(&self, u: usize) -> f64 {
        self.strength[u]
    }

    pub fn total_strength(&self) -> f64 {
        self.total
    }

    /// Connected-component label of every node, numbered by first node.
    pub fn components(&self) -> Vec<u32> {
        let mut label = vec![u32::MAX; self.n_nodes()];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..self.n_nodes() {
            if label[s] != u32::MAX {
                continue;
            }
            label[s] = next;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adj[u] {
                    if label[v as usize] == u32::MAX {
                        label[v as usize] = next;
                        stack.push(v as usize);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Flow network at one aggregation level: node visit rates and edge flows.
#[derive(Debug, Clone)]
struct Level {
    flow: Vec<f64>,
    adj: Vec<Vec<(u32, f64)>>,
    out: Vec<f64>,
}

impl Level {
    fn leaf(g: &WeightedGraph) -> Level {
        let flow = g.strength.iter().map(|s| s / g.total).collect();
        let adj: Vec<Vec<(u32, f64)>> =
            g.adj.iter().map(|r| r.iter().map(|&(v, w)| (v, w / g.total)).collect()).collect();
        let out = adj.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
        Level { flow, adj, out }
    }

    fn len(&self) -> usize {
        self.flow.len()
    }

    /// Collapses the modules of `labels` (canonical, `0..k`) into single nodes.
    fn aggregate(&self, labels: &[u32], k: usize) -> Level {
        let mut flow = vec![0.0; k];
        let mut pairs: Vec<Vec<(u32, f64)>> = vec![Vec::new(); k];
        for u in 0..self.len() {
            let mu = labels[u];
            flow[mu as usize] += self.flow[u];
            for &(v, f) in &self.adj[u] {
                let mv = labels[v as usize];
                if mu != mv {
                    pairs[mu as usize].push((mv, f));
                }
            }
        }
        for row in &mut pairs {
            row.sort_by_key(|e| e.0);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        let out = pairs.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
        Level { flow, adj: pairs, out }
    }

    /// Module-dependent part of the codelength; the node entropy term is omitted.
    fn module_codelength(&self, labels: &[u32]) -> f64 {
        let k = labels.iter().map(|&m| m as usize + 1).max().unwrap_or(0);
        let mut exit = vec![0.0; k];
        let mut flow = vec![0.0; k];
        for u in 0..self.len() {
            let m = labels[u] as usize;
            flow[m] += self.flow[u];
            for &(v, f) in &self.adj[u] {
                if labels[v as usize] as usize != m {
                    exit[m] += f;
                }
            }
        }
        let q: f64 = exit.iter().sum();
        plogp(q) - 2.0 * exit.iter().map(|&e| plogp(e)).sum::<f64>()
            + exit.iter().zip(&flow).map(|(&e, &p)| plogp(e + p)).sum::<f64>()
    }
}

/// Relabels modules by order of first appearance.
fn canonical(labels: &[u32]) -> (Vec<u32>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|&m| {
            let next = map.len() as u32;
            *map.entry(m).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Greedy node moves from `init` until a sweep makes no improving move.
fn move_nodes(level: &Level, init: &[u32], rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = level.len();
    let mut module = canonical(init).0;
    let mut mflow = vec![0.0; n];
    let mut mexit = vec![0.0; n];
    let mut msize = vec![0usize; n];
    let mut link_to = vec![0.0; n];
    let mut touched: Vec<u32> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..1000 {
        mflow.iter_mut().for_each(|x| *x = 0.0);
        mexit.iter_mut().for_each(|x| *x = 0.0);
        msize.iter_mut().for_each(|x| *x = 0);
        for u in 0..n {
            let m = module[u] as usize;
            mflow[m] += level.flow[u];
            msize[m] += 1;
            for &(v, f) in &level.adj[u] {
                if module[v as usize] as usize != m {
                    mexit[m] += f;
                }
            }
        }
        let mut total_exit: f64 = mexit.iter().sum();
        let mut empties: Vec<u32> = (0..n as u32).filter(|&m| msize[m as usize] == 0).rev().collect();

        order.shuffle(rng);
        let mut moved = false;
        for &u in &order {
            let a = module[u];
            for &(v, f) in &level.adj[u] {
                let m = module[v as usize];
                if link_to[m as usize] == 0.0 {
                    touched.push(m);
                }
                link_to[m as usize] += f;
            }
            touched.sort_unstable();
            let (p, out) = (level.flow[u], level.out[u]);
            let ai = a as usize;
            let exit_a = mexit[ai] - out + 2.0 * link_to[ai];
            let flow_a = mflow[ai] - p;

            let mut best: Option<(u32, f64, f64)> = None;
            let mut best_delta = -EPS;
            let empty = (msize[ai] > 1).then(|| empties.last().copied()).flatten();
            for b in touched.iter().copied().filter(|&b| b != a).chain(empty) {
                let bi = b as usize;
                let exit_b = mexit[bi] + out - 2.0 * link_to[bi];
                let flow_b = mflow[bi] + p;
                let total_new = total_exit - mexit[ai] - mexit[bi] + exit_a + exit_b;
                let delta = plogp(total_new)
                    - plogp(total_exit)
                    - 2.0 * (plogp(exit_a) + plogp(exit_b) - plogp(mexit[ai]) - plogp(mexit[bi]))
                    + plogp(exit_a + flow_a)
                    + plogp(exit_b + flow_b)
                    - plogp(mexit[ai] + mflow[ai])
                    - plogp(mexit[bi] + mflow[bi]);
                if delta < best_delta {
                    best_delta = delta;
                    best = Some((b, exit_b, flow_b));
                }
            }
            if let Some((b, exit_b, flow_b)) = best {
                let bi = b as usize;
                total_exit += exit_a + exit_b - mexit[ai] - mexit[bi];
                mexit[ai] = exit_a;
                mflow[ai] = flow_a;
                mexit[bi] = exit_b;
                mflow[bi] = flow_b;
                msize[ai] -= 1;
                msize[bi] += 1;
                if empties.last() == Some(&b) {
                    empties.pop();
                }
                if msize[ai] == 0 {
                    empties.push(a);
                }
                module[u] = b;
                moved = true;
            }
            for &m in &touched {
                link_to[m as usize] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
    }
    canonical(&module).0
}

/// One restart of the search; returns canonical leaf labels.
fn search(leaf: &Level, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = leaf.len();
    let mut labels: Vec<u32> = (0..n as u32).collect();
    let mut best = leaf.module_codelength(&labels);
    loop {
        // coarse phase: optimise super-nodes until aggregation stops helping
        loop {
            let (canon, k) = canonical(&labels);
            let level = leaf.aggregate(&canon, k);
            let singletons: Vec<u32> = (0..k as u32).collect();
            let merged = move_nodes(&level, &singletons, rng);
            let candidate: Vec<u32> = canon.iter().map(|&m| merged[m as usize]).collect();
            let l = leaf.module_codelength(&candidate);
            if l < best - EPS {
                best = l;
                labels = candidate;
            } else {
                labels = canon;
                break;
            }
        }
        // fine-tune individual nodes from the current modules
        let tuned = move_nodes(leaf, &labels, rng);
        let l = leaf.module_codelength(&tuned);
        if l < best - EPS {
            best = l;
            labels = tuned;
        } else {
            break;
        }
    }
    canonical(&labels).0
}

/// Two-level map equation codelength, in bits, of `labels` on `graph`.
pub fn map_codelength(graph: &WeightedGraph, labels: &[u32]) -> Result<f64> {
    if graph.n_nodes() == 0 || graph.total_strength() <= 0.0 {
        return Err(Error::input("map codelength of a graph without edges"));
    }
    if labels.len() != graph.n_nodes() {
        return Err(Error::input(format!("{} labels for {} nodes", labels.len(), graph.n_nodes())));
    }
    let leaf = Level::leaf(graph);
    let node_entropy: f64 = -leaf.flow.iter().map(|&p| plogp(p)).sum::<f64>();
    Ok(leaf.module_codelength(&canonical(labels).0) + node_entropy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommunityConfig {
    pub n_restarts: usize,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        CommunityConfig { n_restarts: 10 }
    }
}

/// Partition of a graph's nodes minimising the map equation; canonical labels.
pub fn minimise_codelength(graph: &WeightedGraph, seed: u64, cfg: &CommunityConfig) -> Result<(Vec<u32>, f64)> {
    if graph.total_strength() <= 0.0 {
        return Err(Error::input("community detection on a graph without edges"));
    }
    let leaf = Level::leaf(graph);
    let mut candidates: Vec<Vec<u32>> = (0..cfg.n_restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            search(&leaf, &mut rng)
        })
        .collect();
    candidates.push(graph.components());
    let scored: Vec<(f64, Vec<u32>)> =
        candidates.into_iter().map(|c| (map_codelength(graph, &c).expect("valid labels"), c)).collect();
    let min = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let tol = 1e-10 * min.abs().max(1.0);
    let (l, labels) =
        scored.into_iter().filter(|s| s.0 <= min + tol).min_by(|a, b| a.1.cmp(&b.1)).expect("at least one candidate");
    Ok((labels, l))
}

/// Groups found in one window at one timescale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub window_id: usize,
    pub delta_t_s: u32,
    /// Disjoint groups, each sorted; ordered by smallest member. Group ids are indices.
    pub groups: Vec<Vec<TraderId>>,
    /// Codelength of the partition in bits; absent for an empty partition.
    pub codelength: Option<f64>,
}

impl GroupPartition {
    pub fn empty(window_id: usize, delta_t_s: u32) -> Self {
        GroupPartition { window_id, delta_t_s, groups: Vec::new(), codelength: None }
    }

    pub fn from_groups(window_id: usize, delta_t_s: u32, mut groups: Vec<Vec<TraderId>>) -> Self {
        groups.iter_mut().for_each(|g| g.sort());
        groups.retain(|g| !g.is_empty());
        groups.sort();
        GroupPartition { window_id, delta_t_s, groups, codelength: None }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_members(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Map from trader to group id.
    pub fn assignment(&self) -> std::collections::BTreeMap<TraderId, usize> {
        self.groups.iter().enumerate().flat_map(|(g, m)| m.iter().map(move |t| (t.clone(), g))).collect()
    }

    /// Export as `window_id,delta_t,group_id,trader_id`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["window_id", "delta_t", "group_id", "trader_id"])?;
        self.write_rows(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (g, members) in self.groups.iter().enumerate() {
            for t in members {
                w.write_record([self.window_id.to_string(), self.delta_t_s.to_string(), g.to_string(), t.0.clone()])?;
            }
        }
        Ok(())
    }

    /// Reads partitions written by [`GroupPartition::write_csv`], keyed by `(window, delta_t)`.
    pub fn read_csv<R: std::io::Read>(src: R) -> Result<Vec<GroupPartition>> {
        let mut r = csv::Reader::from_reader(src);
        let mut acc: std::collections::BTreeMap<(usize, u32), Vec<Vec<TraderId>>> = Default::default();
        for (n, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = n as u64 + 2;
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Parse { line, message: "missing field".into() })
            };
            let num = |i: usize| -> Result<usize> {
                field(i)?.parse().map_err(|_| Error::Parse { line, message: format!("bad integer in column {i}") })
            };
            let groups = acc.entry((num(0)?, num(1)? as u32)).or_default();
            let g = num(2)?;
            if groups.len() <= g {
                groups.resize(g + 1, Vec::new());
            }
            groups[g].push(TraderId(field(3)?.to_string()));
        }
        Ok(acc.into_iter().map(|((w, dt), groups)| GroupPartition::from_groups(w, dt, groups)).collect())
    }
}

/// Collapses SVN links to edge weights and detects groups among its nodes.
pub fn detect_communities(svn: &Svn, seed: u64, cfg: &CommunityConfig) -> Result<GroupPartition> {
    let nodes = svn.nodes();
    if nodes.is_empty() {
        return Ok(GroupPartition::empty(svn.window_id, svn.delta_t_s));
    }
    let index = |t: u32| nodes.binary_search(&t).expect("link endpoint is a node") as u32;
    let edges: Vec<(u32, u32, f64)> = svn.links.iter().map(|l| (index(l.i), index(l.j), 1.0)).collect();
    let graph = WeightedGraph::from_edges(nodes.len(), &edges)?;
    let (labels, codelength) = minimise_codelength(&graph, seed, cfg)?;
    let k = labels.iter().map(|&m| m as usize + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); k];
    for (node, &m) in labels.iter().enumerate() {
        groups[m as usize].push(svn.traders[nodes[node] as usize].clone());
    }
    let mut p = GroupPartition::from_groups(svn.window_id, svn.delta_t_s, groups);
    p.codelength = Some(codelength);
    Ok(p)
}

/// Aggregate statistics of one partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvnSummary {
    pub n_groups: usize,
    /// Grouped traders over the universe size.
    pub fraction_grouped: f64,
    pub mean_size: Option<f64>,
    pub median_size: Option<f64>,
}

pub fn svn_summary(partition: &GroupPartition, universe: usize) -> Result<SvnSummary> {
    if universe == 0 {
        return Err(Error::input("summary over an empty trader universe"));
    }
    let mut sizes: Vec<usize> = partition.groups.iter().map(Vec::len).collect();
    sizes.sort_unstable();
    let n = sizes.len();
    let total: usize = sizes.iter().sum();
    let mean_size = (n > 0).then(|| total as f64 / n as f64);
    let median_size =
        (n > 0).then(|| if n % 2 == 1 { sizes[n / 2] as f64 } else { (sizes[n / 2 - 1] + sizes[n / 2]) as f64 / 2.0 });
    Ok(SvnSummary { n_groups: n, fraction_grouped: total as f64 / universe as f64, mean_size, median_size })
}

/// Aggregated flows and states of every group on a slice grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStateSeries {
    pub grid: SliceGrid,
    pub rho0: f64,
    /// `flows[g][slot]`.
    pub flows: Vec<Vec<CellFlow>>,
    /// `states[g][slot]`; inactive when the group has no turnover.
    pub states: Vec<Vec<State>>,
}

/// Sums member flows per slot. Members missing from `sm` contribute nothing.
pub fn group_state_series(partition: &GroupPartition, sm: &StateMatrix, rho0: f64) -> GroupStateSeries {
    let flows: Vec<Vec<CellFlow>> = partition
        .groups
        .iter()
        .map(|members| {
            let mut agg = vec![CellFlow::default(); sm.n_slots()];
            for i in members.iter().filter_map(|t| sm.index_of(t)) {
                for (a, f) in agg.iter_mut().zip(sm.flows(i)) {
                    a.merge(f);
                }
            }
            agg
        })
        .collect();
    let states = flows.iter().map(|r| r.iter().map(|f| f.state(rho0)).collect()).collect();
    GroupStateSeries { grid: *sm.grid(), rho0, flows, states }
}
