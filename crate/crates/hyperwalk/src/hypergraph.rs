//! Temporal hypergraph construction from windowed signal correlations.
//!
//! Per window: compute all pairwise Pearson correlations, derive for each
//! node the nearest-rank percentile threshold of its strictly positive
//! correlations, connect pairs whose correlation clears both endpoints'
//! thresholds, and emit every maximal clique of that strong-tie graph as a
//! timestamped hyperedge. Oversized cliques are decomposed into their
//! lexicographically first fixed-size subsets.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SignalMatrix;
use crate::tensor::Tensor;

pub type NodeId = u32;
pub type EdgeId = u32;

/// Parser guard against absurd header claims in untrusted files.
const MAX_NODES: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperedge {
    /// Sorted, duplicate-free node ids.
    pub nodes: Vec<NodeId>,
    /// Window index.
    pub t: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    /// Window length L, in timepoints.
    pub window_length: usize,
    /// Stride s between window starts, in timepoints.
    pub stride: usize,
    /// Percentile (nearest-rank) applied to each node's positive correlations.
    pub percentile: f64,
    pub max_hyperedge_size: usize,
}

impl WindowConfig {
    pub fn new(window_length: usize, stride: usize) -> Self {
        WindowConfig { window_length, stride, percentile: 90.0, max_hyperedge_size: 8 }
    }

    pub fn validate(&self, n_timepoints: usize) -> Result<()> {
        if self.stride < 1 {
            return Err(Error::config("stride", "must be at least 1"));
        }
        if self.stride > self.window_length {
            return Err(Error::config("stride", "must not exceed window_length"));
        }
        if self.window_length > n_timepoints {
            return Err(Error::config("window_length", "must not exceed the series length"));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::config("percentile", "must be in (0, 100)"));
        }
        if self.max_hyperedge_size < 2 {
            return Err(Error::config("max_hyperedge_size", "must be at least 2"));
        }
        Ok(())
    }
}

/// M = floor((T - L) / s) + 1; window p covers columns [p*s, p*s + L).
pub fn window_count(n_timepoints: usize, window_length: usize, stride: usize) -> Result<usize> {
    if stride < 1 {
        return Err(Error::config("stride", "must be at least 1"));
    }
    if window_length > n_timepoints {
        return Err(Error::config("window_length", "must not exceed the series length"));
    }
    Ok((n_timepoints - window_length) / stride + 1)
}

/// Sample Pearson correlation, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    assert_eq!(x.len(), y.len(), "pearson requires equal lengths");
    assert!(x.len() >= 2, "pearson requires at least 2 samples");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Upper-triangular correlation matrix of the window's rows; NaN marks pairs
/// involving a constant row (treated downstream as "no positive correlation").
fn correlation_matrix(window: &Tensor) -> Vec<f64> {
    let r = window.rows();
    let mut corr = vec![f64::NAN; r * r];
    for a in 0..r {
        for b in (a + 1)..r {
            if let Ok(v) = pearson(window.row(a), window.row(b)) {
                corr[a * r + b] = v;
                corr[b * r + a] = v;
            }
        }
    }
    corr
}

/// Nearest-rank percentile of each node's strictly positive correlations;
/// `None` when a node has no positive correlation at all.
fn node_thresholds(corr: &[f64], r: usize, percentile: f64) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(r);
    let mut pos = Vec::with_capacity(r);
    for v in 0..r {
        pos.clear();
        for u in 0..r {
            if u == v {
                continue;
            }
            let c = corr[v * r + u];
            if c > 0.0 {
                pos.push(c);
            }
        }
        if pos.is_empty() {
            out.push(None);
            continue;
        }
        pos.sort_by(f64::total_cmp);
        // Floor-based nearest rank, clamped to at least 1. With the ceil
        // variant a node with fewer than ceil(100/(100-p)) positive
        // correlations would only ever accept its single maximum, and no
        // clique beyond mutual-max pairs could form; floor keeps a group of
        // near-identical signals mutually tied. Multiply before dividing so
        // e.g. 90 * 10 / 100 lands exactly on 9.
        let rank = ((percentile * pos.len() as f64) / 100.0).floor() as usize;
        let rank = rank.clamp(1, pos.len());
        out.push(Some(pos[rank - 1]));
    }
    out
}

/// Mutual strong-tie adjacency: (u, v) iff corr > 0 and corr clears both
/// nodes' thresholds.
fn strong_tie_graph(corr: &[f64], thresholds: &[Option<f64>], r: usize) -> Vec<bool> {
    let mut adj = vec![false; r * r];
    for u in 0..r {
        let Some(tu) = thresholds[u] else { continue };
        for v in (u + 1)..r {
            let Some(tv) = thresholds[v] else { continue };
            let c = corr[u * r + v];
            if c > 0.0 && c >= tu && c >= tv {
                adj[u * r + v] = true;
                adj[v * r + u] = true;
            }
        }
    }
    adj
}

/// Bron-Kerbosch with max-degree pivoting over a dense adjacency matrix.
fn maximal_cliques(adj: &[bool], r: usize) -> Vec<Vec<NodeId>> {
    fn degree(adj: &[bool], r: usize, v: usize) -> usize {
        (0..r).filter(|&u| adj[v * r + u]).count()
    }
    fn expand(
        adj: &[bool],
        r: usize,
        current: &mut Vec<usize>,
        mut candidates: Vec<usize>,
        mut excluded: Vec<usize>,
        out: &mut Vec<Vec<NodeId>>,
    ) {
        if candidates.is_empty() && excluded.is_empty() {
            out.push(current.iter().map(|&v| v as NodeId).collect());
            return;
        }
        let pivot = candidates
            .iter()
            .chain(excluded.iter())
            .copied()
            .max_by_key(|&u| (degree(adj, r, u), std::cmp::Reverse(u)))
            .unwrap();
        let todo: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&v| !adj[pivot * r + v])
            .collect();
        for v in todo {
            let next_p = candidates.iter().copied().filter(|&u| adj[v * r + u]).collect();
            let next_x = excluded.iter().copied().filter(|&u| adj[v * r + u]).collect();
            current.push(v);
            expand(adj, r, current, next_p, next_x, out);
            current.pop();
            candidates.retain(|&u| u != v);
            excluded.push(v);
        }
    }

    let mut out = Vec::new();
    expand(adj, r, &mut Vec::new(), (0..r).collect(), Vec::new(), &mut out);
    for clique in out.iter_mut() {
        clique.sort_unstable();
    }
    out
}

const MAX_DECOMPOSED_SUBSETS: usize = 20;

/// One window's hyperedges: every maximal strong-tie clique of size in
/// [2, max]; larger cliques decompose into their first 20 size-max subsets
/// in lexicographic order. Output is deduplicated and lexicographically
/// sorted.
pub fn build_window_hypergraph(
    window: &Tensor,
    cfg: &WindowConfig,
    t: u32,
) -> Vec<Hyperedge> {
    let r = window.rows();
    let corr = correlation_matrix(window);
    let thresholds = node_thresholds(&corr, r, cfg.percentile);
    let adj = strong_tie_graph(&corr, &thresholds, r);

    let mut sets: BTreeSet<Vec<NodeId>> = BTreeSet::new();
    for clique in maximal_cliques(&adj, r) {
        if clique.len() < 2 {
            continue;
        }
        if clique.len() <= cfg.max_hyperedge_size {
            sets.insert(clique);
        } else {
            for subset in clique
                .iter()
                .copied()
                .combinations(cfg.max_hyperedge_size)
                .take(MAX_DECOMPOSED_SUBSETS)
            {
                sets.insert(subset);
            }
        }
    }
    sets.into_iter().map(|nodes| Hyperedge { nodes, t }).collect()
}

/// Node set plus timestamped hyperedges, indexed per node for fast
/// backward-in-time neighbor queries. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalHypergraph {
    n_nodes: usize,
    n_windows: u32,
    /// Sorted by (t, lexicographic nodes).
    edges: Vec<Hyperedge>,
    /// Per node, ascending edge ids (hence ascending t) of edges containing it.
    node_index: Vec<Vec<EdgeId>>,
}

impl TemporalHypergraph {
    pub fn new(n_nodes: usize, n_windows: u32, mut edges: Vec<Hyperedge>) -> Result<Self> {
        for e in &edges {
            if e.nodes.len() < 2 {
                return Err(Error::Data(format!("hyperedge {:?} has fewer than 2 nodes", e.nodes)));
            }
            if !e.nodes.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Data(format!(
                    "hyperedge {:?} is not sorted and duplicate-free",
                    e.nodes
                )));
            }
            if e.nodes.last().map(|&n| n as usize >= n_nodes).unwrap_or(false) {
                return Err(Error::Data(format!(
                    "hyperedge {:?} references node >= {n_nodes}",
                    e.nodes
                )));
            }
            if e.t >= n_windows {
                return Err(Error::Data(format!(
                    "hyperedge at t={} outside [0, {n_windows})",
                    e.t
                )));
            }
        }
        edges.sort_by(|a, b| a.t.cmp(&b.t).then_with(|| a.nodes.cmp(&b.nodes)));
        let mut node_index = vec![Vec::new(); n_nodes];
        for (id, e) in edges.iter().enumerate() {
            for &v in &e.nodes {
                node_index[v as usize].push(id as EdgeId);
            }
        }
        Ok(TemporalHypergraph { n_nodes, n_windows, edges, node_index })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_windows(&self) -> u32 {
        self.n_windows
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Hyperedge {
        &self.edges[id as usize]
    }

    /// Edges containing `node` with t <= t_max, ascending (t, id).
    pub fn edges_containing(&self, node: NodeId, t_max: u32) -> &[EdgeId] {
        let list = &self.node_index[node as usize];
        let end = list.partition_point(|&id| self.edges[id as usize].t <= t_max);
        &list[..end]
    }

    /// All edges sharing at least one node with `edge_id` at t <= t_max,
    /// excluding `edge_id` itself; ascending (t, id), duplicates removed.
    pub fn temporal_neighbors(&self, edge_id: EdgeId, t_max: u32) -> Result<Vec<(EdgeId, u32)>> {
        let e = self
            .edges
            .get(edge_id as usize)
            .ok_or_else(|| Error::Index(format!("edge id {edge_id} out of range")))?;
        // merge the per-node ascending id lists
        let mut lists: Vec<&[EdgeId]> = e
            .nodes
            .iter()
            .map(|&v| self.edges_containing(v, t_max))
            .collect();
        let mut cursors = vec![0usize; lists.len()];
        let mut out = Vec::new();
        loop {
            let mut best: Option<EdgeId> = None;
            for (li, list) in lists.iter().enumerate() {
                if let Some(&id) = list.get(cursors[li]) {
                    best = Some(best.map_or(id, |b| b.min(id)));
                }
            }
            let Some(id) = best else { break };
            for (li, list) in lists.iter_mut().enumerate() {
                if list.get(cursors[li]) == Some(&id) {
                    cursors[li] += 1;
                }
            }
            if id != edge_id {
                out.push((id, self.edges[id as usize].t));
            }
        }
        Ok(out)
    }
}

/// Builds the full temporal hypergraph over all sliding windows.
pub fn build_temporal_hypergraph(
    signals: &SignalMatrix,
    cfg: &WindowConfig,
) -> Result<TemporalHypergraph> {
    cfg.validate(signals.n_timepoints())?;
    let r = signals.n_rois();
    let m = window_count(signals.n_timepoints(), cfg.window_length, cfg.stride)?;

    let mut edges = Vec::new();
    for p in 0..m {
        let start = p * cfg.stride;
        let mut window = Tensor::zeros(r, cfg.window_length);
        for node in 0..r {
            let src = &signals.values.row(node)[start..start + cfg.window_length];
            window.data_mut()[node * cfg.window_length..(node + 1) * cfg.window_length]
                .copy_from_slice(src);
        }
        edges.extend(build_window_hypergraph(&window, cfg, p as u32));
    }
    TemporalHypergraph::new(r, m as u32, edges)
}

// ---------------------------------------------------------------------------
// JSON Lines format: header {"n_nodes":R,"n_windows":M}, then one
// {"nodes":[...],"t":k} object per edge, sorted by (t, lexicographic nodes).
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlHeader {
    n_nodes: usize,
    n_windows: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlEdge {
    nodes: Vec<NodeId>,
    t: u32,
}

pub fn write_graph_jsonl<W: Write>(g: &TemporalHypergraph, mut w: W) -> Result<()> {
    serde_json::to_writer(&mut w, &JsonlHeader { n_nodes: g.n_nodes, n_windows: g.n_windows })?;
    w.write_all(b"\n")?;
    for e in &g.edges {
        serde_json::to_writer(&mut w, &JsonlEdge { nodes: e.nodes.clone(), t: e.t })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_graph_jsonl(bytes: &[u8]) -> Result<TemporalHypergraph> {
    let mut lines = bytes.split(|&b| b == b'\n');
    let header_line = lines
        .next()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::parse(1, "missing header line"))?;
    let header: JsonlHeader = serde_json::from_slice(header_line)
        .map_err(|e| Error::parse(1, format!("bad header: {e}")))?;
    if header.n_nodes > MAX_NODES {
        return Err(Error::parse(1, format!("n_nodes {} exceeds limit {MAX_NODES}", header.n_nodes)));
    }
    let mut edges = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let e: JsonlEdge = serde_json::from_slice(line)
            .map_err(|err| Error::parse(idx + 2, format!("bad edge: {err}")))?;
        edges.push(Hyperedge { nodes: e.nodes, t: e.t });
    }
    TemporalHypergraph::new(header.n_nodes, header.n_windows, edges)
}

pub fn load_graph(path: &Path) -> Result<TemporalHypergraph> {
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut BufReader::new(File::open(path)?), &mut bytes)?;
    parse_graph_jsonl(&bytes)
}

pub fn save_graph(g: &TemporalHypergraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_graph_jsonl(g, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_count_examples() {
        assert_eq!(window_count(100, 30, 10).unwrap(), 8);
        assert_eq!(window_count(50, 50, 7).unwrap(), 1);
        assert_eq!(window_count(17, 5, 3).unwrap(), 5);
        assert!(matches!(window_count(10, 20, 1), Err(Error::Config { .. })));
    }

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateSignal)));
    }

    fn cfg() -> WindowConfig {
        WindowConfig::new(10, 10)
    }

    #[test]
    fn shared_signal_group_forms_one_hyperedge() {
        // nodes 0-2 carry one signal plus distinct tiny noise; node 3 is
        // independent noise
        let base = [0.1, 0.9, -0.4, 0.7, -0.8, 0.2, 0.5, -0.6, 0.3, -0.2];
        let indep = [0.6, -0.7, 0.1, -0.3, 0.8, -0.5, 0.2, 0.4, -0.9, 0.05];
        let mut w = Tensor::zeros(4, 10);
        for j in 0..10 {
            w.set(0, j, base[j]);
            w.set(1, j, base[j] + 1e-3 * (j as f64).sin());
            w.set(2, j, base[j] + 1e-3 * (j as f64).cos());
            w.set(3, j, indep[j]);
        }
        let edges = build_window_hypergraph(&w, &cfg(), 4);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].nodes, vec![0, 1, 2]);
        assert_eq!(edges[0].t, 4);
    }

    #[test]
    fn all_anticorrelated_yields_nothing() {
        let mut w = Tensor::zeros(2, 10);
        for j in 0..10 {
            w.set(0, j, j as f64);
            w.set(1, j, -(j as f64));
        }
        assert!(build_window_hypergraph(&w, &cfg(), 0).is_empty());
    }

    #[test]
    fn single_positive_tie_is_its_own_percentile() {
        // two rows with correlation ~0.9
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let y = [1.2, 1.8, 3.4, 3.7, 5.5, 5.6, 7.8, 7.5, 9.4, 9.6];
        let mut w = Tensor::zeros(2, 10);
        for j in 0..10 {
            w.set(0, j, x[j]);
            w.set(1, j, y[j]);
        }
        let edges = build_window_hypergraph(&w, &cfg(), 0);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].nodes, vec![0, 1]);
    }

    #[test]
    fn constant_row_joins_no_tie() {
        let mut w = Tensor::zeros(3, 10);
        for j in 0..10 {
            w.set(0, j, j as f64);
            w.set(1, j, j as f64 * 2.0 + 0.1 * ((j * j) as f64).sin());
            w.set(2, j, 5.0);
        }
        let edges = build_window_hypergraph(&w, &cfg(), 0);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].nodes, vec![0, 1]);
    }

    fn tiny_graph() -> TemporalHypergraph {
        // A={0,1}@t1, B={1,2}@t0, C={3,4}@t0
        TemporalHypergraph::new(
            5,
            2,
            vec![
                Hyperedge { nodes: vec![0, 1], t: 1 },
                Hyperedge { nodes: vec![1, 2], t: 0 },
                Hyperedge { nodes: vec![3, 4], t: 0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn temporal_neighbors_shared_node_and_time_bound() {
        let g = tiny_graph();
        // edges sorted by (t, nodes): id0 = B@0, id1 = C@0, id2 = A@1
        let a = g
            .edges()
            .iter()
            .position(|e| e.nodes == vec![0, 1])
            .unwrap() as EdgeId;
        let b = g
            .edges()
            .iter()
            .position(|e| e.nodes == vec![1, 2])
            .unwrap() as EdgeId;
        let ns = g.temporal_neighbors(a, 1).unwrap();
        assert_eq!(ns, vec![(b, 0)]);
        // t_max below every neighbor timestamp
        // (B is at t0; a query capped below t0 sees nothing)
        let g2 = TemporalHypergraph::new(
            3,
            3,
            vec![
                Hyperedge { nodes: vec![0, 1], t: 2 },
                Hyperedge { nodes: vec![1, 2], t: 1 },
            ],
        )
        .unwrap();
        let a2 = g2.edges().iter().position(|e| e.nodes == vec![0, 1]).unwrap() as EdgeId;
        assert!(g2.temporal_neighbors(a2, 0).unwrap().is_empty());
        assert!(matches!(g.temporal_neighbors(99, 1), Err(Error::Index(_))));
    }

    #[test]
    fn temporal_neighbors_matches_brute_force_on_random_graphs() {
        let mut rng = crate::rng::derive_rng(42, b"nbrs");
        use rand::Rng;
        for _ in 0..10 {
            let n_nodes = 12usize;
            let n_windows = 6u32;
            let mut edges = Vec::new();
            for _ in 0..200 {
                let size = rng.gen_range(2..=4);
                let mut nodes = BTreeSet::new();
                while nodes.len() < size {
                    nodes.insert(rng.gen_range(0..n_nodes as u32));
                }
                edges.push(Hyperedge {
                    nodes: nodes.into_iter().collect(),
                    t: rng.gen_range(0..n_windows),
                });
            }
            let g = TemporalHypergraph::new(n_nodes, n_windows, edges).unwrap();
            for _ in 0..20 {
                let id = rng.gen_range(0..g.n_edges() as u32);
                let t_max = rng.gen_range(0..n_windows);
                let got = g.temporal_neighbors(id, t_max).unwrap();
                let mut want: Vec<(EdgeId, u32)> = g
                    .edges()
                    .iter()
                    .enumerate()
                    .filter(|(oid, e)| {
                        *oid as u32 != id
                            && e.t <= t_max
                            && e.nodes.iter().any(|v| g.edge(id).nodes.contains(v))
                    })
                    .map(|(oid, e)| (oid as u32, e.t))
                    .collect();
                want.sort();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn single_window_when_t_equals_l() {
        let mut m = SignalMatrix {
            subject_id: "s".into(),
            values: Tensor::zeros(3, 10),
            roi_labels: vec!["a".into(), "b".into(), "c".into()],
        };
        let mut rng = crate::rng::derive_rng(1, b"tl");
        use rand::Rng;
        for i in 0..3 {
            for j in 0..10 {
                m.values.set(i, j, rng.gen());
            }
        }
        let g = build_temporal_hypergraph(&m, &cfg()).unwrap();
        assert_eq!(g.n_windows(), 1);
        assert!(g.edges().iter().all(|e| e.t == 0));
    }

    #[test]
    fn empty_edge_list_is_valid() {
        let g = TemporalHypergraph::new(4, 3, Vec::new()).unwrap();
        assert_eq!(g.n_edges(), 0);
        assert!(g.edges_containing(2, 2).is_empty());
    }

    #[test]
    fn planted_communities_dominate_emitted_edges() {
        use crate::ingest::{community_assignment, generate_cohort, CohortSpec};
        let spec = CohortSpec {
            n_subjects: 1,
            n_rois: 10,
            n_timepoints: 300,
            n_communities: 2,
            community_strength: 0.9,
            noise_sigma: 0.3,
            anomaly_fraction: 0.0,
            seed: 17,
        };
        let m = &generate_cohort(&spec).unwrap()[0];
        let g = build_temporal_hypergraph(&m, &WindowConfig::new(40, 20)).unwrap();
        assert!(g.n_edges() > 0);
        let comm = community_assignment(10, 2);
        let pure = g
            .edges()
            .iter()
            .filter(|e| {
                let c0 = comm[e.nodes[0] as usize];
                e.nodes.iter().all(|&v| comm[v as usize] == c0)
            })
            .count();
        let frac = pure as f64 / g.n_edges() as f64;
        assert!(frac >= 0.95, "only {frac:.2} of edges are community-pure");
    }

    #[test]
    fn jsonl_round_trips_and_orders_canonically() {
        let g = tiny_graph();
        let mut buf = Vec::new();
        write_graph_jsonl(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"n_nodes":5,"n_windows":2}"#);
        // edges sorted by (t, nodes)
        assert!(text.lines().nth(1).unwrap().contains("\"t\":0"));
        let back = parse_graph_jsonl(&buf).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn jsonl_rejects_malformed_input() {
        assert!(parse_graph_jsonl(b"").is_err());
        assert!(parse_graph_jsonl(b"{\"n_nodes\":4}").is_err());
        assert!(parse_graph_jsonl(b"{\"n_nodes\":4,\"n_windows\":1}\n{\"nodes\":[0,0],\"t\":0}").is_err());
        assert!(parse_graph_jsonl(b"{\"n_nodes\":4,\"n_windows\":1}\n{\"nodes\":[0,9],\"t\":0}").is_err());
        assert!(parse_graph_jsonl(b"{\"n_nodes\":4,\"n_windows\":1}\n{\"nodes\":[0,1],\"t\":5}").is_err());
        assert!(parse_graph_jsonl(b"{\"n_nodes\":99999999,\"n_windows\":1}").is_err());
    }

    #[test]
    fn oversized_cliques_decompose_lexicographically() {
        // fully-tied 5-clique with max size 3
        let mut w = Tensor::zeros(5, 12);
        let base: Vec<f64> = (0..12).map(|j| ((j * 7 % 5) as f64) - 2.0).collect();
        for i in 0..5 {
            for j in 0..12 {
                w.set(i, j, base[j] + 1e-6 * ((i * 12 + j) as f64).sin());
            }
        }
        let c = WindowConfig { window_length: 12, stride: 12, percentile: 10.0, max_hyperedge_size: 3 };
        let edges = build_window_hypergraph(&w, &c, 0);
        // C(5,3) = 10 subsets, all kept (< 20 cap)
        assert_eq!(edges.len(), 10);
        assert_eq!(edges[0].nodes, vec![0, 1, 2]);
        assert!(edges.iter().all(|e| e.nodes.len() == 3));
    }

    proptest! {
        /// Raising the percentile never adds a strong tie.
        #[test]
        fn percentile_monotonicity(seed in 0u64..500) {
            let mut rng = crate::rng::derive_rng(seed, b"mono");
            use rand::Rng;
            let r = rng.gen_range(3..8usize);
            let mut w = Tensor::zeros(r, 12);
            for i in 0..r {
                for j in 0..12 {
                    w.set(i, j, rng.gen::<f64>() * 2.0 - 1.0);
                }
            }
            let corr = correlation_matrix(&w);
            let lo = strong_tie_graph(&corr, &node_thresholds(&corr, r, 60.0), r);
            let hi = strong_tie_graph(&corr, &node_thresholds(&corr, r, 95.0), r);
            for (a, b) in hi.iter().zip(&lo) {
                prop_assert!(!a || *b, "tie present at 95 but absent at 60");
            }
        }

        /// Every pair inside every emitted hyperedge satisfies the mutual
        /// strong-tie predicate.
        #[test]
        fn emitted_edges_are_mutual(seed in 0u64..200) {
            let mut rng = crate::rng::derive_rng(seed, b"mutual");
            use rand::Rng;
            let r = rng.gen_range(3..9usize);
            let mut w = Tensor::zeros(r, 10);
            for i in 0..r {
                for j in 0..10 {
                    w.set(i, j, rng.gen::<f64>() * 2.0 - 1.0);
                }
            }
            let c = cfg();
            let corr = correlation_matrix(&w);
            let th = node_thresholds(&corr, r, c.percentile);
            for e in build_window_hypergraph(&w, &c, 0) {
                for (i, &u) in e.nodes.iter().enumerate() {
                    for &v in &e.nodes[i + 1..] {
                        let cv = corr[u as usize * r + v as usize];
                        prop_assert!(cv > 0.0);
                        prop_assert!(cv >= th[u as usize].unwrap());
                        prop_assert!(cv >= th[v as usize].unwrap());
                    }
                }
            }
        }
    }
}
