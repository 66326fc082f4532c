//! Time-biased backward walks over a temporal hypergraph.
//!
//! A walk is a fixed-length sequence of (hyperedge, timestamp) pairs with
//! non-increasing timestamps where consecutive hyperedges share a node.
//! Walks are rooted at a query pair that need not exist in the graph (that
//! is what lets the scorer see negative samples); the second step is
//! constrained to contain the anchor node, later steps may pivot through
//! any shared node. Step candidates are weighted by exp(theta * (t - t_prev)).

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypergraph::{EdgeId, NodeId, TemporalHypergraph};
use crate::rng::{derive_rng, query_tag};

#[derive(Clone, Debug, PartialEq)]
pub struct WalkConfig {
    /// Walk length, in hyperedge steps (including the root pair).
    pub walk_length: usize,
    /// Walks sampled per query node.
    pub walks_per_node: usize,
    /// Time-bias theta, per window unit; 0 is uniform.
    pub time_bias: f64,
    /// Candidate-set cap for steps beyond the anchor step; keeps the most
    /// recent candidates.
    pub max_candidates: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig { walk_length: 4, walks_per_node: 16, time_bias: 0.5, max_candidates: 64, seed: 0 }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_length < 2 {
            return Err(Error::config("walk_length", "must be at least 2"));
        }
        if self.walks_per_node < 1 {
            return Err(Error::config("walks_per_node", "must be at least 1"));
        }
        if !self.time_bias.is_finite() || self.time_bias < 0.0 {
            return Err(Error::config("time_bias", "must be finite and >= 0"));
        }
        if self.max_candidates < 1 {
            return Err(Error::config("max_candidates", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WalkStep {
    pub nodes: Vec<NodeId>,
    pub t: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    pub anchor: NodeId,
    pub steps: Vec<WalkStep>,
    /// First self-padded position, when the walk hit a dead end.
    pub padded_from: Option<usize>,
}

impl Walk {
    pub fn is_padded(&self) -> bool {
        self.padded_from.is_some()
    }

    pub fn padded_at(&self, pos: usize) -> bool {
        self.padded_from.map(|p| pos >= p).unwrap_or(false)
    }
}

/// All walks for one query hyperedge: exactly `walks_per_node` per member
/// node, anchors in ascending node order.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkSet {
    pub query: Vec<NodeId>,
    pub query_t: u32,
    pub anchors: Vec<(NodeId, Vec<Walk>)>,
}

impl WalkSet {
    pub fn iter_walks(&self) -> impl Iterator<Item = &Walk> {
        self.anchors.iter().flat_map(|(_, ws)| ws.iter())
    }

    pub fn n_walks(&self) -> usize {
        self.anchors.iter().map(|(_, ws)| ws.len()).sum()
    }
}

/// Normalized exp(theta * (t_i - t_prev)) over the candidates, max-shifted
/// for stability. Candidates must satisfy t_i <= t_prev.
pub fn step_probabilities(
    candidates: &[(EdgeId, u32)],
    t_prev: u32,
    theta: f64,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::NoNeighbor);
    }
    debug_assert!(candidates.iter().all(|&(_, t)| t <= t_prev));
    let logits: Vec<f64> = candidates
        .iter()
        .map(|&(_, t)| theta * (t as f64 - t_prev as f64))
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn choose_weighted(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn pad_to_length(steps: &mut Vec<WalkStep>, len: usize) -> Option<usize> {
    if steps.len() >= len {
        return None;
    }
    let from = steps.len();
    let last = steps.last().expect("walk has a root step").clone();
    while steps.len() < len {
        steps.push(last.clone());
    }
    Some(from)
}

/// Samples one walk rooted at `(root_edge, root_t)` — the query pair itself,
/// which may be absent from `g` — anchored so the second step contains
/// `anchor_node`. Dead ends self-pad by repeating the last step.
pub fn sample_walk(
    g: &TemporalHypergraph,
    root_edge: &[NodeId],
    root_t: u32,
    anchor_node: NodeId,
    cfg: &WalkConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Walk> {
    if !root_edge.contains(&anchor_node) {
        return Err(Error::Contract(format!(
            "anchor node {anchor_node} not in root edge {root_edge:?}"
        )));
    }
    let mut steps = Vec::with_capacity(cfg.walk_length);
    steps.push(WalkStep { nodes: root_edge.to_vec(), t: root_t });

    // anchor step: any graph edge containing the anchor at t <= root_t
    let anchor_cands: Vec<(EdgeId, u32)> = g
        .edges_containing(anchor_node, root_t)
        .iter()
        .map(|&id| (id, g.edge(id).t))
        .collect();
    if anchor_cands.is_empty() {
        let padded_from = pad_to_length(&mut steps, cfg.walk_length);
        return Ok(Walk { anchor: anchor_node, steps, padded_from });
    }
    let probs = step_probabilities(&anchor_cands, root_t, cfg.time_bias)?;
    let (mut prev_id, mut prev_t) = anchor_cands[choose_weighted(&probs, rng)];
    steps.push(WalkStep { nodes: g.edge(prev_id).nodes.clone(), t: prev_t });

    while steps.len() < cfg.walk_length {
        let mut cands = g.temporal_neighbors(prev_id, prev_t)?;
        if cands.len() > cfg.max_candidates {
            // keep the most recent (candidates are ascending in (t, id))
            cands.drain(..cands.len() - cfg.max_candidates);
        }
        if cands.is_empty() {
            break;
        }
        let probs = step_probabilities(&cands, prev_t, cfg.time_bias)?;
        let pick = cands[choose_weighted(&probs, rng)];
        prev_id = pick.0;
        prev_t = pick.1;
        steps.push(WalkStep { nodes: g.edge(prev_id).nodes.clone(), t: prev_t });
    }
    let padded_from = pad_to_length(&mut steps, cfg.walk_length);
    Ok(Walk { anchor: anchor_node, steps, padded_from })
}

/// Samples the full walk set for a query hyperedge. Deterministic given
/// `cfg.seed`: the RNG stream is derived from the seed and the query, so
/// scoring many queries in parallel cannot change any result.
pub fn sample_walk_set(
    g: &TemporalHypergraph,
    query_edge: &[NodeId],
    query_t: u32,
    cfg: &WalkConfig,
) -> Result<WalkSet> {
    cfg.validate()?;
    let mut query = query_edge.to_vec();
    query.sort_unstable();
    query.dedup();
    if query.len() < 2 {
        return Err(Error::Contract(format!(
            "query edge must have at least 2 distinct nodes, got {query_edge:?}"
        )));
    }
    if query.last().map(|&n| n as usize >= g.n_nodes()).unwrap_or(false) {
        return Err(Error::Index(format!(
            "query edge {query:?} references node >= {}",
            g.n_nodes()
        )));
    }

    let mut rng = derive_rng(cfg.seed, &query_tag("walks", &query, query_t));
    let mut anchors = Vec::with_capacity(query.len());
    for &anchor in &query {
        let mut walks = Vec::with_capacity(cfg.walks_per_node);
        for _ in 0..cfg.walks_per_node {
            walks.push(sample_walk(g, &query, query_t, anchor, cfg, &mut rng)?);
        }
        anchors.push((anchor, walks));
    }
    Ok(WalkSet { query, query_t, anchors })
}

#[derive(Serialize)]
struct WalkDumpLine<'a> {
    anchor: NodeId,
    steps: Vec<(&'a [NodeId], u32)>,
    padded: bool,
}

/// Debug dump: one JSON object per walk.
pub fn write_walks_jsonl<W: Write>(set: &WalkSet, mut w: W) -> Result<()> {
    for walk in set.iter_walks() {
        let line = WalkDumpLine {
            anchor: walk.anchor,
            steps: walk.steps.iter().map(|s| (s.nodes.as_slice(), s.t)).collect(),
            padded: walk.is_padded(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::Hyperedge;
    use proptest::prelude::*;

    fn graph(edges: Vec<(Vec<NodeId>, u32)>, n_nodes: usize, n_windows: u32) -> TemporalHypergraph {
        TemporalHypergraph::new(
            n_nodes,
            n_windows,
            edges.into_iter().map(|(nodes, t)| Hyperedge { nodes, t }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_when_theta_is_zero() {
        let cands = [(0, 3), (1, 2), (2, 1), (3, 0)];
        let p = step_probabilities(&cands, 3, 0.0).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn hand_computed_bias() {
        // weights exp(ln2 * -1) = 1/2 and exp(ln2 * -2) = 1/4
        let p = step_probabilities(&[(0, 4), (1, 3)], 5, 2.0f64.ln()).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_normalizes_to_one() {
        let p = step_probabilities(&[(7, 2)], 9, 1.3).unwrap();
        assert_eq!(p, vec![1.0]);
        assert!(matches!(step_probabilities(&[], 0, 1.0), Err(Error::NoNeighbor)));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let cands: Vec<(EdgeId, u32)> = (0..50).map(|i| (i, i % 13)).collect();
        for theta in [0.0, 0.5, 2.0, 10.0] {
            let p = step_probabilities(&cands, 12, theta).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_admissible_anchor_step() {
        // anchor 1 appears only in B={1,2}@t0; root {0,1}@t1 absent from g
        let g = graph(vec![(vec![1, 2], 0), (vec![3, 4], 0)], 5, 2);
        let cfg = WalkConfig { walk_length: 3, ..WalkConfig::default() };
        let mut rng = derive_rng(1, b"t");
        for _ in 0..20 {
            let w = sample_walk(&g, &[0, 1], 1, 1, &cfg, &mut rng).unwrap();
            assert_eq!(w.steps[0], WalkStep { nodes: vec![0, 1], t: 1 });
            assert_eq!(w.steps[1], WalkStep { nodes: vec![1, 2], t: 0 });
        }
    }

    #[test]
    fn anchor_without_containing_edge_self_pads() {
        let g = graph(vec![(vec![2, 3], 0)], 5, 2);
        let cfg = WalkConfig { walk_length: 4, ..WalkConfig::default() };
        let mut rng = derive_rng(2, b"t");
        let w = sample_walk(&g, &[0, 1], 1, 0, &cfg, &mut rng).unwrap();
        assert_eq!(w.padded_from, Some(1));
        assert_eq!(w.steps.len(), 4);
        for s in &w.steps {
            assert_eq!(s, &WalkStep { nodes: vec![0, 1], t: 1 });
        }
    }

    #[test]
    fn anchor_not_in_root_is_contract_error() {
        let g = graph(vec![(vec![0, 1], 0)], 3, 1);
        let mut rng = derive_rng(3, b"t");
        assert!(matches!(
            sample_walk(&g, &[0, 1], 0, 2, &WalkConfig::default(), &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn empirical_pick_rates_match_probabilities() {
        // two anchor-step candidates at dt = -1 and -2 under theta = ln 2:
        // weights 1/2 and 1/4, so probabilities 2/3 and 1/3
        let g = graph(vec![(vec![1, 2], 1), (vec![1, 3], 0)], 4, 3);
        let cfg = WalkConfig {
            walk_length: 2,
            time_bias: 2.0f64.ln(),
            ..WalkConfig::default()
        };
        let mut rng = derive_rng(4, b"mc");
        let (mut hits_recent, mut total) = (0u32, 0u32);
        for _ in 0..100_000 {
            let w = sample_walk(&g, &[1, 2], 2, 1, &cfg, &mut rng).unwrap();
            total += 1;
            if w.steps[1].t == 1 {
                hits_recent += 1;
            }
        }
        let rate = hits_recent as f64 / total as f64;
        assert!((rate - 2.0 / 3.0).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn extreme_theta_always_picks_most_recent() {
        let g = graph(
            vec![(vec![0, 1], 0), (vec![1, 2], 3), (vec![1, 3], 1)],
            4,
            4,
        );
        let cfg = WalkConfig { walk_length: 2, time_bias: 50.0, ..WalkConfig::default() };
        let mut rng = derive_rng(5, b"mc");
        let mut recent = 0u32;
        let n = 10_000;
        for _ in 0..n {
            let w = sample_walk(&g, &[1, 2], 3, 1, &cfg, &mut rng).unwrap();
            if w.steps[1].t == 3 {
                recent += 1;
            }
        }
        assert!(recent as f64 / n as f64 >= 0.999);
    }

    #[test]
    fn walk_set_counts_and_determinism() {
        let g = graph(
            vec![
                (vec![0, 1], 0),
                (vec![1, 2], 1),
                (vec![0, 2], 1),
                (vec![2, 3], 2),
                (vec![0, 3], 2),
            ],
            4,
            3,
        );
        let cfg = WalkConfig { walk_length: 3, walks_per_node: 16, seed: 9, ..WalkConfig::default() };
        let a = sample_walk_set(&g, &[0, 2, 3], 2, &cfg).unwrap();
        assert_eq!(a.n_walks(), 48);
        let b = sample_walk_set(&g, &[0, 2, 3], 2, &cfg).unwrap();
        assert_eq!(a, b);
        // intersection constraint: anchor in steps[0] and steps[1] unless padded
        for (anchor, walks) in &a.anchors {
            for w in walks {
                assert!(w.steps[0].nodes.contains(anchor));
                if !w.padded_at(1) {
                    assert!(w.steps[1].nodes.contains(anchor), "anchor {anchor} walk {w:?}");
                }
            }
        }
    }

    #[test]
    fn query_node_order_does_not_matter() {
        let g = graph(vec![(vec![0, 1], 0), (vec![1, 2], 1)], 3, 2);
        let cfg = WalkConfig { seed: 3, ..WalkConfig::default() };
        let a = sample_walk_set(&g, &[2, 0, 1], 1, &cfg).unwrap();
        let b = sample_walk_set(&g, &[1, 2, 0], 1, &cfg).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        /// Timestamps never increase along a walk.
        #[test]
        fn timestamps_are_monotone(seed in 0u64..200) {
            let mut rng = derive_rng(seed, b"graph");
            use rand::Rng;
            let n_nodes = 8usize;
            let n_windows = 5u32;
            let mut edges = Vec::new();
            for _ in 0..30 {
                let a = rng.gen_range(0..n_nodes as u32);
                let mut b = rng.gen_range(0..n_nodes as u32);
                while b == a {
                    b = rng.gen_range(0..n_nodes as u32);
                }
                let mut nodes = vec![a, b];
                nodes.sort_unstable();
                edges.push((nodes, rng.gen_range(0..n_windows)));
            }
            let g = graph(edges, n_nodes, n_windows);
            let cfg = WalkConfig { walk_length: 5, walks_per_node: 4, seed, ..WalkConfig::default() };
            let set = sample_walk_set(&g, &[0, 1], 4, &cfg).unwrap();
            for w in set.iter_walks() {
                for pair in w.steps.windows(2) {
                    prop_assert!(pair[0].t >= pair[1].t);
                }
                // consecutive non-padded steps share a node
                for (i, pair) in w.steps.windows(2).enumerate() {
                    if !w.padded_at(i + 1) && i >= 1 {
                        prop_assert!(pair[0].nodes.iter().any(|v| pair[1].nodes.contains(v)));
                    }
                }
            }
        }
    }
}
