//! Walk-set scoring stack: positional anonymization, permutation-invariant
//! set pooling, token/channel mixing over walk steps, and the sigmoid
//! anomaly head.
//!
//! Node identities never reach the network. Each node is replaced by its
//! per-position occurrence counts over the query's full walk set, a step's
//! hyperedge is pooled from those count embeddings, and each walk becomes a
//! sequence of (hyperedge encoding, time encoding) tokens. Anchor encodings
//! are walk means; the query score pools anchors and maps to (0, 1), where
//! 1 is maximally anomalous.
//!
//! Determinism contract: scoring is a pure function of (graph, query,
//! config seed, parameters). All set reductions accumulate in a canonical
//! order (rows content-sorted before pooling), so node order in the query
//! never changes even the last bit of the score.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hypergraph::{NodeId, TemporalHypergraph};
use crate::tensor::{Tape, Tensor, Var};
use crate::walker::{sample_walk_set, Walk, WalkConfig, WalkSet, WalkStep};

/// Width and depth hyperparameters; the parameter layout is a pure function
/// of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Walk length the model was built for (node count embeddings are
    /// per-position, so this is an input width).
    pub walk_length: usize,
    pub d_pos: usize,
    pub d_edge: usize,
    pub d_time: usize,
    pub mixer_blocks: usize,
    /// Parameter-init seed.
    pub seed: u64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { walk_length: 4, d_pos: 16, d_edge: 32, d_time: 16, mixer_blocks: 2, seed: 0 }
    }
}

impl ModelDims {
    pub fn d_model(&self) -> usize {
        self.d_edge + self.d_time
    }

    pub fn validate(&self) -> Result<()> {
        if self.walk_length < 2 {
            return Err(Error::config("walk_length", "must be at least 2"));
        }
        for (name, v) in [("d_pos", self.d_pos), ("d_edge", self.d_edge), ("d_time", self.d_time)] {
            if v < 1 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Two-layer perceptron: `gelu(x . w1 + b1) . w2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2 {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp2 {
    fn init(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp2 {
            w1: Tensor::randn(d_in, d_hidden, 1.0 / (d_in as f64).sqrt(), rng),
            b1: Tensor::zeros(1, d_hidden),
            w2: Tensor::randn(d_hidden, d_out, 1.0 / (d_hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(1, d_out),
        }
    }
}

/// Permutation-invariant set pooling: pre-norm channel MLP with residual,
/// content-sorted mean over elements, then an output MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct SetMixerParams {
    pub mix: Mlp2,
    pub out: Mlp2,
}

impl SetMixerParams {
    fn init(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        SetMixerParams {
            mix: Mlp2::init(d_in, 2 * d_in, d_in, rng),
            out: Mlp2::init(d_in, d_out, d_out, rng),
        }
    }
}

/// One round of token mixing (across walk positions) and channel mixing.
#[derive(Clone, Debug, PartialEq)]
pub struct MixerBlockParams {
    pub token: Mlp2,
    pub channel: Mlp2,
}

/// All trainable parameters of the scoring stack.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerModel {
    pub dims: ModelDims,
    /// Positional-count embedding, walk_length -> d_pos.
    pub node_embed: Mlp2,
    /// Pools member-node embeddings into a hyperedge encoding, d_pos -> d_edge.
    pub edge_pool: SetMixerParams,
    pub time_freq: Tensor,
    pub time_phase: Tensor,
    pub blocks: Vec<MixerBlockParams>,
    /// Pools anchor encodings into the query encoding, d_model -> d_model.
    pub walk_pool: SetMixerParams,
    /// Score head, d_model -> 1.
    pub head: Mlp2,
}

impl ScorerModel {
    pub fn init(dims: ModelDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(dims.seed);
        let (l, dp, de, dt, dm) = (dims.walk_length, dims.d_pos, dims.d_edge, dims.d_time, dims.d_model());
        let node_embed = Mlp2::init(l, dp, dp, &mut rng);
        let edge_pool = SetMixerParams::init(dp, de, &mut rng);
        let time_freq = Tensor::randn(1, dt, 1.0, &mut rng);
        let mut time_phase = Tensor::zeros(1, dt);
        for v in time_phase.data_mut() {
            *v = rng.gen::<f64>() * std::f64::consts::TAU;
        }
        let blocks = (0..dims.mixer_blocks)
            .map(|_| MixerBlockParams {
                token: Mlp2::init(l, 2 * l, l, &mut rng),
                channel: Mlp2::init(dm, 2 * dm, dm, &mut rng),
            })
            .collect();
        let walk_pool = SetMixerParams::init(dm, dm, &mut rng);
        let head = Mlp2::init(dm, dm, 1, &mut rng);
        ScorerModel { dims, node_embed, edge_pool, time_freq, time_phase, blocks, walk_pool, head }
    }

    /// Visits every parameter tensor in the canonical (checkpoint, optimizer,
    /// gradient) order.
    pub fn for_each_param(&self, mut f: impl FnMut(&Tensor)) {
        self.for_each_param_named(|_, t| f(t));
    }

    pub fn for_each_param_named(&self, mut f: impl FnMut(&str, &Tensor)) {
        let mlp = |f: &mut dyn FnMut(&str, &Tensor), prefix: &str, m: &Mlp2| {
            f(&format!("{prefix}.w1"), &m.w1);
            f(&format!("{prefix}.b1"), &m.b1);
            f(&format!("{prefix}.w2"), &m.w2);
            f(&format!("{prefix}.b2"), &m.b2);
        };
        mlp(&mut f, "node_embed", &self.node_embed);
        mlp(&mut f, "edge_pool.mix", &self.edge_pool.mix);
        mlp(&mut f, "edge_pool.out", &self.edge_pool.out);
        f("time.freq", &self.time_freq);
        f("time.phase", &self.time_phase);
        for (i, b) in self.blocks.iter().enumerate() {
            mlp(&mut f, &format!("blocks.{i}.token"), &b.token);
            mlp(&mut f, &format!("blocks.{i}.channel"), &b.channel);
        }
        mlp(&mut f, "walk_pool.mix", &self.walk_pool.mix);
        mlp(&mut f, "walk_pool.out", &self.walk_pool.out);
        mlp(&mut f, "head", &self.head);
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        let mut mlp = |f: &mut dyn FnMut(&mut Tensor), m: &mut Mlp2| {
            f(&mut m.w1);
            f(&mut m.b1);
            f(&mut m.w2);
            f(&mut m.b2);
        };
        mlp(&mut f, &mut self.node_embed);
        mlp(&mut f, &mut self.edge_pool.mix);
        mlp(&mut f, &mut self.edge_pool.out);
        f(&mut self.time_freq);
        f(&mut self.time_phase);
        for b in self.blocks.iter_mut() {
            mlp(&mut f, &mut b.token);
            mlp(&mut f, &mut b.channel);
        }
        mlp(&mut f, &mut self.walk_pool.mix);
        mlp(&mut f, &mut self.walk_pool.out);
        mlp(&mut f, &mut self.head);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|t| n += t.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_param(|t| ok &= t.all_finite());
        ok
    }
}

/// Parameter-shaped gradient accumulator in canonical order.
#[derive(Clone, Debug)]
pub struct GradStore {
    pub grads: Vec<Tensor>,
}

impl GradStore {
    pub fn zeros_like(model: &ScorerModel) -> Self {
        let mut grads = Vec::new();
        model.for_each_param(|t| grads.push(Tensor::zeros(t.rows(), t.cols())));
        GradStore { grads }
    }

    pub fn add_assign(&mut self, other: &GradStore) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|t| t.all_finite())
    }
}

// ---------------------------------------------------------------------------
// Spec-level operations
// ---------------------------------------------------------------------------

/// Per-position occurrence counts of `node` over every walk in the set,
/// all anchors pooled; padded positions are excluded.
pub fn positional_counts(set: &WalkSet, node: NodeId) -> Vec<u32> {
    let l = set
        .anchors
        .first()
        .and_then(|(_, ws)| ws.first())
        .map(|w| w.steps.len())
        .unwrap_or(0);
    let mut counts = vec![0u32; l];
    for walk in set.iter_walks() {
        for (i, step) in walk.steps.iter().enumerate() {
            if !walk.padded_at(i) && step.nodes.contains(&node) {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Counts for every node that appears anywhere in the set, in one pass.
fn counts_map(set: &WalkSet) -> HashMap<NodeId, Vec<f64>> {
    let l = set
        .anchors
        .first()
        .and_then(|(_, ws)| ws.first())
        .map(|w| w.steps.len())
        .unwrap_or(0);
    let mut map: HashMap<NodeId, Vec<f64>> = HashMap::new();
    for walk in set.iter_walks() {
        for (i, step) in walk.steps.iter().enumerate() {
            if walk.padded_at(i) {
                break;
            }
            for &v in &step.nodes {
                map.entry(v).or_insert_with(|| vec![0.0; l])[i] += 1.0;
            }
        }
    }
    map
}

/// cos(freq * dt + phase), elementwise. Time is encoded relative to the
/// query timestamp, so the representation is translation invariant.
pub fn encode_time(dt: f64, freq: &[f64], phase: &[f64]) -> Vec<f64> {
    assert_eq!(freq.len(), phase.len());
    freq.iter().zip(phase).map(|(&w, &p)| (w * dt + p).cos()).collect()
}

// ---------------------------------------------------------------------------
// On-tape forward construction
// ---------------------------------------------------------------------------

struct Mlp2Vars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

struct SetMixerVars {
    mix: Mlp2Vars,
    out: Mlp2Vars,
}

struct BlockVars {
    token: Mlp2Vars,
    channel: Mlp2Vars,
}

struct ModelVars {
    node_embed: Mlp2Vars,
    edge_pool: SetMixerVars,
    time_freq: Var,
    time_phase: Var,
    blocks: Vec<BlockVars>,
    walk_pool: SetMixerVars,
    head: Mlp2Vars,
    /// Canonical flat order, aligned with `ScorerModel::for_each_param`.
    flat: Vec<Var>,
}

impl ModelVars {
    fn insert(tape: &mut Tape, model: &ScorerModel) -> Self {
        let mut flat = Vec::new();
        let mut mlp = |tape: &mut Tape, flat: &mut Vec<Var>, m: &Mlp2| {
            let vars = Mlp2Vars {
                w1: tape.leaf(m.w1.clone()),
                b1: tape.leaf(m.b1.clone()),
                w2: tape.leaf(m.w2.clone()),
                b2: tape.leaf(m.b2.clone()),
            };
            flat.extend([vars.w1, vars.b1, vars.w2, vars.b2]);
            vars
        };
        let node_embed = mlp(tape, &mut flat, &model.node_embed);
        let edge_pool = SetMixerVars {
            mix: mlp(tape, &mut flat, &model.edge_pool.mix),
            out: mlp(tape, &mut flat, &model.edge_pool.out),
        };
        let time_freq = tape.leaf(model.time_freq.clone());
        let time_phase = tape.leaf(model.time_phase.clone());
        flat.extend([time_freq, time_phase]);
        let blocks = model
            .blocks
            .iter()
            .map(|b| BlockVars {
                token: mlp(tape, &mut flat, &b.token),
                channel: mlp(tape, &mut flat, &b.channel),
            })
            .collect();
        let walk_pool = SetMixerVars {
            mix: mlp(tape, &mut flat, &model.walk_pool.mix),
            out: mlp(tape, &mut flat, &model.walk_pool.out),
        };
        let head = mlp(tape, &mut flat, &model.head);
        ModelVars { node_embed, edge_pool, time_freq, time_phase, blocks, walk_pool, head, flat }
    }
}

fn apply_mlp2(tape: &mut Tape, vars: &Mlp2Vars, x: Var) -> Var {
    let h = tape.matmul(x, vars.w1);
    let h = tape.add_row(h, vars.b1);
    let h = tape.gelu(h);
    let h = tape.matmul(h, vars.w2);
    tape.add_row(h, vars.b2)
}

/// Rows are content-sorted before stacking so that any permutation of the
/// input produces bitwise-identical accumulation.
fn apply_set_mixer(tape: &mut Tape, vars: &SetMixerVars, rows: &[Var]) -> Var {
    debug_assert!(!rows.is_empty(), "set mixer over an empty set");
    let mut sorted = rows.to_vec();
    sorted.sort_by(|&a, &b| {
        let (va, vb) = (tape.value(a).data(), tape.value(b).data());
        va.iter()
            .zip(vb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let x = if sorted.len() == 1 { sorted[0] } else { tape.concat_rows(&sorted) };
    let n = tape.layer_norm(x);
    let h = apply_mlp2(tape, &vars.mix, n);
    let x = tape.add(x, h);
    let pooled = tape.mean_rows(x);
    apply_mlp2(tape, &vars.out, pooled)
}

/// Per-query forward context: parameter vars plus encoding caches. Walks
/// revisit the same hyperedges and offsets constantly; caching keeps the
/// graph small without changing any value.
struct ScoreCtx<'m> {
    model: &'m ScorerModel,
    vars: ModelVars,
    query_t: u32,
    node_counts: HashMap<NodeId, Vec<f64>>,
    node_enc: HashMap<NodeId, Var>,
    edge_enc: HashMap<Vec<NodeId>, Var>,
    time_enc: HashMap<u32, Var>,
    walk_enc: HashMap<(Vec<WalkStep>, Option<usize>), Var>,
}

impl<'m> ScoreCtx<'m> {
    fn new(tape: &mut Tape, model: &'m ScorerModel, set: &WalkSet) -> Self {
        ScoreCtx {
            model,
            vars: ModelVars::insert(tape, model),
            query_t: set.query_t,
            node_counts: counts_map(set),
            node_enc: HashMap::new(),
            edge_enc: HashMap::new(),
            time_enc: HashMap::new(),
            walk_enc: HashMap::new(),
        }
    }

    fn node_encoding(&mut self, tape: &mut Tape, node: NodeId) -> Var {
        if let Some(&v) = self.node_enc.get(&node) {
            return v;
        }
        let l = self.model.dims.walk_length;
        let counts = self
            .node_counts
            .get(&node)
            .cloned()
            .unwrap_or_else(|| vec![0.0; l]);
        let row = tape.const_leaf(Tensor::row_vector(counts));
        let enc = apply_mlp2(tape, &self.vars.node_embed, row);
        self.node_enc.insert(node, enc);
        enc
    }

    fn edge_encoding(&mut self, tape: &mut Tape, nodes: &[NodeId]) -> Var {
        if let Some(&v) = self.edge_enc.get(nodes) {
            return v;
        }
        let rows: Vec<Var> = nodes.iter().map(|&n| self.node_encoding(tape, n)).collect();
        let enc = apply_set_mixer(tape, &self.vars.edge_pool, &rows);
        self.edge_enc.insert(nodes.to_vec(), enc);
        enc
    }

    fn time_encoding(&mut self, tape: &mut Tape, dt: u32) -> Var {
        if let Some(&v) = self.time_enc.get(&dt) {
            return v;
        }
        let d_time = self.model.dims.d_time;
        let dt_row = tape.const_leaf(Tensor::filled(1, d_time, dt as f64));
        let h = tape.mul(dt_row, self.vars.time_freq);
        let h = tape.add(h, self.vars.time_phase);
        let enc = tape.cos(h);
        self.time_enc.insert(dt, enc);
        enc
    }

    fn walk_encoding(&mut self, tape: &mut Tape, walk: &Walk) -> Var {
        let key = (walk.steps.clone(), walk.padded_from);
        if let Some(&v) = self.walk_enc.get(&key) {
            return v;
        }
        let dims = self.model.dims;
        let l = dims.walk_length;
        debug_assert_eq!(walk.steps.len(), l);

        let mut tokens = Vec::with_capacity(l);
        for (i, step) in walk.steps.iter().enumerate() {
            if walk.padded_at(i) {
                tokens.push(tape.const_leaf(Tensor::zeros(1, dims.d_model())));
            } else {
                let e = self.edge_encoding(tape, &step.nodes);
                let t = self.time_encoding(tape, self.query_t - step.t);
                tokens.push(tape.concat_cols(&[e, t]));
            }
        }
        let mut x = tape.concat_rows(&tokens);

        for block in &self.vars.blocks {
            // token mixing across positions
            let n = tape.layer_norm(x);
            let nt = tape.transpose(n);
            let h = apply_mlp2(tape, &block.token, nt);
            let h = tape.transpose(h);
            x = tape.add(x, h);
            // channel mixing within each position
            let n = tape.layer_norm(x);
            let h = apply_mlp2(tape, &block.channel, n);
            x = tape.add(x, h);
        }

        let live = walk.padded_from.unwrap_or(l);
        let enc = if live == 0 {
            tape.const_leaf(Tensor::zeros(1, dims.d_model()))
        } else {
            let mut sel = Tensor::zeros(1, l);
            for i in 0..live {
                sel.set(0, i, 1.0 / live as f64);
            }
            let sel = tape.const_leaf(sel);
            tape.matmul(sel, x)
        };
        self.walk_enc.insert(key, enc);
        enc
    }

    /// Mean of the anchor's walk encodings; repeated walks are weighted by
    /// multiplicity instead of re-encoded.
    fn anchor_encoding(&mut self, tape: &mut Tape, walks: &[Walk]) -> Var {
        let mut uniq: Vec<(Var, usize)> = Vec::new();
        for w in walks {
            let enc = self.walk_encoding(tape, w);
            match uniq.iter_mut().find(|(v, _)| *v == enc) {
                Some((_, c)) => *c += 1,
                None => uniq.push((enc, 1)),
            }
        }
        let n = walks.len() as f64;
        let weights =
            Tensor::row_vector(uniq.iter().map(|&(_, c)| c as f64 / n).collect());
        let rows: Vec<Var> = uniq.iter().map(|&(v, _)| v).collect();
        let stacked = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows) };
        let w = tape.const_leaf(weights);
        tape.matmul(w, stacked)
    }

    fn score(&mut self, tape: &mut Tape, set: &WalkSet) -> Var {
        let anchor_rows: Vec<Var> = set
            .anchors
            .iter()
            .map(|(_, walks)| self.anchor_encoding(tape, walks))
            .collect();
        let z = apply_set_mixer(tape, &self.vars.walk_pool, &anchor_rows);
        let logit = apply_mlp2(tape, &self.vars.head, z);
        tape.sigmoid(logit)
    }
}

/// A scored query holding its computation graph, so training can backprop
/// a loss seed through it.
pub struct ScoredQuery {
    tape: Tape,
    score_var: Var,
    param_vars: Vec<Var>,
    prob: f64,
}

impl ScoredQuery {
    pub fn prob(&self) -> f64 {
        self.prob
    }

    /// Backprop `d loss / d prob` and return parameter gradients in
    /// canonical order.
    pub fn into_grads(mut self, seed: f64) -> GradStore {
        self.tape
            .backward_seeded(self.score_var, &Tensor::filled(1, 1, seed));
        let grads = self
            .param_vars
            .iter()
            .map(|&v| {
                self.tape.grad(v).cloned().unwrap_or_else(|| {
                    let t = self.tape.value(v);
                    Tensor::zeros(t.rows(), t.cols())
                })
            })
            .collect();
        GradStore { grads }
    }
}

fn canonical_query(query_edge: &[NodeId]) -> Vec<NodeId> {
    let mut q = query_edge.to_vec();
    q.sort_unstable();
    q.dedup();
    q
}

/// Scores a query hyperedge and keeps the graph for training.
pub fn score_query(
    g: &TemporalHypergraph,
    query_edge: &[NodeId],
    query_t: u32,
    model: &ScorerModel,
    cfg: &WalkConfig,
) -> Result<ScoredQuery> {
    model.dims.validate()?;
    if cfg.walk_length != model.dims.walk_length {
        return Err(Error::config(
            "walk_length",
            format!(
                "walk config length {} does not match model length {}",
                cfg.walk_length, model.dims.walk_length
            ),
        ));
    }
    let query = canonical_query(query_edge);
    let set = sample_walk_set(g, &query, query_t, cfg)?;
    let mut tape = Tape::new();
    let mut ctx = ScoreCtx::new(&mut tape, model, &set);
    let score_var = ctx.score(&mut tape, &set);
    let prob = tape.value(score_var).get(0, 0);
    let param_vars = ctx.vars.flat.clone();
    Ok(ScoredQuery { tape, score_var, param_vars, prob })
}

/// Anomaly score in (0, 1); 1 is maximally anomalous. Deterministic given
/// `cfg.seed` and invariant to node order in `query_edge`.
pub fn anomaly_score(
    query_edge: &[NodeId],
    query_t: u32,
    g: &TemporalHypergraph,
    model: &ScorerModel,
    cfg: &WalkConfig,
) -> Result<f64> {
    Ok(score_query(g, query_edge, query_t, model, cfg)?.prob())
}

/// Encodes one walk against its walk set; exposed for gradient and
/// invariance checks.
pub fn encode_walk(
    walk: &Walk,
    set: &WalkSet,
    model: &ScorerModel,
    _t_query: u32,
) -> Vec<f64> {
    let mut tape = Tape::new();
    let mut ctx = ScoreCtx::new(&mut tape, model, set);
    let v = ctx.walk_encoding(&mut tape, walk);
    tape.value(v).data().to_vec()
}

/// Evaluates the set mixer on plain rows; exposed for the permutation and
/// duplication invariance checks.
pub fn set_mixer_eval(params: &SetMixerParams, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::Contract("set mixer requires at least one row".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Contract("set mixer rows must share one width".into()));
    }
    let mut tape = Tape::new();
    let vars = SetMixerVars {
        mix: Mlp2Vars {
            w1: tape.leaf(params.mix.w1.clone()),
            b1: tape.leaf(params.mix.b1.clone()),
            w2: tape.leaf(params.mix.w2.clone()),
            b2: tape.leaf(params.mix.b2.clone()),
        },
        out: Mlp2Vars {
            w1: tape.leaf(params.out.w1.clone()),
            b1: tape.leaf(params.out.b1.clone()),
            w2: tape.leaf(params.out.w2.clone()),
            b2: tape.leaf(params.out.b2.clone()),
        },
    };
    let row_vars: Vec<Var> = rows
        .iter()
        .map(|r| tape.leaf(Tensor::row_vector(r.clone())))
        .collect();
    let out = apply_set_mixer(&mut tape, &vars, &row_vars);
    Ok(tape.value(out).data().to_vec())
}
