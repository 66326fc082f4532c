//! Contrastive training over healthy cohorts: verified negative sampling,
//! BCE loss over positive/negative score pairs, Adam, and the two-stage
//! pretrain/fine-tune schedule.
//!
//! A negative keeps half of a true hyperedge's nodes and substitutes the
//! rest, then is rejected unless the resulting node set never occurs — at
//! any timestamp, in any training subject. Positives are pushed toward
//! score 0, negatives toward 1.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{score_query, GradStore, ScorerModel};
use crate::error::{Error, Result};
use crate::hypergraph::{NodeId, TemporalHypergraph};
use crate::rng::derive_rng;
use crate::tensor::Tensor;
use crate::walker::WalkConfig;

pub const PROB_CLAMP: f64 = 1e-7;
const MAX_NEGATIVE_ATTEMPTS: usize = 100;

/// Timestamp-agnostic node sets of every hyperedge across a cohort; the
/// verification structure for negative sampling.
#[derive(Clone, Debug, Default)]
pub struct NegativeIndex {
    sets: HashSet<Vec<NodeId>>,
}

impl NegativeIndex {
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a TemporalHypergraph>) -> Self {
        let mut index = NegativeIndex::default();
        for g in graphs {
            index.insert_graph(g);
        }
        index
    }

    pub fn insert_graph(&mut self, g: &TemporalHypergraph) {
        for e in g.edges() {
            self.sets.insert(e.nodes.clone());
        }
    }

    pub fn insert(&mut self, nodes: Vec<NodeId>) {
        self.sets.insert(nodes);
    }

    /// `nodes` must be sorted.
    pub fn contains(&self, nodes: &[NodeId]) -> bool {
        self.sets.contains(nodes)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Corrupts `e` by keeping ceil(|e|/2) uniformly chosen nodes and replacing
/// the other floor(|e|/2) with distinct draws from V - e, resampling until
/// the candidate is absent from the index.
pub fn sample_negative(
    e: &[NodeId],
    n_nodes: usize,
    index: &NegativeIndex,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NodeId>> {
    let k = e.len();
    if k < 2 {
        return Err(Error::Contract(format!("cannot corrupt a hyperedge of size {k}")));
    }
    let keep = k - k / 2; // ceil(k/2)
    let replace = k / 2;
    if n_nodes.saturating_sub(k) < replace {
        return Err(Error::config(
            "n_nodes",
            format!("only {} nodes outside the edge, need {replace}", n_nodes - k.min(n_nodes)),
        ));
    }

    let mut pool: Vec<NodeId> = e.to_vec();
    for _ in 0..MAX_NEGATIVE_ATTEMPTS {
        pool.copy_from_slice(e);
        pool.partial_shuffle(rng, keep);
        let mut candidate: Vec<NodeId> = pool[..keep].to_vec();
        while candidate.len() < k {
            let draw = rng.gen_range(0..n_nodes) as NodeId;
            if !e.contains(&draw) && !candidate.contains(&draw) {
                candidate.push(draw);
            }
        }
        candidate.sort_unstable();
        if !index.contains(&candidate) {
            return Ok(candidate);
        }
    }
    Err(Error::NegativeExhausted { attempts: MAX_NEGATIVE_ATTEMPTS })
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy with positives labeled 0 and negatives labeled 1:
/// `-mean log(1 - p_pos) - mean log(p_neg)`, probabilities clamped 1e-7
/// from the endpoints.
pub fn contrastive_loss(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    assert!(!pos_scores.is_empty() && !neg_scores.is_empty());
    let lp: f64 = pos_scores.iter().map(|&p| -(1.0 - clamp_prob(p)).ln()).sum::<f64>()
        / pos_scores.len() as f64;
    let ln: f64 = neg_scores.iter().map(|&p| -clamp_prob(p).ln()).sum::<f64>()
        / neg_scores.len() as f64;
    lp + ln
}

/// d loss / d score for each input; zero where the probability clamp is
/// active.
pub fn contrastive_loss_grad(pos_scores: &[f64], neg_scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let np = pos_scores.len() as f64;
    let nn = neg_scores.len() as f64;
    let dp = pos_scores
        .iter()
        .map(|&p| {
            if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                0.0
            } else {
                1.0 / ((1.0 - p) * np)
            }
        })
        .collect();
    let dn = neg_scores
        .iter()
        .map(|&p| {
            if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                0.0
            } else {
                -1.0 / (p * nn)
            }
        })
        .collect();
    (dp, dn)
}

/// Adam over the model's canonical parameter order.
pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(model: &ScorerModel) -> Self {
        let mut shapes = Vec::new();
        model.for_each_param(|t| shapes.push(Tensor::zeros(t.rows(), t.cols())));
        Adam { m: shapes.clone(), v: shapes, t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, model: &mut ScorerModel, grads: &GradStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut i = 0;
        model.for_each_param_mut(|param| {
            let g = &grads.grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((p, &gv), (mv, vv)) in param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            i += 1;
        });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub pretrain_fraction: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub learning_rate_pretrain: f64,
    pub learning_rate_finetune: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_fraction: 0.7,
            epochs_pretrain: 20,
            epochs_finetune: 10,
            learning_rate_pretrain: 1e-3,
            learning_rate_finetune: 1e-4,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction < 1.0) {
            return Err(Error::config("pretrain_fraction", "must be in (0, 1)"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        for (name, lr) in [
            ("learning_rate_pretrain", self.learning_rate_pretrain),
            ("learning_rate_finetune", self.learning_rate_finetune),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(name, "must be finite and positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Pretrain => write!(f, "pretrain"),
            Stage::Finetune => write!(f, "finetune"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub stage: Stage,
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Splits subject indices into pretrain and fine-tune sets by a seeded
/// shuffle; errors if either side would be empty.
pub fn split_subjects(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, b"subject-split");
    idx.shuffle(&mut rng);
    let n_pre = (fraction * n as f64).round() as usize;
    if n_pre == 0 || n_pre >= n {
        return Err(Error::config(
            "pretrain_fraction",
            format!("splits {n} subjects into {n_pre} + {}", n - n_pre),
        ));
    }
    let finetune = idx.split_off(n_pre);
    Ok((idx, finetune))
}

struct PairOutcome {
    pos: f64,
    neg: f64,
    grads_pos: GradStore,
    grads_neg: GradStore,
}

/// Two-stage contrastive training. Deterministic given the seeds: negatives
/// come from the epoch stream, walk sampling derives per-query streams, and
/// batch gradients reduce in pair order regardless of thread scheduling.
pub fn train(
    subjects: &[TemporalHypergraph],
    model: ScorerModel,
    tcfg: &TrainConfig,
    wcfg: &WalkConfig,
) -> Result<(ScorerModel, Vec<EpochStats>)> {
    tcfg.validate()?;
    wcfg.validate()?;
    if subjects.len() < 2 {
        return Err(Error::config("subjects", "training needs at least 2 subjects"));
    }
    let n_nodes = subjects[0].n_nodes();
    if subjects.iter().any(|g| g.n_nodes() != n_nodes) {
        return Err(Error::config("subjects", "all subjects must share one node set"));
    }

    let index = NegativeIndex::from_graphs(subjects.iter());
    let (pre_ids, fine_ids) = split_subjects(subjects.len(), tcfg.pretrain_fraction, tcfg.seed)?;

    let mut model = model;
    let mut optimizer = Adam::new(&model);
    let mut history = Vec::with_capacity(tcfg.epochs_pretrain + tcfg.epochs_finetune);
    let mut last_good = model.clone();

    for (stage, subject_ids, epochs, lr) in [
        (Stage::Pretrain, &pre_ids, tcfg.epochs_pretrain, tcfg.learning_rate_pretrain),
        (Stage::Finetune, &fine_ids, tcfg.epochs_finetune, tcfg.learning_rate_finetune),
    ] {
        let mut items: Vec<(usize, u32)> = Vec::new();
        for &s in subject_ids {
            for eid in 0..subjects[s].n_edges() as u32 {
                items.push((s, eid));
            }
        }
        if items.is_empty() && epochs > 0 {
            return Err(Error::Data(format!("{stage} subjects contain no hyperedges")));
        }

        for epoch in 0..epochs {
            let start = Instant::now();
            let mut rng = derive_rng(
                tcfg.seed,
                format!("epoch-{stage}-{epoch}").as_bytes(),
            );
            items.shuffle(&mut rng);

            let (mut loss_sum, mut pair_count) = (0.0f64, 0usize);
            for batch in items.chunks(tcfg.batch_size) {
                // sequential assembly: negatives come from the epoch stream
                let mut pairs = Vec::with_capacity(batch.len());
                for &(s, eid) in batch {
                    let edge = subjects[s].edge(eid);
                    match sample_negative(&edge.nodes, n_nodes, &index, &mut rng) {
                        Ok(neg) => pairs.push((s, edge.nodes.clone(), neg, edge.t)),
                        Err(Error::NegativeExhausted { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
                if pairs.is_empty() {
                    continue;
                }
                let b = pairs.len() as f64;

                // parallel scoring and per-pair backprop; the loss gradient
                // for one score only needs that score and the batch size
                let outcomes: Vec<Result<PairOutcome>> = pairs
                    .par_iter()
                    .map(|(s, pos, neg, t)| {
                        let g = &subjects[*s];
                        let sp = score_query(g, pos, *t, &model, wcfg)?;
                        let sn = score_query(g, neg, *t, &model, wcfg)?;
                        let (p, n) = (sp.prob(), sn.prob());
                        let (dp, dn) = contrastive_loss_grad(&[p], &[n]);
                        Ok(PairOutcome {
                            pos: p,
                            neg: n,
                            grads_pos: sp.into_grads(dp[0] / b),
                            grads_neg: sn.into_grads(dn[0] / b),
                        })
                    })
                    .collect();

                let mut total = GradStore::zeros_like(&model);
                let (mut pos_scores, mut neg_scores) = (Vec::new(), Vec::new());
                for outcome in outcomes {
                    let o = outcome?;
                    pos_scores.push(o.pos);
                    neg_scores.push(o.neg);
                    total.add_assign(&o.grads_pos);
                    total.add_assign(&o.grads_neg);
                }

                let batch_loss = contrastive_loss(&pos_scores, &neg_scores);
                if !batch_loss.is_finite() || !total.all_finite() {
                    return Err(Error::TrainingDiverged {
                        stage: match stage {
                            Stage::Pretrain => "pretrain",
                            Stage::Finetune => "finetune",
                        },
                        epoch,
                        last_good: Box::new(last_good),
                    });
                }
                optimizer.step(&mut model, &total, lr);
                loss_sum += batch_loss * pairs.len() as f64;
                pair_count += pairs.len();
            }

            let mean_loss = if pair_count == 0 { 0.0 } else { loss_sum / pair_count as f64 };
            history.push(EpochStats {
                stage,
                epoch,
                mean_loss,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
            last_good = model.clone();
        }
    }

    Ok((model, history))
}
