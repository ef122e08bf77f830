//! Subgraph expansion and answer prediction for one query.
//!
//! Starting from the query head, nodes are popped from a FIFO frontier;
//! each pop scores the node's outgoing edges (plus a learned no-action
//! option), draws `action_budget` samples from the resulting distribution,
//! adds the drawn edges to the subgraph, and refreshes the hidden state of
//! every node whose ingoing edge set changed. The subgraph never grows
//! past `node_cap` nodes and each node is expanded exactly once, so the
//! per-query cost is independent of the total entity count.
//!
//! The whole forward pass runs on a [`Tape`], so the log-probabilities of
//! the drawn actions and of the final answer distribution stay
//! differentiable; inference simply never calls backward.

use std::collections::HashMap;
use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::kg::GraphView;
use crate::model::Model;
use crate::params::ParameterStore;
use crate::scalar::Scalar;
use crate::summary::RelationSummary;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct ReasonConfig {
    /// Maximum outgoing edges considered per node.
    pub degree_cap: usize,
    /// Maximum subgraph nodes.
    pub node_cap: usize,
    /// Samples drawn per expansion.
    pub action_budget: usize,
}

impl Default for ReasonConfig {
    fn default() -> Self {
        Self {
            degree_cap: 256,
            node_cap: 128,
            action_budget: 5,
        }
    }
}

/// What a chooser sees for one draw: the candidate edges of the node being
/// expanded. Index `edges.len()` is the no-action option.
pub struct CandidateView<'a> {
    pub source: u32,
    pub edges: &'a [(u32, u32)],
}

impl CandidateView<'_> {
    pub fn no_action_index(&self) -> usize {
        self.edges.len()
    }
}

/// Supplies one candidate index per draw. The probability vector includes
/// the no-action entry as its last element.
pub trait ActionChooser {
    fn choose(&mut self, candidates: &CandidateView<'_>, probs: &[f64]) -> usize;
}

/// Samples from the given distribution by inverse CDF.
pub struct RngChooser<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl ActionChooser for RngChooser<'_> {
    fn choose(&mut self, _candidates: &CandidateView<'_>, probs: &[f64]) -> usize {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Replays a fixed choice sequence, recording every probability vector it
/// was shown. Draws beyond the script fall back to index 0.
pub struct ScriptChooser {
    pub script: Vec<usize>,
    pub cursor: usize,
    pub seen: Vec<Vec<f64>>,
}

impl ScriptChooser {
    pub fn new(script: Vec<usize>) -> Self {
        Self {
            script,
            cursor: 0,
            seen: Vec::new(),
        }
    }
}

impl ActionChooser for ScriptChooser {
    fn choose(&mut self, _candidates: &CandidateView<'_>, probs: &[f64]) -> usize {
        self.seen.push(probs.to_vec());
        let c = self
            .script
            .get(self.cursor)
            .copied()
            .unwrap_or(0)
            .min(probs.len() - 1);
        self.cursor += 1;
        c
    }
}

/// Delegates each draw to a closure; used for guided reachability checks.
pub struct FnChooser<F: FnMut(&CandidateView<'_>, &[f64]) -> usize>(pub F);

impl<F: FnMut(&CandidateView<'_>, &[f64]) -> usize> ActionChooser for FnChooser<F> {
    fn choose(&mut self, candidates: &CandidateView<'_>, probs: &[f64]) -> usize {
        (self.0)(candidates, probs)
    }
}

/// The expanded subgraph with per-node hidden representations.
#[derive(Debug)]
pub struct CognitiveGraph {
    /// Entities in insertion order; index 0 is the query head.
    nodes: Vec<u32>,
    index: HashMap<u32, usize>,
    /// Directed edges as (source node idx, relation, target node idx), in
    /// insertion order, duplicate-free.
    edges: Vec<(usize, u32, usize)>,
    /// Per node: ingoing (relation, source node idx) list.
    ingoing: Vec<Vec<(u32, usize)>>,
    hidden: Vec<ValueId>,
    explored: Vec<bool>,
}

impl CognitiveGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn entity(&self, node: usize) -> u32 {
        self.nodes[node]
    }

    pub fn node_of(&self, entity: u32) -> Option<usize> {
        self.index.get(&entity).copied()
    }

    pub fn contains(&self, entity: u32) -> bool {
        self.index.contains_key(&entity)
    }

    pub fn edges(&self) -> &[(usize, u32, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn hidden(&self, node: usize) -> ValueId {
        self.hidden[node]
    }
}

/// Everything recorded while expanding one node.
#[derive(Debug)]
pub struct StepLog {
    pub source: u32,
    pub candidates: Vec<(u32, u32)>,
    /// Distribution over candidates plus trailing no-action entry.
    pub probs: Vec<f64>,
    /// The `action_budget` drawn indices, duplicates included.
    pub draws: Vec<usize>,
    /// Tape nodes for log p of each draw, aligned with `draws`.
    pub draw_logps: Vec<ValueId>,
}

/// A finished expansion plus prediction.
#[derive(Debug)]
pub struct Rollout {
    pub graph: CognitiveGraph,
    pub steps: Vec<StepLog>,
    /// Raw answer score per node.
    pub scores: Vec<f64>,
    /// Softmax of `scores`, aligned with graph nodes.
    pub answer_probs: Vec<f64>,
    /// Tape node holding the answer distribution.
    pub answer_probs_id: ValueId,
    /// Predicted entity: highest score, ties to the smallest entity id.
    pub prediction: u32,
}

impl Rollout {
    /// Tape node for log q(entity), if the entity was retrieved.
    pub fn log_answer_prob<S: Scalar>(&self, tape: &mut Tape<S>, entity: u32) -> Option<ValueId> {
        self.graph
            .node_of(entity)
            .map(|idx| tape.pick_log(self.answer_probs_id, idx))
    }

    /// Sum of logged draw log-probabilities (the policy log-likelihood).
    pub fn log_policy(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.draws.iter().map(|&d| s.probs[d].ln()))
            .sum()
    }

    /// Retrieved entities by descending answer probability, ties broken
    /// toward the smaller entity id.
    pub fn ranked(&self) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = self
            .graph
            .nodes()
            .iter()
            .copied()
            .zip(self.answer_probs.iter().copied())
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }
}

/// Hidden state from own embedding plus mean over ingoing `[v_r, x_src]`
/// rows; the ingoing term vanishes for an empty list.
fn compute_hidden<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    model: &Model,
    entity: u32,
    ingoing: &[(u32, usize)],
    hidden: &[ValueId],
) -> ValueId {
    let v_e = model.entity_vec(tape, store, entity);
    let self_w = tape.param(store, model.upd_self_w);
    let self_b = tape.param(store, model.upd_self_b);
    let own = tape.matvec(self_w, v_e);
    let pre = if ingoing.is_empty() {
        tape.add(&[own, self_b])
    } else {
        let rows: Vec<ValueId> = ingoing
            .iter()
            .map(|&(r, src)| {
                let v_r = model.relation_vec(tape, store, r);
                tape.concat(&[v_r, hidden[src]])
            })
            .collect();
        let mean = tape.mean_rows(&rows);
        let in_w = tape.param(store, model.upd_in_w);
        let delta = tape.matvec(in_w, mean);
        tape.add(&[own, self_b, delta])
    };
    tape.sigmoid(pre)
}

/// Expand the cognitive graph for `query_head` and score every retrieved
/// node as a candidate answer.
#[allow(clippy::too_many_arguments)]
pub fn rollout<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    model: &Model,
    view: &GraphView<'_>,
    summary: &RelationSummary,
    query_head: u32,
    cfg: &ReasonConfig,
    chooser: &mut dyn ActionChooser,
) -> Rollout {
    let mut graph = CognitiveGraph {
        nodes: vec![query_head],
        index: HashMap::from([(query_head, 0)]),
        edges: Vec::new(),
        ingoing: vec![Vec::new()],
        hidden: Vec::new(),
        explored: vec![false],
    };
    let h0 = compute_hidden(tape, store, model, query_head, &[], &[]);
    graph.hidden.push(h0);
    let mut frontier: VecDeque<usize> = VecDeque::from([0]);

    let zero_hidden = tape.constant(Tensor::zeros(Shape::Vector(model.dims.d_hidden)));
    let mut steps = Vec::new();

    while let Some(src) = frontier.pop_front() {
        debug_assert!(!graph.explored[src]);
        let source_entity = graph.nodes[src];
        let edges = view
            .outgoing_edges(source_entity, cfg.degree_cap)
            .expect("graph nodes come from the view");

        // candidate rows [v_target, v_relation, x_target], no-action last
        let mut rows: Vec<ValueId> = edges
            .iter()
            .map(|&(r, t)| {
                let v_t = model.entity_vec(tape, store, t);
                let v_r = model.relation_vec(tape, store, r);
                let x_t = graph
                    .node_of(t)
                    .map(|i| graph.hidden[i])
                    .unwrap_or(zero_hidden);
                tape.concat(&[v_t, v_r, x_t])
            })
            .collect();
        rows.push(tape.param(store, model.pol_noop_emb));

        let cand = tape.stack_rows(&rows);
        let cand_w = tape.param(store, model.pol_cand_w);
        let cand_proj = tape.matmat(cand, cand_w);
        let cand_act = tape.sigmoid(cand_proj);

        let query_w = tape.param(store, model.pol_query_w);
        let state = tape.concat(&[graph.hidden[src], summary.vector]);
        let query_proj = tape.matvec(query_w, state);
        let query_act = tape.sigmoid(query_proj);

        let logits = tape.matvec(cand_act, query_act);
        let probs_id = tape.softmax(logits);
        let probs: Vec<f64> = tape
            .value(probs_id)
            .data()
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();

        let cand_view = CandidateView {
            source: source_entity,
            edges: &edges,
        };
        let mut draws = Vec::with_capacity(cfg.action_budget);
        let mut draw_logps = Vec::with_capacity(cfg.action_budget);
        for _ in 0..cfg.action_budget {
            let idx = chooser.choose(&cand_view, &probs);
            assert!(idx < probs.len(), "chooser returned out-of-range index");
            draw_logps.push(tape.pick_log(probs_id, idx));
            draws.push(idx);
        }

        // apply distinct chosen edges in candidate order
        let mut chosen: Vec<usize> = draws
            .iter()
            .copied()
            .filter(|&i| i < edges.len())
            .collect();
        chosen.sort_unstable();
        chosen.dedup();
        for ci in chosen {
            let (rel, target) = edges[ci];
            let dst = match graph.node_of(target) {
                Some(i) => i,
                None => {
                    if graph.nodes.len() >= cfg.node_cap {
                        continue; // no dangling edges: skip entirely
                    }
                    let i = graph.nodes.len();
                    graph.nodes.push(target);
                    graph.index.insert(target, i);
                    graph.ingoing.push(Vec::new());
                    graph.explored.push(false);
                    // placeholder until the update below
                    graph.hidden.push(zero_hidden);
                    frontier.push_back(i);
                    i
                }
            };
            if graph.edges.contains(&(src, rel, dst)) {
                continue;
            }
            graph.edges.push((src, rel, dst));
            graph.ingoing[dst].push((rel, src));
            graph.hidden[dst] = compute_hidden(
                tape,
                store,
                model,
                target,
                &graph.ingoing[dst],
                &graph.hidden,
            );
        }
        graph.explored[src] = true;

        steps.push(StepLog {
            source: source_entity,
            candidates: edges.to_vec(),
            probs,
            draws,
            draw_logps,
        });
    }

    // score every node as a candidate answer
    let pred_w = tape.param(store, model.pred_w);
    let per_node: Vec<ValueId> = graph
        .hidden
        .iter()
        .map(|&x| {
            let row = tape.concat(&[x, summary.vector]);
            tape.matvec(pred_w, row)
        })
        .collect();
    let score_vec = tape.concat(&per_node);
    let answer_probs_id = tape.softmax(score_vec);
    let scores: Vec<f64> = tape
        .value(score_vec)
        .data()
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect();
    let answer_probs: Vec<f64> = tape
        .value(answer_probs_id)
        .data()
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect();

    let mut best = 0;
    for i in 1..graph.nodes.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && graph.nodes[i] < graph.nodes[best])
        {
            best = i;
        }
    }
    let prediction = graph.nodes[best];

    Rollout {
        graph,
        steps,
        scores,
        answer_probs,
        answer_probs_id,
        prediction,
    }
}
