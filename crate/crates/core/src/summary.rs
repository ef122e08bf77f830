//! Support-pair summarization.
//!
//! An entity is encoded from its own embedding plus the mean of its
//! outgoing `[v_relation, v_target]` neighbor rows; the support pair's two
//! encodings are concatenated and squashed into a single query vector that
//! conditions both the expansion policy and the final prediction.

use crate::kg::GraphView;
use crate::model::Model;
use crate::params::ParameterStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};

/// Query vector for one support pair.
#[derive(Debug, Clone, Copy)]
pub struct RelationSummary {
    pub vector: ValueId,
    pub head: u32,
    pub tail: u32,
}

/// Encode one entity from its (masked, capped) neighborhood.
pub fn encode_entity<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    model: &Model,
    view: &GraphView,
    e: u32,
    degree_cap: usize,
) -> ValueId {
    let v_e = model.entity_vec(tape, store, e);
    let self_w = tape.param(store, model.sum_self_w);
    let self_b = tape.param(store, model.sum_self_b);
    let own = tape.matvec(self_w, v_e);

    let edges = view
        .outgoing_edges(e, degree_cap)
        .expect("entity id validated by caller");
    let pre = if edges.is_empty() {
        tape.add(&[own, self_b])
    } else {
        let rows: Vec<ValueId> = edges
            .iter()
            .map(|&(r, t)| {
                let v_r = model.relation_vec(tape, store, r);
                let v_t = model.entity_vec(tape, store, t);
                tape.concat(&[v_r, v_t])
            })
            .collect();
        let mean = tape.mean_rows(&rows);
        let neigh_w = tape.param(store, model.sum_neigh_w);
        let neigh = tape.matvec(neigh_w, mean);
        tape.add(&[own, self_b, neigh])
    };
    tape.sigmoid(pre)
}

/// Summarize a support pair into a query vector.
pub fn summarize_pair<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    model: &Model,
    view: &GraphView,
    head: u32,
    tail: u32,
    degree_cap: usize,
) -> RelationSummary {
    let enc_h = encode_entity(tape, store, model, view, head, degree_cap);
    let enc_t = encode_entity(tape, store, model, view, tail, degree_cap);
    let both = tape.concat(&[enc_h, enc_t]);
    let pair_w = tape.param(store, model.sum_pair_w);
    let pair_b = tape.param(store, model.sum_pair_b);
    let lin = tape.matvec(pair_w, both);
    let pre = tape.add(&[lin, pair_b]);
    let vector = tape.sigmoid(pre);
    RelationSummary { vector, head, tail }
}
