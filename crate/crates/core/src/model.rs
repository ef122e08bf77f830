//! Model parameters: embedding tables and the weight matrices of the
//! summary, policy, hidden-update, and prediction heads.
//!
//! Embedding width and hidden width are independent (`d_embed`, `d_hidden`);
//! the defaults make them equal. Matrices are initialized Xavier-uniform,
//! biases zero, embeddings and the no-action vector uniform in (-0.1, 0.1).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParameterStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub entities: usize,
    /// Relation ids including inverses.
    pub relations: usize,
    pub d_embed: usize,
    pub d_hidden: usize,
}

impl ModelDims {
    /// Length of one policy candidate row: `[v_e, v_r, x_e]`.
    pub fn candidate_len(&self) -> usize {
        2 * self.d_embed + self.d_hidden
    }
}

/// Handles to every trainable tensor.
#[derive(Debug, Clone, Copy)]
pub struct Model {
    pub dims: ModelDims,
    pub entity_emb: ParamId,
    pub relation_emb: ParamId,
    pub sum_self_w: ParamId,
    pub sum_self_b: ParamId,
    pub sum_neigh_w: ParamId,
    pub sum_pair_w: ParamId,
    pub sum_pair_b: ParamId,
    pub pol_cand_w: ParamId,
    pub pol_query_w: ParamId,
    pub pol_noop_emb: ParamId,
    pub upd_in_w: ParamId,
    pub upd_self_w: ParamId,
    pub upd_self_b: ParamId,
    pub pred_w: ParamId,
}

fn uniform<S: Scalar>(rng: &mut ChaCha8Rng, shape: Shape, limit: f64) -> Tensor<S> {
    let data = (0..shape.len())
        .map(|_| S::from_f64_lossy(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, data)
}

fn xavier<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, Shape::Matrix(rows, cols), limit)
}

impl Model {
    /// Register all parameters with fresh initial values.
    pub fn register<S: Scalar>(
        store: &mut ParameterStore<S>,
        dims: ModelDims,
        rng: &mut ChaCha8Rng,
    ) -> Model {
        let de = dims.d_embed;
        let dh = dims.d_hidden;
        let emb = |rng: &mut ChaCha8Rng, rows: usize| -> Tensor<S> {
            uniform(rng, Shape::Matrix(rows.max(1), de), 0.1)
        };
        let zerov = |len: usize| Tensor::zeros(Shape::Vector(len));

        let entity_emb = store.register("entity_emb", ParamGroup::Embedding, emb(rng, dims.entities));
        let relation_emb =
            store.register("relation_emb", ParamGroup::Embedding, emb(rng, dims.relations));
        let sum_self_w = store.register("sum_self_w", ParamGroup::Other, xavier(rng, dh, de));
        let sum_self_b = store.register("sum_self_b", ParamGroup::Other, zerov(dh));
        let sum_neigh_w = store.register("sum_neigh_w", ParamGroup::Other, xavier(rng, dh, 2 * de));
        let sum_pair_w = store.register("sum_pair_w", ParamGroup::Other, xavier(rng, dh, 2 * dh));
        let sum_pair_b = store.register("sum_pair_b", ParamGroup::Other, zerov(dh));
        let pol_cand_w =
            store.register("pol_cand_w", ParamGroup::Other, xavier(rng, dims.candidate_len(), dh));
        let pol_query_w = store.register("pol_query_w", ParamGroup::Other, xavier(rng, dh, 2 * dh));
        let pol_noop_emb = store.register(
            "pol_noop_emb",
            ParamGroup::Other,
            uniform(rng, Shape::Vector(dims.candidate_len()), 0.1),
        );
        let upd_in_w = store.register("upd_in_w", ParamGroup::Other, xavier(rng, dh, de + dh));
        let upd_self_w = store.register("upd_self_w", ParamGroup::Other, xavier(rng, dh, de));
        let upd_self_b = store.register("upd_self_b", ParamGroup::Other, zerov(dh));
        let pred_w = store.register("pred_w", ParamGroup::Other, xavier(rng, 1, 2 * dh));

        Model {
            dims,
            entity_emb,
            relation_emb,
            sum_self_w,
            sum_self_b,
            sum_neigh_w,
            sum_pair_w,
            sum_pair_b,
            pol_cand_w,
            pol_query_w,
            pol_noop_emb,
            upd_in_w,
            upd_self_w,
            upd_self_b,
            pred_w,
        }
    }

    /// Rebuild handles from a store that already holds the parameters
    /// (e.g. after loading a snapshot), checking shapes against `dims`.
    pub fn attach<S: Scalar>(store: &ParameterStore<S>, dims: ModelDims) -> Result<Model> {
        let need = |name: &str| -> Result<ParamId> {
            store
                .id(name)
                .ok_or_else(|| Error::Snapshot(format!("missing parameter {name:?}")))
        };
        let model = Model {
            dims,
            entity_emb: need("entity_emb")?,
            relation_emb: need("relation_emb")?,
            sum_self_w: need("sum_self_w")?,
            sum_self_b: need("sum_self_b")?,
            sum_neigh_w: need("sum_neigh_w")?,
            sum_pair_w: need("sum_pair_w")?,
            sum_pair_b: need("sum_pair_b")?,
            pol_cand_w: need("pol_cand_w")?,
            pol_query_w: need("pol_query_w")?,
            pol_noop_emb: need("pol_noop_emb")?,
            upd_in_w: need("upd_in_w")?,
            upd_self_w: need("upd_self_w")?,
            upd_self_b: need("upd_self_b")?,
            pred_w: need("pred_w")?,
        };
        let got = store.value(model.entity_emb).shape();
        let want = Shape::Matrix(dims.entities.max(1), dims.d_embed);
        if got != want {
            return Err(Error::VocabMismatch(format!(
                "entity table is {got}, dataset needs {want}"
            )));
        }
        let got = store.value(model.relation_emb).shape();
        let want = Shape::Matrix(dims.relations.max(1), dims.d_embed);
        if got != want {
            return Err(Error::VocabMismatch(format!(
                "relation table is {got}, dataset needs {want}"
            )));
        }
        Ok(model)
    }

    pub fn entity_vec<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        e: u32,
    ) -> ValueId {
        tape.gather_row(store, self.entity_emb, e as usize)
    }

    pub fn relation_vec<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParameterStore<S>,
        r: u32,
    ) -> ValueId {
        tape.gather_row(store, self.relation_emb, r as usize)
    }
}
