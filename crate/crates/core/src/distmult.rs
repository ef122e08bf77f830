//! Embedding pretraining with a bilinear-diagonal triple scorer.
//!
//! score(h, r, t) = sum_k v_h[k] * v_r[k] * v_t[k]
//!
//! Trained with a logistic loss: -log sigmoid(score) for observed triples,
//! -log sigmoid(-score) for uniformly corrupted-tail negatives. Each stored
//! triple is trained in both directions so inverse relation rows get
//! gradients too. The resulting tables load into a `ParameterStore` as
//! warm starts for the entity and relation embeddings.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::kg::KnowledgeGraph;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct DistMultConfig {
    pub dim: usize,
    pub epochs: usize,
    /// Corrupted tails per observed triple.
    pub negatives: usize,
    pub lr: f64,
}

impl Default for DistMultConfig {
    fn default() -> Self {
        DistMultConfig {
            dim: 100,
            epochs: 5,
            negatives: 4,
            lr: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainedEmbeddings<S: Scalar> {
    /// Matrix [entity count, dim].
    pub entities: Tensor<S>,
    /// Matrix [relation count, dim].
    pub relations: Tensor<S>,
    /// Mean per-term loss after each epoch.
    pub epoch_loss: Vec<f64>,
}

pub fn score(ent: &[f64], rel: &[f64], dim: usize, h: usize, r: usize, t: usize) -> f64 {
    let vh = &ent[h * dim..(h + 1) * dim];
    let vr = &rel[r * dim..(r + 1) * dim];
    let vt = &ent[t * dim..(t + 1) * dim];
    let mut s = 0.0;
    for k in 0..dim {
        s += vh[k] * vr[k] * vt[k];
    }
    s
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss and gradients of one logistic term. `positive` selects
/// -log sigmoid(score) versus -log sigmoid(-score).
pub fn term_loss_and_grads(
    vh: &[f64],
    vr: &[f64],
    vt: &[f64],
    positive: bool,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let dim = vh.len();
    let mut s = 0.0;
    for k in 0..dim {
        s += vh[k] * vr[k] * vt[k];
    }
    let loss = if positive { softplus(-s) } else { softplus(s) };
    let dlds = if positive {
        sigmoid(s) - 1.0
    } else {
        sigmoid(s)
    };
    let mut gh = vec![0.0; dim];
    let mut gr = vec![0.0; dim];
    let mut gt = vec![0.0; dim];
    for k in 0..dim {
        gh[k] = dlds * vr[k] * vt[k];
        gr[k] = dlds * vh[k] * vt[k];
        gt[k] = dlds * vh[k] * vr[k];
    }
    (loss, gh, gr, gt)
}

#[allow(clippy::too_many_arguments)]
fn sgd_term(
    ent: &mut [f64],
    rel: &mut [f64],
    dim: usize,
    h: usize,
    r: usize,
    t: usize,
    positive: bool,
    lr: f64,
) -> f64 {
    let mut s = 0.0;
    {
        let vh = &ent[h * dim..(h + 1) * dim];
        let vr = &rel[r * dim..(r + 1) * dim];
        let vt = &ent[t * dim..(t + 1) * dim];
        for k in 0..dim {
            s += vh[k] * vr[k] * vt[k];
        }
    }
    let loss = if positive { softplus(-s) } else { softplus(s) };
    let dlds = if positive {
        sigmoid(s) - 1.0
    } else {
        sigmoid(s)
    };
    let step = lr * dlds;
    for k in 0..dim {
        let vh = ent[h * dim + k];
        let vr = rel[r * dim + k];
        let vt = ent[t * dim + k];
        ent[h * dim + k] = vh - step * vr * vt;
        rel[r * dim + k] = vr - step * vh * vt;
        ent[t * dim + k] = vt - step * vh * vr;
    }
    loss
}

pub fn pretrain_distmult<S: Scalar>(
    kg: &KnowledgeGraph,
    cfg: &DistMultConfig,
    rng: &mut ChaCha8Rng,
) -> PretrainedEmbeddings<S> {
    let n_e = kg.entity_count();
    let n_r = kg.relation_count();
    let dim = cfg.dim;
    let mut ent = vec![0.0f64; n_e.max(1) * dim];
    let mut rel = vec![0.0f64; n_r.max(1) * dim];
    for v in ent.iter_mut().chain(rel.iter_mut()) {
        *v = rng.gen_range(-0.1..0.1);
    }

    // Both directions of each stored triple.
    let mut samples: Vec<(usize, usize, usize)> = Vec::with_capacity(kg.triple_count() * 2);
    for t in kg.triples() {
        samples.push((t.head as usize, t.relation as usize, t.tail as usize));
        let r = t.reversed();
        samples.push((r.head as usize, r.relation as usize, r.tail as usize));
    }

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut terms = 0usize;
        for &i in &order {
            let (h, r, t) = samples[i];
            loss_sum += sgd_term(&mut ent, &mut rel, dim, h, r, t, true, cfg.lr);
            terms += 1;
            for _ in 0..cfg.negatives {
                let fake = rng.gen_range(0..n_e);
                loss_sum += sgd_term(&mut ent, &mut rel, dim, h, r, fake, false, cfg.lr);
                terms += 1;
            }
        }
        epoch_loss.push(if terms > 0 { loss_sum / terms as f64 } else { 0.0 });
    }

    let to_tensor = |data: Vec<f64>, rows: usize| {
        Tensor::from_vec(
            Shape::Matrix(rows, dim),
            data.into_iter().map(S::from_f64_lossy).collect(),
        )
    };
    PretrainedEmbeddings {
        entities: to_tensor(ent, n_e.max(1)),
        relations: to_tensor(rel, n_r.max(1)),
        epoch_loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgBuilder;
    use crate::seeds::stream_rng;

    #[test]
    fn identity_relation_scores_squared_norm() {
        let dim = 3;
        let mut ent = vec![0.0; 2 * dim];
        ent[0..3].copy_from_slice(&[0.5, -1.0, 2.0]);
        let rel = vec![1.0; dim];
        let s = score(&ent, &rel, dim, 0, 0, 0);
        let norm_sq = 0.5f64 * 0.5 + 1.0 + 4.0;
        assert!((s - norm_sq).abs() < 1e-12);
    }

    #[test]
    fn term_gradients_match_central_differences() {
        let mut rng = stream_rng(4, "distmult-grad");
        let dim = 5;
        for positive in [true, false] {
            let vh: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vr: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vt: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, gh, gr, gt) = term_loss_and_grads(&vh, &vr, &vt, positive);
            let eps = 1e-6;
            let check = |which: usize, k: usize, analytic: f64| {
                let bump = |delta: f64| {
                    let (mut h, mut r, mut t) = (vh.clone(), vr.clone(), vt.clone());
                    match which {
                        0 => h[k] += delta,
                        1 => r[k] += delta,
                        _ => t[k] += delta,
                    }
                    term_loss_and_grads(&h, &r, &t, positive).0
                };
                let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                assert!(
                    (numeric - analytic).abs() <= 1e-5 * (1.0 + numeric.abs()),
                    "slot {which}[{k}]: numeric {numeric} analytic {analytic}"
                );
            };
            for k in 0..dim {
                check(0, k, gh[k]);
                check(1, k, gr[k]);
                check(2, k, gt[k]);
            }
        }
    }

    #[test]
    fn true_triples_outscore_corrupted_after_training() {
        // 20 entities, one deterministic cycle relation.
        let mut b = KgBuilder::new();
        for i in 0..20 {
            b.add_triple(&format!("e{i}"), "next", &format!("e{}", (i + 1) % 20))
                .unwrap();
        }
        let kg = b.build();
        let cfg = DistMultConfig {
            dim: 16,
            epochs: 40,
            negatives: 4,
            lr: 0.1,
        };
        let mut rng = stream_rng(9, "distmult-sep");
        let out: PretrainedEmbeddings<f64> = pretrain_distmult(&kg, &cfg, &mut rng);
        let ent: Vec<f64> = out.entities.data().to_vec();
        let rel: Vec<f64> = out.relations.data().to_vec();
        let r = kg.relations().get("next").unwrap() as usize;

        let mut true_sum = 0.0;
        let mut fake_sum = 0.0;
        let mut fake_n = 0usize;
        for i in 0..20usize {
            true_sum += score(&ent, &rel, cfg.dim, i, r, (i + 1) % 20);
            for j in 0..20usize {
                if j != (i + 1) % 20 {
                    fake_sum += score(&ent, &rel, cfg.dim, i, r, j);
                    fake_n += 1;
                }
            }
        }
        let true_mean = true_sum / 20.0;
        let fake_mean = fake_sum / fake_n as f64;
        assert!(
            true_mean > fake_mean,
            "true mean {true_mean} <= corrupted mean {fake_mean}"
        );
    }

    #[test]
    fn pretraining_is_deterministic() {
        let mut b = KgBuilder::new();
        b.add_triple("a", "r", "b").unwrap();
        b.add_triple("b", "r", "c").unwrap();
        let kg = b.build();
        let cfg = DistMultConfig {
            dim: 4,
            epochs: 3,
            negatives: 2,
            lr: 0.05,
        };
        let run = || {
            let mut rng = stream_rng(2, "distmult");
            pretrain_distmult::<f64>(&kg, &cfg, &mut rng)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.entities.data(), b.entities.data());
        assert_eq!(a.relations.data(), b.relations.data());
        assert_eq!(a.epoch_loss, b.epoch_loss);
    }
}
