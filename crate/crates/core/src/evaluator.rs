//! One-shot link-prediction evaluation: Hits@1/5/10 and mean reciprocal
//! rank, with optional stratification by query distance.
//!
//! Each evaluation relation contributes one designated support triple; all
//! its other triples are queries. A query runs one seeded rollout and the
//! answer is ranked among the retrieved nodes. Entities the rollout never
//! reached cannot be ranked and count as misses.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::TaskRelation;
use crate::kg::KnowledgeGraph;
use crate::model::Model;
use crate::params::ParameterStore;
use crate::reasoner::{rollout, ReasonConfig, RngChooser, Rollout};
use crate::scalar::Scalar;
use crate::seeds::stream_rng;
use crate::summary::summarize_pair;
use crate::tape::Tape;

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub reason: ReasonConfig,
    pub seed: u64,
    /// Discount other known true tails of the same (head, relation) when
    /// ranking.
    pub filtered: bool,
    /// Overlay the support edge on the graph during rollouts.
    pub add_support_edge: bool,
    /// Compute per-query distance buckets (costs one BFS per query).
    pub buckets: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            reason: ReasonConfig::default(),
            seed: 0,
            filtered: false,
            add_support_edge: false,
            buckets: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BucketStats {
    pub n: usize,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryRecord {
    pub relation: String,
    pub head: String,
    pub tail: String,
    /// 1-based rank, absent if the answer was never retrieved.
    pub rank: Option<usize>,
    /// Shortest-distance bucket: "1".."4" or ">=5".
    pub bucket: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub n_queries: usize,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub mrr: f64,
    /// Fraction of queries whose answer was not retrieved at all.
    pub absent_fraction: f64,
    pub buckets: BTreeMap<String, BucketStats>,
    #[serde(skip)]
    pub per_query: Vec<QueryRecord>,
}

impl MetricsReport {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries          {:>8}", self.n_queries);
        let _ = writeln!(s, "hits@1           {:>8.4}", self.hits1);
        let _ = writeln!(s, "hits@5           {:>8.4}", self.hits5);
        let _ = writeln!(s, "hits@10          {:>8.4}", self.hits10);
        let _ = writeln!(s, "mrr              {:>8.4}", self.mrr);
        let _ = writeln!(s, "answer absent    {:>8.4}", self.absent_fraction);
        if !self.buckets.is_empty() {
            let _ = writeln!(s, "by distance:");
            for (k, b) in &self.buckets {
                let _ = writeln!(
                    s,
                    "  {:<4} n={:<6} hits@1={:.4} hits@5={:.4} hits@10={:.4} mrr={:.4}",
                    k, b.n, b.hits1, b.hits5, b.hits10, b.mrr
                );
            }
        }
        s
    }

    /// CSV of per-query outcomes, one row per query.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("relation,head,tail,rank,bucket\n");
        for q in &self.per_query {
            let rank = q.rank.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", q.relation, q.head, q.tail, rank, q.bucket);
        }
        s
    }
}

/// 1-based rank of `answer` among the rollout's scored nodes, by
/// descending score with ties to the smaller entity id. `None` when the
/// answer is not in the graph (or excluded by `candidates`).
pub fn rank_answer(
    roll: &Rollout,
    answer: u32,
    candidates: Option<&HashSet<u32>>,
) -> Option<usize> {
    let target = roll.graph.node_of(answer)?;
    if let Some(cs) = candidates {
        if !cs.contains(&answer) {
            return None;
        }
    }
    let ts = roll.scores[target];
    let mut rank = 1;
    for (i, &s) in roll.scores.iter().enumerate() {
        if i == target {
            continue;
        }
        let e = roll.graph.entity(i);
        if let Some(cs) = candidates {
            if !cs.contains(&e) {
                continue;
            }
        }
        if s > ts || (s == ts && e < answer) {
            rank += 1;
        }
    }
    Some(rank)
}

fn bucket_of(kg: &KnowledgeGraph, head: u32, tail: u32) -> String {
    match kg.shortest_distance(head, tail, 4).ok().flatten() {
        Some(d) => d.max(1).to_string(),
        None => ">=5".to_string(),
    }
}

/// Evaluate every query of every relation in `relations`.
pub fn evaluate<S: Scalar>(
    kg: &KnowledgeGraph,
    relations: &[TaskRelation],
    store: &ParameterStore<S>,
    model: &Model,
    cfg: &EvalConfig,
) -> MetricsReport {
    let mut per_query = Vec::new();
    for rel in relations {
        let support = rel
            .support_triple()
            .expect("evaluation relation must carry a support index");

        let known_tails: HashSet<(u32, u32)> = rel
            .triples
            .iter()
            .map(|t| (t.head, t.tail))
            .collect();

        for (qi, query) in rel.queries().enumerate() {
            let mut tape: Tape<S> = Tape::new();
            // The summary must never see the support or query edge, even
            // when they exist in the graph (in-sample diagnostics).
            let mut sview = kg.view();
            sview.mask_edge(support);
            sview.mask_edge(query);
            let summary = summarize_pair(
                &mut tape,
                store,
                model,
                &sview,
                support.head,
                support.tail,
                cfg.reason.degree_cap,
            );
            // The rollout walks the graph with the query edge hidden; the
            // support edge is hidden too unless explicitly overlaid.
            let mut rview = kg.view();
            rview.mask_edge(query);
            if cfg.add_support_edge {
                rview.add_edge(support);
            } else {
                rview.mask_edge(support);
            }
            let mut rng = stream_rng(cfg.seed, &format!("eval/{}/{}", rel.name, qi));
            let mut chooser = RngChooser { rng: &mut rng };
            let roll = rollout(
                &mut tape,
                store,
                model,
                &rview,
                &summary,
                query.head,
                &cfg.reason,
                &mut chooser,
            );
            let candidates: Option<HashSet<u32>> = if cfg.filtered {
                // keep the true answer plus everything that is not a known
                // true tail of this head
                Some(
                    roll.graph
                        .nodes()
                        .iter()
                        .copied()
                        .filter(|&e| e == query.tail || !known_tails.contains(&(query.head, e)))
                        .collect(),
                )
            } else {
                None
            };
            let rank = rank_answer(&roll, query.tail, candidates.as_ref());
            let bucket = if cfg.buckets {
                bucket_of(kg, query.head, query.tail)
            } else {
                String::new()
            };
            per_query.push(QueryRecord {
                relation: rel.name.clone(),
                head: kg.entities().name(query.head).to_string(),
                tail: kg.entities().name(query.tail).to_string(),
                rank,
                bucket,
            });
        }
    }
    aggregate(per_query)
}

/// Fold per-query outcomes into a report.
pub fn aggregate(per_query: Vec<QueryRecord>) -> MetricsReport {
    let n = per_query.len();
    let mut hits1 = 0.0;
    let mut hits5 = 0.0;
    let mut hits10 = 0.0;
    let mut mrr = 0.0;
    let mut absent = 0usize;
    let mut buckets: BTreeMap<String, (usize, f64, f64, f64, f64)> = BTreeMap::new();
    for q in &per_query {
        let (h1, h5, h10, rr) = match q.rank {
            Some(r) => (
                (r <= 1) as u8 as f64,
                (r <= 5) as u8 as f64,
                (r <= 10) as u8 as f64,
                1.0 / r as f64,
            ),
            None => {
                absent += 1;
                (0.0, 0.0, 0.0, 0.0)
            }
        };
        hits1 += h1;
        hits5 += h5;
        hits10 += h10;
        mrr += rr;
        if !q.bucket.is_empty() {
            let b = buckets.entry(q.bucket.clone()).or_default();
            b.0 += 1;
            b.1 += h1;
            b.2 += h5;
            b.3 += h10;
            b.4 += rr;
        }
    }
    let denom = n.max(1) as f64;
    MetricsReport {
        n_queries: n,
        hits1: hits1 / denom,
        hits5: hits5 / denom,
        hits10: hits10 / denom,
        mrr: mrr / denom,
        absent_fraction: absent as f64 / denom,
        buckets: buckets
            .into_iter()
            .map(|(k, (bn, b1, b5, b10, brr))| {
                let bd = bn.max(1) as f64;
                (
                    k,
                    BucketStats {
                        n: bn,
                        hits1: b1 / bd,
                        hits5: b5 / bd,
                        hits10: b10 / bd,
                        mrr: brr / bd,
                    },
                )
            })
            .collect(),
        per_query,
    }
}
