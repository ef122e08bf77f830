//! Synthetic datasets with planted relational rules.
//!
//! Entities carry implicit types arranged in a cycle (entity `i` has type
//! `i % n_base_relations`) and base relation `b{j}` only links type `j` to
//! type `j + 1`. An entity's relation profile therefore reveals its type,
//! which is what lets a one-shot learner infer a task relation's rule from
//! a single support pair. Each task relation is defined by a composition
//! rule over consecutive base relations (2 hops by default, 3 optional),
//! assigned round-robin so held-out relations reuse rule bodies that also
//! occur under training relations; the model never sees relation
//! identities, only support pairs, so held-out relations remain genuinely
//! unseen tasks. Task triples are exactly the head/tail pairs connected by
//! the rule path, subsampled to a per-relation cap, and every emitted
//! triple carries a witness path so learned behaviour can be checked
//! against ground truth. Distractor edges live on dedicated relations that
//! never participate in rules.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{DatasetFiles, SplitNames};
use crate::error::{Error, Result};
use crate::seeds::stream_rng;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_entities: usize,
    /// Also the number of entity types; entity `i` has type
    /// `i % n_base_relations`.
    pub n_base_relations: usize,
    /// Outgoing edges per entity on its type's base relation.
    pub edges_per_entity: usize,
    /// Relations that never participate in rules.
    pub n_distractor_relations: usize,
    /// Irrelevant edges per head; pick at least degree_cap/8 so the policy
    /// must select edges rather than exhaust them.
    pub distractors_per_entity: usize,
    pub n_train_relations: usize,
    pub n_valid_relations: usize,
    pub n_test_relations: usize,
    /// Subsample cap on triples per task relation.
    pub max_triples_per_relation: usize,
    /// Extra random type-respecting base edges as a fraction of the
    /// regular base edge count.
    pub noise_fraction: f64,
    /// Rule path length: 2 or 3.
    pub hops: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_entities: 200,
            n_base_relations: 6,
            edges_per_entity: 3,
            n_distractor_relations: 4,
            distractors_per_entity: 4,
            n_train_relations: 4,
            n_valid_relations: 2,
            n_test_relations: 2,
            max_triples_per_relation: 40,
            noise_fraction: 0.05,
            hops: 2,
            seed: 0,
        }
    }
}

/// A task relation and the base-relation path that defines it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSpec {
    pub relation: String,
    pub body: Vec<String>,
}

/// Ground-truth path for one task triple: entity names from head to tail,
/// `hops + 1` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub relation: String,
    pub path: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub files: DatasetFiles,
    pub rules: Vec<RuleSpec>,
    /// One witness per task triple, in `files.tasks` order.
    pub witnesses: Vec<Witness>,
}

fn entity_name(i: usize) -> String {
    format!("e{i}")
}

/// All (head, mid.., tail) paths matching `body` in per-relation adjacency,
/// keyed by endpoint pair; the lexicographically first path wins.
fn rule_paths(
    adj: &[BTreeMap<u32, BTreeSet<u32>>],
    body: &[usize],
) -> BTreeMap<(u32, u32), Vec<u32>> {
    let mut out: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    match body {
        [r1, r2] => {
            for (&h, mids) in &adj[*r1] {
                for &x in mids {
                    if let Some(tails) = adj[*r2].get(&x) {
                        for &t in tails {
                            out.entry((h, t)).or_insert_with(|| vec![h, x, t]);
                        }
                    }
                }
            }
        }
        [r1, r2, r3] => {
            for (&h, mids) in &adj[*r1] {
                for &x in mids {
                    if let Some(mids2) = adj[*r2].get(&x) {
                        for &y in mids2 {
                            if let Some(tails) = adj[*r3].get(&y) {
                                for &t in tails {
                                    out.entry((h, t)).or_insert_with(|| vec![h, x, y, t]);
                                }
                            }
                        }
                    }
                }
            }
        }
        _ => unreachable!("rule body length validated earlier"),
    }
    out
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    if spec.n_entities < 3 {
        return Err(Error::TaskGen("need at least 3 entities".into()));
    }
    if spec.n_base_relations == 0 || spec.edges_per_entity == 0 {
        return Err(Error::TaskGen(
            "need at least one base relation with edges".into(),
        ));
    }
    if spec.hops != 2 && spec.hops != 3 {
        return Err(Error::TaskGen(format!(
            "rule length {} unsupported (2 or 3)",
            spec.hops
        )));
    }
    let n_tasks = spec.n_train_relations + spec.n_valid_relations + spec.n_test_relations;
    if n_tasks == 0 {
        return Err(Error::TaskGen("no task relations requested".into()));
    }
    if spec.max_triples_per_relation < 2 {
        return Err(Error::TaskGen(
            "max_triples_per_relation must be at least 2".into(),
        ));
    }
    if spec.distractors_per_entity > 0 && spec.n_distractor_relations == 0 {
        return Err(Error::TaskGen(
            "distractor edges requested without distractor relations".into(),
        ));
    }
    if spec.n_entities < spec.n_base_relations {
        return Err(Error::TaskGen(format!(
            "{} entities cannot populate {} types",
            spec.n_entities, spec.n_base_relations
        )));
    }

    let mut rng = stream_rng(spec.seed, "taskgen");
    let n = spec.n_entities;
    let n_types = spec.n_base_relations;
    // Entities of type c are c, c + T, c + 2T, ...
    let type_count = |c: usize| (n - c).div_ceil(n_types);

    // Background edges. `adj[rel]` indexes base relations only; distractor
    // relations never join rules, so rule scans skip them.
    let mut background: Vec<(String, String, String)> = Vec::new();
    let mut seen: BTreeSet<(usize, u32, u32)> = BTreeSet::new();
    let mut adj: Vec<BTreeMap<u32, BTreeSet<u32>>> =
        vec![BTreeMap::new(); spec.n_base_relations];

    let push_base = |ri: usize,
                         h: u32,
                         t: u32,
                         background: &mut Vec<(String, String, String)>,
                         seen: &mut BTreeSet<(usize, u32, u32)>,
                         adj: &mut Vec<BTreeMap<u32, BTreeSet<u32>>>| {
        if seen.insert((ri, h, t)) {
            background.push((
                entity_name(h as usize),
                format!("b{ri}"),
                entity_name(t as usize),
            ));
            adj[ri].entry(h).or_default().insert(t);
        }
    };

    // Draw a type-`c` entity other than `h`; the caller guarantees one
    // exists.
    let draw_target = |rng: &mut rand_chacha::ChaCha8Rng, c: usize, h: u32| -> u32 {
        let count = type_count(c);
        let mut k = rng.gen_range(0..count);
        if (c + k * n_types) as u32 == h {
            k = (k + 1) % count;
        }
        (c + k * n_types) as u32
    };

    for h in 0..n as u32 {
        let ri = h as usize % n_types;
        let target_type = (ri + 1) % n_types;
        for _ in 0..spec.edges_per_entity {
            let t = draw_target(&mut rng, target_type, h);
            push_base(ri, h, t, &mut background, &mut seen, &mut adj);
        }
    }

    let base_edges = background.len();
    let n_noise = (spec.noise_fraction * base_edges as f64).round() as usize;
    for _ in 0..n_noise {
        let h = rng.gen_range(0..n as u32);
        let ri = h as usize % n_types;
        let t = draw_target(&mut rng, (ri + 1) % n_types, h);
        push_base(ri, h, t, &mut background, &mut seen, &mut adj);
    }

    let mut seen_distractor: BTreeSet<(usize, u32, u32)> = BTreeSet::new();
    for h in 0..n as u32 {
        for _ in 0..spec.distractors_per_entity {
            let ri = rng.gen_range(0..spec.n_distractor_relations);
            let mut t = rng.gen_range(0..n as u32 - 1);
            if t >= h {
                t += 1;
            }
            if seen_distractor.insert((ri, h, t)) {
                background.push((
                    entity_name(h as usize),
                    format!("d{ri}"),
                    entity_name(t as usize),
                ));
            }
        }
    }

    // The type cycle admits exactly one chainable body per starting
    // relation; task relations take them round-robin, so every held-out
    // body also occurs under at least one training relation whenever
    // n_train_relations >= n_base_relations.
    let mut rules = Vec::with_capacity(n_tasks);
    let mut tasks: Vec<(String, String, String)> = Vec::new();
    let mut witnesses: Vec<Witness> = Vec::new();
    // Each endpoint pair belongs to at most one task relation, so a query
    // of one relation never has a direct edge under another; answering it
    // requires the full rule path.
    let mut used_pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
    for task_i in 0..n_tasks {
        let rel_name = format!("task{task_i}");
        let body: Vec<usize> = (0..spec.hops).map(|k| (task_i + k) % n_types).collect();
        let paths = rule_paths(&adj, &body);
        let mut pairs: Vec<(&(u32, u32), &Vec<u32>)> = paths
            .iter()
            .filter(|(pair, _)| !used_pairs.contains(pair))
            .collect();
        if pairs.len() < 2 {
            return Err(Error::TaskGen(format!(
                "rule {rel_name} over {body:?} has {} unclaimed instances, need 2; \
                 raise edges_per_entity or n_entities, or lower \
                 max_triples_per_relation",
                pairs.len()
            )));
        }
        if pairs.len() > spec.max_triples_per_relation {
            pairs.shuffle(&mut rng);
            pairs.truncate(spec.max_triples_per_relation);
            pairs.sort();
        }
        for (&(h, t), path) in pairs {
            used_pairs.insert((h, t));
            tasks.push((
                entity_name(h as usize),
                rel_name.clone(),
                entity_name(t as usize),
            ));
            witnesses.push(Witness {
                relation: rel_name.clone(),
                path: path.iter().map(|&e| entity_name(e as usize)).collect(),
            });
        }
        rules.push(RuleSpec {
            relation: rel_name,
            body: body.iter().map(|ri| format!("b{ri}")).collect(),
        });
    }

    let names: Vec<String> = rules.iter().map(|r| r.relation.clone()).collect();
    let splits = SplitNames {
        train: names[..spec.n_train_relations].to_vec(),
        valid: names[spec.n_train_relations..spec.n_train_relations + spec.n_valid_relations]
            .to_vec(),
        test: names[spec.n_train_relations + spec.n_valid_relations..].to_vec(),
    };
    let mut support_index = BTreeMap::new();
    for name in splits.valid.iter().chain(splits.test.iter()) {
        support_index.insert(name.clone(), 0usize);
    }

    Ok(SynthOutput {
        files: DatasetFiles {
            background,
            tasks,
            splits,
            support_index,
        },
        rules,
        witnesses,
    })
}
