//! Immutable knowledge graph with inverse-augmented adjacency.
//!
//! Every base relation `r` is paired with an inverse id so edges can be
//! walked in both directions: base relations get even ids, their inverses
//! the following odd id, and `inverse(r) == r ^ 1`. Adjacency lists are
//! sorted by `(relation_id, entity_id)` and duplicate-free, which makes
//! degree-cap truncation deterministic.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Name suffix for synthesized inverse relations.
pub const INVERSE_SUFFIX: &str = "_inv";

/// Inverse relation id (base <-> inverse).
pub fn inverse(rel: u32) -> u32 {
    rel ^ 1
}

/// True if `rel` is a synthesized inverse id.
pub fn is_inverse(rel: u32) -> bool {
    rel & 1 == 1
}

/// Interned string table with dense ids in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    /// `name<TAB>id` lines in id order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, name) in self.names.iter().enumerate() {
            let _ = writeln!(out, "{name}\t{id}");
        }
        out
    }
}

/// Intern a base relation, creating its inverse alongside. Errors if the
/// name is already taken by an inverse or would shadow one.
fn intern_base_relation(vocab: &mut Vocab, name: &str) -> Result<u32> {
    if let Some(id) = vocab.get(name) {
        if is_inverse(id) {
            return Err(Error::VocabCollision(name.to_string()));
        }
        return Ok(id);
    }
    let inv_name = format!("{name}{INVERSE_SUFFIX}");
    if vocab.get(&inv_name).is_some() {
        return Err(Error::VocabCollision(inv_name));
    }
    let id = vocab.intern(name);
    let inv = vocab.intern(&inv_name);
    debug_assert_eq!(inv, id + 1);
    debug_assert!(!is_inverse(id));
    Ok(id)
}

/// Directed labeled edge in id space, stored with a base relation id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    /// The same edge walked backwards.
    pub fn reversed(self) -> Self {
        Self {
            head: self.tail,
            relation: inverse(self.relation),
            tail: self.head,
        }
    }
}

/// Counters reported by ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines_read: usize,
    pub duplicates: usize,
}

/// Incrementally interns triples from files or id/name space, then freezes
/// into a [`KnowledgeGraph`].
#[derive(Debug, Default)]
pub struct KgBuilder {
    entities: Vocab,
    relations: Vocab,
    triples: BTreeSet<Triple>,
    duplicates: usize,
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str) -> Result<Triple> {
        let h = self.entities.intern(head);
        let r = intern_base_relation(&mut self.relations, relation)?;
        let t = self.entities.intern(tail);
        let triple = Triple::new(h, r, t);
        if !self.triples.insert(triple) {
            self.duplicates += 1;
        }
        Ok(triple)
    }

    /// Intern names without storing an edge. Used for task relations that
    /// must exist in the vocabulary but stay out of the background graph.
    pub fn declare_relation(&mut self, relation: &str) -> Result<u32> {
        intern_base_relation(&mut self.relations, relation)
    }

    pub fn declare_entity(&mut self, entity: &str) -> u32 {
        self.entities.intern(entity)
    }

    /// Read a `head<TAB>relation<TAB>tail` file, one triple per line.
    /// Blank lines are skipped; anything else malformed is an error.
    pub fn add_file(&mut self, path: &Path) -> Result<LoadStats> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let before_dups = self.duplicates;
        let mut lines_read = 0;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (h, r, t) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                    (h, r, t)
                }
                _ => {
                    return Err(Error::MalformedTriple {
                        path: path.to_path_buf(),
                        line: i + 1,
                    })
                }
            };
            self.add_triple(h, r, t)?;
            lines_read += 1;
        }
        Ok(LoadStats {
            lines_read,
            duplicates: self.duplicates - before_dups,
        })
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn build(self) -> KnowledgeGraph {
        let mut adjacency = vec![Vec::new(); self.entities.len()];
        for &t in &self.triples {
            adjacency[t.head as usize].push((t.relation, t.tail));
            adjacency[t.tail as usize].push((inverse(t.relation), t.head));
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            adjacency,
            triple_count: self.triples.len(),
            duplicates: self.duplicates,
        }
    }
}

/// Frozen graph: vocabularies plus sorted adjacency in both directions.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    adjacency: Vec<Vec<(u32, u32)>>,
    triple_count: usize,
    duplicates: usize,
}

impl KnowledgeGraph {
    pub fn load(path: &Path) -> Result<Self> {
        let mut b = KgBuilder::new();
        b.add_file(path)?;
        Ok(b.build())
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Total relation ids including inverses.
    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn base_relation_count(&self) -> usize {
        self.relations.len() / 2
    }

    pub fn triple_count(&self) -> usize {
        self.triple_count
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    fn check_entity(&self, e: u32) -> Result<()> {
        if (e as usize) < self.adjacency.len() {
            Ok(())
        } else {
            Err(Error::EntityOutOfRange {
                id: e,
                len: self.adjacency.len(),
            })
        }
    }

    pub fn degree(&self, e: u32) -> usize {
        self.adjacency[e as usize].len()
    }

    /// Edges leaving `e` in `(relation, target)` sort order, truncated to
    /// the first `cap`.
    pub fn outgoing_edges(&self, e: u32, cap: usize) -> Result<&[(u32, u32)]> {
        self.check_entity(e)?;
        let list = &self.adjacency[e as usize];
        Ok(&list[..list.len().min(cap)])
    }

    pub fn contains_edge(&self, head: u32, rel: u32, tail: u32) -> bool {
        self.adjacency
            .get(head as usize)
            .map(|l| l.binary_search(&(rel, tail)).is_ok())
            .unwrap_or(false)
    }

    /// Forward triples in `(head, relation, tail)` order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(h, list)| {
            list.iter()
                .filter(|(r, _)| !is_inverse(*r))
                .map(move |&(r, t)| Triple::new(h as u32, r, t))
        })
    }

    /// Unmasked view of the whole graph.
    pub fn view(&self) -> GraphView<'_> {
        GraphView {
            kg: self,
            forbidden: BTreeSet::new(),
            extra: Vec::new(),
        }
    }

    /// BFS hop count from `a` to `b`, or `None` when farther than `horizon`.
    pub fn shortest_distance(&self, a: u32, b: u32, horizon: usize) -> Result<Option<usize>> {
        self.check_entity(a)?;
        self.check_entity(b)?;
        Ok(self.view().shortest_distance(a, b, horizon))
    }
}

/// Keep pairs whose endpoints lie strictly closer than `max_dist` hops;
/// also report the fraction removed.
pub fn filter_eval_pairs(
    kg: &KnowledgeGraph,
    pairs: &[(u32, u32)],
    max_dist: usize,
) -> Result<(Vec<(u32, u32)>, f64)> {
    assert!(max_dist >= 1, "max_dist must be at least 1");
    let mut kept = Vec::new();
    for &(h, t) in pairs {
        if kg.shortest_distance(h, t, max_dist - 1)?.is_some() {
            kept.push((h, t));
        }
    }
    let removed = if pairs.is_empty() {
        0.0
    } else {
        (pairs.len() - kept.len()) as f64 / pairs.len() as f64
    };
    Ok((kept, removed))
}

/// Read-only overlay on a [`KnowledgeGraph`]: some directed edges hidden,
/// some added, both closed under inversion. The base graph is untouched.
#[derive(Debug, Clone)]
pub struct GraphView<'a> {
    kg: &'a KnowledgeGraph,
    forbidden: BTreeSet<(u32, u32, u32)>,
    /// Per-source extra edges, kept sorted for merge.
    extra: Vec<(u32, u32, u32)>,
}

impl<'a> GraphView<'a> {
    pub fn graph(&self) -> &'a KnowledgeGraph {
        self.kg
    }

    /// Hide `t` and its inverse from traversal.
    pub fn mask_edge(&mut self, t: Triple) {
        self.forbidden.insert((t.head, t.relation, t.tail));
        let r = t.reversed();
        self.forbidden.insert((r.head, r.relation, r.tail));
    }

    /// Overlay `t` and its inverse without touching the base graph.
    pub fn add_edge(&mut self, t: Triple) {
        self.extra.push((t.head, t.relation, t.tail));
        let r = t.reversed();
        self.extra.push((r.head, r.relation, r.tail));
        self.extra.sort_unstable();
        self.extra.dedup();
    }

    pub fn is_masked(&self, t: Triple) -> bool {
        self.forbidden.contains(&(t.head, t.relation, t.tail))
    }

    fn extras_from(&self, e: u32) -> &[(u32, u32, u32)] {
        let lo = self.extra.partition_point(|&(h, _, _)| h < e);
        let hi = self.extra.partition_point(|&(h, _, _)| h <= e);
        &self.extra[lo..hi]
    }

    /// Visible edges leaving `e`: base edges merged with overlay edges,
    /// masked ones dropped, then capped. The filter runs before the cap so
    /// masking never starves an entity that still has legal edges.
    pub fn outgoing_edges(&self, e: u32, cap: usize) -> Result<Vec<(u32, u32)>> {
        self.kg.check_entity(e)?;
        let base = &self.kg.adjacency[e as usize];
        let extras = self.extras_from(e);
        let mut out = Vec::with_capacity(base.len().min(cap));
        let mut bi = 0;
        let mut xi = 0;
        while out.len() < cap && (bi < base.len() || xi < extras.len()) {
            let next = match (base.get(bi), extras.get(xi)) {
                (Some(&b), Some(&(_, xr, xt))) => {
                    if b <= (xr, xt) {
                        if b == (xr, xt) {
                            xi += 1;
                        }
                        bi += 1;
                        b
                    } else {
                        xi += 1;
                        (xr, xt)
                    }
                }
                (Some(&b), None) => {
                    bi += 1;
                    b
                }
                (None, Some(&(_, xr, xt))) => {
                    xi += 1;
                    (xr, xt)
                }
                (None, None) => unreachable!(),
            };
            if self.forbidden.is_empty() || !self.forbidden.contains(&(e, next.0, next.1)) {
                out.push(next);
            }
        }
        Ok(out)
    }

    /// Uncapped BFS distance within the view, `None` beyond `horizon`.
    pub fn shortest_distance(&self, a: u32, b: u32, horizon: usize) -> Option<usize> {
        if a == b {
            return Some(0);
        }
        let mut seen = vec![false; self.kg.entity_count()];
        seen[a as usize] = true;
        let mut queue = VecDeque::new();
        queue.push_back((a, 0usize));
        while let Some((node, depth)) = queue.pop_front() {
            if depth >= horizon {
                continue;
            }
            for (_, target) in self
                .outgoing_edges(node, usize::MAX)
                .expect("node id checked on insert")
            {
                if target == b {
                    return Some(depth + 1);
                }
                if !seen[target as usize] {
                    seen[target as usize] = true;
                    queue.push_back((target, depth + 1));
                }
            }
        }
        None
    }
}
