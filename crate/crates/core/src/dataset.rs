//! Dataset directory layout and task-split loading.
//!
//! A dataset directory holds a background triple file, a task triple file,
//! and a `manifest.json` naming both plus the relation names of each split
//! and the designated one-shot support triple for every valid/test
//! relation. Train-task triples are merged into the background graph at
//! load time; valid/test task triples never are, their names are only
//! declared so ids and embeddings exist.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KgBuilder, KnowledgeGraph, Triple};
use crate::seeds::fnv1a;

pub const MANIFEST_FILE: &str = "manifest.json";

/// JSON manifest at the root of a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Background triple file, relative to the directory.
    pub background: String,
    /// Task triple file, relative to the directory.
    pub tasks: String,
    pub splits: SplitNames,
    /// For each valid/test relation, the index of its support triple
    /// within that relation's triples in task-file order.
    pub support_index: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitNames {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Which section of the task split an episode or evaluation draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One task relation resolved to id space.
#[derive(Debug, Clone)]
pub struct TaskRelation {
    pub relation: u32,
    pub name: String,
    /// Triples in task-file order.
    pub triples: Vec<Triple>,
    /// Support triple index; `None` for train relations, where the support
    /// is sampled per episode.
    pub support: Option<usize>,
}

impl TaskRelation {
    pub fn support_triple(&self) -> Option<Triple> {
        self.support.map(|i| self.triples[i])
    }

    /// Query triples: everything except the designated support.
    pub fn queries(&self) -> impl Iterator<Item = Triple> + '_ {
        self.triples
            .iter()
            .enumerate()
            .filter(move |(i, _)| Some(*i) != self.support)
            .map(|(_, t)| *t)
    }
}

/// A loaded dataset: the merged background graph plus resolved splits.
#[derive(Debug)]
pub struct DatasetBundle {
    pub kg: KnowledgeGraph,
    pub train: Vec<TaskRelation>,
    pub valid: Vec<TaskRelation>,
    pub test: Vec<TaskRelation>,
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &[TaskRelation] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Hash over both vocabulary dumps; stored in checkpoints so a model
    /// is never evaluated against a graph with different ids.
    pub fn vocab_hash(&self) -> u64 {
        vocab_hash(&self.kg)
    }
}

pub fn vocab_hash(kg: &KnowledgeGraph) -> u64 {
    let mut bytes = kg.entities().dump().into_bytes();
    bytes.extend_from_slice(kg.relations().dump().as_bytes());
    fnv1a(&bytes)
}

fn read_task_file(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                out.push((h.to_string(), r.to_string(), t.to_string()));
            }
            _ => {
                return Err(Error::MalformedTriple {
                    path: path.to_path_buf(),
                    line: i + 1,
                })
            }
        }
    }
    Ok(out)
}

/// Load a dataset directory into a bundle.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;

    let mut builder = KgBuilder::new();
    builder.add_file(&dir.join(&manifest.background))?;
    let background_relations: Vec<String> =
        builder.relations().names().map(|s| s.to_string()).collect();

    let task_rows = read_task_file(&dir.join(&manifest.tasks))?;
    let mut by_name: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
    for (h, r, t) in &task_rows {
        by_name.entry(r).or_default().push((h, t));
    }

    for name in manifest
        .splits
        .valid
        .iter()
        .chain(manifest.splits.test.iter())
    {
        if background_relations.iter().any(|r| r == name) {
            return Err(Error::Manifest(format!(
                "evaluation relation {name:?} also appears in the background graph"
            )));
        }
    }

    // Merge train-task edges; declare eval names without storing edges.
    for name in &manifest.splits.train {
        let rows = by_name.get(name.as_str()).cloned().unwrap_or_default();
        for (h, t) in rows {
            builder.add_triple(h, name, t)?;
        }
    }
    for name in manifest
        .splits
        .valid
        .iter()
        .chain(manifest.splits.test.iter())
    {
        builder.declare_relation(name)?;
        for (h, t) in by_name.get(name.as_str()).cloned().unwrap_or_default() {
            builder.declare_entity(h);
            builder.declare_entity(t);
        }
    }
    let kg = builder.build();

    let resolve = |names: &[String], eval_split: bool| -> Result<Vec<TaskRelation>> {
        let mut out = Vec::new();
        for name in names {
            let rows = by_name.get(name.as_str()).cloned().unwrap_or_default();
            if rows.len() < 2 {
                return Err(Error::TooFewTriples {
                    relation: name.clone(),
                    count: rows.len(),
                });
            }
            let relation = kg
                .relations()
                .get(name)
                .ok_or_else(|| Error::UnknownRelation(name.clone()))?;
            let triples: Vec<Triple> = rows
                .iter()
                .map(|(h, t)| {
                    Ok(Triple::new(
                        kg.entities()
                            .get(h)
                            .ok_or_else(|| Error::UnknownEntity(h.to_string()))?,
                        relation,
                        kg.entities()
                            .get(t)
                            .ok_or_else(|| Error::UnknownEntity(t.to_string()))?,
                    ))
                })
                .collect::<Result<_>>()?;
            let support = if eval_split {
                let idx = *manifest.support_index.get(name).ok_or_else(|| {
                    Error::Manifest(format!("no support index for evaluation relation {name:?}"))
                })?;
                if idx >= triples.len() {
                    return Err(Error::Manifest(format!(
                        "support index {idx} out of range for relation {name:?} ({} triples)",
                        triples.len()
                    )));
                }
                Some(idx)
            } else {
                None
            };
            out.push(TaskRelation {
                relation,
                name: name.clone(),
                triples,
                support,
            });
        }
        Ok(out)
    };

    Ok(DatasetBundle {
        train: resolve(&manifest.splits.train, false)?,
        valid: resolve(&manifest.splits.valid, true)?,
        test: resolve(&manifest.splits.test, true)?,
        kg,
    })
}

/// Name-space dataset content, ready to be written to a directory.
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub background: Vec<(String, String, String)>,
    pub tasks: Vec<(String, String, String)>,
    pub splits: SplitNames,
    pub support_index: BTreeMap<String, usize>,
}

/// Write `background.tsv`, `tasks.tsv`, and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, files: &DatasetFiles) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let render = |rows: &[(String, String, String)]| {
        let mut s = String::new();
        for (h, r, t) in rows {
            s.push_str(h);
            s.push('\t');
            s.push_str(r);
            s.push('\t');
            s.push_str(t);
            s.push('\n');
        }
        s
    };
    let bg_path = dir.join("background.tsv");
    fs::write(&bg_path, render(&files.background)).map_err(|e| Error::io(&bg_path, e))?;
    let task_path = dir.join("tasks.tsv");
    fs::write(&task_path, render(&files.tasks)).map_err(|e| Error::io(&task_path, e))?;
    let manifest = Manifest {
        background: "background.tsv".to_string(),
        tasks: "tasks.tsv".to_string(),
        splits: files.splits.clone(),
        support_index: files.support_index.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}
