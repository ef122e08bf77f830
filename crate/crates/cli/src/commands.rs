//! Subcommand implementations. Every command echoes its resolved
//! configuration into the output directory before doing real work.

use std::cell::RefCell;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cograph_core::dataset::{load_bundle, write_dataset, DatasetBundle, Split};
use cograph_core::distmult::pretrain_distmult;
use cograph_core::dot;
use cograph_core::error::{Error, Result};
use cograph_core::evaluator::evaluate;
use cograph_core::kg::Triple;
use cograph_core::model::{Model, ModelDims};
use cograph_core::params::{snapshot_width, ParamGroup, ParameterStore};
use cograph_core::reasoner::{rollout, RngChooser};
use cograph_core::scalar::{FloatWidth, Scalar};
use cograph_core::seeds::stream_rng;
use cograph_core::summary::summarize_pair;
use cograph_core::tape::Tape;
use cograph_core::taskgen::generate;
use cograph_core::trainer::train;

use crate::config::{KvConfig, Settings, SynthSettings};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn width_name(w: FloatWidth) -> &'static str {
    match w {
        FloatWidth::F32 => "f32",
        FloatWidth::F64 => "f64",
    }
}

/// Snapshot plus the metadata needed to verify it against a dataset.
fn write_checkpoint<S: Scalar>(
    dir: &Path,
    store: &ParameterStore<S>,
    settings: &Settings,
    bundle: &DatasetBundle,
) -> Result<()> {
    ensure_dir(dir)?;
    store.save_snapshot(&dir.join("params.bin"))?;
    write_text(&dir.join("config.conf"), &settings.render())?;
    let hashes = serde_json::json!({
        "vocab_hash": format!("{:016x}", bundle.vocab_hash()),
        "entities": bundle.kg.entity_count(),
        "relations": bundle.kg.relation_count(),
        "float_width": width_name(S::WIDTH),
    });
    write_text(
        &dir.join("hashes.json"),
        &serde_json::to_string_pretty(&hashes).expect("hash manifest serializes"),
    )
}

/// A checkpoint argument may be the directory or the params.bin inside it.
fn checkpoint_files(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join("params.bin"), path.join("hashes.json"))
    } else {
        let hashes = path
            .parent()
            .map(|p| p.join("hashes.json"))
            .unwrap_or_else(|| PathBuf::from("hashes.json"));
        (path.to_path_buf(), hashes)
    }
}

fn check_vocab_hash(hashes_path: &Path, bundle: &DatasetBundle) -> Result<()> {
    let text = fs::read_to_string(hashes_path).map_err(|e| Error::io(hashes_path, e))?;
    let parsed: serde_json::Value = serde_json::from_str(&text)?;
    let stored = parsed
        .get("vocab_hash")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Snapshot(format!("{}: no vocab_hash field", hashes_path.display())))?;
    let want = format!("{:016x}", bundle.vocab_hash());
    if stored != want {
        return Err(Error::VocabMismatch(format!(
            "checkpoint was built against different vocabularies \
             (checkpoint {stored}, dataset {want})"
        )));
    }
    Ok(())
}

pub fn cmd_generate(spec: Option<PathBuf>, out: PathBuf, sets: Vec<String>) -> Result<()> {
    let cfg = SynthSettings::resolve(spec.as_deref(), &sets)?;
    ensure_dir(&out)?;
    write_text(&out.join("spec.conf"), &cfg.render())?;

    let data = generate(&cfg.0)?;
    write_dataset(&out, &data.files)?;

    let mut rules = String::new();
    for r in &data.rules {
        rules.push_str(&r.relation);
        for b in &r.body {
            rules.push('\t');
            rules.push_str(b);
        }
        rules.push('\n');
    }
    write_text(&out.join("rules.tsv"), &rules)?;

    let mut witnesses = String::new();
    for w in &data.witnesses {
        witnesses.push_str(&w.relation);
        for e in &w.path {
            witnesses.push('\t');
            witnesses.push_str(e);
        }
        witnesses.push('\n');
    }
    write_text(&out.join("witnesses.tsv"), &witnesses)?;

    println!(
        "generated {} background triples, {} task triples over {} relations -> {}",
        data.files.background.len(),
        data.files.tasks.len(),
        data.rules.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_pretrain(
    dataset: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    sets: Vec<String>,
) -> Result<()> {
    let cfg = Settings::resolve(config.as_deref(), &sets)?;
    ensure_dir(&out)?;
    write_text(&out.join("config.conf"), &cfg.render())?;
    let bundle = load_bundle(&dataset)?;
    match cfg.float_width {
        FloatWidth::F64 => run_pretrain::<f64>(&cfg, &bundle, &out),
        FloatWidth::F32 => run_pretrain::<f32>(&cfg, &bundle, &out),
    }
}

fn run_pretrain<S: Scalar>(cfg: &Settings, bundle: &DatasetBundle, out: &Path) -> Result<()> {
    let mut rng = stream_rng(cfg.seed, "pretrain");
    let tables = pretrain_distmult::<S>(&bundle.kg, &cfg.distmult_config(), &mut rng);
    let mut store: ParameterStore<S> = ParameterStore::new();
    store.register("entity_emb", ParamGroup::Embedding, tables.entities);
    store.register("relation_emb", ParamGroup::Embedding, tables.relations);
    write_checkpoint(out, &store, cfg, bundle)?;
    for (i, loss) in tables.epoch_loss.iter().enumerate() {
        println!("epoch {} mean loss {loss:.6}", i + 1);
    }
    println!("embedding tables -> {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    dataset: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    sets: Vec<String>,
    seed: Option<u64>,
    steps: Option<u64>,
    threads: Option<usize>,
) -> Result<()> {
    let mut cfg = Settings::resolve(config.as_deref(), &sets)?;
    if let Some(v) = seed {
        cfg.seed = v;
    }
    if let Some(v) = steps {
        cfg.steps = v;
    }
    if let Some(v) = threads {
        cfg.threads = v.max(1);
    }
    ensure_dir(&out)?;
    write_text(&out.join("config.conf"), &cfg.render())?;
    let bundle = load_bundle(&dataset)?;
    match cfg.float_width {
        FloatWidth::F64 => run_train::<f64>(&cfg, &bundle, &out, embeddings.as_deref()),
        FloatWidth::F32 => run_train::<f32>(&cfg, &bundle, &out, embeddings.as_deref()),
    }
}

fn load_embeddings<S: Scalar>(
    store: &mut ParameterStore<S>,
    path: &Path,
    bundle: &DatasetBundle,
) -> Result<()> {
    let (params_file, hashes_file) = checkpoint_files(path);
    if hashes_file.exists() {
        check_vocab_hash(&hashes_file, bundle)?;
    }
    let loaded: ParameterStore<S> = ParameterStore::load_snapshot(&params_file)?;
    for name in ["entity_emb", "relation_emb"] {
        let id = loaded
            .id(name)
            .ok_or_else(|| Error::Snapshot(format!("{}: no {name} table", params_file.display())))?;
        store.set_value(name, loaded.value(id).clone())?;
    }
    Ok(())
}

fn run_train<S: Scalar>(
    cfg: &Settings,
    bundle: &DatasetBundle,
    out: &Path,
    embeddings: Option<&Path>,
) -> Result<()> {
    let dims = ModelDims {
        entities: bundle.kg.entity_count(),
        relations: bundle.kg.relation_count(),
        d_embed: cfg.d_embed,
        d_hidden: cfg.d_hidden,
    };
    let mut store: ParameterStore<S> = ParameterStore::new();
    let mut init_rng = stream_rng(cfg.seed, "init");
    let model = Model::register(&mut store, dims, &mut init_rng);
    if let Some(path) = embeddings {
        load_embeddings(&mut store, path, bundle)?;
    }

    let log_path = out.join("train_log.ndjson");
    let log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let sink = RefCell::new((std::io::BufWriter::new(log_file), None::<std::io::Error>));
    let outcome = train(bundle, &mut store, &model, &cfg.train_config(), |rec| {
        let mut guard = sink.borrow_mut();
        if guard.1.is_none() {
            let line = serde_json::to_string(rec).expect("train record serializes");
            if let Err(e) = writeln!(guard.0, "{line}") {
                guard.1 = Some(e);
            }
        }
    })?;
    {
        let mut guard = sink.borrow_mut();
        if guard.1.is_none() {
            if let Err(e) = guard.0.flush() {
                guard.1 = Some(e);
            }
        }
        if let Some(e) = guard.1.take() {
            return Err(Error::io(&log_path, e));
        }
    }

    // The store holds the best-validation snapshot after training.
    write_checkpoint(&out.join("best"), &store, cfg, bundle)?;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (&id, v) in ids.iter().zip(outcome.final_values) {
        *store.value_mut(id) = v;
    }
    write_checkpoint(&out.join("final"), &store, cfg, bundle)?;

    if outcome.best_mrr.is_finite() {
        println!(
            "trained {} steps (best validation MRR {:.4} at step {}{})",
            outcome.steps_run,
            outcome.best_mrr,
            outcome.best_step,
            if outcome.stopped_early {
                ", stopped early"
            } else {
                ""
            }
        );
    } else {
        println!("trained {} steps (no validation performed)", outcome.steps_run);
    }
    println!("checkpoints -> {} and {}", out.join("best").display(), out.join("final").display());
    Ok(())
}

fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        _ => Err(Error::Config(format!(
            "unknown split {name:?}: expected train, valid, or test"
        ))),
    }
}

/// Model dimensions recorded in a snapshot's table shapes.
fn dims_from_store<S: Scalar>(
    store: &ParameterStore<S>,
    bundle: &DatasetBundle,
) -> Result<ModelDims> {
    let table = |name: &str| -> Result<(usize, usize)> {
        let id = store
            .id(name)
            .ok_or_else(|| Error::Snapshot(format!("snapshot has no {name} parameter")))?;
        let dims = store.value(id).shape().dims();
        match dims.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Snapshot(format!("{name} is not a matrix"))),
        }
    };
    let (_, d_embed) = table("entity_emb")?;
    let (d_hidden, _) = table("sum_self_w")?;
    Ok(ModelDims {
        entities: bundle.kg.entity_count(),
        relations: bundle.kg.relation_count(),
        d_embed,
        d_hidden,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate(
    dataset: PathBuf,
    checkpoint: PathBuf,
    out: PathBuf,
    split: String,
    config: Option<PathBuf>,
    sets: Vec<String>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = Settings::resolve(config.as_deref(), &sets)?;
    if let Some(v) = seed {
        cfg.seed = v;
    }
    let split = parse_split(&split)?;
    ensure_dir(&out)?;
    write_text(&out.join("config.conf"), &cfg.render())?;

    let bundle = load_bundle(&dataset)?;
    let (params_file, hashes_file) = checkpoint_files(&checkpoint);
    check_vocab_hash(&hashes_file, &bundle)?;
    match snapshot_width(&params_file)? {
        FloatWidth::F64 => run_evaluate::<f64>(&cfg, &bundle, split, &params_file, &out),
        FloatWidth::F32 => run_evaluate::<f32>(&cfg, &bundle, split, &params_file, &out),
    }
}

fn run_evaluate<S: Scalar>(
    cfg: &Settings,
    bundle: &DatasetBundle,
    split: Split,
    params_file: &Path,
    out: &Path,
) -> Result<()> {
    let store: ParameterStore<S> = ParameterStore::load_snapshot(params_file)?;
    let dims = dims_from_store(&store, bundle)?;
    let model = Model::attach(&store, dims)?;
    let report = evaluate(&bundle.kg, bundle.split(split), &store, &model, &cfg.eval_config());

    write_text(
        &out.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    write_text(&out.join("report.txt"), &report.to_text())?;
    write_text(&out.join("per_query.csv"), &report.to_csv())?;
    print!("{}", report.to_text());
    println!("reports -> {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_explain(
    dataset: PathBuf,
    checkpoint: PathBuf,
    out: PathBuf,
    relation: String,
    support_head: Option<String>,
    support_tail: Option<String>,
    head: String,
    seed: Option<u64>,
    config: Option<PathBuf>,
    sets: Vec<String>,
) -> Result<()> {
    let mut cfg = Settings::resolve(config.as_deref(), &sets)?;
    if let Some(v) = seed {
        cfg.seed = v;
    }
    ensure_dir(&out)?;
    write_text(&out.join("config.conf"), &cfg.render())?;

    let bundle = load_bundle(&dataset)?;
    let (params_file, hashes_file) = checkpoint_files(&checkpoint);
    check_vocab_hash(&hashes_file, &bundle)?;

    let kg = &bundle.kg;
    let rel_id = kg
        .relations()
        .get(&relation)
        .ok_or_else(|| Error::UnknownRelation(relation.clone()))?;
    let entity = |name: &str| -> Result<u32> {
        kg.entities()
            .get(name)
            .ok_or_else(|| Error::UnknownEntity(name.to_string()))
    };
    let query_head = entity(&head)?;
    let support = match (support_head, support_tail) {
        (Some(h), Some(t)) => Triple::new(entity(&h)?, rel_id, entity(&t)?),
        (None, None) => {
            let task = bundle
                .train
                .iter()
                .chain(&bundle.valid)
                .chain(&bundle.test)
                .find(|r| r.name == relation)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{relation:?} is not a task relation; pass --support-head and --support-tail"
                    ))
                })?;
            task.support_triple().unwrap_or(task.triples[0])
        }
        _ => {
            return Err(Error::Config(
                "--support-head and --support-tail must be given together".into(),
            ))
        }
    };

    match snapshot_width(&params_file)? {
        FloatWidth::F64 => {
            run_explain::<f64>(&cfg, &bundle, &params_file, &out, support, query_head)
        }
        FloatWidth::F32 => {
            run_explain::<f32>(&cfg, &bundle, &params_file, &out, support, query_head)
        }
    }
}

fn run_explain<S: Scalar>(
    cfg: &Settings,
    bundle: &DatasetBundle,
    params_file: &Path,
    out: &Path,
    support: Triple,
    query_head: u32,
) -> Result<()> {
    let store: ParameterStore<S> = ParameterStore::load_snapshot(params_file)?;
    let dims = dims_from_store(&store, bundle)?;
    let model = Model::attach(&store, dims)?;
    let kg = &bundle.kg;

    // Same masking protocol as evaluation: the summary never sees the
    // support edge; the rollout sees it only when configured to.
    let mut sview = kg.view();
    sview.mask_edge(support);
    let mut rview = kg.view();
    if cfg.add_support_edge {
        rview.add_edge(support);
    } else {
        rview.mask_edge(support);
    }

    let mut tape: Tape<S> = Tape::new();
    let summary = summarize_pair(
        &mut tape,
        &store,
        &model,
        &sview,
        support.head,
        support.tail,
        cfg.degree_cap,
    );
    let mut rng = stream_rng(cfg.seed, "explain");
    let mut chooser = RngChooser { rng: &mut rng };
    let roll = rollout(
        &mut tape,
        &store,
        &model,
        &rview,
        &summary,
        query_head,
        &cfg.reason_config(),
        &mut chooser,
    );

    write_text(&out.join("full.dot"), &dot::render_full(&roll, kg))?;
    write_text(&out.join("pruned.dot"), &dot::render_pruned(&roll, kg))?;

    println!(
        "retrieved {} entities over {} edges; top answers:",
        roll.graph.len(),
        roll.graph.edge_count()
    );
    for (i, (e, p)) in roll.ranked().into_iter().take(10).enumerate() {
        println!("{:>3}. {}  q={:.4}", i + 1, kg.entities().name(e), p);
    }
    println!("dot files -> {}", out.display());
    Ok(())
}
