use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use mgdoc::attention::region_word_heatmap;
use mgdoc::encoder::EmbeddingTable;
use mgdoc::finetune::{
    evaluate, finetune as run_finetune, split_8_1_1, ablation_means, run_ablation, write_ablation_csv,
    AblationConfig, AblationSetup, Evaluation, HeadSpec, Task,
};
use mgdoc::ingestion::{self, GroupingGaps, SyntheticCorpusSpec};
use mgdoc::pretraining::{Checkpoint, Trainer};
use mgdoc::{Document, Granularities, Model, PretrainTasks, Vocab};
use serde::Serialize;

use crate::args::*;
use crate::config::RunConfig;
use crate::heatmap;

pub const LOG_FILE: &str = "train.log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDS_FILE: &str = "preds.csv";
pub const FINETUNED_CKPT: &str = "ckpt-finetuned.bin";
pub const ABLATION_FILE: &str = "ablation.csv";

pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt-{step}.bin")
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// One file, or every `*.json` of a directory.
fn each_json<T>(path: &Path, mut f: impl FnMut(&Path) -> mgdoc::Result<T>) -> Result<Vec<T>> {
    let files = if path.is_dir() { json_files(path)? } else { vec![path.to_path_buf()] };
    files
        .iter()
        .map(|p| f(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let input = || a.input.as_deref().ok_or_else(|| anyhow!("--in is required for this format"));
    let mut gaps = GroupingGaps::default();
    if let Some(x) = a.gap_x {
        gaps.gap_x = x;
    }
    if let Some(y) = a.gap_y {
        gaps.gap_y = y;
    }
    let docs: Vec<Document> = match a.format {
        InputFormat::Synthetic => {
            let spec: SyntheticCorpusSpec = match &a.spec {
                Some(p) => serde_json::from_str(
                    &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                )
                .with_context(|| format!("parsing synthetic spec {}", p.display()))?,
                None => bail!("--spec is required for the synthetic format"),
            };
            ingestion::generate_synthetic(&spec)?
        }
        InputFormat::Funsd => {
            let (docs, stats) = ingestion::load_funsd_split(input()?)?;
            info!("funsd: {stats:?}");
            docs
        }
        InputFormat::Cord => each_json(input()?, ingestion::load_cord)?,
        InputFormat::Ocr => each_json(input()?, |p| ingestion::load_ocr(p, gaps))?,
        InputFormat::Rvlcdip => {
            let index = input()?;
            let root = index.parent().unwrap_or(Path::new("."));
            let (docs, skipped) = ingestion::load_rvlcdip(index, root, gaps)?;
            if skipped > 0 {
                info!("rvl-cdip: skipped {skipped} pages without an OCR sidecar");
            }
            docs
        }
    };
    ingestion::save_corpus(&docs, &a.out)?;
    let regions: usize = docs.iter().map(Document::n_regions).sum();
    let words: usize = docs.iter().map(Document::n_words).sum();
    println!("{} documents, {regions} regions, {words} words -> {}", docs.len(), a.out.display());
    Ok(())
}

fn required(flag: Option<&PathBuf>, key: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(key)
        .cloned()
        .ok_or_else(|| anyhow!("no {name}: pass --{} or set `{}` in the config", name.replace('_', "-"), name))
}

fn load_docs(path: &Path) -> Result<Vec<Document>> {
    let docs = ingestion::load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
    if docs.is_empty() {
        bail!("corpus {} has no documents", path.display());
    }
    Ok(docs)
}

fn attach_tables(model: &mut Model, cfg: &RunConfig) -> Result<()> {
    if let Some(p) = &cfg.text_table {
        model.text_table = Some(Arc::new(EmbeddingTable::load(p)?));
    }
    if let Some(p) = &cfg.vision_table {
        model.vision_table = Some(Arc::new(EmbeddingTable::load(p)?));
    }
    Ok(())
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.write_resolved(dir)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Metrics<'a> {
    task: &'a str,
    config_hash: String,
    seed: u64,
    metric: &'a str,
    value: f64,
    n_steps: usize,
    wall_clock: f64,
}

fn write_metrics(dir: &Path, m: &Metrics) -> Result<()> {
    let path = dir.join(METRICS_FILE);
    fs::write(&path, serde_json::to_string_pretty(m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_preds(dir: &Path, ev: &Evaluation) -> Result<()> {
    let path = dir.join(PREDS_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["doc_id", "region", "gold", "predicted"])?;
    for p in &ev.predictions {
        let region = p.region.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([p.doc_id.as_str(), region.as_str(), p.gold.as_str(), p.predicted.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?.with_env_seed()?;
    if let Some(t) = &a.tasks {
        PretrainTasks::parse(t)?;
        cfg.tasks = t.clone();
    }
    cfg.validate()?;
    let corpus = required(a.corpus.as_ref(), cfg.corpus.as_ref(), "corpus")?;
    let out = required(a.out.as_ref(), cfg.out.as_ref(), "out")?;
    prepare_out(&out, &cfg)?;
    let docs = load_docs(&corpus)?;

    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            info!("resuming from {} at step {}", p.display(), ck.step);
            ck.into_trainer()?
        }
        None => {
            let vocab = Vocab::build(&docs, cfg.vocab_size);
            let model = Model::new(cfg.model_config(), vocab, cfg.seed)?;
            Trainer::new(model, cfg.train_config()?, docs.len())?
        }
    };
    attach_tables(&mut trainer.model, &cfg)?;
    trainer.log_wall_clock = cfg.log_wall_clock;
    let keep = cfg.granularity_set()?;
    let preps = docs
        .iter()
        .map(|d| trainer.model.prepare(d, keep))
        .collect::<mgdoc::Result<Vec<_>>>()?;

    let log_path = out.join(LOG_FILE);
    let file = if a.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let every = cfg.checkpoint_every;
    let clock = Instant::now();
    let start = trainer.step;
    let reports = trainer.run(&preps, |t, line| {
        let io = |e| mgdoc::Error::io(&log_path, e);
        writeln!(log, "{}", serde_json::to_string(line)?).map_err(io)?;
        if every > 0 && t.step % every == 0 && t.step < t.total_steps {
            log.flush().map_err(io)?;
            Checkpoint::from_trainer(t).save(&out.join(checkpoint_name(t.step)))?;
        }
        Ok(())
    })?;
    log.flush()?;
    let final_path = out.join(checkpoint_name(trainer.step));
    Checkpoint::from_trainer(&trainer).save(&final_path)?;

    let last_epoch = trainer.steps_per_epoch().min(reports.len()).max(1);
    let tail = &reports[reports.len().saturating_sub(last_epoch)..];
    let value = tail.iter().map(|r| r.l_total).sum::<f64>() / tail.len().max(1) as f64;
    write_metrics(
        &out,
        &Metrics {
            task: "pretrain",
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            metric: "l_total_last_epoch",
            value,
            n_steps: trainer.step - start,
            wall_clock: clock.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "pre-trained {} steps (to step {} of {}), last-epoch l_total {value:.4} -> {}",
        trainer.step - start,
        trainer.step,
        trainer.total_steps,
        final_path.display()
    );
    Ok(())
}

fn task_of(flag: Option<&String>, cfg: &RunConfig) -> Result<Task> {
    Ok(flag.unwrap_or(&cfg.task).parse()?)
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?.with_env_seed()?;
    let task = task_of(a.task.as_ref(), &cfg)?;
    cfg.task = a.task.clone().unwrap_or(cfg.task);
    let corpus = required(a.corpus.as_ref(), cfg.corpus.as_ref(), "corpus")?;
    let out = required(a.out.as_ref(), cfg.out.as_ref(), "out")?;
    prepare_out(&out, &cfg)?;
    let docs = load_docs(&corpus)?;
    let (train, eval_docs) = match a.eval_corpus.as_ref().or(cfg.eval_corpus.as_ref()) {
        Some(p) => (docs, load_docs(p)?),
        None => {
            let (train, _val, test) = split_8_1_1(&docs, cfg.seed);
            if train.is_empty() || test.is_empty() {
                bail!("corpus of {} documents is too small for an 8:1:1 split; pass --eval-corpus", docs.len());
            }
            (train, test)
        }
    };
    let mut model = match &a.ckpt {
        Some(p) => Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?.to_model()?,
        None => {
            info!("no checkpoint: random initialization");
            Model::new(cfg.model_config(), Vocab::build(&train, cfg.vocab_size), cfg.seed)?
        }
    };
    attach_tables(&mut model, &cfg)?;
    let head = match task {
        Task::Entity => HeadSpec::entity_from(&train)?,
        Task::Classify => HeadSpec::page(),
    };
    let ft = cfg.finetune_config()?;
    let clock = Instant::now();
    let outcome = run_finetune(&mut model, &head, &train, &ft)?;
    let ev = evaluate(&model, &head, &eval_docs, ft.granularities)?;
    write_preds(&out, &ev)?;
    Checkpoint::from_model(&model, cfg.train_config()?, Some(head)).save(&out.join(FINETUNED_CKPT))?;
    write_metrics(
        &out,
        &Metrics {
            task: &cfg.task,
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            metric: ev.metric,
            value: ev.value,
            n_steps: outcome.n_steps,
            wall_clock: clock.elapsed().as_secs_f64(),
        },
    )?;
    println!("{} {} = {:.4} on {} documents", cfg.task, ev.metric, ev.value, eval_docs.len());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?.with_env_seed()?;
    let corpus = required(a.corpus.as_ref(), cfg.corpus.as_ref(), "corpus")?;
    let out = required(a.out.as_ref(), cfg.out.as_ref(), "out")?;
    let ck = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let head = ck
        .head
        .clone()
        .ok_or_else(|| anyhow!("{} has no task head; run `mgdoc finetune` first", a.ckpt.display()))?;
    if let Some(t) = &a.task {
        if t.parse::<Task>()? != head.task {
            bail!("checkpoint head is for `{:?}`, not `{t}`", head.task);
        }
    }
    cfg.task = head.task.to_string();
    prepare_out(&out, &cfg)?;
    let mut model = ck.to_model()?;
    attach_tables(&mut model, &cfg)?;
    let docs = load_docs(&corpus)?;
    let clock = Instant::now();
    let ev = evaluate(&model, &head, &docs, cfg.granularity_set()?)?;
    write_preds(&out, &ev)?;
    write_metrics(
        &out,
        &Metrics {
            task: &cfg.task,
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            metric: ev.metric,
            value: ev.value,
            n_steps: 0,
            wall_clock: clock.elapsed().as_secs_f64(),
        },
    )?;
    println!("{} {} = {:.4} on {} documents", cfg.task, ev.metric, ev.value, docs.len());
    Ok(())
}

pub fn heatmap(a: &HeatmapArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let ck = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let mut model = ck.to_model()?;
    attach_tables(&mut model, &cfg)?;
    let doc = ingestion::load_canonical(&a.doc).with_context(|| format!("loading {}", a.doc.display()))?;
    if doc.regions.is_empty() {
        bail!("document `{}` has no regions", doc.id);
    }
    let prep = model.prepare(&doc, Granularities::ALL)?;
    let fused = model.fuse(&prep)?;
    let h = region_word_heatmap(&fused.f, &prep.units);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    heatmap::write_csv(&h, &prep.units, &a.out.join("heatmap.csv"))?;
    heatmap::write_png(&h, &a.out.join("heatmap.png"))?;
    println!("heatmap {}x{} -> {}", h.nrows(), h.ncols(), a.out.display());
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?.with_env_seed()?;
    let out = required(a.out.as_ref(), cfg.out.as_ref(), "out")?;
    prepare_out(&out, &cfg)?;
    let mut grid = Vec::new();
    for g in a.granularities_grid.split(';') {
        let granularities = Granularities::parse(g)?;
        for t in a.tasks_grid.split(';') {
            grid.push(AblationConfig { pretrain_tasks: PretrainTasks::parse(t)?, granularities });
        }
    }
    let setup = AblationSetup {
        model: cfg.model_config(),
        pretrain: cfg.train_config()?,
        finetune: cfg.finetune_config()?,
        task: cfg.task.parse()?,
        seeds: a.seeds.clone(),
        vocab_size: cfg.vocab_size,
    };
    let rows = run_ablation(
        &grid,
        &load_docs(&a.pretrain_corpus)?,
        &load_docs(&a.train_corpus)?,
        &load_docs(&a.eval_corpus)?,
        &setup,
    )?;
    write_ablation_csv(&rows, &out.join(ABLATION_FILE))?;
    for (tasks, grans, mean) in ablation_means(&rows) {
        let tasks = if tasks.is_empty() { "none".to_string() } else { tasks };
        println!("tasks={tasks} granularities={grans} mean={mean:.4}");
    }
    Ok(())
}
