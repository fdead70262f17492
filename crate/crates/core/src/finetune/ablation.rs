use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, PretrainTasks, TrainConfig};
use crate::docmodel::{Document, Granularities};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::pretraining::Trainer;
use crate::vocab::Vocab;

use super::{evaluate, finetune, FinetuneConfig, HeadSpec, Task};

/// One row of an ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub pretrain_tasks: PretrainTasks,
    pub granularities: Granularities,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.granularities.region {
            return Err(Error::Config(format!(
                "ablation `{}` drops the region granularity, which is mandatory",
                self.granularities.label()
            )));
        }
        Ok(())
    }
}

/// Everything shared by the rows of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSetup {
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: FinetuneConfig,
    pub task: Task,
    pub seeds: Vec<u64>,
    pub vocab_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pretrain_tasks: String,
    pub granularities: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// For each config and seed: a fresh model (same initialization for every
/// config at a given seed), pre-training with the selected objectives over the
/// selected granularities unless none are selected, then fine-tuning and
/// evaluation on the same granularities.
pub fn run_ablation(
    grid: &[AblationConfig],
    corpus_pretrain: &[Document],
    task_train: &[Document],
    task_eval: &[Document],
    setup: &AblationSetup,
) -> Result<Vec<AblationRow>> {
    for c in grid {
        c.validate()?;
    }
    let vocab = Vocab::build(corpus_pretrain.iter().chain(task_train), setup.vocab_size);
    let head = match setup.task {
        Task::Entity => HeadSpec::entity_from(task_train)?,
        Task::Classify => HeadSpec::page(),
    };
    let mut rows = Vec::new();
    for &seed in &setup.seeds {
        for c in grid {
            let mut model = Model::new(setup.model.clone(), vocab.clone(), seed)?;
            if c.pretrain_tasks.any() {
                let preps = corpus_pretrain
                    .iter()
                    .map(|d| model.prepare(d, c.granularities))
                    .collect::<Result<Vec<_>>>()?;
                let cfg = TrainConfig {
                    tasks: c.pretrain_tasks,
                    seed,
                    ..setup.pretrain.clone()
                };
                let mut trainer = Trainer::new(model, cfg, preps.len())?;
                trainer.run(&preps, |_, _| Ok(()))?;
                model = trainer.model;
            }
            let ft = FinetuneConfig {
                granularities: c.granularities,
                seed,
                ..setup.finetune.clone()
            };
            finetune(&mut model, &head, task_train, &ft)?;
            let ev = evaluate(&model, &head, task_eval, c.granularities)?;
            log::info!(
                "ablation tasks=[{}] granularities=[{}] seed={seed}: {}={:.4}",
                c.pretrain_tasks.label(),
                c.granularities.label(),
                ev.metric,
                ev.value
            );
            rows.push(AblationRow {
                pretrain_tasks: c.pretrain_tasks.label(),
                granularities: c.granularities.label(),
                seed,
                metric: ev.metric.to_string(),
                value: ev.value,
            });
        }
    }
    Ok(rows)
}

/// Mean metric per (tasks, granularities), in first-seen order.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<(String, String, f64)> {
    let mut order = Vec::new();
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let key = (r.pretrain_tasks.clone(), r.granularities.clone());
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0.0, 0)
        });
        e.0 += r.value;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|k| {
            let (s, n) = acc[&k];
            (k.0, k.1, s / n as f64)
        })
        .collect()
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
