//! Task heads over fused features, fine-tuning loops, metrics and the
//! pre-training/granularity ablation harness.

mod ablation;
mod metrics;

pub use ablation::{
    ablation_means, run_ablation, write_ablation_csv, AblationConfig, AblationRow, AblationSetup,
};
pub use metrics::{accuracy, config_hash, entity_f1, split_8_1_1, OTHER};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::docmodel::{Document, Granularities};
use crate::error::{Error, Result};
use crate::model::{forward, Model, PreparedDoc};
use crate::params::accumulate;
use crate::pretraining::{derive_seed, lr_at, AdamW, MaskPlan};
use crate::ingestion::RVLCDIP_CLASSES;

/// Number of page classes the page head always predicts.
pub const N_PAGE_CLASSES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Region-level entity labeling.
    Entity,
    /// Page classification.
    Classify,
}

impl Task {
    pub fn metric_name(&self) -> &'static str {
        match self {
            Task::Entity => "entity_f1",
            Task::Classify => "accuracy",
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            Task::Entity => "head.entity",
            Task::Classify => "head.page",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Entity => "entity",
            Task::Classify => "classify",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(Task::Entity),
            "classify" => Ok(Task::Classify),
            other => Err(Error::Config(format!("unknown task `{other}` (entity|classify)"))),
        }
    }
}

/// A linear head: which task, and the class names behind its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub task: Task,
    pub classes: Vec<String>,
}

impl HeadSpec {
    /// Entity head over the sorted label set of `docs`. Every region must be
    /// labeled.
    pub fn entity_from(docs: &[Document]) -> Result<Self> {
        let mut classes = Vec::new();
        for d in docs {
            for r in &d.regions {
                let l = r.label.as_ref().ok_or_else(|| {
                    Error::Label(format!("document `{}` region {} has no label", d.id, r.id))
                })?;
                classes.push(l.clone());
            }
        }
        classes.sort();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::Label("no labeled regions".into()));
        }
        Ok(Self {
            task: Task::Entity,
            classes,
        })
    }

    /// Page head over the 16 document categories.
    pub fn page() -> Self {
        Self {
            task: Task::Classify,
            classes: RVLCDIP_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self.task {
            Task::Entity => self.classes.len(),
            Task::Classify => N_PAGE_CLASSES,
        }
    }

    fn w_name(&self) -> String {
        format!("{}.w", self.task.prefix())
    }

    fn b_name(&self) -> String {
        format!("{}.b", self.task.prefix())
    }

    /// Adds freshly initialized head tensors to the model.
    pub fn init(&self, model: &mut Model, seed: u64) {
        let d = model.config.d_model();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, self.task.prefix()));
        let n = self.n_outputs();
        model.params.init_uniform(&mut rng, &self.w_name(), (d, n), d);
        model.params.init_const(&self.b_name(), (1, n), 0.0);
    }

    fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Label(format!("label `{label}` outside the class set {:?}", self.classes)))
    }

    /// Gold class per scored row of `prep`.
    fn targets(&self, prep: &PreparedDoc) -> Result<Vec<usize>> {
        match self.task {
            Task::Entity => prep
                .region_labels
                .iter()
                .enumerate()
                .map(|(j, l)| {
                    let l = l.as_ref().ok_or_else(|| {
                        Error::Label(format!("document `{}` region {j} has no label", prep.doc_id))
                    })?;
                    self.class_index(l)
                })
                .collect(),
            Task::Classify => {
                let l = prep.page_label.as_ref().ok_or_else(|| {
                    Error::Label(format!("document `{}` has no page label", prep.doc_id))
                })?;
                Ok(vec![self.class_index(l)?])
            }
        }
    }

    fn scored_rows(&self, prep: &PreparedDoc) -> Result<Vec<usize>> {
        match self.task {
            Task::Entity => Ok(prep.region_rows.clone()),
            Task::Classify => prep
                .page_row
                .map(|r| vec![r])
                .ok_or_else(|| Error::Config("page classification needs the page granularity".into())),
        }
    }

    fn logits_var(&self, tape: &mut Tape, model: &Model, prep: &PreparedDoc) -> Result<Var> {
        let f = forward(tape, model, prep, &MaskPlan::default())?.f;
        let rows = tape.select_rows(f, &self.scored_rows(prep)?);
        let w = tape.param(&model.params, &self.w_name());
        let b = tape.param(&model.params, &self.b_name());
        let z = tape.matmul(rows, w);
        Ok(tape.add_row(z, b))
    }

    /// Head logits, one row per scored unit (regions, or the page).
    pub fn logits(&self, model: &Model, prep: &PreparedDoc) -> Result<Array2<f64>> {
        if !model.params.contains(&self.w_name()) {
            return Err(Error::Config(format!("model has no `{}` head", self.task.prefix())));
        }
        let mut tape = Tape::new();
        let z = self.logits_var(&mut tape, model, prep)?;
        Ok(tape.value(z).clone())
    }

    /// Predicted class names for the scored rows. Page outputs without a
    /// named class fall back to their index.
    pub fn predict(&self, model: &Model, prep: &PreparedDoc) -> Result<Vec<String>> {
        let z = self.logits(model, prep)?;
        Ok(z.rows()
            .into_iter()
            .map(|row| {
                let k = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0;
                self.classes.get(k).cloned().unwrap_or_else(|| k.to_string())
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub granularities: Granularities,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 20,
            batch_size: 8,
            warmup_frac: 0.2,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
            granularities: Granularities::ALL,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.granularities.region {
            return Err(Error::Config("region granularity is mandatory".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("invalid fine-tuning config {self:?}")));
        }
        Ok(())
    }
}

/// One scored unit in a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    /// Region index, or `None` for the page.
    pub region: Option<usize>,
    pub gold: String,
    pub predicted: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metric: &'static str,
    pub value: f64,
    pub predictions: Vec<Prediction>,
}

/// Scores `head` on `docs`; the metric is recomputable from the predictions
/// alone via [`score_predictions`].
pub fn evaluate(model: &Model, head: &HeadSpec, docs: &[Document], keep: Granularities) -> Result<Evaluation> {
    let mut predictions = Vec::new();
    for d in docs {
        let prep = model.prepare(d, keep)?;
        let pred = head.predict(model, &prep)?;
        match head.task {
            Task::Entity => {
                for (j, (r, p)) in d.regions.iter().zip(pred).enumerate() {
                    let gold = r.label.clone().ok_or_else(|| {
                        Error::Label(format!("document `{}` region {j} has no label", d.id))
                    })?;
                    predictions.push(Prediction {
                        doc_id: d.id.clone(),
                        region: Some(j),
                        gold,
                        predicted: p,
                    });
                }
            }
            Task::Classify => {
                let gold = d
                    .page_label
                    .clone()
                    .ok_or_else(|| Error::Label(format!("document `{}` has no page label", d.id)))?;
                head.class_index(&gold)?;
                predictions.push(Prediction {
                    doc_id: d.id.clone(),
                    region: None,
                    gold,
                    predicted: pred.into_iter().next().expect("one page row"),
                });
            }
        }
    }
    Ok(Evaluation {
        metric: head.task.metric_name(),
        value: score_predictions(head.task, &predictions),
        predictions,
    })
}

pub fn score_predictions(task: Task, predictions: &[Prediction]) -> f64 {
    let gold: Vec<String> = predictions.iter().map(|p| p.gold.clone()).collect();
    let pred: Vec<String> = predictions.iter().map(|p| p.predicted.clone()).collect();
    match task {
        Task::Entity => entity_f1(&gold, &pred),
        Task::Classify => accuracy(&gold, &pred),
    }
}

/// Cross-entropy of the head on one document and its gradients.
pub fn head_loss(model: &Model, head: &HeadSpec, prep: &PreparedDoc) -> Result<(f64, Gradients)> {
    let targets = head.targets(prep)?;
    let mut tape = model.tape();
    let z = head.logits_var(&mut tape, model, prep)?;
    let loss = tape.cross_entropy(z, &targets);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("fine-tuning".into()));
    }
    Ok((value, tape.backward(loss)))
}

/// Result of a fine-tuning run.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutcome {
    pub head: HeadSpec,
    pub n_steps: usize,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Trains the head and the whole model on `train`. Adds the head tensors if
/// the model does not have them yet.
pub fn finetune(model: &mut Model, head: &HeadSpec, train: &[Document], cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("fine-tuning corpus is empty".into()));
    }
    if !model.params.contains(&head.w_name()) {
        head.init(model, cfg.seed);
    }
    let preps = train
        .iter()
        .map(|d| model.prepare(d, cfg.granularities))
        .collect::<Result<Vec<_>>>()?;
    for p in &preps {
        head.targets(p)?;
        head.scored_rows(p)?;
    }
    let mut opt = AdamW::new(0.9, 0.999, 1e-8, cfg.weight_decay);
    let spe = preps.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * spe;
    let mut step = 0;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..preps.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, "finetune")));
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::new();
            for &i in chunk {
                let (l, g) = head_loss(model, head, &preps[i])?;
                sum += l;
                accumulate(&mut grads, g);
            }
            for g in grads.values_mut() {
                *g /= chunk.len() as f64;
            }
            let lr = lr_at(step, total, cfg.lr, cfg.warmup_frac);
            opt.step(&mut model.params, &mut grads, lr, cfg.grad_clip);
            step += 1;
        }
        epoch_loss.push(sum / preps.len() as f64);
    }
    Ok(FinetuneOutcome {
        head: head.clone(),
        n_steps: step,
        epoch_loss,
    })
}

/// Entity labeling at the region rows; classes come from `train`.
pub fn finetune_entity(
    model: &mut Model,
    train: &[Document],
    eval: &[Document],
    cfg: &FinetuneConfig,
) -> Result<(FinetuneOutcome, Evaluation)> {
    let head = HeadSpec::entity_from(train)?;
    let out = finetune(model, &head, train, cfg)?;
    let ev = evaluate(model, &head, eval, cfg.granularities)?;
    Ok((out, ev))
}

/// Page classification over the 16 categories at the page row.
pub fn finetune_classify(
    model: &mut Model,
    train: &[Document],
    eval: &[Document],
    cfg: &FinetuneConfig,
) -> Result<(FinetuneOutcome, Evaluation)> {
    let head = HeadSpec::page();
    let out = finetune(model, &head, train, cfg)?;
    let ev = evaluate(model, &head, eval, cfg.granularities)?;
    Ok((out, ev))
}
