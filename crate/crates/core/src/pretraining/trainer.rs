use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::config::{PretrainTasks, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, PreparedDoc};
use crate::params::accumulate;

use super::losses::{clean_targets, doc_loss, CleanTargets, LossReport};
use super::mask::{derive_seed, make_mask_plan, MaskPlan};
use super::optim::{lr_at, AdamW};

/// One line of the JSONL training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub l_mtm: f64,
    pub l_mvm: f64,
    pub l_mgm: f64,
    pub l_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<f64>,
}

/// Loss values and parameter gradients of the pre-training objective on one
/// document for a fixed mask plan and fixed targets.
pub fn pretrain_objective(
    model: &Model,
    prep: &PreparedDoc,
    plan: &MaskPlan,
    targets: &CleanTargets,
    tasks: PretrainTasks,
) -> Result<(LossReport, Gradients)> {
    let mut tape = model.tape();
    let loss = doc_loss(&mut tape, model, prep, plan, targets, tasks)?;
    let value = |v: Option<_>| v.map_or(0.0, |v| tape.scalar(v));
    let report = LossReport {
        l_mtm: value(loss.mtm),
        l_mvm: value(loss.mvm),
        l_mgm: value(loss.mgm),
        l_total: value(loss.total),
        n_text_masked: plan.text_masked_rows.len(),
        n_vision_masked: plan.vision_masked_rows.len(),
    };
    for (name, v) in [("mtm", report.l_mtm), ("mvm", report.l_mvm), ("mgm", report.l_mgm)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let grads = match loss.total {
        Some(total) => tape.backward(total),
        None => Gradients::new(),
    };
    Ok((report, grads))
}

/// Owns a model and its optimizer state through a pre-training run.
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub opt: AdamW,
    /// Number of completed steps.
    pub step: usize,
    pub total_steps: usize,
    pub n_docs: usize,
    pub log_wall_clock: bool,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, n_docs: usize) -> Result<Self> {
        cfg.validate()?;
        if n_docs == 0 {
            return Err(Error::Config("pre-training corpus is empty".into()));
        }
        let opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
        let total_steps = cfg.epochs * n_docs.div_ceil(cfg.batch_size);
        Ok(Self {
            model,
            cfg,
            opt,
            step: 0,
            total_steps,
            n_docs,
            log_wall_clock: false,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n_docs.div_ceil(self.cfg.batch_size)
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.step, self.total_steps, self.cfg.lr, self.cfg.warmup_frac)
    }

    /// Corpus indices of the batch for `step`: each epoch visits a fresh
    /// seeded permutation in `batch_size` chunks.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let epoch = step / spe;
        let k = step % spe;
        let mut order: Vec<usize> = (0..self.n_docs).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64, "epoch"));
        order.shuffle(&mut rng);
        let start = k * self.cfg.batch_size;
        order[start..(start + self.cfg.batch_size).min(self.n_docs)].to_vec()
    }

    /// One optimization step over `batch`: clean targets, masked pass,
    /// objectives, backprop, clipping and an AdamW update at the scheduled rate.
    pub fn pretrain_step(&mut self, batch: &[&PreparedDoc]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let lr = self.lr();
        let mut sum = LossReport::default();
        let mut grads = Gradients::new();
        for prep in batch {
            let seed = derive_seed(self.cfg.seed, self.step as u64, &prep.doc_id);
            let plan = make_mask_plan(prep, self.cfg.mask_ratio, self.cfg.mask_page, seed);
            let targets = clean_targets(&self.model, prep)?;
            let (r, g) = pretrain_objective(&self.model, prep, &plan, &targets, self.cfg.tasks)?;
            sum.l_mtm += r.l_mtm;
            sum.l_mvm += r.l_mvm;
            sum.l_mgm += r.l_mgm;
            sum.n_text_masked += r.n_text_masked;
            sum.n_vision_masked += r.n_vision_masked;
            accumulate(&mut grads, g);
        }
        let n = batch.len() as f64;
        let report = LossReport {
            l_mtm: sum.l_mtm / n,
            l_mvm: sum.l_mvm / n,
            l_mgm: sum.l_mgm / n,
            l_total: sum.l_mtm / n + sum.l_mvm / n + sum.l_mgm / n,
            ..sum
        };
        if !report.l_total.is_finite() {
            return Err(Error::NonFinite("total".into()));
        }
        for g in grads.values_mut() {
            *g /= n;
        }
        self.opt
            .step(&mut self.model.params, &mut grads, lr, self.cfg.grad_clip);
        self.step += 1;
        Ok(report)
    }

    /// Runs from the current step up to `until` (clamped to the planned
    /// total), calling `on_step` after each step.
    pub fn run_until<F>(&mut self, corpus: &[PreparedDoc], until: usize, mut on_step: F) -> Result<Vec<LossReport>>
    where
        F: FnMut(&Trainer, &StepLog) -> Result<()>,
    {
        if corpus.len() != self.n_docs {
            return Err(Error::Config(format!(
                "trainer planned for {} documents, corpus has {}",
                self.n_docs,
                corpus.len()
            )));
        }
        let clock = self.log_wall_clock.then(std::time::Instant::now);
        let mut reports = Vec::new();
        while self.step < until.min(self.total_steps) {
            let lr = self.lr();
            let step = self.step;
            let batch: Vec<&PreparedDoc> =
                self.batch_indices(step).into_iter().map(|i| &corpus[i]).collect();
            let r = self.pretrain_step(&batch)?;
            let log = StepLog {
                step,
                lr,
                l_mtm: r.l_mtm,
                l_mvm: r.l_mvm,
                l_mgm: r.l_mgm,
                l_total: r.l_total,
                wall_clock: clock.map(|c| c.elapsed().as_secs_f64()),
            };
            on_step(self, &log)?;
            reports.push(r);
        }
        Ok(reports)
    }

    pub fn run<F>(&mut self, corpus: &[PreparedDoc], on_step: F) -> Result<Vec<LossReport>>
    where
        F: FnMut(&Trainer, &StepLog) -> Result<()>,
    {
        self.run_until(corpus, self.total_steps, on_step)
    }
}
