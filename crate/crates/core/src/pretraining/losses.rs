use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attention::FusedStreams;
use crate::autodiff::{Tape, Var};
use crate::config::PretrainTasks;
use crate::docmodel::{GranularUnit, Granularity, UnitSource};
use crate::encoder::BatchEncoding;
use crate::error::Result;
use crate::model::{embeddings, forward, Model, PreparedDoc};

use super::MaskPlan;

/// Per-task losses of one step (batch means).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_mtm: f64,
    pub l_mvm: f64,
    pub l_mgm: f64,
    pub l_total: f64,
    pub n_text_masked: usize,
    pub n_vision_masked: usize,
}

/// Unmasked modality embeddings, used as reconstruction targets.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanTargets {
    pub text: Array2<f64>,
    pub vis: Array2<f64>,
}

/// Encodes `prep` without masking on a throwaway tape; the values re-enter
/// the loss graph as constants, so no gradient flows into them.
pub fn clean_targets(model: &Model, prep: &PreparedDoc) -> Result<CleanTargets> {
    let mut tape = Tape::new();
    let (t, v) = embeddings(&mut tape, model, prep, &MaskPlan::default())?;
    Ok(CleanTargets {
        text: tape.value(t).clone(),
        vis: tape.value(v).clone(),
    })
}

pub(crate) struct DocLoss {
    pub mtm: Option<Var>,
    pub mvm: Option<Var>,
    pub mgm: Option<Var>,
    pub total: Option<Var>,
}

fn reconstruction(
    tape: &mut Tape,
    stream: Var,
    target: &Array2<f64>,
    rows: &[usize],
) -> Option<Var> {
    if rows.is_empty() {
        return None;
    }
    let pred = tape.select_rows(stream, rows);
    Some(tape.mae(pred, target.select(ndarray::Axis(0), rows)))
}

fn granularity_loss(tape: &mut Tape, f: Var, prep: &PreparedDoc) -> Option<Var> {
    if prep.region_rows.len() < 2 || prep.word_rows.is_empty() {
        return None;
    }
    let words = tape.select_rows(f, &prep.word_rows);
    let regions = tape.select_rows(f, &prep.region_rows);
    let logits = tape.matmul_t(words, regions);
    Some(tape.cross_entropy(logits, &prep.word_parent))
}

/// Masked forward pass and the enabled objectives for one document.
pub(crate) fn doc_loss(
    tape: &mut Tape,
    model: &Model,
    prep: &PreparedDoc,
    plan: &MaskPlan,
    targets: &CleanTargets,
    tasks: PretrainTasks,
) -> Result<DocLoss> {
    let f = forward(tape, model, prep, plan)?;
    // Text is reconstructed from the vision-query stream and vice versa.
    let mtm = if tasks.mtm {
        reconstruction(tape, f.f_vt, &targets.text, &plan.text_masked_rows)
    } else {
        None
    };
    let mvm = if tasks.mvm {
        reconstruction(tape, f.f_tv, &targets.vis, &plan.vision_masked_rows)
    } else {
        None
    };
    let mgm = if tasks.mgm {
        granularity_loss(tape, f.f, prep)
    } else {
        None
    };
    let terms: Vec<Var> = [mtm, mvm, mgm].into_iter().flatten().collect();
    let total = if terms.is_empty() {
        None
    } else {
        Some(tape.sum(&terms))
    };
    Ok(DocLoss {
        mtm,
        mvm,
        mgm,
        total,
    })
}

fn mae_rows(pred: &Array2<f64>, target: &Array2<f64>, rows: &[usize], what: &str) -> f64 {
    if rows.is_empty() {
        log::warn!("no {what}-masked rows; loss contributes 0");
        return 0.0;
    }
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    reconstruction(&mut tape, p, target, rows).map_or(0.0, |v| tape.scalar(v))
}

/// Mean absolute error between clean text embeddings and the vision-query
/// stream at the text-masked rows.
pub fn loss_mtm(clean: &BatchEncoding, streams: &FusedStreams, plan: &MaskPlan) -> f64 {
    mae_rows(&streams.f_vt, &clean.text_emb, &plan.text_masked_rows, "text")
}

/// Mean absolute error between clean visual embeddings and the text-query
/// stream at the vision-masked rows.
pub fn loss_mvm(clean: &BatchEncoding, streams: &FusedStreams, plan: &MaskPlan) -> f64 {
    mae_rows(&streams.f_tv, &clean.vis_emb, &plan.vision_masked_rows, "vision")
}

/// Mean over words of `-log softmax_r(f_w · f_r)` at the parent region.
/// Zero when fewer than two regions or no words are present.
pub fn loss_mgm(f: &Array2<f64>, units: &[GranularUnit]) -> f64 {
    let mut region_pos = HashMap::new();
    let mut region_rows = Vec::new();
    for (row, u) in units.iter().enumerate() {
        if let (Granularity::Region, UnitSource::Region(j)) = (u.granularity, u.source) {
            region_pos.insert(j, region_rows.len());
            region_rows.push(row);
        }
    }
    let mut word_rows = Vec::new();
    let mut parents = Vec::new();
    for (row, u) in units.iter().enumerate() {
        if let UnitSource::Word { region, .. } = u.source {
            let parent = *region_pos
                .get(&region)
                .expect("word unit whose parent region is not in the sequence");
            word_rows.push(row);
            parents.push(parent);
        }
    }
    if region_rows.len() < 2 || word_rows.is_empty() {
        return 0.0;
    }
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let w = tape.select_rows(fv, &word_rows);
    let r = tape.select_rows(fv, &region_rows);
    let logits = tape.matmul_t(w, r);
    let l = tape.cross_entropy(logits, &parents);
    tape.scalar(l)
}
