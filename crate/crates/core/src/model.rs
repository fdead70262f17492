//! The full model: parameter registry, per-document input preparation and the
//! forward pass from raw document to fused features.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{attention_block, init_block, BiasIndex, FusedStreams};
use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, TextBackbone, VisionBackbone};
use crate::docmodel::{serialize_units, Document, GranularUnit, Granularities, Granularity, UnitSource};
use crate::encoder::{boxes_matrix, text_rows, vision_rows, BatchEncoding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::pretraining::MaskPlan;
use crate::vocab::Vocab;

/// Prefixes of the backbone tensors held fixed when backbones are frozen.
pub const BACKBONE_PREFIXES: [&str; 2] = ["text.tok_emb", "vis.conv"];

pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub text_table: Option<Arc<EmbeddingTable>>,
    pub vision_table: Option<Arc<EmbeddingTable>>,
}

impl Model {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, vocab.len(), seed);
        Ok(Self {
            config,
            vocab,
            params,
            text_table: None,
            vision_table: None,
        })
    }

    pub fn frozen_prefixes(&self) -> Vec<String> {
        if self.config.encoder.freeze_backbones {
            BACKBONE_PREFIXES.iter().map(|s| s.to_string()).collect()
        } else {
            Vec::new()
        }
    }

    /// A tape that honours the backbone-freezing setting.
    pub fn tape(&self) -> Tape {
        Tape::with_frozen(&self.frozen_prefixes())
    }

    pub fn prepare(&self, doc: &Document, keep: Granularities) -> Result<PreparedDoc> {
        PreparedDoc::new(self, doc, keep)
    }

    /// Clean forward pass, returning all fused streams.
    pub fn fuse(&self, prep: &PreparedDoc) -> Result<FusedStreams> {
        let mut tape = Tape::new();
        let fw = forward(&mut tape, self, prep, &MaskPlan::default())?;
        Ok(fw.streams(&tape))
    }

    /// Fusion stage applied to precomputed modality embeddings.
    pub fn fuse_encoding(&self, enc: &BatchEncoding) -> Result<FusedStreams> {
        let d = self.config.d_model();
        if enc.text_emb.dim() != enc.vis_emb.dim() || enc.text_emb.ncols() != d {
            return Err(Error::Dimension(format!(
                "text {:?} / vision {:?} embeddings for width {d}",
                enc.text_emb.dim(),
                enc.vis_emb.dim()
            )));
        }
        let bias = BiasIndex::from_boxes(&enc.bboxes(), &self.config.attention);
        let mut tape = Tape::new();
        let t = tape.constant(enc.text_emb.clone());
        let v = tape.constant(enc.vis_emb.clone());
        let f = fuse_vars(&mut tape, self, t, v, &bias);
        Ok(f.streams(&tape))
    }
}

/// Registers every encoder and attention tensor in a fixed order.
pub fn init_params(config: &ModelConfig, vocab_len: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let d = config.d_model();
    let enc = &config.encoder;

    match enc.text_backbone {
        TextBackbone::BagOfTokens => p.init_uniform(&mut rng, "text.tok_emb", (vocab_len, d), d),
        TextBackbone::ExternalTable => p.init_uniform(&mut rng, "text.mask_emb", (1, d), d),
    }
    p.init_uniform(&mut rng, "text.fc.w", (4, d), 4);
    p.init_uniform(&mut rng, "text.fc.b", (1, d), 4);
    p.init_uniform(&mut rng, "text.type", (1, d), d);

    if enc.vision_backbone == VisionBackbone::TinyConv {
        let (c1, c2) = enc.conv_channels;
        p.init_uniform(&mut rng, "vis.conv1.w", (c1, 9), 9);
        p.init_uniform(&mut rng, "vis.conv1.b", (c1, 1), 9);
        p.init_uniform(&mut rng, "vis.conv2.w", (c2, c1 * 9), c1 * 9);
        p.init_uniform(&mut rng, "vis.conv2.b", (c2, 1), c1 * 9);
        let pooled = c2 * enc.roi_pool.0 * enc.roi_pool.1;
        p.init_uniform(&mut rng, "vis.proj.w", (pooled, d), pooled);
        p.init_uniform(&mut rng, "vis.proj.b", (1, d), pooled);
    }
    p.init_uniform(&mut rng, "vis.fc.w", (4, d), 4);
    p.init_uniform(&mut rng, "vis.fc.b", (1, d), 4);
    p.init_uniform(&mut rng, "vis.type", (1, d), d);

    let att = &config.attention;
    for stream in ["text", "vis"] {
        for l in 0..att.n_mg_layers {
            init_block(&mut p, &mut rng, &format!("{stream}.mg{l}"), d, att, true);
        }
        for l in 0..att.n_self_layers {
            init_block(&mut p, &mut rng, &format!("{stream}.sa{l}"), d, att, false);
        }
    }
    for l in 0..att.n_cross_layers {
        init_block(&mut p, &mut rng, &format!("cross{l}.t2v"), d, att, false);
        init_block(&mut p, &mut rng, &format!("cross{l}.v2t"), d, att, false);
    }
    p
}

/// Everything about one document that does not depend on parameters.
#[derive(Clone, Debug)]
pub struct PreparedDoc {
    pub doc_id: String,
    pub units: Vec<GranularUnit>,
    /// Index of each row in the unfiltered page/region/word sequence.
    pub full_index: Vec<usize>,
    pub token_ids: Vec<Vec<usize>>,
    pub boxes: Array2<f64>,
    pub bias: BiasIndex,
    pub page_row: Option<usize>,
    pub region_rows: Vec<usize>,
    pub word_rows: Vec<usize>,
    /// For each word row, the position of its parent among `region_rows`.
    pub word_parent: Vec<usize>,
    pub region_labels: Vec<Option<String>>,
    pub page_label: Option<String>,
    pub image: Option<Arc<Vec<f64>>>,
}

impl PreparedDoc {
    pub fn new(model: &Model, doc: &Document, keep: Granularities) -> Result<Self> {
        if !keep.region {
            return Err(Error::Config("region granularity is mandatory".into()));
        }
        let all = serialize_units(doc)?;
        let mut units = Vec::new();
        let mut full_index = Vec::new();
        for u in all {
            if keep.includes(u.granularity) {
                full_index.push(u.unit_index);
                let mut u = u;
                u.unit_index = units.len();
                units.push(u);
            }
        }
        let mut page_row = None;
        let mut region_rows = Vec::new();
        let mut word_rows = Vec::new();
        let mut word_parent = Vec::new();
        for (r, u) in units.iter().enumerate() {
            match (u.granularity, u.source) {
                (Granularity::Page, _) => page_row = Some(r),
                (Granularity::Region, _) => region_rows.push(r),
                (Granularity::Word, UnitSource::Word { region, .. }) => {
                    word_rows.push(r);
                    word_parent.push(region);
                }
                (Granularity::Word, _) => unreachable!("word unit without a word source"),
            }
        }
        let token_ids = units.iter().map(|u| model.vocab.encode(&u.text)).collect();
        let bboxes: Vec<_> = units.iter().map(|u| u.bbox).collect();
        let image = match (&doc.image, model.config.encoder.vision_backbone) {
            (Some(r), VisionBackbone::TinyConv) => {
                Some(Arc::new(r.resample(model.config.encoder.image_size)))
            }
            _ => None,
        };
        Ok(Self {
            doc_id: doc.id.clone(),
            bias: BiasIndex::from_boxes(&bboxes, &model.config.attention),
            boxes: boxes_matrix(&bboxes),
            units,
            full_index,
            token_ids,
            page_row,
            region_rows,
            word_rows,
            word_parent,
            region_labels: doc.regions.iter().map(|r| r.label.clone()).collect(),
            page_label: doc.page_label.clone(),
            image,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.units.len()
    }

    /// Rows eligible for masking.
    pub fn maskable_rows(&self, include_page: bool) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| include_page || Some(r) != self.page_row)
            .collect()
    }

    pub fn batch_encoding(&self, text_emb: Array2<f64>, vis_emb: Array2<f64>) -> BatchEncoding {
        let mut parent_region = vec![-1i64; self.n_rows()];
        for (k, &w) in self.word_rows.iter().enumerate() {
            parent_region[w] = self.region_rows[self.word_parent[k]] as i64;
        }
        BatchEncoding {
            text_emb,
            vis_emb,
            boxes: self.boxes.clone(),
            granularity: self.units.iter().map(|u| u.granularity).collect(),
            parent_region,
        }
    }
}

pub(crate) struct FusedVars {
    pub f_tv: Var,
    pub f_vt: Var,
    pub f: Var,
}

impl FusedVars {
    pub fn streams(&self, tape: &Tape) -> FusedStreams {
        FusedStreams {
            f_tv: tape.value(self.f_tv).clone(),
            f_vt: tape.value(self.f_vt).clone(),
            f: tape.value(self.f).clone(),
        }
    }
}

/// Both modality embeddings with the plan's masks applied.
pub(crate) fn embeddings(
    tape: &mut Tape,
    model: &Model,
    prep: &PreparedDoc,
    plan: &MaskPlan,
) -> Result<(Var, Var)> {
    for &r in plan.text_masked_rows.iter().chain(&plan.vision_masked_rows) {
        if r >= prep.n_rows() {
            return Err(Error::Dimension(format!(
                "mask row {r} out of range for {} rows",
                prep.n_rows()
            )));
        }
    }
    let text = text_rows(
        tape,
        model,
        &prep.doc_id,
        &prep.token_ids,
        &prep.boxes,
        &prep.full_index,
        &plan.text_masked_rows,
    )?;
    let bboxes: Vec<_> = prep.units.iter().map(|u| u.bbox).collect();
    let vis = vision_rows(
        tape,
        model,
        &prep.doc_id,
        prep.image.as_deref().map(Vec::as_slice),
        &bboxes,
        &prep.full_index,
    )?;
    let vis = if plan.vision_masked_rows.is_empty() {
        vis
    } else {
        tape.zero_rows(vis, &plan.vision_masked_rows)
    };
    Ok((text, vis))
}

/// Single-modality stacks, then the cross-modal stack.
pub(crate) fn fuse_vars(
    tape: &mut Tape,
    model: &Model,
    text: Var,
    vis: Var,
    bias: &BiasIndex,
) -> FusedVars {
    let att = &model.config.attention;
    let p = &model.params;
    let h = att.n_heads;
    let mut streams = [text, vis];
    for (s, name) in streams.iter_mut().zip(["text", "vis"]) {
        for l in 0..att.n_mg_layers {
            *s = attention_block(tape, p, &format!("{name}.mg{l}"), *s, *s, Some(bias), h).out;
        }
        for l in 0..att.n_self_layers {
            *s = attention_block(tape, p, &format!("{name}.sa{l}"), *s, *s, None, h).out;
        }
    }
    let [mut t, mut v] = streams;
    for l in 0..att.n_cross_layers {
        let t_next = attention_block(tape, p, &format!("cross{l}.t2v"), t, v, None, h).out;
        let v_next = attention_block(tape, p, &format!("cross{l}.v2t"), v, t, None, h).out;
        t = t_next;
        v = v_next;
    }
    let f = tape.add(t, v);
    FusedVars {
        f_tv: t,
        f_vt: v,
        f,
    }
}

pub(crate) fn forward(
    tape: &mut Tape,
    model: &Model,
    prep: &PreparedDoc,
    plan: &MaskPlan,
) -> Result<FusedVars> {
    let (text_emb, vis_emb) = embeddings(tape, model, prep, plan)?;
    Ok(fuse_vars(tape, model, text_emb, vis_emb, &prep.bias))
}
