//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three explorable outputs: the relative-offset bucket function, greedy OCR
//! word grouping under adjustable gaps, and the region-by-word heatmap of a
//! tiny model trained in the page with the multi-granularity objective.

use mgdoc::attention::{region_word_heatmap, rel_bucket};
use mgdoc::docmodel::{UnitSource, Word};
use mgdoc::ingestion::{generate_document, generate_paragraph_page, group_words_into_regions, SyntheticCorpusSpec};
use mgdoc::pretraining::Trainer;
use mgdoc::{Granularities, Model, ModelConfig, PreparedDoc, PretrainTasks, TrainConfig, Vocab};
use wasm_bindgen::prelude::*;

/// `(delta, bucket)` pairs for `samples` offsets evenly spread over [-1, 1].
#[wasm_bindgen]
pub fn rel_bucket_curve(side: usize, linear_max: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    (0..n)
        .flat_map(|i| {
            let d = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            [d, rel_bucket(d, side, linear_max) as f64]
        })
        .collect()
}

/// A generated page of paragraphs, regrouped on demand.
#[wasm_bindgen]
pub struct GroupingDemo {
    words: Vec<Word>,
    truth: Vec<usize>,
}

#[wasm_bindgen]
impl GroupingDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, n_paragraphs: usize) -> GroupingDemo {
        let (words, truth) = generate_paragraph_page(seed, n_paragraphs.max(1));
        GroupingDemo { words, truth }
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_true_regions(&self) -> usize {
        self.truth.iter().max().map_or(0, |m| m + 1)
    }

    /// Per word `x0, y0, x1, y1, group` after grouping with the given gaps.
    pub fn group(&self, gap_x: f64, gap_y: f64) -> Vec<f64> {
        let regions = group_words_into_regions(&self.words, gap_x, gap_y);
        regions
            .iter()
            .enumerate()
            .flat_map(|(g, r)| {
                r.words
                    .iter()
                    .flat_map(move |w| [w.bbox.x0, w.bbox.y0, w.bbox.x1, w.bbox.y1, g as f64])
            })
            .collect()
    }

    /// Whether grouping with these gaps reproduces the generated paragraphs.
    pub fn matches_truth(&self, gap_x: f64, gap_y: f64) -> bool {
        let regions = group_words_into_regions(&self.words, gap_x, gap_y);
        let sizes: Vec<usize> = regions.iter().map(|r| r.words.len()).collect();
        let mut expected = vec![0; self.n_true_regions()];
        for &t in &self.truth {
            expected[t] += 1;
        }
        sizes == expected
    }
}

/// A tiny model trained on a handful of synthetic forms with MGM only.
#[wasm_bindgen]
pub struct MgmDemo {
    trainer: Trainer,
    corpus: Vec<PreparedDoc>,
    shown: PreparedDoc,
}

fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::desk();
    c.encoder.d_model = 16;
    c.encoder.conv_channels = (4, 4);
    c.encoder.image_size = 32;
    c.attention.n_heads = 2;
    c.attention.n_mg_layers = 1;
    c.attention.n_self_layers = 1;
    c.attention.n_cross_layers = 1;
    c
}

#[wasm_bindgen]
impl MgmDemo {
    /// `n_docs` training forms plus one held-out form for display.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, n_docs: usize) -> Result<MgmDemo, JsError> {
        let spec = SyntheticCorpusSpec { seed, ..Default::default() };
        let docs = (0..=n_docs.max(1))
            .map(|i| generate_document(&spec, i))
            .collect::<mgdoc::Result<Vec<_>>>()?;
        let model = Model::new(tiny_config(), Vocab::build(&docs, 500), seed)?;
        let prep = |d| model.prepare(d, Granularities::ALL);
        let (train, held) = docs.split_at(docs.len() - 1);
        let corpus = train.iter().map(prep).collect::<mgdoc::Result<Vec<_>>>()?;
        let shown = prep(&held[0])?;
        let cfg = TrainConfig {
            lr: 3e-3,
            batch_size: 1,
            epochs: 10_000,
            warmup_frac: 0.0,
            tasks: PretrainTasks { mtm: false, mvm: false, mgm: true },
            seed,
            ..TrainConfig::desk()
        };
        let trainer = Trainer::new(model, cfg, corpus.len())?;
        Ok(MgmDemo { trainer, corpus, shown })
    }

    pub fn step(&self) -> usize {
        self.trainer.step
    }

    /// Runs `n` more steps; returns the mean MGM loss over them.
    pub fn train(&mut self, n: usize) -> Result<f64, JsError> {
        let until = self.trainer.step + n;
        let reports = self.trainer.run_until(&self.corpus, until, |_, _| Ok(()))?;
        Ok(reports.iter().map(|r| r.l_mgm).sum::<f64>() / reports.len().max(1) as f64)
    }

    pub fn n_regions(&self) -> usize {
        self.shown.region_rows.len()
    }

    pub fn n_words(&self) -> usize {
        self.shown.word_rows.len()
    }

    /// Region of each word of the held-out document, in column order.
    pub fn parents(&self) -> Vec<u32> {
        self.shown
            .units
            .iter()
            .filter_map(|u| match u.source {
                UnitSource::Word { region, .. } => Some(region as u32),
                _ => None,
            })
            .collect()
    }

    /// Row-major region × word dot products for the held-out document.
    pub fn heatmap(&self) -> Result<Vec<f64>, JsError> {
        let fused = self.trainer.model.fuse(&self.shown)?;
        Ok(region_word_heatmap(&fused.f, &self.shown.units).iter().copied().collect())
    }

    /// Share of held-out words whose highest-scoring region is their parent.
    pub fn retrieval_accuracy(&self) -> Result<f64, JsError> {
        let h = self.heatmap()?;
        let (m, n) = (self.n_regions(), self.n_words());
        let parents = self.parents();
        let hits = (0..n)
            .filter(|&i| {
                let best = (0..m).max_by(|&a, &b| h[a * n + i].total_cmp(&h[b * n + i]));
                best == Some(parents[i] as usize)
            })
            .count();
        Ok(hits as f64 / n.max(1) as f64)
    }
}
