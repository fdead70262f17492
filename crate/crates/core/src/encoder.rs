//! Per-unit text and visual embeddings.
//!
//! Text rows are `Enc_T(text) + FC_T(box) + type_T`; visual rows are
//! `Enc_V(image)[box] + FC_V(box) + type_V`, where `Enc_V(image)[box]` is an
//! ROI-pooled crop of one backbone feature map per document, projected to
//! `d_model`. The two spatial projections have separate weights.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::{TextBackbone, VisionBackbone};
use crate::docmodel::{BoundingBox, Document, GranularUnit, Granularities, Granularity, Raster};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::pretraining::MaskPlan;
use crate::vocab::{MASK, MASK_TEXT};

pub const EMBEDDING_FORMAT: &str = "mgdoc-emb/1";

/// Modality embeddings for every unit of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEncoding {
    pub text_emb: Array2<f64>,
    pub vis_emb: Array2<f64>,
    /// Rows of `(x0, y0, x1, y1)`.
    pub boxes: Array2<f64>,
    pub granularity: Vec<Granularity>,
    /// Row of the parent region for word rows, `-1` otherwise.
    pub parent_region: Vec<i64>,
}

impl BatchEncoding {
    pub fn n_rows(&self) -> usize {
        self.granularity.len()
    }

    pub fn bboxes(&self) -> Vec<BoundingBox> {
        self.boxes
            .outer_iter()
            .map(|r| BoundingBox {
                x0: r[0],
                y0: r[1],
                x1: r[2],
                y1: r[3],
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    format: String,
    d_model: usize,
    entries: Vec<TableEntry>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    doc_id: String,
    unit: usize,
    vector: Vec<f64>,
}

/// Precomputed per-unit embeddings keyed by (document id, unit index in the
/// full page/region/word serialization).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub d_model: usize,
    entries: HashMap<(String, usize), Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, doc_id: &str, unit: usize, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.d_model {
            return Err(Error::Embedding(format!(
                "vector for ({doc_id}, {unit}) has length {}, table width is {}",
                vector.len(),
                self.d_model
            )));
        }
        self.entries.insert((doc_id.to_string(), unit), vector);
        Ok(())
    }

    pub fn get(&self, doc_id: &str, unit: usize) -> Result<&[f64]> {
        self.entries
            .get(&(doc_id.to_string(), unit))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Embedding(format!("no vector for document `{doc_id}` unit {unit}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TableFile = serde_json::from_str(&text)?;
        if file.format != EMBEDDING_FORMAT {
            return Err(Error::Version {
                expected: EMBEDDING_FORMAT.into(),
                found: file.format,
            });
        }
        let mut t = Self::new(file.d_model);
        for e in file.entries {
            t.insert(&e.doc_id, e.unit, e.vector)?;
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<_> = self
            .entries
            .iter()
            .map(|((doc_id, unit), v)| TableEntry {
                doc_id: doc_id.clone(),
                unit: *unit,
                vector: v.clone(),
            })
            .collect();
        entries.sort_by(|a, b| (&a.doc_id, a.unit).cmp(&(&b.doc_id, b.unit)));
        let file = TableFile {
            format: EMBEDDING_FORMAT.into(),
            d_model: self.d_model,
            entries,
        };
        fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
    }

    fn rows(&self, doc_id: &str, units: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((units.len(), self.d_model));
        for (r, &u) in units.iter().enumerate() {
            for (c, v) in self.get(doc_id, u)?.iter().enumerate() {
                out[[r, c]] = *v;
            }
        }
        Ok(out)
    }
}

/// Cells of a `size × size` feature map covered by `bbox`, split into an
/// adaptive `grid` of average-pooling bins. A box smaller than one cell pools
/// the nearest cell.
pub fn roi_bins(bbox: &BoundingBox, size: usize, grid: (usize, usize)) -> Vec<Vec<usize>> {
    let span = |lo: f64, hi: f64| {
        let s = ((lo * size as f64).floor() as usize).min(size - 1);
        let e = ((hi * size as f64).ceil() as usize).clamp(s + 1, size);
        (s, e)
    };
    let (xs, xe) = span(bbox.x0, bbox.x1);
    let (ys, ye) = span(bbox.y0, bbox.y1);
    let (h, w) = (ye - ys, xe - xs);
    let mut bins = Vec::with_capacity(grid.0 * grid.1);
    for by in 0..grid.0 {
        let y_lo = ys + by * h / grid.0;
        let y_hi = ys + ((by + 1) * h).div_ceil(grid.0);
        for bx in 0..grid.1 {
            let x_lo = xs + bx * w / grid.1;
            let x_hi = xs + ((bx + 1) * w).div_ceil(grid.1);
            let mut cells = Vec::new();
            for y in y_lo..y_hi.max(y_lo + 1) {
                for x in x_lo..x_hi.max(x_lo + 1) {
                    cells.push(y * size + x);
                }
            }
            bins.push(cells);
        }
    }
    bins
}

pub(crate) fn boxes_matrix(boxes: &[BoundingBox]) -> Array2<f64> {
    Array2::from_shape_fn((boxes.len(), 4), |(i, j)| boxes[i].to_array()[j])
}

fn spatial_and_type(tape: &mut Tape, model: &Model, base: Var, boxes: Var, prefix: &str) -> Var {
    let p = &model.params;
    let w = tape.param(p, &format!("{prefix}.fc.w"));
    let b = tape.param(p, &format!("{prefix}.fc.b"));
    let ty = tape.param(p, &format!("{prefix}.type"));
    let fc = tape.matmul(boxes, w);
    let fc = tape.add_row(fc, b);
    let sum = tape.add(base, fc);
    tape.add_row(sum, ty)
}

/// Text rows for explicit token groups. Rows listed in `masked` see the MASK
/// token in place of their own text.
pub(crate) fn text_rows(
    tape: &mut Tape,
    model: &Model,
    doc_id: &str,
    token_ids: &[Vec<usize>],
    boxes: &Array2<f64>,
    full_index: &[usize],
    masked: &[usize],
) -> Result<Var> {
    let p = &model.params;
    let base = match model.config.encoder.text_backbone {
        TextBackbone::BagOfTokens => {
            let mut groups = token_ids.to_vec();
            for &r in masked {
                groups[r] = vec![MASK];
            }
            let table = tape.param(p, "text.tok_emb");
            tape.gather_mean(table, Arc::new(groups))
        }
        TextBackbone::ExternalTable => {
            let table = model
                .text_table
                .as_ref()
                .ok_or_else(|| Error::Embedding("external text backbone has no table".into()))?;
            let mut rows = table.rows(doc_id, full_index)?;
            let mut indicator = Array2::zeros((rows.nrows(), 1));
            for &r in masked {
                rows.row_mut(r).fill(0.0);
                indicator[[r, 0]] = 1.0;
            }
            let rows = tape.constant(rows);
            let ind = tape.constant(indicator);
            let mask_emb = tape.param(p, "text.mask_emb");
            let m = tape.matmul(ind, mask_emb);
            tape.add(rows, m)
        }
    };
    let bx = tape.constant(boxes.clone());
    Ok(spatial_and_type(tape, model, base, bx, "text"))
}

/// Backbone feature map of a resampled raster: `C × (s/4)²`.
pub(crate) fn feature_map(tape: &mut Tape, model: &Model, image: &[f64]) -> Var {
    let p = &model.params;
    let s = model.config.encoder.image_size;
    let img = tape.constant(Array2::from_shape_vec((1, s * s), image.to_vec()).expect("image size"));
    let mut x = img;
    let mut side = s;
    for stage in ["vis.conv1", "vis.conv2"] {
        let cols = tape.im2col(x, side, side, 3);
        let w = tape.param(p, &format!("{stage}.w"));
        let b = tape.param(p, &format!("{stage}.b"));
        let y = tape.matmul(w, cols);
        let y = tape.add_col(y, b);
        let y = tape.relu(y);
        x = tape.avg_pool2(y, side, side);
        side /= 2;
    }
    x
}

/// Visual rows before masking.
pub(crate) fn vision_rows(
    tape: &mut Tape,
    model: &Model,
    doc_id: &str,
    image: Option<&[f64]>,
    boxes: &[BoundingBox],
    full_index: &[usize],
) -> Result<Var> {
    let p = &model.params;
    let base = match model.config.encoder.vision_backbone {
        VisionBackbone::TinyConv => {
            let image = image.ok_or_else(|| {
                Error::Image(format!("document `{doc_id}` has no raster for the vision backbone"))
            })?;
            let fmap = feature_map(tape, model, image);
            let size = model.config.feature_size();
            let grid = model.config.encoder.roi_pool;
            let bins: Vec<_> = boxes.iter().map(|b| roi_bins(b, size, grid)).collect();
            let pooled = tape.roi_pool(fmap, Arc::new(bins));
            let w = tape.param(p, "vis.proj.w");
            let b = tape.param(p, "vis.proj.b");
            let y = tape.matmul(pooled, w);
            tape.add_row(y, b)
        }
        VisionBackbone::ExternalTable => {
            let table = model
                .vision_table
                .as_ref()
                .ok_or_else(|| Error::Embedding("external vision backbone has no table".into()))?;
            tape.constant(table.rows(doc_id, full_index)?)
        }
    };
    let bx = tape.constant(boxes_matrix(boxes));
    Ok(spatial_and_type(tape, model, base, bx, "vis"))
}

/// `e_T` of one unit. `unit.unit_index` addresses the external table, if any.
pub fn encode_text(model: &Model, doc_id: &str, unit: &GranularUnit) -> Result<Array1<f64>> {
    let mut tape = Tape::new();
    let ids = vec![model.vocab.encode(&unit.text)];
    let boxes = boxes_matrix(&[unit.bbox]);
    let masked: &[usize] = if unit.text == MASK_TEXT { &[0] } else { &[] };
    let v = text_rows(&mut tape, model, doc_id, &ids, &boxes, &[unit.unit_index], masked)?;
    Ok(tape.value(v).row(0).to_owned())
}

/// `e_V` of one unit cropped from `image`.
pub fn encode_vision(
    model: &Model,
    doc_id: &str,
    image: Option<&Raster>,
    unit: &GranularUnit,
) -> Result<Array1<f64>> {
    let mut tape = Tape::new();
    let pixels = image.map(|r| r.resample(model.config.encoder.image_size));
    let v = vision_rows(
        &mut tape,
        model,
        doc_id,
        pixels.as_deref(),
        &[unit.bbox],
        &[unit.unit_index],
    )?;
    Ok(tape.value(v).row(0).to_owned())
}

/// Both modality embeddings for every unit of `doc`. Text-masked rows are
/// encoded from the MASK sentinel; vision-masked rows are zero vectors.
pub fn encode_document(
    model: &Model,
    doc: &Document,
    masking: Option<&MaskPlan>,
) -> Result<BatchEncoding> {
    let prep = model.prepare(doc, Granularities::ALL)?;
    let mut tape = Tape::new();
    let empty = MaskPlan::default();
    let plan = masking.unwrap_or(&empty);
    let (t, v) = crate::model::embeddings(&mut tape, model, &prep, plan)?;
    Ok(prep.batch_encoding(tape.value(t).clone(), tape.value(v).clone()))
}

/// Keeps only rows whose granularity is selected.
pub fn filter_units(units: Vec<GranularUnit>, keep: Granularities) -> Vec<GranularUnit> {
    units
        .into_iter()
        .filter(|u| keep.includes(u.granularity))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::docmodel::{serialize_units, Region, UnitSource, Word, DEFAULT_ROW_HEIGHT};
    use crate::vocab::Vocab;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn small_model() -> Model {
        let mut cfg = ModelConfig::desk();
        cfg.encoder.d_model = 8;
        cfg.attention.n_heads = 2;
        cfg.encoder.image_size = 16;
        let vocab = Vocab::from_tokens(vec!["total".into(), "date".into(), "amount".into()]);
        Model::new(cfg, vocab, 3).unwrap()
    }

    fn doc() -> Document {
        let r1 = Region::from_words(
            vec![
                Word::new("total", bb(0.1, 0.1, 0.2, 0.15)),
                Word::new("date", bb(0.25, 0.1, 0.4, 0.15)),
            ],
            None,
        )
        .unwrap();
        let r2 = Region::from_words(vec![Word::new("amount", bb(0.5, 0.6, 0.7, 0.65))], None).unwrap();
        let mut raster = Raster::filled(32, 32, 200);
        for y in 0..16 {
            for x in 0..16 {
                raster.set(x, y, 30);
            }
        }
        Document::new("d", 32, 32, vec![r1, r2], DEFAULT_ROW_HEIGHT)
            .unwrap()
            .with_image(raster)
    }

    fn unit(text: &str, b: BoundingBox) -> GranularUnit {
        GranularUnit {
            granularity: Granularity::Word,
            unit_index: 0,
            source: UnitSource::Page,
            text: text.into(),
            bbox: b,
        }
    }

    #[test]
    fn zero_spatial_and_type_terms_leave_token_mean() {
        let mut m = small_model();
        for n in ["text.fc.w", "text.fc.b", "text.type"] {
            m.params.get_mut(n).unwrap().fill(0.0);
        }
        let e = encode_text(&m, "d", &unit("total amount", bb(0.1, 0.1, 0.3, 0.3))).unwrap();
        let tab = m.params.get("text.tok_emb").unwrap();
        let (a, b) = (m.vocab.id("total"), m.vocab.id("amount"));
        for j in 0..8 {
            let expect = 0.5 * (tab[[a, j]] + tab[[b, j]]);
            assert!((e[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn box_change_shifts_by_spatial_difference() {
        let m = small_model();
        let (ba, bb_) = (bb(0.1, 0.1, 0.3, 0.3), bb(0.5, 0.2, 0.9, 0.8));
        let ea = encode_text(&m, "d", &unit("date", ba)).unwrap();
        let eb = encode_text(&m, "d", &unit("date", bb_)).unwrap();
        let w = m.params.get("text.fc.w").unwrap();
        let delta: Vec<f64> = (0..4).map(|k| ba.to_array()[k] - bb_.to_array()[k]).collect();
        for j in 0..8 {
            let expect: f64 = (0..4).map(|k| delta[k] * w[[k, j]]).sum();
            assert!((ea[j] - eb[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_sentinel_uses_mask_row() {
        let mut m = small_model();
        for n in ["text.fc.w", "text.fc.b", "text.type"] {
            m.params.get_mut(n).unwrap().fill(0.0);
        }
        let e = encode_text(&m, "d", &unit(MASK_TEXT, bb(0.1, 0.1, 0.3, 0.3))).unwrap();
        let tab = m.params.get("text.tok_emb").unwrap();
        for j in 0..8 {
            assert_eq!(e[j], tab[[MASK, j]]);
        }
    }

    #[test]
    fn bag_of_tokens_is_order_invariant() {
        let m = small_model();
        let b = bb(0.1, 0.1, 0.3, 0.3);
        let a = encode_text(&m, "d", &unit("total date amount", b)).unwrap();
        let c = encode_text(&m, "d", &unit("amount total date", b)).unwrap();
        for j in 0..8 {
            assert!((a[j] - c[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_image_gives_identical_roi_features() {
        let mut m = small_model();
        for n in ["vis.fc.w", "vis.fc.b"] {
            m.params.get_mut(n).unwrap().fill(0.0);
        }
        let flat = Raster::filled(32, 32, 120);
        let a = encode_vision(&m, "d", Some(&flat), &unit("x", bb(0.0, 0.0, 0.3, 0.3))).unwrap();
        let b = encode_vision(&m, "d", Some(&flat), &unit("x", bb(0.6, 0.6, 0.7, 0.9))).unwrap();
        let page = encode_vision(&m, "d", Some(&flat), &unit("x", BoundingBox::PAGE)).unwrap();
        for j in 0..8 {
            assert!((a[j] - b[j]).abs() < 1e-12);
            assert!((a[j] - page[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn roi_bins_cover_box_and_degenerate_case() {
        let bins = roi_bins(&BoundingBox::PAGE, 8, (2, 2));
        let mut all: Vec<usize> = bins.concat();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 64);
        assert!(bins.iter().all(|b| b.len() == 16));
        let point = bb(0.5, 0.5, 0.5, 0.5);
        let bins = roi_bins(&point, 8, (2, 2));
        assert!(bins.iter().all(|b| b == &vec![4 * 8 + 4]));
        let edge = bb(1.0, 1.0, 1.0, 1.0);
        assert!(roi_bins(&edge, 8, (2, 2)).iter().all(|b| b == &vec![63]));
    }

    #[test]
    fn bright_quadrant_pools_higher() {
        // Hand-built 8×8 map: top-left quadrant 1, elsewhere 0.
        let map: Vec<f64> = (0..64).map(|k| if k / 8 < 4 && k % 8 < 4 { 1.0 } else { 0.0 }).collect();
        let pool = |b: &BoundingBox| {
            let bins = roi_bins(b, 8, (2, 2));
            bins.iter()
                .map(|cells| cells.iter().map(|&c| map[c]).sum::<f64>() / cells.len() as f64)
                .sum::<f64>()
                / 4.0
        };
        assert_eq!(pool(&bb(0.0, 0.0, 0.5, 0.5)), 1.0);
        assert_eq!(pool(&bb(0.5, 0.5, 1.0, 1.0)), 0.0);
        assert_eq!(pool(&BoundingBox::PAGE), 0.25);
    }

    #[test]
    fn document_rows_match_unit_encoders() {
        let m = small_model();
        let d = doc();
        let enc = encode_document(&m, &d, None).unwrap();
        let units = serialize_units(&d).unwrap();
        assert_eq!(enc.n_rows(), units.len());
        for (r, u) in units.iter().enumerate() {
            let t = encode_text(&m, &d.id, u).unwrap();
            let v = encode_vision(&m, &d.id, d.image.as_ref(), u).unwrap();
            for j in 0..8 {
                assert!((enc.text_emb[[r, j]] - t[j]).abs() < 1e-12);
                assert!((enc.vis_emb[[r, j]] - v[j]).abs() < 1e-12);
            }
        }
        assert_eq!(enc.parent_region, vec![-1, -1, -1, 1, 1, 2]);
    }

    #[test]
    fn masking_is_row_local() {
        let m = small_model();
        let d = doc();
        let clean = encode_document(&m, &d, None).unwrap();
        let plan = MaskPlan {
            text_masked_rows: vec![4],
            vision_masked_rows: vec![3],
            rng_seed: 0,
        };
        let masked = encode_document(&m, &d, Some(&plan)).unwrap();
        assert!(masked.vis_emb.row(3).iter().all(|&v| v == 0.0));
        let units = serialize_units(&d).unwrap();
        let mut mu = units[4].clone();
        mu.text = MASK_TEXT.into();
        let expect = encode_text(&m, &d.id, &mu).unwrap();
        for j in 0..8 {
            assert!((masked.text_emb[[4, j]] - expect[j]).abs() < 1e-12);
        }
        for r in 0..units.len() {
            if r != 4 {
                assert_eq!(masked.text_emb.row(r), clean.text_emb.row(r));
            }
            if r != 3 {
                assert_eq!(masked.vis_emb.row(r), clean.vis_emb.row(r));
            }
        }
    }

    #[test]
    fn missing_raster_is_an_error() {
        let m = small_model();
        let mut d = doc();
        d.image = None;
        assert!(matches!(encode_document(&m, &d, None), Err(Error::Image(_))));
    }

    #[test]
    fn external_tables_round_trip_and_drive_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModelConfig::desk();
        cfg.encoder.d_model = 8;
        cfg.attention.n_heads = 2;
        cfg.encoder.text_backbone = TextBackbone::ExternalTable;
        cfg.encoder.vision_backbone = VisionBackbone::ExternalTable;
        let d = doc();
        let units = serialize_units(&d).unwrap();
        let mut table = EmbeddingTable::new(8);
        for u in &units {
            table.insert("d", u.unit_index, vec![u.unit_index as f64; 8]).unwrap();
        }
        let path = dir.path().join("t.json");
        table.save(&path).unwrap();
        let back = EmbeddingTable::load(&path).unwrap();
        assert_eq!(back, table);
        assert!(table.insert("d", 0, vec![0.0; 3]).is_err());

        let mut m = Model::new(cfg, Vocab::from_tokens(vec![]), 1).unwrap();
        m.text_table = Some(Arc::new(back.clone()));
        m.vision_table = Some(Arc::new(back));
        for n in ["text.fc.w", "text.fc.b", "text.type", "vis.fc.w", "vis.fc.b", "vis.type"] {
            m.params.get_mut(n).unwrap().fill(0.0);
        }
        let mut no_image = d.clone();
        no_image.image = None;
        let enc = encode_document(&m, &no_image, None).unwrap();
        for r in 0..units.len() {
            assert!(enc.text_emb.row(r).iter().all(|&v| v == r as f64));
            assert!(enc.vis_emb.row(r).iter().all(|&v| v == r as f64));
        }
    }
}
