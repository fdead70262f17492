//! FUNSD form annotations: one region per entity, label kept as published.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::docmodel::{BoundingBox, Document, Raster, Region, Word, DEFAULT_ROW_HEIGHT};
use crate::error::{Error, Result};

use super::canonical::load_raster;

#[derive(Deserialize)]
struct FunsdFile {
    form: Vec<FunsdEntity>,
}

#[derive(Deserialize)]
struct FunsdEntity {
    #[serde(default)]
    id: i64,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    words: Vec<FunsdWord>,
}

#[derive(Deserialize)]
struct FunsdWord {
    #[serde(rename = "box")]
    bbox: Vec<f64>,
    text: String,
}

/// What a load kept and dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FunsdStats {
    pub entities: usize,
    pub dropped_entities: usize,
    pub words: usize,
    pub dropped_words: usize,
    /// Words whose box poked outside the page and was clamped.
    pub clamped_boxes: usize,
}

impl FunsdStats {
    fn add(&mut self, o: &FunsdStats) {
        self.entities += o.entities;
        self.dropped_entities += o.dropped_entities;
        self.words += o.words;
        self.dropped_words += o.dropped_words;
        self.clamped_boxes += o.clamped_boxes;
    }
}

fn word_box(entity: i64, px: &[f64], width: u32, height: u32, clamped: &mut usize) -> Result<BoundingBox> {
    let [x0, y0, x1, y1]: [f64; 4] = px.try_into().map_err(|_| Error::MalformedEntity {
        entity,
        msg: format!("box has {} coordinates", px.len()),
    })?;
    if !(x0 <= x1 && y0 <= y1) || px.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedEntity {
            entity,
            msg: format!("inverted box {px:?}"),
        });
    }
    let (w, h) = (width as f64, height as f64);
    let c = [x0.clamp(0.0, w), y0.clamp(0.0, h), x1.clamp(0.0, w), y1.clamp(0.0, h)];
    if c != [x0, y0, x1, y1] {
        *clamped += 1;
    }
    BoundingBox::from_pixels(c, width, height)
}

/// Parses one annotation file against a page of `width × height` pixels.
/// Words with empty text are dropped, then entities left without words.
pub fn parse_funsd(id: &str, json: &str, width: u32, height: u32) -> Result<(Document, FunsdStats)> {
    let file: FunsdFile = serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    let mut stats = FunsdStats::default();
    let mut regions = Vec::new();
    for e in &file.form {
        let mut words = Vec::new();
        for w in &e.words {
            let text = w.text.trim();
            if text.is_empty() {
                stats.dropped_words += 1;
                continue;
            }
            words.push(Word::new(text, word_box(e.id, &w.bbox, width, height, &mut stats.clamped_boxes)?));
        }
        if words.is_empty() {
            stats.dropped_entities += 1;
            continue;
        }
        stats.entities += 1;
        stats.words += words.len();
        regions.push(Region::from_words(words, e.label.clone())?);
    }
    if stats.dropped_entities > 0 || stats.dropped_words > 0 {
        log::warn!(
            "{id}: dropped {} empty entities and {} empty words",
            stats.dropped_entities,
            stats.dropped_words
        );
    }
    let doc = Document::new(id, width, height, regions, DEFAULT_ROW_HEIGHT)?;
    Ok((doc, stats))
}

/// Loads an annotation file; the page size comes from `image`.
pub fn load_funsd(annotation: &Path, image: Raster) -> Result<(Document, FunsdStats)> {
    let json = fs::read_to_string(annotation).map_err(|e| Error::io(annotation, e))?;
    let id = annotation
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (doc, stats) = parse_funsd(&id, &json, image.width, image.height)?;
    Ok((doc.with_image(image), stats))
}

/// Loads a split directory laid out as published (`annotations/*.json` next
/// to `images/*.png`), in file-name order.
pub fn load_funsd_split(dir: &Path) -> Result<(Vec<Document>, FunsdStats)> {
    let ann_dir = dir.join("annotations");
    let mut files: Vec<PathBuf> = fs::read_dir(&ann_dir)
        .map_err(|e| Error::io(&ann_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut docs = Vec::with_capacity(files.len());
    let mut total = FunsdStats::default();
    for f in files {
        let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let img_path = dir.join("images").join(format!("{stem}.png"));
        let (mut doc, stats) = load_funsd(&f, load_raster(&img_path)?)?;
        doc.image_path = Some(format!("../images/{stem}.png"));
        total.add(&stats);
        docs.push(doc);
    }
    Ok((docs, total))
}
