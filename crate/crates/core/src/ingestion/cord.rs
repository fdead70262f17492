//! CORD receipt annotations: each `valid_line` becomes a region labeled with
//! its category, its tokens become words (boxes are the quads' extents).

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::docmodel::{BoundingBox, Document, Region, Word, DEFAULT_ROW_HEIGHT};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct CordFile {
    valid_line: Vec<CordLine>,
    meta: CordMeta,
}

#[derive(Deserialize)]
struct CordMeta {
    image_size: CordSize,
}

#[derive(Deserialize)]
struct CordSize {
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CordLine {
    category: String,
    #[serde(default)]
    group_id: i64,
    words: Vec<CordWord>,
}

#[derive(Deserialize)]
struct CordWord {
    quad: Quad,
    text: String,
}

#[derive(Deserialize)]
struct Quad {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    x3: f64,
    y3: f64,
    x4: f64,
    y4: f64,
}

impl Quad {
    fn extent(&self, width: u32, height: u32) -> [f64; 4] {
        let xs = [self.x1, self.x2, self.x3, self.x4];
        let ys = [self.y1, self.y2, self.y3, self.y4];
        let (w, h) = (width as f64, height as f64);
        let lo = |v: [f64; 4], m: f64| v.iter().copied().fold(f64::INFINITY, f64::min).clamp(0.0, m);
        let hi = |v: [f64; 4], m: f64| v.iter().copied().fold(f64::NEG_INFINITY, f64::max).clamp(0.0, m);
        [lo(xs, w), lo(ys, h), hi(xs, w), hi(ys, h)]
    }
}

pub fn parse_cord(id: &str, json: &str) -> Result<Document> {
    let file: CordFile = serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    let CordSize { width, height } = file.meta.image_size;
    let mut regions = Vec::new();
    for line in &file.valid_line {
        let mut words = Vec::new();
        for w in &line.words {
            let text = w.text.trim();
            if text.is_empty() {
                continue;
            }
            let b = BoundingBox::from_pixels(w.quad.extent(width, height), width, height).map_err(|_| {
                Error::MalformedEntity {
                    entity: line.group_id,
                    msg: "degenerate quad".into(),
                }
            })?;
            words.push(Word::new(text, b));
        }
        if !words.is_empty() {
            regions.push(Region::from_words(words, Some(line.category.clone()))?);
        }
    }
    Document::new(id, width, height, regions, DEFAULT_ROW_HEIGHT)
}

pub fn load_cord(path: &Path) -> Result<Document> {
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    parse_cord(&id, &json)
}
