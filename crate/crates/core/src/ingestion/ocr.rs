//! Pre-exported OCR output. In word mode the words are grouped into regions
//! here; in paragraph mode each item already is a region.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::docmodel::{BoundingBox, Document, Region, Word, DEFAULT_ROW_HEIGHT};
use crate::error::{Error, Result};

use super::grouping::group_words_into_regions;

pub const OCR_FORMAT: &str = "mgdoc-ocr/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcrMode {
    Word,
    Paragraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrWord {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrItem {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    /// Paragraph mode only: word boxes when the engine reports them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<OcrWord>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrExport {
    pub format: String,
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_label: Option<String>,
    pub mode: OcrMode,
    pub items: Vec<OcrItem>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupingGaps {
    pub gap_x: f64,
    pub gap_y: f64,
}

impl Default for GroupingGaps {
    fn default() -> Self {
        Self {
            gap_x: super::grouping::DEFAULT_GAP_X,
            gap_y: super::grouping::DEFAULT_GAP_Y,
        }
    }
}

/// Splits a paragraph box horizontally among its tokens in proportion to
/// their character counts.
fn split_paragraph(text: &str, b: BoundingBox) -> Vec<Word> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let total: usize = tokens.iter().map(|t| t.chars().count()).sum();
    let mut x = b.x0;
    let mut out = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        let x1 = if i + 1 == tokens.len() {
            b.x1
        } else {
            x + b.width() * t.chars().count() as f64 / total as f64
        };
        out.push(Word::new(*t, BoundingBox { x0: x, y0: b.y0, x1, y1: b.y1 }));
        x = x1;
    }
    out
}

impl OcrExport {
    pub fn to_document(&self, gaps: GroupingGaps) -> Result<Document> {
        if self.format != OCR_FORMAT {
            return Err(Error::Version {
                expected: OCR_FORMAT.into(),
                found: self.format.clone(),
            });
        }
        let norm = |px: [f64; 4]| BoundingBox::from_pixels(px, self.width, self.height);
        let regions = match self.mode {
            OcrMode::Word => {
                let words = self
                    .items
                    .iter()
                    .filter(|it| !it.text.trim().is_empty())
                    .map(|it| Ok(Word::new(it.text.trim(), norm(it.bbox)?)))
                    .collect::<Result<Vec<_>>>()?;
                group_words_into_regions(&words, gaps.gap_x, gaps.gap_y)
            }
            OcrMode::Paragraph => {
                let mut regions = Vec::new();
                for it in &self.items {
                    let b = norm(it.bbox)?;
                    let words = match &it.words {
                        Some(ws) => ws
                            .iter()
                            .filter(|w| !w.text.trim().is_empty())
                            .map(|w| Ok(Word::new(w.text.trim(), norm(w.bbox)?)))
                            .collect::<Result<Vec<_>>>()?,
                        None => split_paragraph(&it.text, b),
                    };
                    if words.is_empty() {
                        continue;
                    }
                    let mut r = Region::from_words(words, None)?;
                    r.bbox = crate::docmodel::enclosing_box(&[r.bbox, b])?;
                    r.text = Some(it.text.clone());
                    regions.push(r);
                }
                regions
            }
        };
        let mut doc = Document::new(self.id.clone(), self.width, self.height, regions, DEFAULT_ROW_HEIGHT)?;
        doc.image_path = self.image_path.clone();
        doc.page_label = self.page_label.clone();
        Ok(doc)
    }
}

pub fn parse_ocr(json: &str, gaps: GroupingGaps) -> Result<Document> {
    let raw: serde_json::Value = serde_json::from_str(json)?;
    let found = raw.get("format").and_then(|v| v.as_str()).unwrap_or("<missing>");
    if found != OCR_FORMAT {
        return Err(Error::Version {
            expected: OCR_FORMAT.into(),
            found: found.into(),
        });
    }
    let export: OcrExport = serde_json::from_value(raw).map_err(|e| Error::Schema(e.to_string()))?;
    export.to_document(gaps)
}

pub fn load_ocr(path: &Path, gaps: GroupingGaps) -> Result<Document> {
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ocr(&json, gaps)
}
