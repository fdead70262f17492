//! RVL-CDIP label index (`<image path> <class id>` per line) paired with an
//! OCR export sidecar next to each image (same stem, `.json`).

use std::fs;
use std::path::Path;

use crate::docmodel::Document;
use crate::error::{Error, Result};

use super::canonical::load_raster;
use super::ocr::{load_ocr, GroupingGaps};

pub const RVLCDIP_CLASSES: [&str; 16] = [
    "letter",
    "form",
    "email",
    "handwritten",
    "advertisement",
    "scientific report",
    "scientific publication",
    "specification",
    "file folder",
    "news article",
    "budget",
    "invoice",
    "presentation",
    "questionnaire",
    "resume",
    "memo",
];

/// Parses the index into `(image path, class id)` pairs.
pub fn parse_label_index(text: &str) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (path, class) = line
            .rsplit_once(char::is_whitespace)
            .ok_or_else(|| Error::Schema(format!("label index line {}: expected `<path> <class>`", n + 1)))?;
        let class: usize = class
            .parse()
            .map_err(|_| Error::Schema(format!("label index line {}: bad class `{class}`", n + 1)))?;
        if class >= RVLCDIP_CLASSES.len() {
            return Err(Error::Label(format!("class id {class} outside 0..16 (line {})", n + 1)));
        }
        out.push((path.trim().to_string(), class));
    }
    Ok(out)
}

/// Loads every indexed page whose OCR sidecar exists, labeling it with the
/// class name. Pages without a sidecar are skipped and counted.
pub fn load_rvlcdip(index: &Path, root: &Path, gaps: GroupingGaps) -> Result<(Vec<Document>, usize)> {
    let text = fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
    let mut docs = Vec::new();
    let mut skipped = 0;
    for (rel, class) in parse_label_index(&text)? {
        let img = root.join(&rel);
        let sidecar = img.with_extension("json");
        if !sidecar.exists() {
            skipped += 1;
            continue;
        }
        let mut doc = load_ocr(&sidecar, gaps)?;
        doc.page_label = Some(RVLCDIP_CLASSES[class].to_string());
        if img.exists() {
            doc.image = Some(load_raster(&img)?);
            doc.image_path = Some(rel);
        }
        docs.push(doc);
    }
    if skipped > 0 {
        log::warn!("{skipped} indexed pages have no OCR sidecar");
    }
    Ok((docs, skipped))
}
