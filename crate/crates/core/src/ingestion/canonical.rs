//! The versioned on-disk document format. Boxes are stored in pixels; the
//! raster is referenced by a path relative to the JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::docmodel::{BoundingBox, Document, Raster, Region, Word, DEFAULT_ROW_HEIGHT};
use crate::error::{Error, Result};

pub const DOC_FORMAT: &str = "mgdoc-doc/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalWord {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalRegion {
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub words: Vec<CanonicalWord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalDocJson {
    pub format: String,
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_label: Option<String>,
    pub regions: Vec<CanonicalRegion>,
}

impl CanonicalDocJson {
    pub fn from_document(doc: &Document) -> Self {
        let px = |b: &BoundingBox| b.to_pixels(doc.width, doc.height);
        Self {
            format: DOC_FORMAT.into(),
            id: doc.id.clone(),
            width: doc.width,
            height: doc.height,
            image_path: doc.image_path.clone(),
            page_label: doc.page_label.clone(),
            regions: doc
                .regions
                .iter()
                .map(|r| CanonicalRegion {
                    bbox: px(&r.bbox),
                    label: r.label.clone(),
                    text: r.text.clone(),
                    words: r
                        .words
                        .iter()
                        .map(|w| CanonicalWord {
                            text: w.text.clone(),
                            bbox: px(&w.bbox),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Validates pixel boxes and builds the document (without its raster).
    pub fn to_document(&self) -> Result<Document> {
        if self.format != DOC_FORMAT {
            return Err(Error::Version {
                expected: DOC_FORMAT.into(),
                found: self.format.clone(),
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::doc(&self.id, "page size must be positive"));
        }
        let norm = |px: [i64; 4], what: &str| -> Result<BoundingBox> {
            let [x0, y0, x1, y1] = px;
            let (w, h) = (self.width as i64, self.height as i64);
            if !(0 <= x0 && x0 <= x1 && x1 <= w && 0 <= y0 && y0 <= y1 && y1 <= h) {
                return Err(Error::doc(
                    &self.id,
                    format!("{what} pixel box {px:?} outside the {w}x{h} page"),
                ));
            }
            BoundingBox::from_pixels(px.map(|v| v as f64), self.width, self.height)
        };
        let mut regions = Vec::with_capacity(self.regions.len());
        for (j, r) in self.regions.iter().enumerate() {
            let mut words = Vec::with_capacity(r.words.len());
            for w in &r.words {
                words.push(Word::new(w.text.clone(), norm(w.bbox, &format!("word `{}`", w.text))?));
            }
            regions.push(Region {
                id: j,
                bbox: norm(r.bbox, &format!("region {j}"))?,
                words,
                label: r.label.clone(),
                text: r.text.clone(),
            });
        }
        let mut doc = Document::new(self.id.clone(), self.width, self.height, regions, DEFAULT_ROW_HEIGHT)?;
        doc.image_path = self.image_path.clone();
        doc.page_label = self.page_label.clone();
        Ok(doc)
    }
}

/// Parses canonical JSON text. A missing or different `format` is a version
/// error; structural problems are schema errors.
pub fn parse_canonical(text: &str) -> Result<Document> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let found = raw.get("format").and_then(|v| v.as_str()).unwrap_or("<missing>");
    if found != DOC_FORMAT {
        return Err(Error::Version {
            expected: DOC_FORMAT.into(),
            found: found.into(),
        });
    }
    let json: CanonicalDocJson =
        serde_json::from_value(raw).map_err(|e| Error::Schema(e.to_string()))?;
    json.to_document()
}

pub fn to_canonical_string(doc: &Document) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CanonicalDocJson::from_document(doc))?)
}

/// Writes the JSON only; the raster stays wherever `image_path` points.
pub fn save_canonical(doc: &Document, path: &Path) -> Result<()> {
    fs::write(path, to_canonical_string(doc)?).map_err(|e| Error::io(path, e))
}

/// Loads the JSON and, when `image_path` is set, the raster it names
/// (resolved against the JSON file's directory).
pub fn load_canonical(path: &Path) -> Result<Document> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc = parse_canonical(&text)?;
    if let Some(rel) = &doc.image_path {
        let img = resolve(path, rel);
        doc.image = Some(load_raster(&img)?);
    }
    Ok(doc)
}

fn resolve(json_path: &Path, rel: &str) -> PathBuf {
    match json_path.parent() {
        Some(dir) => dir.join(rel),
        None => PathBuf::from(rel),
    }
}

/// Reads a PNG or TIFF as 8-bit grayscale.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let g = img.to_luma8();
    Raster::new(g.width(), g.height(), g.into_raw())
}

pub fn save_raster(raster: &Raster, path: &Path) -> Result<()> {
    let img = image::GrayImage::from_raw(raster.width, raster.height, raster.pixels.clone())
        .ok_or_else(|| Error::Image("raster size mismatch".into()))?;
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes each document as `<id>.json` in `dir`, with its raster (if any) as
/// `<id>.png` referenced from the JSON. Returns the JSON paths in input order.
pub fn save_corpus(docs: &[Document], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut doc = doc.clone();
        if let Some(raster) = &doc.image {
            let name = format!("{}.png", doc.id);
            save_raster(raster, &dir.join(&name))?;
            doc.image_path = Some(name);
        }
        let path = dir.join(format!("{}.json", doc.id));
        save_canonical(&doc, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Loads every `*.json` in `dir` (sorted by file name), or a single file.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    if path.is_file() {
        return Ok(vec![load_canonical(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(|p| load_canonical(p)).collect()
}
