//! Seeded synthetic corpora: key-value forms with labeled regions, and pages
//! whose class is fixed by their region layout. Every document carries a
//! rendered raster so the visual pathway sees per-category texture.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::docmodel::{BoundingBox, Document, Raster, Region, Word, DEFAULT_ROW_HEIGHT};
use crate::error::{Error, Result};
use crate::pretraining::derive_seed;

use super::rvlcdip::RVLCDIP_CLASSES;

pub const HEADER: &str = "header";
pub const QUESTION: &str = "question";
pub const ANSWER: &str = "answer";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelScheme {
    KeyValueForm,
    PageClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageGrid {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordRange {
    pub min: usize,
    pub max: usize,
}

/// Token pools per category. Numbers are drawn in place of a pool token with
/// the category's digit probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticVocab {
    pub header: Vec<String>,
    pub question: Vec<String>,
    pub answer: Vec<String>,
    pub body: Vec<String>,
    pub header_digit_prob: f64,
    pub question_digit_prob: f64,
    pub answer_digit_prob: f64,
    pub body_digit_prob: f64,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

impl Default for SyntheticVocab {
    fn default() -> Self {
        Self {
            header: words(
                "invoice statement application report summary registration order receipt \
                 declaration certificate request notice schedule inventory contract",
            ),
            question: words(
                "name date address phone fax company title department account number total \
                 amount signature city state zip email reference code item quantity price \
                 subject attention period division manager client",
            ),
            answer: words(
                "smith jones approved pending yes no none n/a see attached enclosed various \
                 standard regular express blue north south east west",
            ),
            body: words(
                "the of and to in for is on that by this with from are be as at have it \
                 product market research results program brand test study data sales",
            ),
            header_digit_prob: 0.0,
            question_digit_prob: 0.05,
            answer_digit_prob: 0.7,
            body_digit_prob: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusSpec {
    pub n_docs: usize,
    pub page_grid: PageGrid,
    pub words_per_region: WordRange,
    pub vocab: SyntheticVocab,
    pub label_scheme: LabelScheme,
    pub seed: u64,
    /// Page classes used by `PAGE_CLASS` (at most 16).
    pub n_classes: usize,
    pub page_width: u32,
    pub page_height: u32,
    /// Probability that a key-value row is present.
    pub row_prob: f64,
    /// Probability that a key-value row puts the answer on the left.
    pub swap_prob: f64,
    pub id_prefix: String,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_docs: 100,
            page_grid: PageGrid { rows: 8, cols: 2 },
            words_per_region: WordRange { min: 1, max: 4 },
            vocab: SyntheticVocab::default(),
            label_scheme: LabelScheme::KeyValueForm,
            seed: 0,
            n_classes: 4,
            page_width: 256,
            page_height: 320,
            row_prob: 0.85,
            swap_prob: 0.0,
            id_prefix: "syn".into(),
        }
    }
}

const MARGIN: u32 = 8;
const PAD: u32 = 4;
const CHAR_W: u32 = 5;
const WORD_H: u32 = 8;
const WORD_GAP: u32 = 3;
const LINE_PITCH: u32 = 11;
const MAX_TOKEN_CHARS: u32 = 12;

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let PageGrid { rows, cols } = self.page_grid;
        let fail = |m: String| Err(Error::Synthetic(m));
        if rows == 0 || cols == 0 {
            return fail("page grid needs at least one row and column".into());
        }
        if self.words_per_region.min == 0 || self.words_per_region.min > self.words_per_region.max {
            return fail(format!("bad words_per_region {:?}", self.words_per_region));
        }
        match self.label_scheme {
            LabelScheme::KeyValueForm if rows < 2 || cols < 2 => {
                return fail(format!(
                    "a {rows}x{cols} grid is too small for a header and a key-value pair"
                ))
            }
            LabelScheme::PageClass if !(2..=RVLCDIP_CLASSES.len()).contains(&self.n_classes) => {
                return fail(format!("n_classes {} outside 2..=16", self.n_classes))
            }
            _ => {}
        }
        let (sw, sh) = self.slot_size();
        if sw < 2 * PAD + MAX_TOKEN_CHARS * CHAR_W || sh < 2 * PAD + WORD_H {
            return fail(format!(
                "a {rows}x{cols} grid on a {}x{} page leaves {sw}x{sh}px slots, too small for one word",
                self.page_width, self.page_height
            ));
        }
        for p in [self.row_prob, self.swap_prob] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    fn slot_size(&self) -> (u32, u32) {
        let w = self.page_width.saturating_sub(2 * MARGIN) / self.page_grid.cols as u32;
        let h = self.page_height.saturating_sub(2 * MARGIN) / self.page_grid.rows as u32;
        (w, h)
    }

    fn slot_origin(&self, r: usize, c: usize) -> (u32, u32) {
        let (sw, sh) = self.slot_size();
        (MARGIN + c as u32 * sw, MARGIN + r as u32 * sh)
    }
}

struct Pool<'a> {
    tokens: &'a [String],
    digit_prob: f64,
}

impl Pool<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> String {
        if self.tokens.is_empty() || rng.gen_bool(self.digit_prob) {
            format!("{}", rng.gen_range(0..1000))
        } else {
            self.tokens.choose(rng).expect("non-empty").clone()
        }
    }
}

/// Pixel texture of a region's background by category.
#[derive(Clone, Copy)]
enum Texture {
    Solid(u8),
    HStripes { bg: u8, line: u8 },
    Outline { bg: u8, line: u8 },
    Checker { a: u8, b: u8, cell: u32 },
}

fn texture_for(label: &str) -> Texture {
    match label {
        HEADER => Texture::Solid(110),
        QUESTION => Texture::HStripes { bg: 215, line: 150 },
        ANSWER => Texture::Outline { bg: 250, line: 70 },
        _ => Texture::Checker { a: 235, b: 190, cell: 4 },
    }
}

fn paint(raster: &mut Raster, px: [u32; 4], tex: Texture) {
    let [x0, y0, x1, y1] = px;
    for y in y0..y1.min(raster.height) {
        for x in x0..x1.min(raster.width) {
            let v = match tex {
                Texture::Solid(v) => v,
                Texture::HStripes { bg, line } => {
                    if (y - y0) % 4 == 3 {
                        line
                    } else {
                        bg
                    }
                }
                Texture::Outline { bg, line } => {
                    if x < x0 + 2 || x + 2 >= x1 || y < y0 + 2 || y + 2 >= y1 {
                        line
                    } else {
                        bg
                    }
                }
                Texture::Checker { a, b, cell } => {
                    if ((x - x0) / cell + (y - y0) / cell) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
            };
            raster.set(x, y, v);
        }
    }
}

struct Builder<'a> {
    spec: &'a SyntheticCorpusSpec,
    raster: Raster,
    regions: Vec<Region>,
}

impl Builder<'_> {
    /// Lays tokens out in lines inside the pixel rectangle, renders the
    /// background and word bars, and records the region.
    fn region(
        &mut self,
        rect: [u32; 4],
        tokens: Vec<String>,
        label: Option<&str>,
        texture: Texture,
    ) -> Result<()> {
        let [rx0, ry0, rx1, ry1] = rect;
        let (mut x, mut y) = (rx0 + PAD, ry0 + PAD);
        let mut placed = Vec::new();
        for t in tokens {
            let w = t.chars().count().min(MAX_TOKEN_CHARS as usize) as u32 * CHAR_W;
            if x + w > rx1 - PAD && x > rx0 + PAD {
                x = rx0 + PAD;
                y += LINE_PITCH;
            }
            if y + WORD_H > ry1 - PAD {
                break;
            }
            placed.push((t, [x, y, x + w, y + WORD_H]));
            x += w + WORD_GAP;
        }
        let (pw, ph) = (self.spec.page_width, self.spec.page_height);
        let ex = |v: &[u32; 4]| {
            [
                v[0].saturating_sub(2),
                v[1].saturating_sub(2),
                (v[2] + 2).min(pw),
                (v[3] + 2).min(ph),
            ]
        };
        let px_words: Vec<[u32; 4]> = placed.iter().map(|(_, b)| *b).collect();
        let outer = [
            px_words.iter().map(|b| b[0]).min().expect("one word fits"),
            px_words.iter().map(|b| b[1]).min().expect("one word fits"),
            px_words.iter().map(|b| b[2]).max().expect("one word fits"),
            px_words.iter().map(|b| b[3]).max().expect("one word fits"),
        ];
        paint(&mut self.raster, ex(&outer), texture);
        let mut words = Vec::with_capacity(placed.len());
        for (t, b) in placed {
            paint(&mut self.raster, b, Texture::Solid(25));
            words.push(Word::new(t, BoundingBox::from_pixels(b.map(|v| v as f64), pw, ph)?));
        }
        self.regions
            .push(Region::from_words(words, label.map(String::from))?);
        Ok(())
    }
}

fn n_words(spec: &SyntheticCorpusSpec, rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(spec.words_per_region.min..=spec.words_per_region.max)
}

fn key_value_doc(spec: &SyntheticCorpusSpec, b: &mut Builder, rng: &mut ChaCha8Rng) -> Result<()> {
    let v = &spec.vocab;
    let pool = |label: &str| match label {
        HEADER => Pool { tokens: &v.header, digit_prob: v.header_digit_prob },
        QUESTION => Pool { tokens: &v.question, digit_prob: v.question_digit_prob },
        _ => Pool { tokens: &v.answer, digit_prob: v.answer_digit_prob },
    };
    let (sw, sh) = spec.slot_size();
    let PageGrid { rows, cols } = spec.page_grid;
    // The header spans the first row.
    let (hx, hy) = spec.slot_origin(0, 0);
    let p = pool(HEADER);
    let tokens = (0..n_words(spec, rng)).map(|_| p.draw(rng)).collect();
    b.region([hx, hy, hx + sw * cols as u32, hy + sh], tokens, Some(HEADER), texture_for(HEADER))?;
    let mut any_pair = false;
    for r in 1..rows {
        for pair in 0..cols / 2 {
            let last = r + 1 == rows && pair + 1 == cols / 2;
            if !rng.gen_bool(spec.row_prob) && !(last && !any_pair) {
                continue;
            }
            any_pair = true;
            let swap = rng.gen_bool(spec.swap_prob);
            for (k, label) in [QUESTION, ANSWER].into_iter().enumerate() {
                let c = 2 * pair + if swap { 1 - k } else { k };
                let (x, y) = spec.slot_origin(r, c);
                let p = pool(label);
                let tokens = (0..n_words(spec, rng)).map(|_| p.draw(rng)).collect();
                b.region([x, y, x + sw, y + sh], tokens, Some(label), texture_for(label))?;
            }
        }
    }
    Ok(())
}

/// Whether slot `(r, c)` belongs to the layout of `class`. The four base
/// layouts put their content in different parts of the page.
fn class_slot(class: usize, r: usize, c: usize, rows: usize, cols: usize) -> bool {
    match class % 4 {
        0 => c == 0,
        1 => r < rows / 2,
        2 => r >= rows / 2,
        _ => c == cols - 1,
    }
}

fn page_class_doc(
    spec: &SyntheticCorpusSpec,
    b: &mut Builder,
    rng: &mut ChaCha8Rng,
    class: usize,
) -> Result<()> {
    let v = &spec.vocab;
    let pool = Pool { tokens: &v.body, digit_prob: v.body_digit_prob };
    let (sw, sh) = spec.slot_size();
    let PageGrid { rows, cols } = spec.page_grid;
    // Classes beyond the four base patterns differ by their texture shade.
    let shade = 235 - 12 * (class / 4) as u8;
    let mut slots = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if class_slot(class, r, c, rows, cols) {
                slots.push((r, c));
            }
        }
    }
    let keep: Vec<_> = slots.iter().copied().filter(|_| rng.gen_bool(0.9)).collect();
    let keep = if keep.is_empty() { vec![slots[0]] } else { keep };
    for (r, c) in keep {
        let (x, y) = spec.slot_origin(r, c);
        let tokens = (0..n_words(spec, rng)).map(|_| pool.draw(rng)).collect();
        let tex = Texture::Checker { a: shade, b: shade - 40, cell: 4 };
        b.region([x, y, x + sw, y + sh], tokens, None, tex)?;
    }
    Ok(())
}

/// Document `index` of the corpus; depends only on `(spec, index)`.
pub fn generate_document(spec: &SyntheticCorpusSpec, index: usize) -> Result<Document> {
    let id = format!("{}-{index:05}", spec.id_prefix);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64, "synthetic"));
    let mut b = Builder {
        spec,
        raster: Raster::filled(spec.page_width, spec.page_height, 255),
        regions: Vec::new(),
    };
    let page_label = match spec.label_scheme {
        LabelScheme::KeyValueForm => {
            key_value_doc(spec, &mut b, &mut rng)?;
            None
        }
        LabelScheme::PageClass => {
            let class = rng.gen_range(0..spec.n_classes);
            page_class_doc(spec, &mut b, &mut rng, class)?;
            Some(RVLCDIP_CLASSES[class].to_string())
        }
    };
    let mut doc = Document::new(id, spec.page_width, spec.page_height, b.regions, DEFAULT_ROW_HEIGHT)?
        .with_image(b.raster);
    doc.page_label = page_label;
    Ok(doc)
}

pub fn generate_synthetic(spec: &SyntheticCorpusSpec) -> Result<Vec<Document>> {
    spec.validate()?;
    (0..spec.n_docs).map(|i| generate_document(spec, i)).collect()
}

/// A page of stacked paragraphs in reading order, with the paragraph each
/// word was generated in. Lines sit closer than the default vertical gap
/// threshold and paragraphs further apart.
pub fn generate_paragraph_page(seed: u64, n_paragraphs: usize) -> (Vec<Word>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = SyntheticVocab::default().body;
    let (word_h, pitch, para_gap, gap) = (0.008, 0.011, 0.04, 0.006);
    let mut y = 0.05;
    let mut words = Vec::new();
    let mut truth = Vec::new();
    for p in 0..n_paragraphs {
        for _ in 0..rng.gen_range(2..=4) {
            let mut x = 0.1;
            for _ in 0..rng.gen_range(3..=8) {
                let t = vocab.choose(&mut rng).expect("non-empty").clone();
                let w = 0.012 * t.len() as f64;
                words.push(Word::new(t, BoundingBox { x0: x, y0: y, x1: x + w, y1: y + word_h }));
                truth.push(p);
                x += w + gap;
            }
            y += pitch;
        }
        y += para_gap;
    }
    (words, truth)
}
