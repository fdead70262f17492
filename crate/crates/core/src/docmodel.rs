//! Hierarchical document model: a page holds regions, regions hold words.
//!
//! Boxes are normalized to page fractions on construction so every geometric
//! predicate downstream is independent of page size.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default containment tolerance for [`contains`].
pub const DEFAULT_EPS: f64 = 1e-6;
/// Default row-band height used by [`reading_order_key`].
pub const DEFAULT_ROW_HEIGHT: f64 = 0.02;

/// Axis-aligned box in normalized page coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    /// The whole page.
    pub const PAGE: BoundingBox = BoundingBox {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BoundingBox { x0, y0, x1, y1 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox([x0, y0, x1, y1]))
        }
    }

    /// Normalizes a pixel box by the page size.
    pub fn from_pixels(px: [f64; 4], width: u32, height: u32) -> Result<Self> {
        let (w, h) = (width as f64, height as f64);
        Self::new(px[0] / w, px[1] / h, px[2] / w, px[3] / h)
    }

    /// Back to pixel units, rounded to the nearest integer.
    pub fn to_pixels(&self, width: u32, height: u32) -> [i64; 4] {
        let (w, h) = (width as f64, height as f64);
        [
            (self.x0 * w).round() as i64,
            (self.y0 * h).round() as i64,
            (self.x1 * w).round() as i64,
            (self.y1 * h).round() as i64,
        ]
    }

    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        in_unit(self.x0)
            && in_unit(self.y0)
            && in_unit(self.x1)
            && in_unit(self.y1)
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Smallest box containing every input box.
pub fn enclosing_box(boxes: &[BoundingBox]) -> Result<BoundingBox> {
    let first = boxes.first().ok_or(Error::NoBoxes)?;
    Ok(boxes.iter().skip(1).fold(*first, |acc, b| BoundingBox {
        x0: acc.x0.min(b.x0),
        y0: acc.y0.min(b.y0),
        x1: acc.x1.max(b.x1),
        y1: acc.y1.max(b.y1),
    }))
}

/// `inner ⊆ outer`, with every edge allowed to overshoot by `eps`.
pub fn contains(outer: &BoundingBox, inner: &BoundingBox, eps: f64) -> bool {
    outer.x0 - eps <= inner.x0
        && inner.x1 <= outer.x1 + eps
        && outer.y0 - eps <= inner.y0
        && inner.y1 <= outer.y1 + eps
}

/// Sort key for reading order: row band of the vertical center, then `x0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReadingOrderKey {
    pub band: i64,
    pub x0: f64,
}

impl Eq for ReadingOrderKey {}

impl PartialOrd for ReadingOrderKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ReadingOrderKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.band
            .cmp(&other.band)
            .then_with(|| self.x0.total_cmp(&other.x0))
    }
}

pub fn reading_order_key(b: &BoundingBox, row_height: f64) -> ReadingOrderKey {
    let (_, cy) = b.center();
    ReadingOrderKey {
        band: (cy / row_height).floor() as i64,
        x0: b.x0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub bbox: BoundingBox,
    /// Ordinal in document reading order (assigned by [`Document::new`]).
    pub index: usize,
}

impl Word {
    pub fn new(text: impl Into<String>, bbox: BoundingBox) -> Self {
        Self {
            text: text.into(),
            bbox,
            index: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub bbox: BoundingBox,
    pub words: Vec<Word>,
    pub label: Option<String>,
    /// Text supplied by an upstream OCR paragraph; wins over joined word text.
    pub text: Option<String>,
}

impl Region {
    /// Region whose box is the exact enclosure of `words`.
    pub fn from_words(words: Vec<Word>, label: Option<String>) -> Result<Self> {
        let boxes: Vec<_> = words.iter().map(|w| w.bbox).collect();
        Ok(Self {
            id: 0,
            bbox: enclosing_box(&boxes)?,
            words,
            label,
            text: None,
        })
    }

    /// Supplied text if present, else the space-joined word texts.
    pub fn text(&self) -> String {
        match &self.text {
            Some(t) => t.clone(),
            None => join_words(self.words.iter()),
        }
    }
}

fn join_words<'a>(words: impl Iterator<Item = &'a Word>) -> String {
    words.map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// 8-bit grayscale page raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::Image(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    /// Area-averaged resample to `size × size`, scaled to [0, 1].
    pub fn resample(&self, size: usize) -> Vec<f64> {
        let mut out = vec![0.0; size * size];
        let (w, h) = (self.width as f64, self.height as f64);
        for oy in 0..size {
            let ys = ((oy as f64 * h / size as f64).floor() as u32).min(self.height - 1);
            let ye = (((oy + 1) as f64 * h / size as f64).ceil() as u32).clamp(ys + 1, self.height);
            for ox in 0..size {
                let xs = ((ox as f64 * w / size as f64).floor() as u32).min(self.width - 1);
                let xe =
                    (((ox + 1) as f64 * w / size as f64).ceil() as u32).clamp(xs + 1, self.width);
                let mut sum = 0.0;
                for y in ys..ye {
                    for x in xs..xe {
                        sum += self.get(x, y) as f64;
                    }
                }
                let n = ((ye - ys) * (xe - xs)) as f64;
                out[oy * size + ox] = sum / n / 255.0;
            }
        }
        out
    }
}

/// One page with its regions and words.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub image_path: Option<String>,
    pub image: Option<Raster>,
    pub regions: Vec<Region>,
    pub page_label: Option<String>,
}

impl Document {
    /// Validates the hierarchy, sorts regions and words into reading order and
    /// assigns region ids and word indices.
    pub fn new(
        id: impl Into<String>,
        width: u32,
        height: u32,
        regions: Vec<Region>,
        row_height: f64,
    ) -> Result<Self> {
        let mut doc = Self {
            id: id.into(),
            width,
            height,
            image_path: None,
            image: None,
            regions,
            page_label: None,
        };
        doc.sort_reading_order(row_height);
        doc.validate()?;
        Ok(doc)
    }

    pub fn with_image(mut self, image: Raster) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_page_label(mut self, label: impl Into<String>) -> Self {
        self.page_label = Some(label.into());
        self
    }

    /// Regions by the key of their box, words by their own key within each
    /// region. Word indices follow region order, so the words of one region
    /// are contiguous.
    pub fn sort_reading_order(&mut self, row_height: f64) {
        for r in &mut self.regions {
            r.words
                .sort_by_key(|w| reading_order_key(&w.bbox, row_height));
        }
        self.regions
            .sort_by_key(|r| reading_order_key(&r.bbox, row_height));
        self.reindex();
    }

    fn reindex(&mut self) {
        let mut next = 0;
        for (i, r) in self.regions.iter_mut().enumerate() {
            r.id = i;
            for w in &mut r.words {
                w.index = next;
                next += 1;
            }
        }
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_words(&self) -> usize {
        self.regions.iter().map(|r| r.words.len()).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &Word> {
        self.regions.iter().flat_map(|r| r.words.iter())
    }

    /// Space-joined text of every word in reading order.
    pub fn page_text(&self) -> String {
        join_words(self.words())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::doc(&self.id, "page size must be positive"));
        }
        if self.regions.is_empty() {
            return Err(Error::doc(&self.id, "document has no regions"));
        }
        if self.n_words() == 0 {
            return Err(Error::doc(&self.id, "document has no words"));
        }
        for r in &self.regions {
            if !r.bbox.is_valid() {
                return Err(Error::doc(
                    &self.id,
                    format!("region {} box {:?} is invalid", r.id, r.bbox),
                ));
            }
            for w in &r.words {
                if w.text.is_empty() {
                    return Err(Error::doc(&self.id, format!("empty word in region {}", r.id)));
                }
                if !w.bbox.is_valid() {
                    return Err(Error::doc(
                        &self.id,
                        format!("word `{}` box {:?} is invalid", w.text, w.bbox),
                    ));
                }
                if !contains(&r.bbox, &w.bbox, DEFAULT_EPS) {
                    return Err(Error::doc(
                        &self.id,
                        format!("word `{}` lies outside region {}", w.text, r.id),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Page,
    Region,
    Word,
}

/// Which granularities take part in the unit sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Granularities {
    pub page: bool,
    pub region: bool,
    pub word: bool,
}

impl Granularities {
    pub const ALL: Granularities = Granularities {
        page: true,
        region: true,
        word: true,
    };

    pub fn includes(&self, g: Granularity) -> bool {
        match g {
            Granularity::Page => self.page,
            Granularity::Region => self.region,
            Granularity::Word => self.word,
        }
    }

    /// Parses a comma list such as `page,region,word`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut g = Granularities {
            page: false,
            region: false,
            word: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "page" => g.page = true,
                "region" => g.region = true,
                "word" => g.word = true,
                other => return Err(Error::Config(format!("unknown granularity `{other}`"))),
            }
        }
        Ok(g)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.page {
            parts.push("page");
        }
        if self.region {
            parts.push("region");
        }
        if self.word {
            parts.push("word");
        }
        parts.join(",")
    }
}

impl Default for Granularities {
    fn default() -> Self {
        Self::ALL
    }
}

/// Where a unit came from inside its document.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitSource {
    Page,
    Region(usize),
    Word { region: usize, word: usize },
}

/// One attendable element of the serialized sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GranularUnit {
    pub granularity: Granularity,
    pub unit_index: usize,
    pub source: UnitSource,
    pub text: String,
    pub bbox: BoundingBox,
}

/// Page, then regions, then words, all in reading order.
pub fn serialize_units(doc: &Document) -> Result<Vec<GranularUnit>> {
    serialize_units_with(doc, Granularities::ALL)
}

/// [`serialize_units`] restricted to the selected granularities.
pub fn serialize_units_with(doc: &Document, keep: Granularities) -> Result<Vec<GranularUnit>> {
    if doc.regions.is_empty() || doc.n_words() == 0 {
        return Err(Error::doc(&doc.id, "cannot serialize an empty document"));
    }
    let mut units = Vec::with_capacity(1 + doc.n_regions() + doc.n_words());
    let mut push = |granularity, source, text, bbox| {
        let unit_index = units.len();
        units.push(GranularUnit {
            granularity,
            unit_index,
            source,
            text,
            bbox,
        });
    };
    if keep.page {
        push(
            Granularity::Page,
            UnitSource::Page,
            doc.page_text(),
            BoundingBox::PAGE,
        );
    }
    if keep.region {
        for (j, r) in doc.regions.iter().enumerate() {
            push(Granularity::Region, UnitSource::Region(j), r.text(), r.bbox);
        }
    }
    if keep.word {
        for (j, r) in doc.regions.iter().enumerate() {
            for (i, w) in r.words.iter().enumerate() {
                push(
                    Granularity::Word,
                    UnitSource::Word { region: j, word: i },
                    w.text.clone(),
                    w.bbox,
                );
            }
        }
    }
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand::seq::SliceRandom;
    use rand_chacha::ChaCha8Rng;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn two_region_doc() -> Document {
        let r1 = Region::from_words(
            vec![
                Word::new("a", bb(0.1, 0.1, 0.15, 0.12)),
                Word::new("b", bb(0.16, 0.1, 0.2, 0.12)),
                Word::new("c", bb(0.21, 0.1, 0.3, 0.12)),
            ],
            None,
        )
        .unwrap();
        let r2 = Region::from_words(
            vec![
                Word::new("d", bb(0.1, 0.5, 0.15, 0.52)),
                Word::new("e", bb(0.16, 0.5, 0.2, 0.52)),
                Word::new("f", bb(0.21, 0.5, 0.3, 0.52)),
            ],
            None,
        )
        .unwrap();
        Document::new("doc", 1000, 800, vec![r2, r1], DEFAULT_ROW_HEIGHT).unwrap()
    }

    #[test]
    fn enclosing_box_examples() {
        let a = bb(0.1, 0.1, 0.3, 0.2);
        assert_eq!(enclosing_box(&[a]).unwrap(), a);
        let b = bb(0.2, 0.15, 0.5, 0.4);
        assert_eq!(enclosing_box(&[a, b]).unwrap(), bb(0.1, 0.1, 0.5, 0.4));
        assert!(matches!(enclosing_box(&[]), Err(Error::NoBoxes)));
    }

    #[test]
    fn enclosing_box_contains_fifty_random_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let boxes: Vec<_> = (0..50)
            .map(|_| {
                let (x0, y0) = (rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9));
                bb(x0, y0, x0 + rng.gen_range(0.0..0.1), y0 + rng.gen_range(0.0..0.1))
            })
            .collect();
        let e = enclosing_box(&boxes).unwrap();
        for b in &boxes {
            assert!(contains(&e, b, 0.0));
        }
        // tight on every side
        assert!(boxes.iter().any(|b| b.x0 == e.x0));
        assert!(boxes.iter().any(|b| b.y1 == e.y1));
    }

    #[test]
    fn contains_examples() {
        assert!(contains(&BoundingBox::PAGE, &bb(0.2, 0.2, 0.4, 0.4), 1e-6));
        let r = bb(0.2, 0.2, 0.4, 0.4);
        assert!(contains(&r, &r, 1e-6));
        assert!(!contains(&r, &bb(0.1, 0.2, 0.3, 0.4), 1e-6));
        assert!(contains(&r, &bb(0.2 - 5e-7, 0.2, 0.4, 0.4), 1e-6));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(0.5, 0.0, 0.4, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.1, 1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn reading_order_rows_then_x() {
        let early = reading_order_key(&bb(0.9, 0.0, 0.95, 0.02), DEFAULT_ROW_HEIGHT);
        let late = reading_order_key(&bb(0.1, 0.04, 0.2, 0.06), DEFAULT_ROW_HEIGHT);
        assert!(early < late);
        let left = reading_order_key(&bb(0.1, 0.1, 0.2, 0.11), DEFAULT_ROW_HEIGHT);
        let right = reading_order_key(&bb(0.3, 0.1, 0.4, 0.11), DEFAULT_ROW_HEIGHT);
        assert!(left < right);
    }

    #[test]
    fn shuffled_three_line_page_restores_line_major_order() {
        let mut boxes = Vec::new();
        for line in 0..3 {
            for col in 0..5 {
                let y = 0.1 + 0.05 * line as f64;
                let x = 0.1 + 0.12 * col as f64;
                boxes.push(bb(x, y, x + 0.1, y + 0.015));
            }
        }
        let mut shuffled: Vec<usize> = (0..boxes.len()).collect();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        shuffled.sort_by_key(|&i| reading_order_key(&boxes[i], DEFAULT_ROW_HEIGHT));
        assert_eq!(shuffled, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn serialize_counts_and_texts() {
        let doc = two_region_doc();
        let units = serialize_units(&doc).unwrap();
        assert_eq!(units.len(), 9);
        assert_eq!(units[0].granularity, Granularity::Page);
        assert_eq!(units[0].bbox, BoundingBox::PAGE);
        assert_eq!(units[0].text, "a b c d e f");
        assert_eq!(units[1].text, "a b c");
        assert_eq!(units[2].text, "d e f");
        assert!(units[3..].iter().all(|u| u.granularity == Granularity::Word));
        for (k, u) in units.iter().enumerate() {
            assert_eq!(u.unit_index, k);
        }
    }

    #[test]
    fn word_units_map_back_to_parent_by_containment() {
        let doc = two_region_doc();
        let units = serialize_units(&doc).unwrap();
        // unit 7 is word `e`, in the second region
        let UnitSource::Word { region, .. } = units[7].source else {
            panic!("unit 7 is not a word")
        };
        assert_eq!(region, 1);
        let parent = &units[1 + region];
        assert!(contains(&parent.bbox, &units[7].bbox, DEFAULT_EPS));
        for u in &units[3..] {
            let UnitSource::Word { region, .. } = u.source else { unreachable!() };
            for (j, r) in doc.regions.iter().enumerate() {
                assert_eq!(contains(&r.bbox, &u.bbox, DEFAULT_EPS), j == region);
            }
        }
    }

    #[test]
    fn supplied_region_text_wins() {
        let mut doc = two_region_doc();
        doc.regions[0].text = Some("Alpha paragraph".into());
        let units = serialize_units(&doc).unwrap();
        assert_eq!(units[1].text, "Alpha paragraph");
        assert_eq!(units[0].text, "a b c d e f");
    }

    #[test]
    fn granularity_filter() {
        let doc = two_region_doc();
        let only_regions = Granularities {
            page: false,
            region: true,
            word: false,
        };
        let units = serialize_units_with(&doc, only_regions).unwrap();
        assert_eq!(units.len(), 2);
        assert!(units.iter().all(|u| u.granularity == Granularity::Region));
        assert_eq!(Granularities::parse("region, word").unwrap().label(), "region,word");
        assert!(Granularities::parse("pixel").is_err());
    }

    #[test]
    fn empty_documents_rejected() {
        assert!(Document::new("x", 10, 10, vec![], DEFAULT_ROW_HEIGHT).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b, c, d)| BoundingBox {
            x0: a.min(c),
            y0: b.min(d),
            x1: a.max(c),
            y1: b.max(d),
        })
    }

    proptest! {
        #[test]
        fn enclosing_is_idempotent(boxes in prop::collection::vec(arb_box(), 1..20)) {
            let e = enclosing_box(&boxes).unwrap();
            prop_assert_eq!(enclosing_box(&[e]).unwrap(), e);
        }

        #[test]
        fn contains_reflexive_transitive(a in arb_box(), b in arb_box(), c in arb_box()) {
            prop_assert!(contains(&a, &a, 0.0));
            if contains(&a, &b, 0.0) && contains(&b, &c, 0.0) {
                prop_assert!(contains(&a, &c, 0.0));
            }
            let outer = enclosing_box(&[a, b]).unwrap();
            let inner = enclosing_box(&[b]).unwrap();
            prop_assert!(contains(&outer, &inner, 0.0));
        }

        #[test]
        fn serialization_is_deterministic_and_nested(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut regions = Vec::new();
            for j in 0..rng.gen_range(1..5) {
                let y = 0.05 + 0.2 * j as f64;
                let words = (0..rng.gen_range(1..5))
                    .map(|i| {
                        let x = 0.05 + 0.15 * i as f64;
                        Word::new(format!("w{j}{i}"), bb(x, y, x + 0.1, y + 0.03))
                    })
                    .collect();
                regions.push(Region::from_words(words, None).unwrap());
            }
            regions.shuffle(&mut rng);
            let doc = Document::new("p", 100, 100, regions, DEFAULT_ROW_HEIGHT).unwrap();
            let a = serialize_units(&doc).unwrap();
            let b = serialize_units(&doc.clone()).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), 1 + doc.n_regions() + doc.n_words());
            for r in &doc.regions {
                prop_assert!(contains(&BoundingBox::PAGE, &r.bbox, DEFAULT_EPS));
                for w in &r.words {
                    prop_assert!(contains(&r.bbox, &w.bbox, DEFAULT_EPS));
                }
            }
        }
    }
}
