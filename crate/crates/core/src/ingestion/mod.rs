//! Dataset loaders, OCR structuring, the canonical document format and the
//! synthetic corpus generator.

pub mod canonical;
pub mod cord;
pub mod funsd;
pub mod grouping;
pub mod ocr;
pub mod rvlcdip;
pub mod synthetic;

pub use canonical::{
    load_canonical, load_corpus, load_raster, parse_canonical, save_canonical, save_corpus,
    save_raster, to_canonical_string, CanonicalDocJson, DOC_FORMAT,
};
pub use cord::{load_cord, parse_cord};
pub use funsd::{load_funsd, load_funsd_split, parse_funsd, FunsdStats};
pub use grouping::{group_words_into_regions, DEFAULT_GAP_X, DEFAULT_GAP_Y};
pub use ocr::{load_ocr, parse_ocr, GroupingGaps, OcrExport, OcrMode, OCR_FORMAT};
pub use rvlcdip::{load_rvlcdip, parse_label_index, RVLCDIP_CLASSES};
pub use synthetic::{
    generate_document, generate_paragraph_page, generate_synthetic, LabelScheme, PageGrid,
    SyntheticCorpusSpec, SyntheticVocab, WordRange,
};
