//! Multi-granular attention with hierarchy and relative-offset biases, plain
//! self-attention, cross-modal attention, and the fused feature.
//!
//! All three attention flavours share one transformer block: multi-head scaled
//! dot-product attention, output projection, residual + layer norm, then a GELU
//! feed-forward sublayer with its own residual + layer norm. They differ only in
//! where keys/values come from and whether the bias tables are added to the
//! logits.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::config::AttentionConfig;
use crate::docmodel::{contains, BoundingBox, GranularUnit, Granularity};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// 1 iff `alpha` lies inside `beta`.
pub fn hier_relation(alpha: &GranularUnit, beta: &GranularUnit, eps: f64) -> usize {
    usize::from(contains(&beta.bbox, &alpha.bbox, eps))
}

/// Signed, log-scaled bucket of a center offset in `[-1, 1]`.
///
/// Returns an index into a table of `2·side + 1` rows whose middle row is the
/// zero offset. Offsets below `linear_max` in magnitude fall into `side / 2`
/// equal-width buckets per side; larger offsets are bucketed logarithmically
/// up to the outermost row, where everything beyond is clamped.
pub fn rel_bucket(delta: f64, side: usize, linear_max: f64) -> usize {
    let n_exact = (side / 2).max(1);
    let unit = linear_max / n_exact as f64;
    let r = delta.abs() / unit;
    let magnitude = if r < n_exact as f64 {
        r as usize
    } else {
        let max_r = 1.0 / unit;
        let frac = (r / n_exact as f64).ln() / (max_r / n_exact as f64).ln();
        let b = n_exact + (frac * (side - n_exact) as f64).floor() as usize;
        b.min(side)
    };
    if delta < 0.0 {
        side - magnitude
    } else {
        side + magnitude
    }
}

/// Per-pair bias table indices for one unit sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasIndex {
    pub hier: Arc<Array2<usize>>,
    pub rel_x: Arc<Array2<usize>>,
    pub rel_y: Arc<Array2<usize>>,
}

impl BiasIndex {
    pub fn from_boxes(boxes: &[BoundingBox], cfg: &AttentionConfig) -> Self {
        let n = boxes.len();
        let centers: Vec<_> = boxes.iter().map(BoundingBox::center).collect();
        let bucket = |d: f64| rel_bucket(d, cfg.rel_buckets, cfg.rel_linear_max);
        Self {
            hier: Arc::new(Array2::from_shape_fn((n, n), |(i, j)| {
                usize::from(contains(&boxes[j], &boxes[i], cfg.containment_eps))
            })),
            rel_x: Arc::new(Array2::from_shape_fn((n, n), |(i, j)| {
                bucket(centers[i].0 - centers[j].0)
            })),
            rel_y: Arc::new(Array2::from_shape_fn((n, n), |(i, j)| {
                bucket(centers[i].1 - centers[j].1)
            })),
        }
    }

    pub fn from_units(units: &[GranularUnit], cfg: &AttentionConfig) -> Self {
        let boxes: Vec<_> = units.iter().map(|u| u.bbox).collect();
        Self::from_boxes(&boxes, cfg)
    }
}

/// Registers the weights of one attention block under `prefix`.
pub fn init_block<R: Rng>(
    params: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    d_model: usize,
    cfg: &AttentionConfig,
    with_bias_tables: bool,
) {
    let hidden = cfg.ffn_mult * d_model;
    for m in ["wq", "wk", "wv", "wo"] {
        params.init_uniform(rng, format!("{prefix}.{m}"), (d_model, d_model), d_model);
    }
    for b in ["bq", "bk", "bv", "bo"] {
        params.init_uniform(rng, format!("{prefix}.{b}"), (1, d_model), d_model);
    }
    for ln in ["ln1", "ln2"] {
        params.init_const(format!("{prefix}.{ln}.g"), (1, d_model), 1.0);
        params.init_const(format!("{prefix}.{ln}.b"), (1, d_model), 0.0);
    }
    params.init_uniform(rng, format!("{prefix}.ff.w1"), (d_model, hidden), d_model);
    params.init_uniform(rng, format!("{prefix}.ff.b1"), (1, hidden), d_model);
    params.init_uniform(rng, format!("{prefix}.ff.w2"), (hidden, d_model), hidden);
    params.init_uniform(rng, format!("{prefix}.ff.b2"), (1, d_model), hidden);
    if with_bias_tables {
        let h = cfg.n_heads;
        params.init_const(format!("{prefix}.hier_bias"), (2, h), 0.0);
        params.init_const(format!("{prefix}.rel_x"), (cfg.n_rel_buckets(), h), 0.0);
        params.init_const(format!("{prefix}.rel_y"), (cfg.n_rel_buckets(), h), 0.0);
    }
}

/// Tape handles produced by one block.
pub(crate) struct BlockOut {
    pub out: Var,
    pub logits: Vec<Var>,
    pub probs: Vec<Var>,
}

fn linear(tape: &mut Tape, params: &ParamStore, x: Var, w: &str, b: &str) -> Var {
    let w = tape.param(params, w);
    let b = tape.param(params, b);
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

/// One attention block. Queries come from `query`, keys and values from `kv`;
/// with `bias` the hierarchy and offset tables of `prefix` are added to every
/// head's logits.
pub(crate) fn attention_block(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    query: Var,
    kv: Var,
    bias: Option<&BiasIndex>,
    n_heads: usize,
) -> BlockOut {
    let d = tape.value(query).ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = linear(tape, params, query, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
    let k = linear(tape, params, kv, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
    let v = linear(tape, params, kv, &format!("{prefix}.wv"), &format!("{prefix}.bv"));

    let tables = bias.map(|_| {
        (
            tape.param(params, &format!("{prefix}.hier_bias")),
            tape.param(params, &format!("{prefix}.rel_x")),
            tape.param(params, &format!("{prefix}.rel_y")),
        )
    });

    let mut heads = Vec::with_capacity(n_heads);
    let mut all_logits = Vec::with_capacity(n_heads);
    let mut all_probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let raw = tape.matmul_t(qh, kh);
        let mut logits = tape.scale(raw, scale);
        if let (Some(idx), Some((hier, rx, ry))) = (bias, tables) {
            let bh = tape.bias_lookup(hier, idx.hier.clone(), h);
            let bx = tape.bias_lookup(rx, idx.rel_x.clone(), h);
            let by = tape.bias_lookup(ry, idx.rel_y.clone(), h);
            logits = tape.add(logits, bh);
            logits = tape.add(logits, bx);
            logits = tape.add(logits, by);
        }
        let p = tape.softmax_rows(logits);
        heads.push(tape.matmul(p, vh));
        all_logits.push(logits);
        all_probs.push(p);
    }
    let cat = if n_heads == 1 { heads[0] } else { tape.concat_cols(&heads) };
    let attn = linear(tape, params, cat, &format!("{prefix}.wo"), &format!("{prefix}.bo"));

    let res = tape.add(query, attn);
    let g1 = tape.param(params, &format!("{prefix}.ln1.g"));
    let b1 = tape.param(params, &format!("{prefix}.ln1.b"));
    let x = tape.layer_norm(res, g1, b1);

    let hidden = linear(tape, params, x, &format!("{prefix}.ff.w1"), &format!("{prefix}.ff.b1"));
    let hidden = tape.gelu(hidden);
    let ff = linear(tape, params, hidden, &format!("{prefix}.ff.w2"), &format!("{prefix}.ff.b2"));
    let res2 = tape.add(x, ff);
    let g2 = tape.param(params, &format!("{prefix}.ln2.g"));
    let b2 = tape.param(params, &format!("{prefix}.ln2.b"));
    let out = tape.layer_norm(res2, g2, b2);

    BlockOut {
        out,
        logits: all_logits,
        probs: all_probs,
    }
}

/// Output of a single attention layer evaluated outside a training graph.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub output: Array2<f64>,
    /// Per-head pre-softmax logits (queries × keys).
    pub logits: Vec<Array2<f64>>,
    /// Per-head attention probabilities.
    pub probs: Vec<Array2<f64>>,
}

fn check_width(params: &ParamStore, prefix: &str, emb: &Array2<f64>) -> Result<()> {
    let w = params
        .get(&format!("{prefix}.wq"))
        .ok_or_else(|| Error::Dimension(format!("no attention block at `{prefix}`")))?;
    if w.nrows() != emb.ncols() {
        return Err(Error::Dimension(format!(
            "embedding width {} but block `{prefix}` expects {}",
            emb.ncols(),
            w.nrows()
        )));
    }
    Ok(())
}

fn run_layer(
    params: &ParamStore,
    prefix: &str,
    query: &Array2<f64>,
    kv: &Array2<f64>,
    bias: Option<&BiasIndex>,
    n_heads: usize,
) -> Result<LayerOutput> {
    check_width(params, prefix, query)?;
    check_width(params, prefix, kv)?;
    if query.ncols() % n_heads != 0 {
        return Err(Error::Dimension(format!(
            "width {} not divisible by {n_heads} heads",
            query.ncols()
        )));
    }
    let mut tape = Tape::new();
    let q = tape.constant(query.clone());
    let kv = tape.constant(kv.clone());
    let b = attention_block(&mut tape, params, prefix, q, kv, bias, n_heads);
    Ok(LayerOutput {
        output: tape.value(b.out).clone(),
        logits: b.logits.iter().map(|&v| tape.value(v).clone()).collect(),
        probs: b.probs.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

/// Multi-granular self-attention over one modality's embeddings.
pub fn mg_attention_layer(
    emb: &Array2<f64>,
    units: &[GranularUnit],
    params: &ParamStore,
    prefix: &str,
    cfg: &AttentionConfig,
) -> Result<LayerOutput> {
    if emb.nrows() != units.len() {
        return Err(Error::Dimension(format!(
            "{} embedding rows for {} units",
            emb.nrows(),
            units.len()
        )));
    }
    let index = BiasIndex::from_units(units, cfg);
    run_layer(params, prefix, emb, emb, Some(&index), cfg.n_heads)
}

/// Plain multi-head self-attention block.
pub fn self_attention_layer(
    emb: &Array2<f64>,
    params: &ParamStore,
    prefix: &str,
    n_heads: usize,
) -> Result<LayerOutput> {
    run_layer(params, prefix, emb, emb, None, n_heads)
}

/// One cross-attention block: queries from `query`, keys/values from `kv`.
pub fn cross_attention(
    query: &Array2<f64>,
    kv: &Array2<f64>,
    params: &ParamStore,
    prefix: &str,
    n_heads: usize,
) -> Result<LayerOutput> {
    if query.nrows() != kv.nrows() {
        return Err(Error::Dimension(format!(
            "query has {} rows, key/value stream has {}",
            query.nrows(),
            kv.nrows()
        )));
    }
    run_layer(params, prefix, query, kv, None, n_heads)
}

/// Per-modality streams after the single-modality stacks and the cross stack.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedStreams {
    /// Text queries attending vision.
    pub f_tv: Array2<f64>,
    /// Vision queries attending text.
    pub f_vt: Array2<f64>,
    /// `f_tv + f_vt`.
    pub f: Array2<f64>,
}

/// Region × word matrix of fused-feature dot products, both axes in
/// serialized order.
pub fn region_word_heatmap(f: &Array2<f64>, units: &[GranularUnit]) -> Array2<f64> {
    let regions: Vec<usize> = rows_of(units, Granularity::Region);
    let words: Vec<usize> = rows_of(units, Granularity::Word);
    Array2::from_shape_fn((regions.len(), words.len()), |(j, i)| {
        f.row(regions[j]).dot(&f.row(words[i]))
    })
}

pub(crate) fn rows_of(units: &[GranularUnit], g: Granularity) -> Vec<usize> {
    units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.granularity == g)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::docmodel::UnitSource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AttentionConfig {
        ModelConfig::desk().attention
    }

    fn unit(g: Granularity, i: usize, b: [f64; 4]) -> GranularUnit {
        GranularUnit {
            granularity: g,
            unit_index: i,
            source: UnitSource::Page,
            text: String::new(),
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    #[test]
    fn hier_relation_examples() {
        let page = unit(Granularity::Page, 0, [0.0, 0.0, 1.0, 1.0]);
        let ra = unit(Granularity::Region, 1, [0.1, 0.1, 0.4, 0.2]);
        let rb = unit(Granularity::Region, 2, [0.5, 0.5, 0.9, 0.6]);
        let w = unit(Granularity::Word, 3, [0.1, 0.1, 0.2, 0.2]);
        assert_eq!(hier_relation(&w, &ra, 1e-6), 1);
        assert_eq!(hier_relation(&ra, &w, 1e-6), 0);
        for u in [&page, &ra, &rb, &w] {
            assert_eq!(hier_relation(u, &page, 1e-6), 1);
        }
        assert_eq!(hier_relation(&ra, &rb, 1e-6), 0);
    }

    #[test]
    fn rel_bucket_center_mirror_and_range() {
        let c = cfg();
        let b = |d| rel_bucket(d, c.rel_buckets, c.rel_linear_max);
        assert_eq!(b(0.0), 8);
        assert_eq!(b(0.3) - 8, 8 - b(-0.3));
        assert_eq!(b(1.0), 16);
        assert_eq!(b(-1.0), 0);
        assert_eq!(b(5.0), 16);
        // linear zone
        assert_eq!(b(0.0124), 8);
        assert_eq!(b(0.013), 9);
        assert_eq!(b(0.049), 11);
        assert_eq!(b(0.05), 12);
    }

    #[test]
    fn rel_bucket_is_monotone() {
        let c = cfg();
        let mut prev = rel_bucket(0.0, c.rel_buckets, c.rel_linear_max);
        for k in 1..=1000 {
            let d = k as f64 / 1000.0;
            let cur = rel_bucket(d, c.rel_buckets, c.rel_linear_max);
            assert!(cur >= prev, "bucket dropped at {d}");
            let neg = rel_bucket(-d, c.rel_buckets, c.rel_linear_max);
            assert_eq!(cur + neg, 2 * c.rel_buckets);
            prev = cur;
        }
    }

    #[test]
    fn translation_leaves_buckets_unchanged() {
        let c = cfg();
        let boxes: Vec<_> = [[0.1, 0.1, 0.3, 0.2], [0.2, 0.25, 0.4, 0.3], [0.05, 0.5, 0.1, 0.55]]
            .iter()
            .map(|b| BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap())
            .collect();
        // Offsets that are exact in binary keep center differences bit-identical.
        let moved: Vec<_> = boxes
            .iter()
            .map(|b| BoundingBox::new(b.x0 + 0.25, b.y0 + 0.125, b.x1 + 0.25, b.y1 + 0.125).unwrap())
            .collect();
        let a = BiasIndex::from_boxes(&boxes, &c);
        let b = BiasIndex::from_boxes(&moved, &c);
        assert_eq!(a.rel_x, b.rel_x);
        assert_eq!(a.rel_y, b.rel_y);
    }

    #[test]
    fn dimension_errors() {
        let c = cfg();
        let mut p = ParamStore::new();
        init_block(&mut p, &mut ChaCha8Rng::seed_from_u64(0), "blk", 8, &c, true);
        let emb = Array2::zeros((2, 8));
        let units = vec![unit(Granularity::Page, 0, [0.0, 0.0, 1.0, 1.0])];
        assert!(mg_attention_layer(&emb, &units, &p, "blk", &c).is_err());
        assert!(self_attention_layer(&Array2::zeros((2, 6)), &p, "blk", 4).is_err());
        assert!(cross_attention(&emb, &Array2::zeros((3, 8)), &p, "blk", 4).is_err());
    }

    #[test]
    fn single_row_self_attention_has_unit_probability() {
        let c = cfg();
        let mut p = ParamStore::new();
        init_block(&mut p, &mut ChaCha8Rng::seed_from_u64(1), "blk", 8, &c, false);
        let emb = Array2::from_shape_fn((1, 8), |(_, j)| j as f64 * 0.1);
        let a = self_attention_layer(&emb, &p, "blk", 4).unwrap();
        let b = self_attention_layer(&emb, &p, "blk", 4).unwrap();
        assert_eq!(a.output, b.output);
        for probs in &a.probs {
            assert_eq!(probs[[0, 0]], 1.0);
        }
    }

    #[test]
    fn heatmap_of_orthonormal_features() {
        let mk = |g, i| unit(g, i, [0.0, 0.0, 1.0, 1.0]);
        let units = vec![
            mk(Granularity::Page, 0),
            mk(Granularity::Region, 1),
            mk(Granularity::Region, 2),
            mk(Granularity::Word, 3),
            mk(Granularity::Word, 4),
            mk(Granularity::Word, 5),
        ];
        let e = |k: usize| (0..4).map(move |j| if j == k { 1.0 } else { 0.0 });
        let rows = [e(0), e(1), e(2), e(1), e(1), e(2)];
        let mut f = Array2::zeros((6, 4));
        for (r, vals) in rows.into_iter().enumerate() {
            for (c, v) in vals.enumerate() {
                f[[r, c]] = v;
            }
        }
        let h = region_word_heatmap(&f, &units);
        assert_eq!(h.dim(), (2, 3));
        let expected = [[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for j in 0..2 {
            for i in 0..3 {
                assert_eq!(h[[j, i]], expected[j][i]);
            }
        }
    }
}
