//! Naive loop-based reference implementations, written against the model's
//! definitions rather than its code, plus small fixture builders.
#![allow(dead_code)]

use mgdoc::config::AttentionConfig;
use mgdoc::docmodel::{
    BoundingBox, Document, GranularUnit, Granularity, Raster, Region, UnitSource, Word,
};
use mgdoc::params::ParamStore;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn from_mat(m: &Mat) -> Array2<f64> {
    let (r, c) = (m.len(), m[0].len());
    Array2::from_shape_fn((r, c), |(i, j)| m[i][j])
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn affine(x: &Mat, w: &Array2<f64>, b: &Array2<f64>) -> Mat {
    let mut y = mm(x, &to_mat(w));
    for row in &mut y {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b[[0, j]];
        }
    }
    y
}

fn layer_norm(x: &Mat, g: &Array2<f64>, b: &Array2<f64>) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * inv * g[[0, j]] + b[[0, j]])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn naive_contains(outer: &BoundingBox, inner: &BoundingBox, eps: f64) -> bool {
    outer.x0 - eps <= inner.x0
        && inner.x1 <= outer.x1 + eps
        && outer.y0 - eps <= inner.y0
        && inner.y1 <= outer.y1 + eps
}

/// Bucket of a signed offset: `side/2` linear buckets of width
/// `linear_max / (side/2)` per sign, then log-spaced buckets reaching the
/// outermost index at offset 1, clamped.
pub fn naive_bucket(delta: f64, side: usize, linear_max: f64) -> usize {
    let exact = side / 2;
    let width = linear_max / exact as f64;
    let steps = delta.abs() / width;
    let mut mag = 0;
    if steps < exact as f64 {
        while ((mag + 1) as f64) <= steps {
            mag += 1;
        }
    } else {
        let top = 1.0 / width;
        let t = (steps / exact as f64).ln() / (top / exact as f64).ln();
        mag = exact + (t * (side - exact) as f64).floor() as usize;
        if mag > side {
            mag = side;
        }
    }
    if delta < 0.0 {
        side - mag
    } else {
        side + mag
    }
}

/// One transformer block as nested loops. `boxes` switches on the bias
/// tables of `prefix`.
pub fn naive_block(
    p: &ParamStore,
    prefix: &str,
    query: &Array2<f64>,
    kv: &Array2<f64>,
    boxes: Option<(&[BoundingBox], &AttentionConfig)>,
    n_heads: usize,
) -> (Array2<f64>, Vec<Mat>) {
    let g = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap_or_else(|| panic!("{prefix}.{n}"));
    let xq = to_mat(query);
    let xkv = to_mat(kv);
    let q = affine(&xq, g("wq"), g("bq"));
    let k = affine(&xkv, g("wk"), g("bk"));
    let v = affine(&xkv, g("wv"), g("bv"));
    let (nq, nk, d) = (xq.len(), xkv.len(), xq[0].len());
    let dh = d / n_heads;
    let mut cat = vec![vec![0.0; d]; nq];
    let mut probs_all = Vec::new();
    for h in 0..n_heads {
        let mut probs = Vec::new();
        for i in 0..nq {
            let mut logits = vec![0.0; nk];
            for (j, l) in logits.iter_mut().enumerate() {
                let mut s = 0.0;
                for t in 0..dh {
                    s += q[i][h * dh + t] * k[j][h * dh + t];
                }
                *l = s / (dh as f64).sqrt();
                if let Some((bx, cfg)) = boxes {
                    let inside = naive_contains(&bx[j], &bx[i], cfg.containment_eps) as usize;
                    let (ci, cj) = (bx[i].center(), bx[j].center());
                    let side = cfg.rel_buckets;
                    *l += g("hier_bias")[[inside, h]];
                    *l += g("rel_x")[[naive_bucket(ci.0 - cj.0, side, cfg.rel_linear_max), h]];
                    *l += g("rel_y")[[naive_bucket(ci.1 - cj.1, side, cfg.rel_linear_max), h]];
                }
            }
            let pr = softmax(&logits);
            for t in 0..dh {
                let mut s = 0.0;
                for j in 0..nk {
                    s += pr[j] * v[j][h * dh + t];
                }
                cat[i][h * dh + t] = s;
            }
            probs.push(pr);
        }
        probs_all.push(probs);
    }
    let attn = affine(&cat, g("wo"), g("bo"));
    let res: Mat = (0..nq).map(|i| (0..d).map(|j| xq[i][j] + attn[i][j]).collect()).collect();
    let x = layer_norm(&res, g("ln1.g"), g("ln1.b"));
    let hid: Mat = affine(&x, g("ff.w1"), g("ff.b1"))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let ff = affine(&hid, g("ff.w2"), g("ff.b2"));
    let res2: Mat = (0..nq).map(|i| (0..d).map(|j| x[i][j] + ff[i][j]).collect()).collect();
    (from_mat(&layer_norm(&res2, g("ln2.g"), g("ln2.b"))), probs_all)
}

/// Mean over `rows` of the per-dimension mean absolute difference.
pub fn naive_mae(pred: &Array2<f64>, target: &Array2<f64>, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &r in rows {
        let mut s = 0.0;
        for j in 0..pred.ncols() {
            s += (pred[[r, j]] - target[[r, j]]).abs();
        }
        total += s / pred.ncols() as f64;
    }
    total / rows.len() as f64
}

/// Mean over words of `-log softmax` of word·region scores at the parent.
pub fn naive_mgm(f: &Array2<f64>, units: &[GranularUnit]) -> f64 {
    let regions: Vec<(usize, usize)> = units
        .iter()
        .enumerate()
        .filter_map(|(row, u)| match u.source {
            UnitSource::Region(j) => Some((row, j)),
            _ => None,
        })
        .collect();
    let mut total = 0.0;
    let mut n = 0;
    for (row, u) in units.iter().enumerate() {
        if let UnitSource::Word { region, .. } = u.source {
            let scores: Vec<f64> = regions
                .iter()
                .map(|&(rr, _)| (0..f.ncols()).map(|k| f[[row, k]] * f[[rr, k]]).sum())
                .collect();
            let parent = regions.iter().position(|&(_, j)| j == region).unwrap();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            total += lse - scores[parent];
            n += 1;
        }
    }
    if regions.len() < 2 || n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let (a, b) = (rng.gen::<f64>(), rng.gen::<f64>());
    let (c, d) = (rng.gen::<f64>(), rng.gen::<f64>());
    bb(a.min(b), c.min(d), a.max(b), c.max(d))
}

/// A random box inside `outer`.
pub fn box_inside(rng: &mut ChaCha8Rng, outer: &BoundingBox) -> BoundingBox {
    let lerp = |lo: f64, hi: f64, t: f64| lo + (hi - lo) * t;
    let (t0, t1) = (rng.gen::<f64>(), rng.gen::<f64>());
    let (s0, s1) = (rng.gen::<f64>(), rng.gen::<f64>());
    bb(
        lerp(outer.x0, outer.x1, t0.min(t1)),
        lerp(outer.y0, outer.y1, s0.min(s1)),
        lerp(outer.x0, outer.x1, t0.max(t1)),
        lerp(outer.y0, outer.y1, s0.max(s1)),
    )
}

/// A random hierarchical unit sequence of exactly `n` units (page, at least
/// one region, then words inside the regions).
pub fn random_units(rng: &mut ChaCha8Rng, n: usize) -> Vec<GranularUnit> {
    assert!(n >= 2);
    let n_regions = rng.gen_range(1..n);
    let mut units = vec![GranularUnit {
        granularity: Granularity::Page,
        unit_index: 0,
        source: UnitSource::Page,
        text: String::new(),
        bbox: BoundingBox::PAGE,
    }];
    let regions: Vec<BoundingBox> = (0..n_regions).map(|_| random_box(rng)).collect();
    for (j, r) in regions.iter().enumerate() {
        units.push(GranularUnit {
            granularity: Granularity::Region,
            unit_index: units.len(),
            source: UnitSource::Region(j),
            text: String::new(),
            bbox: *r,
        });
    }
    for w in 0..n - 1 - n_regions {
        let j = rng.gen_range(0..n_regions);
        units.push(GranularUnit {
            granularity: Granularity::Word,
            unit_index: units.len(),
            source: UnitSource::Word { region: j, word: w },
            text: String::new(),
            bbox: box_inside(rng, &regions[j]),
        });
    }
    units
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-scale..scale))
}

/// Replaces every tensor of the store with uniform noise, including bias
/// tables and layer-norm parameters, so no term is trivially zero or one.
pub fn randomize(p: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, t) in p.iter_mut() {
        t.mapv_inplace(|_| rng.gen_range(-scale..scale));
    }
}

/// Two regions of two words each, words carrying the given texts.
pub fn two_by_two_doc(texts: [&str; 4]) -> Document {
    let r1 = Region::from_words(
        vec![
            Word::new(texts[0], bb(0.10, 0.10, 0.20, 0.13)),
            Word::new(texts[1], bb(0.22, 0.10, 0.35, 0.13)),
        ],
        Some("question".into()),
    )
    .unwrap();
    let r2 = Region::from_words(
        vec![
            Word::new(texts[2], bb(0.55, 0.40, 0.65, 0.43)),
            Word::new(texts[3], bb(0.67, 0.40, 0.80, 0.43)),
        ],
        Some("answer".into()),
    )
    .unwrap();
    let mut img = Raster::filled(40, 50, 255);
    for y in 0..50 {
        for x in 0..40 {
            img.set(x, y, ((x * 7 + y * 13) % 256) as u8);
        }
    }
    Document::new("two-by-two", 400, 500, vec![r1, r2], 0.02).unwrap().with_image(img)
}
