use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Class excluded from the entity score.
pub const OTHER: &str = "other";

fn is_other(label: &str) -> bool {
    label.eq_ignore_ascii_case(OTHER)
}

/// Micro-averaged entity F1 with the `other` class excluded: an entity counts
/// as a true positive when its non-`other` gold label is predicted exactly.
pub fn entity_f1(gold: &[String], pred: &[String]) -> f64 {
    assert_eq!(gold.len(), pred.len(), "entity_f1: length mismatch");
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        let hit = g == p;
        if hit && !is_other(g) {
            tp += 1;
        }
        if !hit && !is_other(p) {
            fp += 1;
        }
        if !hit && !is_other(g) {
            fn_ += 1;
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn accuracy(gold: &[String], pred: &[String]) -> f64 {
    assert_eq!(gold.len(), pred.len(), "accuracy: length mismatch");
    if gold.is_empty() {
        return 0.0;
    }
    gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64
}

/// Seeded 8:1:1 train/validation/test split.
pub fn split_8_1_1<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = items.len() * 8 / 10;
    let n_val = items.len() / 10;
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    (
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_val]),
        pick(&idx[n_train + n_val..]),
    )
}

/// Hex SHA-256 of a config's compact JSON (object keys sorted).
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
