use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::PreparedDoc;

/// Rows whose text or visual input is hidden for one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub text_masked_rows: Vec<usize>,
    pub vision_masked_rows: Vec<usize>,
    pub rng_seed: u64,
}

/// Samples each eligible row independently per modality with probability
/// `ratio`. When a modality draws no row, one eligible row is picked uniformly
/// so every document contributes to both reconstruction losses.
pub fn make_mask_plan(prep: &PreparedDoc, ratio: f64, mask_page: bool, seed: u64) -> MaskPlan {
    let rows = prep.maskable_rows(mask_page);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut picked: Vec<usize> = rows.iter().copied().filter(|_| rng.gen_bool(ratio)).collect();
        if picked.is_empty() {
            if let Some(&r) = rows.choose(rng) {
                picked.push(r);
            }
        }
        picked
    };
    let text_masked_rows = draw(&mut rng);
    let vision_masked_rows = draw(&mut rng);
    MaskPlan {
        text_masked_rows,
        vision_masked_rows,
        rng_seed: seed,
    }
}

/// Mixes a run seed, a step counter and a document id into one RNG seed.
pub fn derive_seed(seed: u64, step: u64, doc_id: &str) -> u64 {
    // FNV-1a over the id, then splitmix64 finalization.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in doc_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed
        .wrapping_add(step.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(h);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
