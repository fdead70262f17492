use crate::docmodel::{Region, Word};

pub const DEFAULT_GAP_X: f64 = 0.015;
pub const DEFAULT_GAP_Y: f64 = 0.012;

/// Greedy paragraph grouping over words in reading order. A word extends the
/// current region when its signed horizontal gap to the region's last word is
/// at most `gap_x` and their vertical centers differ by at most `gap_y`.
/// A word starting a new line of the same paragraph has a negative gap.
pub fn group_words_into_regions(words: &[Word], gap_x: f64, gap_y: f64) -> Vec<Region> {
    let mut groups: Vec<Vec<Word>> = Vec::new();
    for w in words {
        let joins = groups.last().and_then(|g| g.last()).is_some_and(|last| {
            let dx = w.bbox.x0 - last.bbox.x1;
            let dy = (w.bbox.center().1 - last.bbox.center().1).abs();
            dx <= gap_x && dy <= gap_y
        });
        if joins {
            groups.last_mut().expect("non-empty").push(w.clone());
        } else {
            groups.push(vec![w.clone()]);
        }
    }
    groups
        .into_iter()
        .map(|g| Region::from_words(g, None).expect("group is non-empty"))
        .collect()
}
