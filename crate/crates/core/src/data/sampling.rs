use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::records::Domain;
use super::sequences::SequenceExample;
use crate::error::{Error, Result};

/// Items each user has interacted with, per domain.
#[derive(Clone, Debug, Default)]
pub struct InteractionIndex {
    items: HashMap<(Domain, String), HashSet<usize>>,
}

impl InteractionIndex {
    /// Collects targets and history items of every positive example.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a SequenceExample>) -> Self {
        let mut idx = Self::default();
        for ex in examples.into_iter().filter(|e| e.label == 1) {
            let set = idx.items.entry((ex.domain, ex.user_id.clone())).or_default();
            set.insert(ex.target);
            set.extend(ex.real_history().iter().copied());
        }
        idx
    }

    pub fn insert(&mut self, domain: Domain, user: &str, item: usize) {
        self.items.entry((domain, user.to_string())).or_default().insert(item);
    }

    pub fn contains(&self, domain: Domain, user: &str, item: usize) -> bool {
        self.get(domain, user).is_some_and(|s| s.contains(&item))
    }

    pub fn get(&self, domain: Domain, user: &str) -> Option<&HashSet<usize>> {
        self.items.get(&(domain, user.to_string()))
    }
}

/// Draws `count` distinct items from `1..vocab_len` avoiding `exclude`.
fn draw_negatives(
    rng: &mut ChaCha8Rng,
    vocab_len: usize,
    exclude: Option<&HashSet<usize>>,
    count: usize,
    user: &str,
) -> Result<Vec<usize>> {
    let excluded = exclude.map_or(0, |s| s.iter().filter(|&&i| i >= 1 && i < vocab_len).count());
    let available = (vocab_len - 1).saturating_sub(excluded);
    if available < count {
        return Err(Error::Data(format!(
            "user {user:?}: only {available} candidate negatives for {count} requested"
        )));
    }
    let banned = |i: usize| exclude.is_some_and(|s| s.contains(&i));
    // Rejection sampling is fine while most of the vocabulary is available.
    if available * 2 >= vocab_len - 1 {
        let mut picked = Vec::with_capacity(count);
        while picked.len() < count {
            let i = rng.gen_range(1..vocab_len);
            if !banned(i) && !picked.contains(&i) {
                picked.push(i);
            }
        }
        Ok(picked)
    } else {
        let pool: Vec<usize> = (1..vocab_len).filter(|&i| !banned(i)).collect();
        Ok(pool.choose_multiple(rng, count).copied().collect())
    }
}

/// Appends `ratio` label-0 copies after each positive, with targets drawn
/// uniformly from the domain vocabulary minus the user's interacted items.
///
/// `vocab_len` counts the padding row. Non-positive inputs pass through.
pub fn sample_negatives(
    examples: &[SequenceExample],
    vocab_len: usize,
    interacted: &InteractionIndex,
    ratio: usize,
    seed: u64,
) -> Result<Vec<SequenceExample>> {
    if ratio == 0 {
        return Err(Error::InvalidArgument("negative ratio must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(examples.len() * (ratio + 1));
    for ex in examples {
        out.push(ex.clone());
        if ex.label != 1 {
            continue;
        }
        let exclude = interacted.get(ex.domain, &ex.user_id);
        for item in draw_negatives(&mut rng, vocab_len, exclude, ratio, &ex.user_id)? {
            out.push(SequenceExample {
                target: item,
                label: 0,
                ..ex.clone()
            });
        }
    }
    Ok(out)
}

/// Splits consecutive examples into runs sharing one history context, as
/// produced by [`sample_negatives`].
pub fn context_groups(examples: &[SequenceExample]) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=examples.len() {
        if i == examples.len() || !examples[i].same_context(&examples[start]) {
            groups.push(start..i);
            start = i;
        }
    }
    groups
}
