use std::collections::BTreeMap;

use super::records::{Domain, InteractionRecord};
use super::vocab::{Vocab, PAD};
use crate::error::Result;

/// A fixed-length, front-padded history and one target item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceExample {
    pub user_id: String,
    pub domain: Domain,
    /// Local item indices, length `T`, padding (0) first.
    pub history: Vec<usize>,
    /// `true` marks a real item; monotone non-decreasing.
    pub mask: Vec<bool>,
    pub target: usize,
    pub label: u8,
    /// Timestamp of the target interaction.
    pub timestamp: i64,
}

impl SequenceExample {
    /// Builds a front-padded example from the most recent `max_len` items.
    pub fn new(
        user_id: &str,
        domain: Domain,
        recent: &[usize],
        max_len: usize,
        target: usize,
        label: u8,
        timestamp: i64,
    ) -> Self {
        let kept = &recent[recent.len().saturating_sub(max_len)..];
        let pad = max_len - kept.len();
        let mut history = vec![PAD; pad];
        history.extend_from_slice(kept);
        let mut mask = vec![false; pad];
        mask.extend(std::iter::repeat(true).take(kept.len()));
        Self {
            user_id: user_id.to_string(),
            domain,
            history,
            mask,
            target,
            label,
            timestamp,
        }
    }

    pub fn max_len(&self) -> usize {
        self.history.len()
    }

    /// Number of real history items.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Real history items, oldest first.
    pub fn real_history(&self) -> &[usize] {
        &self.history[self.max_len() - self.real_len()..]
    }

    /// True when `other` shares this example's user, domain, time and history.
    pub fn same_context(&self, other: &SequenceExample) -> bool {
        self.user_id == other.user_id
            && self.domain == other.domain
            && self.timestamp == other.timestamp
            && self.history == other.history
    }
}

/// Builds one example per positive interaction, using the user's earlier
/// positives (strictly earlier timestamps) as history.
///
/// Records are ordered per user by timestamp, ties broken by item id. Users
/// are emitted in id order.
pub fn build_sequences(records: &[InteractionRecord], vocab: &Vocab, max_len: usize) -> Result<Vec<SequenceExample>> {
    let mut by_user: BTreeMap<(&str, Domain), Vec<&InteractionRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.label == 1) {
        by_user.entry((r.user_id.as_str(), r.domain)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((user, domain), mut events) in by_user {
        events.sort_by(|x, y| x.timestamp.cmp(&y.timestamp).then_with(|| x.item_id.cmp(&y.item_id)));
        let items = events
            .iter()
            .map(|r| vocab.require(&r.item_id))
            .collect::<Result<Vec<_>>>()?;
        let mut earlier = 0;
        for (pos, event) in events.iter().enumerate() {
            while events[earlier].timestamp < event.timestamp {
                earlier += 1;
            }
            out.push(SequenceExample::new(
                user,
                domain,
                &items[..earlier],
                max_len,
                items[pos],
                1,
                event.timestamp,
            ));
        }
    }
    Ok(out)
}
