use std::collections::HashMap;

use super::records::InteractionRecord;

/// Iteratively drops users and items with fewer than `k` interactions
/// (counted per domain) until nothing else can be removed.
pub fn apply_k_core(records: &[InteractionRecord], k: usize) -> Vec<InteractionRecord> {
    let mut keep = vec![true; records.len()];
    loop {
        let mut users: HashMap<(_, &str), usize> = HashMap::new();
        let mut items: HashMap<(_, &str), usize> = HashMap::new();
        for (r, _) in records.iter().zip(&keep).filter(|(_, &k)| k) {
            *users.entry((r.domain, r.user_id.as_str())).or_default() += 1;
            *items.entry((r.domain, r.item_id.as_str())).or_default() += 1;
        }
        let mut changed = false;
        for (r, kept) in records.iter().zip(keep.iter_mut()) {
            if *kept
                && (users[&(r.domain, r.user_id.as_str())] < k
                    || items[&(r.domain, r.item_id.as_str())] < k)
            {
                *kept = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect()
}
