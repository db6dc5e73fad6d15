use std::collections::{BTreeSet, HashMap};

use super::records::{Domain, InteractionRecord};
use crate::error::{Error, Result};

/// Index reserved for padding in every vocabulary.
pub const PAD: usize = 0;
pub const PAD_TOKEN: &str = "<pad>";

/// Item id ↔ index mapping. Index 0 is the padding item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary over the distinct ids, in sorted order.
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = ids.into_iter().collect();
        let mut out = Self {
            ids: vec![PAD_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for id in sorted {
            out.index.insert(id.to_string(), out.ids.len());
            out.ids.push(id.to_string());
        }
        out
    }

    /// Number of rows including the padding row.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.len() <= 1
    }

    /// Number of real (non-padding) items.
    pub fn num_items(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<usize> {
        self.get(id)
            .ok_or_else(|| Error::Data(format!("item {id:?} is not in the vocabulary")))
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    /// Real item ids in index order (padding excluded).
    pub fn items(&self) -> &[String] {
        &self.ids[1..]
    }
}

/// Per-domain local vocabularies plus the shared global one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabularies {
    pub a: Vocab,
    pub b: Vocab,
    pub global: Vocab,
    to_global: [Vec<usize>; 2],
}

impl Vocabularies {
    pub fn new(a: Vocab, b: Vocab) -> Self {
        let global = Vocab::from_ids(a.items().iter().chain(b.items()).map(String::as_str));
        let map = |v: &Vocab| {
            let mut m = vec![PAD];
            m.extend(v.items().iter().map(|id| global.get(id).expect("union contains id")));
            m
        };
        let to_global = [map(&a), map(&b)];
        Self {
            a,
            b,
            global,
            to_global,
        }
    }

    pub fn from_records(records: &[InteractionRecord]) -> Self {
        let ids = |d: Domain| {
            Vocab::from_ids(records.iter().filter(|r| r.domain == d).map(|r| r.item_id.as_str()))
        };
        Self::new(ids(Domain::A), ids(Domain::B))
    }

    pub fn local(&self, domain: Domain) -> &Vocab {
        match domain {
            Domain::A => &self.a,
            Domain::B => &self.b,
        }
    }

    /// Global row for a local item index of `domain`.
    pub fn to_global(&self, domain: Domain, local: usize) -> usize {
        self.to_global[domain.index()][local]
    }

    pub fn global_map(&self, domain: Domain) -> &[usize] {
        &self.to_global[domain.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_is_row_zero_and_items_start_at_one() {
        let v = Vocab::from_ids(["b", "a", "b"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("a"), Some(1));
        assert_eq!(v.id(PAD), PAD_TOKEN);
    }

    #[test]
    fn shared_item_maps_to_same_global_row() {
        let vocab = Vocabularies::new(Vocab::from_ids(["x", "shared"]), Vocab::from_ids(["shared", "y"]));
        let ga = vocab.to_global(Domain::A, vocab.a.get("shared").unwrap());
        let gb = vocab.to_global(Domain::B, vocab.b.get("shared").unwrap());
        assert_eq!(ga, gb);
        let gx = vocab.to_global(Domain::A, vocab.a.get("x").unwrap());
        let gy = vocab.to_global(Domain::B, vocab.b.get("y").unwrap());
        assert_ne!(gx, gy);
        assert_eq!(vocab.global.num_items(), 3);
        assert_eq!(vocab.to_global(Domain::B, PAD), PAD);
    }
}
