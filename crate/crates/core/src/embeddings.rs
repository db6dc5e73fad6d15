//! Item, positional and domain embedding tables.

use rand_chacha::ChaCha8Rng;

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::layers::register_xavier;
use crate::numerics::{Graph, Owner, ParamId, ParamStore, Var};

/// Item table plus positional table for one sequence view.
#[derive(Clone, Debug)]
pub struct ItemTables {
    pub items: ParamId,
    pub positions: ParamId,
    pub vocab_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingDims {
    pub item_dim: usize,
    pub domain_dim: usize,
    pub max_len: usize,
}

impl EmbeddingDims {
    /// Width of every embedded row: item part plus domain part.
    pub fn width(&self) -> usize {
        self.item_dim + self.domain_dim
    }
}

/// Local tables per domain, the shared global tables, and the two domain
/// embeddings. Either view may be absent depending on the model mode.
#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    pub dims: EmbeddingDims,
    pub local: Option<[ItemTables; 2]>,
    pub global: Option<ItemTables>,
    pub domain: [ParamId; 2],
}

fn owner(d: Domain) -> Owner {
    match d {
        Domain::A => Owner::A,
        Domain::B => Owner::B,
    }
}

fn item_tables(
    store: &mut ParamStore,
    prefix: &str,
    owner: Owner,
    vocab_len: usize,
    dims: EmbeddingDims,
    rng: &mut ChaCha8Rng,
) -> Result<ItemTables> {
    if vocab_len < 2 {
        return Err(Error::InvalidArgument(format!("{prefix}: vocabulary has no items")));
    }
    let items = register_xavier(store, &format!("{prefix}.item_emb"), owner, &[vocab_len, dims.item_dim], rng)?;
    store.get_mut(items).row_slice_mut(0).fill(0.0);
    let positions = register_xavier(store, &format!("{prefix}.pos_emb"), owner, &[dims.max_len, dims.item_dim], rng)?;
    Ok(ItemTables {
        items,
        positions,
        vocab_len,
    })
}

impl EmbeddingTables {
    /// Registers the tables. `local_lens` and `global_len` count the padding row.
    pub fn new(
        store: &mut ParamStore,
        dims: EmbeddingDims,
        local_lens: Option<[usize; 2]>,
        global_len: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dims.item_dim == 0 || dims.domain_dim == 0 || dims.max_len == 0 {
            return Err(Error::InvalidArgument(format!("embedding dimensions {dims:?}")));
        }
        let local = match local_lens {
            Some([a, b]) => Some([
                item_tables(store, "a", Owner::A, a, dims, rng)?,
                item_tables(store, "b", Owner::B, b, dims, rng)?,
            ]),
            None => None,
        };
        let global = match global_len {
            Some(n) => Some(item_tables(store, "global", Owner::Shared, n, dims, rng)?),
            None => None,
        };
        let mut domain = Vec::new();
        for d in Domain::BOTH {
            let name = format!("{}.domain_emb", d.tag());
            domain.push(register_xavier(store, &name, owner(d), &[1, dims.domain_dim], rng)?);
        }
        Ok(Self {
            dims,
            local,
            global,
            domain: [domain[0], domain[1]],
        })
    }

    /// Item tables whose padding row must stay zero.
    pub fn item_table_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.local.iter().flatten().map(|t| t.items).collect();
        ids.extend(self.global.iter().map(|t| t.items));
        ids
    }

    fn local_tables(&self, domain: Domain) -> Result<&ItemTables> {
        self.local
            .as_ref()
            .map(|l| &l[domain.index()])
            .ok_or_else(|| Error::InvalidArgument("model has no local embeddings".into()))
    }

    fn global_tables(&self) -> Result<&ItemTables> {
        self.global
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no global embeddings".into()))
    }

    fn embed(&self, g: &mut Graph<'_>, tables: &ItemTables, history: &[usize], domain: Domain) -> Result<Var> {
        if history.len() != self.dims.max_len {
            return Err(Error::Shape(format!(
                "history of length {} for max length {}",
                history.len(),
                self.dims.max_len
            )));
        }
        let m = g.param(tables.items);
        let rows = g.gather(m, history)?;
        let p = g.param(tables.positions);
        let summed = g.add(rows, p)?;
        let d = g.param(self.domain[domain.index()]);
        let d = g.broadcast_rows(d, history.len())?;
        g.concat_cols(&[summed, d])
    }

    fn targets(&self, g: &mut Graph<'_>, tables: &ItemTables, items: &[usize], domain: Domain) -> Result<Var> {
        let m = g.param(tables.items);
        let rows = g.gather(m, items)?;
        let d = g.param(self.domain[domain.index()]);
        let d = g.broadcast_rows(d, items.len())?;
        g.concat_cols(&[rows, d])
    }

    /// `T×W` rows `M^X[h_t] + P^X_t ‖ d^X` over local item indices.
    pub fn embed_local(&self, g: &mut Graph<'_>, history: &[usize], domain: Domain) -> Result<Var> {
        let t = self.local_tables(domain)?.clone();
        self.embed(g, &t, history, domain)
    }

    /// `T×W` rows `M[h_t] + P_t ‖ d^X` over global item indices.
    pub fn embed_global(&self, g: &mut Graph<'_>, history: &[usize], domain: Domain) -> Result<Var> {
        let t = self.global_tables()?.clone();
        self.embed(g, &t, history, domain)
    }

    /// `n×W` target rows `M^X[i] ‖ d^X`.
    pub fn local_targets(&self, g: &mut Graph<'_>, items: &[usize], domain: Domain) -> Result<Var> {
        let t = self.local_tables(domain)?.clone();
        self.targets(g, &t, items, domain)
    }

    /// `n×W` target rows `M[i] ‖ d^X` over global item indices.
    pub fn global_targets(&self, g: &mut Graph<'_>, items: &[usize], domain: Domain) -> Result<Var> {
        let t = self.global_tables()?.clone();
        self.targets(g, &t, items, domain)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::numerics::{Gradients, Tensor};

    const DIMS: EmbeddingDims = EmbeddingDims {
        item_dim: 3,
        domain_dim: 2,
        max_len: 4,
    };

    fn tables() -> (ParamStore, EmbeddingTables) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTables::new(&mut store, DIMS, Some([7, 5]), Some(10), &mut rng).unwrap();
        (store, t)
    }

    fn lookup_oracle(store: &ParamStore, items: ParamId, pos: ParamId, dom: ParamId, hist: &[usize]) -> Vec<f64> {
        let mut out = Vec::new();
        for (t, &h) in hist.iter().enumerate() {
            for c in 0..DIMS.item_dim {
                out.push(store.get(items).get(h, c) + store.get(pos).get(t, c));
            }
            out.extend_from_slice(store.get(dom).data());
        }
        out
    }

    #[test]
    fn padding_rows_start_at_zero() {
        let (store, t) = tables();
        for id in t.item_table_ids() {
            assert!(store.get(id).row_slice(0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn local_lookup_matches_table_rows() {
        let (store, t) = tables();
        let loc = &t.local.as_ref().unwrap()[1];
        for hist in [[0, 0, 0, 0], [0, 0, 3, 4], [1, 2, 3, 4]] {
            let mut g = Graph::with_params(&store);
            let e = t.embed_local(&mut g, &hist, Domain::B).unwrap();
            assert_eq!(g.shape(e), &[4, 5]);
            let expect = lookup_oracle(&store, loc.items, loc.positions, t.domain[1], &hist);
            assert_eq!(g.value(e).data(), &expect[..]);
        }
    }

    #[test]
    fn global_lookup_matches_table_rows() {
        let (store, t) = tables();
        let glob = t.global.as_ref().unwrap();
        let hist = [0, 9, 2, 2];
        let mut g = Graph::with_params(&store);
        let e = t.embed_global(&mut g, &hist, Domain::A).unwrap();
        let expect = lookup_oracle(&store, glob.items, glob.positions, t.domain[0], &hist);
        assert_eq!(g.value(e).data(), &expect[..]);
    }

    #[test]
    fn one_hot_tables_give_exact_sums() {
        let (mut store, t) = tables();
        let loc = t.local.as_ref().unwrap()[0].clone();
        *store.get_mut(loc.items) = Tensor::zeros(&[7, 3]);
        store.get_mut(loc.items).row_slice_mut(5)[1] = 1.0;
        *store.get_mut(loc.positions) = Tensor::zeros(&[4, 3]);
        store.get_mut(loc.positions).row_slice_mut(3)[2] = 10.0;
        let mut g = Graph::with_params(&store);
        let e = t.embed_local(&mut g, &[0, 0, 0, 5], Domain::A).unwrap();
        assert_eq!(&g.value(e).row_slice(3)[..3], &[0.0, 1.0, 10.0]);
    }

    #[test]
    fn shared_item_uses_one_global_row_from_both_domains() {
        let (store, t) = tables();
        let mut g = Graph::with_params(&store);
        let a = t.global_targets(&mut g, &[4], Domain::A).unwrap();
        let b = t.global_targets(&mut g, &[4], Domain::B).unwrap();
        let c = t.global_targets(&mut g, &[5], Domain::B).unwrap();
        assert_eq!(&g.value(a).data()[..3], &g.value(b).data()[..3]);
        assert_ne!(&g.value(b).data()[..3], &g.value(c).data()[..3]);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let (store, t) = tables();
        let mut g = Graph::with_params(&store);
        assert!(t.embed_local(&mut g, &[0, 0, 0, 7], Domain::A).is_err());
        assert!(t.embed_local(&mut g, &[0, 0, 7], Domain::A).is_err());
    }

    #[test]
    fn row_gradient_sums_upstream_positions() {
        let (store, t) = tables();
        let loc = t.local.as_ref().unwrap()[0].clone();
        let mut g = Graph::with_params(&store);
        let e = t.embed_local(&mut g, &[0, 2, 3, 2], Domain::A).unwrap();
        let weights: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let w = g.constant(Tensor::new(vec![4, 5], weights.clone()).unwrap());
        let prod = g.mul(e, w).unwrap();
        let loss = g.sum(prod);
        let mut grads = Gradients::zeros_like(&store);
        g.backward_into(loss, &mut grads).unwrap();
        let row2 = grads.get(loc.items).row_slice(2);
        for c in 0..3 {
            assert_eq!(row2[c], weights[5 + c] + weights[15 + c]);
        }
    }
}
