//! Parameterized building blocks registered in a [`ParamStore`].

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::nn::{attention, mlp_apply, AttentionMask};
use crate::numerics::{Activation, Graph, Owner, ParamId, ParamStore, Tensor, Var};
use crate::training::xavier_init_with;

pub(crate) fn register_xavier(
    store: &mut ParamStore,
    name: &str,
    owner: Owner,
    shape: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<ParamId> {
    store.register(name, owner, xavier_init_with(shape, rng)?)
}

/// Affine layer with activation.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

/// Stack of dense layers; hidden layers use ReLU.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes` lists the input width, any hidden widths and the output width.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        owner: Owner,
        sizes: &[usize],
        output: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument(format!("{name}: an MLP needs at least two sizes")));
        }
        let mut layers = Vec::new();
        for (i, pair) in sizes.windows(2).enumerate() {
            let weight = register_xavier(store, &format!("{name}.{i}.weight"), owner, pair, rng)?;
            let bias = store.register(format!("{name}.{i}.bias"), owner, Tensor::zeros(&[1, pair[1]]))?;
            let activation = if i + 2 == sizes.len() { output } else { Activation::Relu };
            layers.push(Dense { weight, bias, activation });
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let vars: Vec<_> = self
            .layers
            .iter()
            .map(|l| (g.param(l.weight), g.param(l.bias), l.activation))
            .collect();
        mlp_apply(g, x, &vars)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

/// Query/key/value projections followed by scaled dot attention.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, name: &str, owner: Owner, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            query: register_xavier(store, &format!("{name}.query"), owner, &[dim, dim], rng)?,
            key: register_xavier(store, &format!("{name}.key"), owner, &[dim, dim], rng)?,
            value: register_xavier(store, &format!("{name}.value"), owner, &[dim, dim], rng)?,
        })
    }

    /// Rows of `queries` attend over the rows of `context` whose mask is set;
    /// a fully masked context yields zero rows.
    pub fn apply(&self, g: &mut Graph<'_>, queries: Var, context: Var, mask: &[bool]) -> Result<Var> {
        let (wq, wk, wv) = (g.param(self.query), g.param(self.key), g.param(self.value));
        let q = g.matmul(queries, wq)?;
        let k = g.matmul(context, wk)?;
        let v = g.matmul(context, wv)?;
        attention(g, q, k, v, AttentionMask::Keys(mask))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.query, self.key, self.value]
    }
}
