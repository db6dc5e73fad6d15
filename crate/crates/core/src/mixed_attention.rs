//! Item similarity, sequence fusion and group-prototype attention.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{register_xavier, CrossAttention, Mlp};
use crate::numerics::nn::{mask_row, zero_masked_rows};
use crate::numerics::{Activation, Graph, Owner, ParamId, ParamStore, Tensor, Var};

/// Score given to padded positions before the softmax.
pub const MASKED_SCORE: f64 = -1e9;

/// Scores each history position against the target item.
#[derive(Clone, Debug)]
pub struct ItemSimilarity {
    pub scorer: Mlp,
}

impl ItemSimilarity {
    pub fn new(store: &mut ParamStore, name: &str, owner: Owner, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let scorer = Mlp::new(store, name, owner, &[2 * width, hidden, 1], Activation::Identity, rng)?;
        Ok(Self { scorer })
    }
}

/// Cross-attention from local to global encodings plus an MLP.
#[derive(Clone, Debug)]
pub struct SequenceFusion {
    pub attention: CrossAttention,
    pub mlp: Mlp,
}

impl SequenceFusion {
    pub fn new(store: &mut ParamStore, name: &str, owner: Owner, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            attention: CrossAttention::new(store, &format!("{name}.attention"), owner, width, rng)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), owner, &[width, hidden, width], Activation::Identity, rng)?,
        })
    }
}

/// Per-domain parameters of the group-prototype attention; the prototypes
/// themselves are shared and passed in separately.
#[derive(Clone, Debug)]
pub struct GroupAttention {
    pub pool: ParamId,
    pub scorer: Mlp,
    pub attention: CrossAttention,
    pub mlp: Mlp,
}

impl GroupAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        owner: Owner,
        width: usize,
        n_groups: usize,
        max_len: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            pool: register_xavier(store, &format!("{name}.pool"), owner, &[n_groups, max_len], rng)?,
            scorer: Mlp::new(store, &format!("{name}.scorer"), owner, &[width, hidden, 1], Activation::Identity, rng)?,
            attention: CrossAttention::new(store, &format!("{name}.attention"), owner, width, rng)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), owner, &[width, hidden, width], Activation::Identity, rng)?,
        })
    }
}

fn masked_bias(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&m| if m { 0.0 } else { MASKED_SCORE }).collect()
}

/// `T×1` scores `MLP(target ‖ E_loc_t + E_glob_t)`, with padded positions
/// pushed to [`MASKED_SCORE`].
pub fn item_similarity_scores(
    g: &mut Graph<'_>,
    isa: &ItemSimilarity,
    target_global: Var,
    e_local: Var,
    e_global: Var,
    mask: &[bool],
) -> Result<Var> {
    let fused = g.add(e_local, e_global)?;
    let len = g.shape(fused)[0];
    if len != mask.len() {
        return Err(Error::Shape(format!("{len} positions with mask of length {}", mask.len())));
    }
    let target = g.broadcast_rows(target_global, len)?;
    let input = g.concat_cols(&[target, fused])?;
    let f = isa.scorer.apply(g, input)?;
    let bias = g.constant(Tensor::from_rows(&masked_bias(mask).into_iter().map(|b| vec![b]).collect::<Vec<_>>())?);
    g.add(f, bias)
}

/// Rows `softmax(F)_t · (E_loc_t + E_glob_t)`.
pub fn item_similarity_weight(g: &mut Graph<'_>, f: Var, e_local: Var, e_global: Var) -> Result<Var> {
    let w = g.softmax(f, 0)?;
    let fused = g.add(e_local, e_global)?;
    g.scale_rows(fused, w)
}

/// Item similarity attention for `n` targets at once, already pooled over
/// real positions: returns `n×W`, row `j` equal to the sum over real `t` of
/// [`item_similarity_weight`] for target `j`.
pub fn item_similarity_pooled(
    g: &mut Graph<'_>,
    isa: &ItemSimilarity,
    targets_global: Var,
    e_local: Var,
    e_global: Var,
    mask: &[bool],
) -> Result<Var> {
    let fused = g.add(e_local, e_global)?;
    let len = mask.len();
    let n = g.shape(targets_global)[0];
    let target_idx: Vec<usize> = (0..n).flat_map(|j| std::iter::repeat(j).take(len)).collect();
    let pos_idx: Vec<usize> = (0..n).flat_map(|_| 0..len).collect();
    let t = g.gather(targets_global, &target_idx)?;
    let h = g.gather(fused, &pos_idx)?;
    let input = g.concat_cols(&[t, h])?;
    let f = isa.scorer.apply(g, input)?;
    let f = g.reshape(f, &[n, len])?;
    let bias: Vec<f64> = (0..n).flat_map(|_| masked_bias(mask)).collect();
    let bias = g.constant(Tensor::new(vec![n, len], bias)?);
    let f = g.add(f, bias)?;
    let w = g.softmax(f, 1)?;
    let keep: Vec<f64> = (0..n).flat_map(|_| mask.iter().map(|&m| if m { 1.0 } else { 0.0 })).collect();
    let keep = g.constant(Tensor::new(vec![n, len], keep)?);
    let w = g.mul(w, keep)?;
    g.matmul(w, fused)
}

/// `MLP(CA(S_loc, S_glob) + S_loc)` with both encodings detached.
pub fn sequence_fusion(g: &mut Graph<'_>, sfa: &SequenceFusion, s_local: Var, s_global: Var, mask: &[bool]) -> Result<Var> {
    let s_local = g.stop_gradient(s_local);
    let s_global = g.stop_gradient(s_global);
    let ca = sfa.attention.apply(g, s_local, s_global, mask)?;
    let x = g.add(ca, s_local)?;
    sfa.mlp.apply(g, x)
}

/// `N_g×1` relevance `MLP(W_P · S_masked)` over the detached local encoding.
pub fn group_pool(g: &mut Graph<'_>, gpa: &GroupAttention, s_local: Var, mask: &[bool]) -> Result<Var> {
    let s = g.stop_gradient(s_local);
    let s = zero_masked_rows(g, s, mask)?;
    let wp = g.param(gpa.pool);
    let pooled = g.matmul(wp, s)?;
    gpa.scorer.apply(g, pooled)
}

/// `N_g×W` prototype-conditioned aggregation `MLP(CA(G, S_loc))`.
pub fn group_aggregate(g: &mut Graph<'_>, gpa: &GroupAttention, prototypes: Var, s_local: Var, mask: &[bool]) -> Result<Var> {
    let s = g.stop_gradient(s_local);
    let ca = gpa.attention.apply(g, prototypes, s, mask)?;
    gpa.mlp.apply(g, ca)
}

/// Rows `softmax(C)_k · G_dom_k`.
pub fn group_weight(g: &mut Graph<'_>, c: Var, g_dom: Var) -> Result<Var> {
    let w = g.softmax(c, 0)?;
    g.scale_rows(g_dom, w)
}

/// `−λ Σ_{i<j} ‖G_i − G_j‖²`; exactly zero when all prototypes coincide.
pub fn disentangle_loss(g: &mut Graph<'_>, prototypes: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("negative disentanglement weight {lambda}")));
    }
    let n = g.shape(prototypes)[0];
    if n < 2 {
        let zero = g.scale(prototypes, 0.0);
        return Ok(g.sum(zero));
    }
    // Each row of `pairs` picks out one difference G_i − G_j.
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2 * n);
    for i in 0..n {
        for j in i + 1..n {
            pairs.extend((0..n).map(|k| if k == i { 1.0 } else if k == j { -1.0 } else { 0.0 }));
        }
    }
    let pairs = g.constant(Tensor::new(vec![n * (n - 1) / 2, n], pairs)?);
    let diffs = g.matmul(pairs, prototypes)?;
    let spread = g.sum_squares(diffs);
    Ok(g.scale(spread, -lambda))
}

/// `1×W` sum over the real rows of `x`.
pub fn pool_rows(g: &mut Graph<'_>, x: Var, mask: &[bool]) -> Result<Var> {
    let m = mask_row(g, mask);
    g.matmul(m, x)
}
