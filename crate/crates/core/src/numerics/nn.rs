//! Composite layers built from graph primitives.

use super::graph::{Activation, Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Which key positions each query row may attend to.
#[derive(Clone, Copy, Debug)]
pub enum AttentionMask<'a> {
    /// Every query sees every key.
    None,
    /// Key `j` is visible to all queries iff `keys[j]`.
    Keys(&'a [bool]),
    /// Query `i` sees key `j` iff `j <= i` and `keys[j]`.
    Causal(&'a [bool]),
}

impl AttentionMask<'_> {
    fn allowed(&self, p: usize, q: usize) -> Result<Vec<bool>> {
        let keys = match self {
            AttentionMask::None => return Ok(vec![true; p * q]),
            AttentionMask::Keys(k) | AttentionMask::Causal(k) => *k,
        };
        if keys.len() != q {
            return Err(Error::Shape(format!(
                "attention mask of length {} for {q} keys",
                keys.len()
            )));
        }
        let causal = matches!(self, AttentionMask::Causal(_));
        let mut out = Vec::with_capacity(p * q);
        for i in 0..p {
            for (j, &k) in keys.iter().enumerate() {
                out.push(k && (!causal || j <= i));
            }
        }
        Ok(out)
    }
}

/// `softmax(Q Kᵀ / √D) V` with masked keys receiving zero weight.
///
/// Returns [`Error::AllKeysMasked`] when the key mask hides every key.
pub fn scaled_dot_attention(
    g: &mut Graph<'_>,
    q: Var,
    k: Var,
    v: Var,
    key_mask: Option<&[bool]>,
) -> Result<Var> {
    if let Some(mask) = key_mask {
        if !mask.iter().any(|&m| m) {
            return Err(Error::AllKeysMasked);
        }
    }
    let mask = key_mask.map_or(AttentionMask::None, AttentionMask::Keys);
    attention(g, q, k, v, mask)
}

/// Attention with an arbitrary mask; query rows that can see no key yield zero rows.
pub fn attention(g: &mut Graph<'_>, q: Var, k: Var, v: Var, mask: AttentionMask<'_>) -> Result<Var> {
    let (sq, sk, sv) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
        return Err(Error::Shape(format!(
            "attention Q {sq:?}, K {sk:?}, V {sv:?}"
        )));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (sq[1] as f64).sqrt());
    let allowed = mask.allowed(sq[0], sk[0])?;
    let weights = g.masked_softmax_rows(scores, &allowed)?;
    g.matmul(weights, v)
}

/// One affine layer: weight `in×out`, bias `1×out`, activation.
pub type LayerVars = (Var, Var, Activation);

/// Applies a stack of affine+activation layers to the rows of `x`.
pub fn mlp_apply(g: &mut Graph<'_>, x: Var, layers: &[LayerVars]) -> Result<Var> {
    let mut h = x;
    for &(w, b, act) in layers {
        let z = g.matmul(h, w)?;
        let z = g.add_row(z, b)?;
        h = g.activate(z, act);
    }
    Ok(h)
}

/// Constant `n×1` column of 0/1 mask values.
pub fn mask_column(g: &mut Graph<'_>, mask: &[bool]) -> Var {
    let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    g.constant(Tensor::from_parts(vec![mask.len(), 1], data))
}

/// Constant `1×n` row of 0/1 mask values.
pub fn mask_row(g: &mut Graph<'_>, mask: &[bool]) -> Var {
    let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    g.constant(Tensor::from_parts(vec![1, mask.len()], data))
}

/// Zeroes the rows of `x` whose mask entry is false.
pub fn zero_masked_rows(g: &mut Graph<'_>, x: Var, mask: &[bool]) -> Result<Var> {
    let col = mask_column(g, mask);
    g.scale_rows(x, col)
}
