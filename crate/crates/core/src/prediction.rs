//! Pooling, prediction heads and the training objectives.

use crate::error::{Error, Result};
use crate::layers::Mlp;
use crate::numerics::nn::mask_row;
use crate::numerics::{Graph, Owner, ParamId, Tensor, Var};

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pooling {
    #[default]
    Sum,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::Config(format!("unknown pooling {other:?}"))),
        }
    }
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Sum => "sum",
            Pooling::Mean => "mean",
        }
    }
}

/// Unpooled outputs of the sequence modules for one history.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModuleOutputs {
    /// `T×W` item-similarity rows.
    pub item_similarity: Option<Var>,
    /// `T×W` fused sequence.
    pub fusion: Option<Var>,
    /// `N_g×W` weighted group representations.
    pub groups: Option<Var>,
    /// `T×W` local encoding.
    pub local: Option<Var>,
    /// `T×W` global encoding.
    pub global: Option<Var>,
}

/// `1×W` pooled vectors feeding the heads.
#[derive(Clone, Copy, Debug, Default)]
pub struct PredictionInputs {
    pub e_i: Option<Var>,
    pub s_s: Option<Var>,
    pub g_u: Option<Var>,
    pub s_loc: Option<Var>,
    pub s_glob: Option<Var>,
}

fn pool(g: &mut Graph<'_>, x: Var, weights: Var) -> Result<Var> {
    g.matmul(weights, x)
}

/// Sums (or averages) time-indexed outputs over real positions and group
/// outputs over all groups.
pub fn pool_representations(
    g: &mut Graph<'_>,
    out: &ModuleOutputs,
    mask: &[bool],
    pooling: Pooling,
) -> Result<PredictionInputs> {
    let real = mask.iter().filter(|&&m| m).count().max(1) as f64;
    let time = mask_row(g, mask);
    let time = match pooling {
        Pooling::Sum => time,
        Pooling::Mean => g.scale(time, 1.0 / real),
    };
    let mut pooled = PredictionInputs::default();
    let slots = [
        (out.item_similarity, &mut pooled.e_i),
        (out.fusion, &mut pooled.s_s),
        (out.local, &mut pooled.s_loc),
        (out.global, &mut pooled.s_glob),
    ];
    for (src, dst) in slots {
        if let Some(x) = src {
            *dst = Some(pool(g, x, time)?);
        }
    }
    if let Some(groups) = out.groups {
        let n = g.shape(groups)[0];
        let scale = match pooling {
            Pooling::Sum => 1.0,
            Pooling::Mean => 1.0 / n as f64,
        };
        let w = g.constant(Tensor::full(&[1, n], scale));
        pooled.g_u = Some(pool(g, groups, w)?);
    }
    Ok(pooled)
}

/// Applies `head` to the column-concatenation of `parts`; single-row parts
/// are broadcast to the row count of the tallest part. Returns `n×1` logits.
pub fn head_logits(g: &mut Graph<'_>, head: &Mlp, parts: &[Var]) -> Result<Var> {
    let n = parts.iter().map(|&p| g.shape(p)[0]).max().unwrap_or(0);
    let mut cols = Vec::with_capacity(parts.len());
    for &p in parts {
        let rows = g.shape(p)[0];
        cols.push(if rows == n {
            p
        } else if rows == 1 {
            g.broadcast_rows(p, n)?
        } else {
            return Err(Error::Shape(format!("head input with {rows} rows among parts with {n}")));
        });
    }
    let x = g.concat_cols(&cols)?;
    head.apply(g, x)
}

/// `sigmoid` of the summed head logits.
pub fn predict(g: &mut Graph<'_>, logits: &[Var]) -> Result<Var> {
    let mut total = *logits
        .first()
        .ok_or_else(|| Error::InvalidArgument("prediction needs at least one logit".into()))?;
    for &l in &logits[1..] {
        total = g.add(total, l)?;
    }
    Ok(g.sigmoid(total))
}

/// Mean binary cross-entropy of `n×1` probabilities against labels.
pub fn domain_loss(g: &mut Graph<'_>, probs: Var, labels: &[u8]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty batch".into()));
    }
    if g.value(probs).len() != labels.len() {
        return Err(Error::Shape(format!(
            "{:?} predictions for {} labels",
            g.shape(probs),
            labels.len()
        )));
    }
    let p = g.clamp(probs, PROB_EPS, 1.0 - PROB_EPS);
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let shape = g.shape(probs).to_vec();
    let y = g.constant(Tensor::new(shape.clone(), y)?);
    let not_y = g.constant(Tensor::new(shape, not_y)?);
    let log_p = g.ln(p);
    let q = g.scale(p, -1.0);
    let q = g.add_scalar(q, 1.0);
    let log_q = g.ln(q);
    let pos = g.mul(y, log_p)?;
    let neg = g.mul(not_y, log_q)?;
    let ll = g.add(pos, neg)?;
    let ll = g.sum(ll);
    Ok(g.scale(ll, -1.0 / labels.len() as f64))
}

/// `Σθ²` over parameters owned by `owner`, plus half of `Σθ²` over shared ones.
pub fn regularizer(g: &mut Graph<'_>, params: &[(ParamId, Owner)], owner: Owner) -> Result<Var> {
    let mut own = Vec::new();
    let mut shared = Vec::new();
    for &(id, o) in params {
        if o == owner {
            own.push(id);
        } else if o == Owner::Shared && owner != Owner::Shared {
            shared.push(id);
        }
    }
    let mut total = g.constant(Tensor::scalar(0.0));
    for (ids, weight) in [(own, 1.0), (shared, 0.5)] {
        for id in ids {
            let p = g.param(id);
            let s = g.sum_squares(p);
            let s = g.scale(s, weight);
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// Graph nodes of every objective term.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_a: Option<Var>,
    pub l_b: Option<Var>,
    pub l_g: Option<Var>,
    pub reg_a: Option<Var>,
    pub reg_b: Option<Var>,
    pub total: Var,
}

/// Scalar values of the objective terms; absent terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_a: f64,
    pub l_b: f64,
    pub l_g: f64,
    pub reg_a: f64,
    pub reg_b: f64,
    pub total: f64,
}

impl LossVars {
    pub fn values(&self, g: &Graph<'_>) -> LossBreakdown {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.scalar(x));
        LossBreakdown {
            l_a: v(self.l_a),
            l_b: v(self.l_b),
            l_g: v(self.l_g),
            reg_a: v(self.reg_a),
            reg_b: v(self.reg_b),
            total: g.scalar(self.total),
        }
    }
}

/// `L_A + L_B + λ_A·reg_A + λ_B·reg_B + L_g` over whichever terms are
/// present; a missing domain drops both its loss and its regularizer.
pub fn total_loss(
    g: &mut Graph<'_>,
    l_a: Option<Var>,
    l_b: Option<Var>,
    params: &[(ParamId, Owner)],
    lambda_a: f64,
    lambda_b: f64,
    l_g: Option<Var>,
) -> Result<LossVars> {
    if lambda_a < 0.0 || lambda_b < 0.0 {
        return Err(Error::InvalidArgument("regularization weights must be non-negative".into()));
    }
    let mut total = g.constant(Tensor::scalar(0.0));
    let mut reg = [None, None];
    for (k, (loss, owner, lambda)) in [(l_a, Owner::A, lambda_a), (l_b, Owner::B, lambda_b)].into_iter().enumerate() {
        if let Some(l) = loss {
            total = g.add(total, l)?;
            let r = regularizer(g, params, owner)?;
            let weighted = g.scale(r, lambda);
            total = g.add(total, weighted)?;
            reg[k] = Some(r);
        }
    }
    if let Some(l) = l_g {
        total = g.add(total, l)?;
    }
    Ok(LossVars {
        l_a,
        l_b,
        l_g,
        reg_a: reg[0],
        reg_b: reg[1],
        total,
    })
}
