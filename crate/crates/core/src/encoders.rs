//! Sequence encoders: a causal self-attention stack and a GRU.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{register_xavier, Mlp};
use crate::numerics::nn::{attention, zero_masked_rows, AttentionMask};
use crate::numerics::{Activation, Graph, Owner, ParamId, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    SelfAttention,
    Gru,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::SelfAttention => "self_attention",
            Backbone::Gru => "gru",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_attention" | "sasrec" => Ok(Backbone::SelfAttention),
            "gru" | "gated_recurrent" => Ok(Backbone::Gru),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub heads: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::SelfAttention,
            layers: 2,
            heads: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn new(store: &mut ParamStore, name: &str, owner: Owner, width: usize) -> Result<Self> {
        Ok(Self {
            gain: store.register(format!("{name}.gain"), owner, Tensor::ones(&[1, width]))?,
            bias: store.register(format!("{name}.bias"), owner, Tensor::zeros(&[1, width]))?,
        })
    }

    fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let n = g.layer_norm_rows(x, LN_EPS)?;
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let n = g.mul_row(n, gain)?;
        g.add_row(n, bias)
    }
}

/// Causal multi-head self-attention, residual, layer norm, position-wise
/// MLP, residual, layer norm.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub norm1: LayerNormParams,
    pub ffn: Mlp,
    pub norm2: LayerNormParams,
}

impl AttentionBlock {
    fn new(store: &mut ParamStore, name: &str, owner: Owner, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let sq = [width, width];
        Ok(Self {
            query: register_xavier(store, &format!("{name}.query"), owner, &sq, rng)?,
            key: register_xavier(store, &format!("{name}.key"), owner, &sq, rng)?,
            value: register_xavier(store, &format!("{name}.value"), owner, &sq, rng)?,
            output: register_xavier(store, &format!("{name}.output"), owner, &sq, rng)?,
            norm1: LayerNormParams::new(store, &format!("{name}.ln1"), owner, width)?,
            ffn: Mlp::new(store, &format!("{name}.ffn"), owner, &[width, width, width], Activation::Identity, rng)?,
            norm2: LayerNormParams::new(store, &format!("{name}.ln2"), owner, width)?,
        })
    }

    fn apply(&self, g: &mut Graph<'_>, x: Var, mask: &[bool], heads: usize) -> Result<Var> {
        let width = g.shape(x)[1];
        let dk = width / heads;
        let (wq, wk, wv, wo) = (g.param(self.query), g.param(self.key), g.param(self.value), g.param(self.output));
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let (qh, kh, vh) = (g.slice_cols(q, lo, hi)?, g.slice_cols(k, lo, hi)?, g.slice_cols(v, lo, hi)?);
            outs.push(attention(g, qh, kh, vh, AttentionMask::Causal(mask))?);
        }
        let att = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let att = g.matmul(att, wo)?;
        let h1 = g.add(x, att)?;
        let h1 = self.norm1.apply(g, h1)?;
        let f = self.ffn.apply(g, h1)?;
        let h2 = g.add(h1, f)?;
        let h2 = self.norm2.apply(g, h2)?;
        zero_masked_rows(g, h2, mask)
    }
}

/// Gated recurrent layer: `z`, `r` gates and candidate `n`.
#[derive(Clone, Debug)]
pub struct GruLayer {
    pub input: [ParamId; 3],
    pub recurrent: [ParamId; 3],
    pub bias: [ParamId; 3],
}

impl GruLayer {
    fn new(store: &mut ParamStore, name: &str, owner: Owner, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut ids = Vec::new();
        for gate in ["z", "r", "n"] {
            ids.push(register_xavier(store, &format!("{name}.w_{gate}"), owner, &[width, width], rng)?);
        }
        for gate in ["z", "r", "n"] {
            ids.push(register_xavier(store, &format!("{name}.u_{gate}"), owner, &[width, width], rng)?);
        }
        for gate in ["z", "r", "n"] {
            ids.push(store.register(format!("{name}.b_{gate}"), owner, Tensor::zeros(&[1, width]))?);
        }
        Ok(Self {
            input: [ids[0], ids[1], ids[2]],
            recurrent: [ids[3], ids[4], ids[5]],
            bias: [ids[6], ids[7], ids[8]],
        })
    }

    fn apply(&self, g: &mut Graph<'_>, x: Var, mask: &[bool]) -> Result<Var> {
        let (len, width) = (g.shape(x)[0], g.shape(x)[1]);
        let mut proj = [x; 3];
        for (k, p) in proj.iter_mut().enumerate() {
            let w = g.param(self.input[k]);
            let b = g.param(self.bias[k]);
            let xw = g.matmul(x, w)?;
            *p = g.add_row(xw, b)?;
        }
        let u: Vec<Var> = self.recurrent.iter().map(|&id| g.param(id)).collect();
        let zero_row = g.constant(Tensor::zeros(&[1, width]));
        let mut h = zero_row;
        let mut rows = Vec::with_capacity(len);
        for (t, &real) in mask.iter().enumerate() {
            if !real {
                rows.push(zero_row);
                continue;
            }
            let xz = g.slice_rows(proj[0], t, t + 1)?;
            let xr = g.slice_rows(proj[1], t, t + 1)?;
            let xn = g.slice_rows(proj[2], t, t + 1)?;
            let hz = g.matmul(h, u[0])?;
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);
            let hr = g.matmul(h, u[1])?;
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);
            let rh = g.mul(r, h)?;
            let hn = g.matmul(rh, u[2])?;
            let n = g.add(xn, hn)?;
            let n = g.tanh(n);
            let diff = g.sub(h, n)?;
            let keep = g.mul(z, diff)?;
            h = g.add(n, keep)?;
            rows.push(h);
        }
        g.concat_rows(&rows)
    }
}

#[derive(Clone, Debug)]
pub enum EncoderLayers {
    SelfAttention { blocks: Vec<AttentionBlock>, heads: usize },
    Gru(Vec<GruLayer>),
}

/// A stack of backbone layers mapping `T×W` to `T×W`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub width: usize,
    pub layers: EncoderLayers,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        owner: Owner,
        width: usize,
        config: EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let layers = match config.backbone {
            Backbone::SelfAttention => {
                if config.heads == 0 || width % config.heads != 0 {
                    return Err(Error::Config(format!(
                        "{} heads do not divide width {width}",
                        config.heads
                    )));
                }
                let blocks = (0..config.layers)
                    .map(|l| AttentionBlock::new(store, &format!("{name}.{l}"), owner, width, rng))
                    .collect::<Result<_>>()?;
                EncoderLayers::SelfAttention {
                    blocks,
                    heads: config.heads,
                }
            }
            Backbone::Gru => EncoderLayers::Gru(
                (0..config.layers)
                    .map(|l| GruLayer::new(store, &format!("{name}.{l}"), owner, width, rng))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self { width, layers })
    }

    /// Encodes `e` under `mask`; padded rows of the output are zero and row
    /// `t` depends only on rows `≤ t` of the input.
    pub fn encode(&self, g: &mut Graph<'_>, e: Var, mask: &[bool]) -> Result<Var> {
        let shape = g.shape(e);
        if shape.len() != 2 || shape[0] != mask.len() || shape[1] != self.width {
            return Err(Error::Shape(format!(
                "encoder input {shape:?} with mask of length {} and width {}",
                mask.len(),
                self.width
            )));
        }
        let mut x = e;
        match &self.layers {
            EncoderLayers::SelfAttention { blocks, heads } => {
                for b in blocks {
                    x = b.apply(g, x, mask, *heads)?;
                }
            }
            EncoderLayers::Gru(layers) => {
                for l in layers {
                    x = l.apply(g, x, mask)?;
                }
            }
        }
        Ok(x)
    }
}

/// Independent encoders for domains A and B.
pub fn make_local_encoders(
    store: &mut ParamStore,
    config: EncoderConfig,
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Result<[Encoder; 2]> {
    Ok([
        Encoder::new(store, "a.encoder", Owner::A, width, config, rng)?,
        Encoder::new(store, "b.encoder", Owner::B, width, config, rng)?,
    ])
}

/// The encoder shared by both domains' global paths.
pub fn make_global_encoder(
    store: &mut ParamStore,
    config: EncoderConfig,
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Encoder> {
    Encoder::new(store, "global.encoder", Owner::Shared, width, config, rng)
}


#[cfg(test)]
mod gradcheck_tests {
    use rand::SeedableRng;

    use super::*;
    use crate::numerics::finite_difference_check;

    #[test]
    fn gradients_match_finite_differences() {
        for (bb, layers) in [(Backbone::SelfAttention, 1), (Backbone::Gru, 1), (Backbone::SelfAttention, 2)] {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let cfg = EncoderConfig { backbone: bb, layers, heads: 1 };
            let enc = Encoder::new(&mut store, "enc", Owner::A, 3, cfg, &mut rng).unwrap();
            let x = Tensor::new(vec![3, 3], vec![0.1, 0.5, -0.3, 0.2, -0.7, 0.9, 0.4, 0.3, -0.2]).unwrap();
            let f = |g: &mut Graph<'_>| {
                let e = g.constant(x.clone());
                let s = enc.encode(g, e, &[false, true, true])?;
                let w = g.constant(Tensor::new(vec![3, 3], vec![0.3, -0.1, 0.2, 0.5, 0.7, -0.4, 0.1, 0.9, -0.6]).unwrap());
                let p = g.mul(s, w)?;
                Ok(g.sum(p))
            };
            let r = finite_difference_check(f, &store, 1e-5).unwrap();
            assert!(r.max_rel_err < 1e-5, "{bb:?} x{layers}: {:?}", r.worst());
        }
    }
}
