//! Shared building blocks: linear layers, layer norm, initialisers,
//! positional encodings and a transformer layer with post- or pre-norm ordering.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::adapters::Lora;
use crate::autograd::{Graph, NodeId, ParamGroup, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    XavierUniform,
    /// Fan-in Kaiming normal: `N(0, 2 / fan_in)`.
    KaimingNormal,
    Normal(f64),
    Zeros,
}

pub fn init_tensor(rng: &mut impl Rng, shape: &[usize], init: Init) -> Tensor {
    let n: usize = shape.iter().product();
    let (fan_in, fan_out) = match shape {
        [i, o] => (*i, *o),
        [o] => (*o, *o),
        _ => (n, n),
    };
    let data: Vec<f64> = match init {
        Init::Zeros => vec![0.0; n],
        Init::XavierUniform => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bound");
            (0..n).map(|_| u.sample(rng)).collect()
        }
        Init::KaimingNormal => {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Init::Normal(std) => {
            let d = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| d.sample(rng)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `x · W + b` with `W: in×out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        group: ParamGroup,
        weight_init: Init,
        bias_init: Init,
    ) -> Self {
        let weight = store.insert(
            format!("{name}.weight"),
            init_tensor(rng, &[in_dim, out_dim], weight_init),
            group,
        );
        let bias = store.insert(format!("{name}.bias"), init_tensor(rng, &[out_dim], bias_init), group);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let h = g.matmul(x, w)?;
        g.add_bias(h, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, group: ParamGroup) -> Self {
        Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::filled(&[dim], 1.0), group),
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[dim]), group),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Fixed sinusoidal positional encodings, `n × dim`.
pub fn sinusoidal(n: usize, dim: usize) -> Tensor {
    let mut out = vec![0.0; n * dim];
    for pos in 0..n {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            out[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(n, dim, out).expect("shape matches data")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub channels: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl LayerDims {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.ffn == 0 {
            return Err(Error::Config(format!("layer dims must be positive: {self:?}")));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "channel dim {} is not divisible by {} heads",
                self.channels, self.heads
            )));
        }
        Ok(())
    }
}

/// Transformer layer. Post-norm (the default) computes `y = LN(x + MHA(x))`,
/// `out = LN(y + FFN(y))`; pre-norm computes `y = x + MHA(LN(x))`,
/// `out = y + FFN(LN(y))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub dims: LayerDims,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln_attn: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ln_ffn: LayerNorm,
    pub lora_q: Option<Lora>,
    pub lora_v: Option<Lora>,
    /// Normalise sublayer inputs instead of residual sums.
    pub pre_norm: bool,
}

/// Output of an attention sub-block.
#[derive(Debug, Clone)]
pub struct AttnOut {
    pub out: NodeId,
    /// Per-head attention probabilities, each `n × n`.
    pub probs: Vec<NodeId>,
}

impl TransformerLayer {
    /// `residual_scale` multiplies the initial attention-output and
    /// feed-forward-output weights; deep random stacks use `1/sqrt(2·L)` so
    /// tokens stay distinguishable through depth.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: LayerDims,
        group: ParamGroup,
        residual_scale: f64,
    ) -> Result<Self> {
        dims.validate()?;
        let c = dims.channels;
        let lin = |store: &mut ParamStore, rng: &mut _, n: &str, i, o| {
            Linear::new(store, rng, &format!("{name}.{n}"), i, o, group, Init::XavierUniform, Init::Zeros)
        };
        let q = lin(store, rng, "attn.q", c, c);
        let k = lin(store, rng, "attn.k", c, c);
        let v = lin(store, rng, "attn.v", c, c);
        let o = lin(store, rng, "attn.o", c, c);
        let ln_attn = LayerNorm::new(store, &format!("{name}.attn.ln"), c, group);
        let ff_in = lin(store, rng, "ffn.in", c, dims.ffn);
        let ff_out = lin(store, rng, "ffn.out", dims.ffn, c);
        for w in [o.weight, ff_out.weight] {
            store.get_mut(w).value.data_mut().iter_mut().for_each(|x| *x *= residual_scale);
        }
        Ok(Self {
            dims,
            q,
            k,
            v,
            o,
            ln_attn,
            ff_in,
            ff_out,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ffn.ln"), c, group),
            lora_q: None,
            lora_v: None,
            pre_norm: false,
        })
    }

    fn project(
        g: &mut Graph,
        store: &ParamStore,
        lin: &Linear,
        lora: Option<&Lora>,
        x: NodeId,
    ) -> Result<NodeId> {
        let base = lin.forward(g, store, x)?;
        match lora {
            Some(l) => {
                let delta = l.delta(g, store, x)?;
                g.add(base, delta)
            }
            None => Ok(base),
        }
    }

    /// Multi-head self-attention without the residual or norm.
    pub fn attention(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<AttnOut> {
        let c = self.dims.channels;
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != c {
            return Err(Error::dim("attention", &shape, &[shape[0], c]));
        }
        let q = Self::project(g, store, &self.q, self.lora_q.as_ref(), x)?;
        let k = self.k.forward(g, store, x)?;
        let v = Self::project(g, store, &self.v, self.lora_v.as_ref(), x)?;
        let dh = c / self.dims.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.dims.heads);
        let mut probs = Vec::with_capacity(self.dims.heads);
        for h in 0..self.dims.heads {
            let (qh, kh, vh) = if self.dims.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let p = g.softmax_rows(scores)?;
            probs.push(p);
            heads.push(g.matmul(p, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let out = self.o.forward(g, store, cat)?;
        Ok(AttnOut { out, probs })
    }

    pub fn feed_forward(&self, g: &mut Graph, store: &ParamStore, y: NodeId) -> Result<NodeId> {
        let h = self.ff_in.forward(g, store, y)?;
        let h = g.relu(h)?;
        self.ff_out.forward(g, store, h)
    }

    /// The attention sub-block and the per-head attention probabilities.
    pub fn attn_block(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        if self.pre_norm {
            let n = self.ln_attn.forward(g, store, x)?;
            let a = self.attention(g, store, n)?;
            return Ok((g.add(x, a.out)?, a.probs));
        }
        let a = self.attention(g, store, x)?;
        let r = g.add(x, a.out)?;
        Ok((self.ln_attn.forward(g, store, r)?, a.probs))
    }

    /// The feed-forward sub-block.
    pub fn ffn_block(&self, g: &mut Graph, store: &ParamStore, y: NodeId) -> Result<NodeId> {
        if self.pre_norm {
            let n = self.ln_ffn.forward(g, store, y)?;
            let f = self.feed_forward(g, store, n)?;
            return g.add(y, f);
        }
        let f = self.feed_forward(g, store, y)?;
        let r = g.add(y, f)?;
        self.ln_ffn.forward(g, store, r)
    }
}
