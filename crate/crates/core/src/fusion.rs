//! Trainable vision-language encoder and box head.
//!
//! The fusion layers use pre-norm ordering; the encoders use post-norm.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId, ParamGroup, ParamId, ParamStore, Scope, Tensor};
use crate::error::{Error, Result};
use crate::nn::{init_tensor, sinusoidal, Init, LayerDims, Linear, TransformerLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlConfig {
    pub c_p: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub head_hidden: usize,
}

impl VlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_p == 0 || self.head_hidden == 0 {
            return Err(Error::Config("c_p and head hidden dim must be positive".into()));
        }
        LayerDims {
            channels: self.c_p,
            heads: self.n_heads,
            ffn: self.ffn_dim,
        }
        .validate()
    }
}

#[derive(Debug, Clone)]
pub struct Fusion {
    pub config: VlConfig,
    pub proj_v: Linear,
    pub proj_l: Linear,
    pub reg: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub head: [Linear; 3],
}

/// Result of a fusion forward.
#[derive(Debug, Clone)]
pub struct FusionOut {
    /// Final `[REG]` state, `1 × c_p`.
    pub reg: NodeId,
    /// Per layer, per head attention probabilities over `1 + N_v + N_l` tokens.
    pub attention: Vec<Vec<NodeId>>,
    pub n_vision: usize,
    pub n_language: usize,
}

impl Fusion {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: VlConfig, c_v: usize, c_l: usize) -> Result<Self> {
        config.validate()?;
        let lin = |store: &mut ParamStore, rng: &mut _, name: &str, i, o, group| {
            Linear::new(store, rng, name, i, o, group, Init::XavierUniform, Init::Zeros)
        };
        let proj_v = lin(store, rng, "fusion.proj_v", c_v, config.c_p, ParamGroup::Fusion);
        let proj_l = lin(store, rng, "fusion.proj_l", c_l, config.c_p, ParamGroup::Fusion);
        let reg = store.insert(
            "fusion.reg",
            init_tensor(rng, &[1, config.c_p], Init::XavierUniform),
            ParamGroup::Fusion,
        );
        let dims = LayerDims {
            channels: config.c_p,
            heads: config.n_heads,
            ffn: config.ffn_dim,
        };
        let layers = (0..config.n_layers)
            .map(|i| {
                let mut l = TransformerLayer::new(store, rng, &format!("fusion.layer{}", i + 1), dims, ParamGroup::Fusion, 1.0)?;
                l.pre_norm = true;
                Ok(l)
            })
            .collect::<Result<Vec<_>>>()?;
        let h = config.head_hidden;
        let head = [
            lin(store, rng, "head.fc1", config.c_p, h, ParamGroup::Head),
            lin(store, rng, "head.fc2", h, h, ParamGroup::Head),
            lin(store, rng, "head.out", h, 4, ParamGroup::Head),
        ];
        Ok(Self {
            config,
            proj_v,
            proj_l,
            reg,
            layers,
            head,
        })
    }

    /// Projects both streams, adds positional encodings per stream (none on
    /// `[REG]`), and runs `[REG ‖ vision ‖ language]` through the layers.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, f_v: NodeId, f_l: NodeId) -> Result<FusionOut> {
        let (n_v, n_l) = (g.shape(f_v)[0], g.shape(f_l)[0]);
        for (x, lin) in [(f_v, &self.proj_v), (f_l, &self.proj_l)] {
            let s = g.shape(x);
            if s.len() != 2 || s[1] != lin.in_dim {
                return Err(Error::dim("fuse", s, &[s[0], lin.in_dim]));
            }
        }
        g.with_scope(Scope::Fusion, |g| {
            let c_p = self.config.c_p;
            let pv = self.proj_v.forward(g, store, f_v)?;
            let pe_v = g.constant(sinusoidal(n_v, c_p));
            let pv = g.add(pv, pe_v)?;
            let pl = self.proj_l.forward(g, store, f_l)?;
            let pe_l = g.constant(sinusoidal(n_l, c_p));
            let pl = g.add(pl, pe_l)?;
            let reg = g.param(store, self.reg);
            let mut x = g.concat_rows(&[reg, pv, pl])?;
            let mut attention = Vec::with_capacity(self.layers.len());
            for layer in &self.layers {
                let (y, probs) = layer.attn_block(g, store, x)?;
                attention.push(probs);
                x = layer.ffn_block(g, store, y)?;
            }
            Ok(FusionOut {
                reg: g.slice_rows(x, 0, 1)?,
                attention,
                n_vision: n_v,
                n_language: n_l,
            })
        })
    }

    /// Two ReLU hidden layers, a linear map to 4 values and a logistic squash.
    pub fn predict_box(&self, g: &mut Graph, store: &ParamStore, reg: NodeId) -> Result<NodeId> {
        g.with_scope(Scope::Head, |g| {
            let h = self.head[0].forward(g, store, reg)?;
            let h = g.relu(h)?;
            let h = self.head[1].forward(g, store, h)?;
            let h = g.relu(h)?;
            let o = self.head[2].forward(g, store, h)?;
            g.sigmoid(o)
        })
    }
}

/// Head-averaged attention matrix of one layer.
pub fn mean_attention(g: &Graph, heads: &[NodeId]) -> Result<Tensor> {
    let first = heads
        .first()
        .ok_or_else(|| Error::Contract("attention layer has no heads".into()))?;
    let mut acc = g.value(*first).clone();
    for h in &heads[1..] {
        for (a, v) in acc.data_mut().iter_mut().zip(g.value(*h).data()) {
            *a += v;
        }
    }
    let k = heads.len() as f64;
    acc.data_mut().iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

/// `[REG]` row restricted to the vision tokens and renormalised.
pub fn reg_to_vision(attn: &Tensor, n_vision: usize) -> Result<Vec<f64>> {
    let (rows, cols) = attn.dims2();
    if rows == 0 || cols < 1 + n_vision {
        return Err(Error::dim("reg_to_vision", attn.shape(), &[rows, 1 + n_vision]));
    }
    let row = &attn.row(0)[1..1 + n_vision];
    let total: f64 = row.iter().sum();
    Ok(row.iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::matmul;
    use crate::rng::{stream_rng, Stream};

    fn cfg() -> VlConfig {
        VlConfig {
            c_p: 8,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 16,
            head_hidden: 6,
        }
    }

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sequence_length_and_attention_shapes() {
        let mut rng = stream_rng(1, Stream::Fusion, 0);
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut store, &mut rng, cfg(), 6, 10).unwrap();
        let mut g = Graph::new();
        let v = g.constant(random(&mut rng, 4, 6));
        let l = g.constant(random(&mut rng, 5, 10));
        let out = f.fuse(&mut g, &store, v, l).unwrap();
        assert_eq!(g.shape(out.reg), &[1, 8]);
        assert_eq!(out.attention.len(), 2);
        for layer in &out.attention {
            let m = mean_attention(&g, layer).unwrap();
            assert_eq!(m.shape(), &[10, 10]);
            for r in 0..10 {
                assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let grid = reg_to_vision(&m, 4).unwrap();
            assert!((grid.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let bad = g.constant(random(&mut rng, 4, 7));
        assert!(matches!(f.fuse(&mut g, &store, bad, l), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_head_predicts_centre_box() {
        let mut rng = stream_rng(2, Stream::Fusion, 0);
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut store, &mut rng, cfg(), 6, 10).unwrap();
        for lin in &f.head {
            for id in [lin.weight, lin.bias] {
                let s = store.get(id).value.shape().to_vec();
                store.set_value(id, Tensor::zeros(&s)).unwrap();
            }
        }
        let mut g = Graph::new();
        let reg = g.constant(random(&mut rng, 1, 8));
        let b = f.predict_box(&mut g, &store, reg).unwrap();
        assert_eq!(g.value(b).data(), &[0.5; 4]);
    }

    #[test]
    fn zero_projections_and_reg_give_bias_only_reg_state() {
        let mut rng = stream_rng(3, Stream::Fusion, 0);
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut store, &mut rng, cfg(), 6, 10).unwrap();
        for id in [f.proj_v.weight, f.proj_l.weight, f.reg] {
            let s = store.get(id).value.shape().to_vec();
            store.set_value(id, Tensor::zeros(&s)).unwrap();
        }
        let run = |seed: u64| {
            let mut rng = stream_rng(seed, Stream::Batches, 0);
            let mut g = Graph::new();
            let v = g.constant(random(&mut rng, 4, 6));
            let l = g.constant(random(&mut rng, 3, 10));
            let out = f.fuse(&mut g, &store, v, l).unwrap();
            g.value(out.reg).clone()
        };
        // Inputs no longer matter; the [REG] state depends only on positions and biases.
        assert!(run(10).bit_eq(&run(11)));
    }

    #[test]
    fn box_head_matches_dense_oracle_and_stays_in_range() {
        let mut rng = stream_rng(4, Stream::Fusion, 0);
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut store, &mut rng, cfg(), 6, 10).unwrap();
        for lin in &f.head {
            let n = store.get(lin.bias).value.len();
            store.set_value(lin.bias, random(&mut rng, 1, n).reshape(&[n]).unwrap()).unwrap();
        }
        let x = random(&mut rng, 1, 8);
        let mut g = Graph::new();
        let reg = g.constant(x.clone());
        let b = f.predict_box(&mut g, &store, reg).unwrap();
        let mut h = x.clone();
        for (i, lin) in f.head.iter().enumerate() {
            let mut y = matmul(&h, &store.get(lin.weight).value).unwrap();
            for (v, b) in y.data_mut().iter_mut().zip(store.get(lin.bias).value.data()) {
                *v += b;
                if i < 2 {
                    *v = v.max(0.0);
                }
            }
            h = y;
        }
        for k in 0..4 {
            let expect = 1.0 / (1.0 + (-h.data()[k]).exp());
            assert!((g.value(b).data()[k] - expect).abs() < 1e-14);
        }
        for scale in [1e3, -1e3, 1e6] {
            let mut g = Graph::new();
            let reg = g.constant(Tensor::filled(&[1, 8], scale));
            let b = f.predict_box(&mut g, &store, reg).unwrap();
            assert!(g.value(b).data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn swapping_vision_tokens_keeps_reg_mass() {
        let mut rng = stream_rng(5, Stream::Fusion, 0);
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut store, &mut rng, cfg(), 6, 10).unwrap();
        // Fused sequence: [REG], 4 vision tokens, 3 language tokens, with
        // positional encodings already folded in.
        let x = random(&mut rng, 8, 8);
        let mut rows: Vec<&[f64]> = (0..8).map(|i| x.row(i)).collect();
        rows.swap(1, 3);
        let xp = Tensor::from_rows(&rows).unwrap();
        let attn = |t: &Tensor| {
            let mut g = Graph::new();
            let n = g.constant(t.clone());
            let (_, probs) = f.layers[0].attn_block(&mut g, &store, n).unwrap();
            mean_attention(&g, &probs).unwrap()
        };
        let (a, b) = (attn(&x), attn(&xp));
        let mass = |t: &Tensor| t.row(0)[1..5].iter().sum::<f64>();
        assert!((mass(&a) - mass(&b)).abs() < 1e-10);
        assert!((a.at(0, 1) - b.at(0, 3)).abs() < 1e-12);
        assert!(a.max_abs_diff(&b) > 1e-6);
    }
}
