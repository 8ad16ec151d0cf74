//! Model assembly and the forward pass for every regime.

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, InsertionForm, Lora, LoraConfig, SideNetwork, Slot};
use crate::autograd::{Graph, NodeId, ParamGroup, ParamStore, Scope, Tensor};
use crate::data::{vocab, Image};
use crate::encoder::{Encoder, EncoderConfig, LayerTaps, Modality, PatchGeometry};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionOut, VlConfig};
use crate::losses::BBox;
use crate::regime::RegimeKind;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub regime: RegimeKind,
    pub vision: EncoderConfig,
    pub language: EncoderConfig,
    pub geometry: PatchGeometry,
    pub vocab: usize,
    pub vl: VlConfig,
    /// `form` is overridden by the regime.
    pub adapter: AdapterConfig,
    pub lora: LoraConfig,
    pub trainable_seed: u64,
}

impl ModelConfig {
    /// Default small dimensions for the synthetic task.
    pub fn toy(regime: RegimeKind) -> Self {
        let frozen_seed = 17;
        Self {
            regime,
            vision: EncoderConfig {
                n_layers: 6,
                channel_dim: 64,
                n_heads: 4,
                ffn_dim: 128,
                seed: frozen_seed,
            },
            language: EncoderConfig {
                n_layers: 12,
                channel_dim: 96,
                n_heads: 4,
                ffn_dim: 192,
                seed: frozen_seed,
            },
            geometry: PatchGeometry {
                height: 32,
                width: 32,
                patch: 8,
            },
            vocab: vocab::vocab_size(),
            vl: VlConfig {
                c_p: 64,
                n_layers: 2,
                n_heads: 4,
                ffn_dim: 128,
                head_hidden: 64,
            },
            adapter: AdapterConfig {
                c_d: 32,
                c_i: 64,
                ..AdapterConfig::reference()
            },
            lora: LoraConfig::default(),
            trainable_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        self.language.validate()?;
        self.geometry.validate()?;
        self.vl.validate()?;
        if self.regime.adapter_form().is_some() {
            self.adapter.validate(
                self.vision.channel_dim,
                self.language.channel_dim,
                self.vision.n_layers,
                self.language.n_layers,
            )?;
        }
        Ok(())
    }
}

/// Frozen encoder outputs and taps for one sample, as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub vision_out: Tensor,
    pub language_out: Tensor,
    pub vision_taps: Vec<(Tensor, Tensor)>,
    pub language_taps: Vec<(Tensor, Tensor)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub vision: Encoder,
    pub language: Encoder,
    pub side: Option<SideNetwork>,
    pub fusion: Fusion,
}

/// Nodes of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOut {
    pub pred: NodeId,
    pub f_v: NodeId,
    pub f_l: NodeId,
    pub vision_taps: LayerTaps,
    pub language_taps: LayerTaps,
    pub fusion: FusionOut,
}

impl Model {
    pub fn build(config: ModelConfig) -> Result<Self> {
        let mut config = config;
        if let Some(form) = config.regime.adapter_form() {
            config.adapter.form = form;
        }
        config.validate()?;
        let mut store = ParamStore::new();
        let mut vision = Encoder::vision(
            &mut store,
            &mut stream_rng(config.vision.seed, Stream::VisionEncoder, 0),
            config.vision,
            config.geometry,
        )?;
        let mut language = Encoder::language(
            &mut store,
            &mut stream_rng(config.language.seed, Stream::LanguageEncoder, 0),
            config.language,
            config.vocab,
        )?;
        let fusion = Fusion::new(
            &mut store,
            &mut stream_rng(config.trainable_seed, Stream::Fusion, 0),
            config.vl,
            config.vision.channel_dim,
            config.language.channel_dim,
        )?;
        let side = match config.regime.adapter_form() {
            Some(_) => Some(SideNetwork::new(
                &mut store,
                &mut stream_rng(config.trainable_seed, Stream::Adapters, 0),
                config.adapter.clone(),
                config.vision.channel_dim,
                config.language.channel_dim,
            )?),
            None => None,
        };
        if config.regime.uses_lora() {
            let mut rng = stream_rng(config.trainable_seed, Stream::Lora, 0);
            for enc in [&mut vision, &mut language] {
                let prefix = enc.modality.prefix();
                for (i, layer) in enc.layers.iter_mut().enumerate() {
                    let c = layer.dims.channels;
                    let name = format!("{prefix}.layer{}.attn", i + 1);
                    layer.lora_q = Some(Lora::new(&mut store, &mut rng, &format!("{name}.q"), c, c, config.lora)?);
                    layer.lora_v = Some(Lora::new(&mut store, &mut rng, &format!("{name}.v"), c, c, config.lora)?);
                }
            }
        }
        let regime = config.regime;
        store.set_trainable_where(|g| regime.trains(g));
        Ok(Self {
            config,
            store,
            vision,
            language,
            side,
            fusion,
        })
    }

    pub fn regime(&self) -> RegimeKind {
        self.config.regime
    }

    /// Whether [`Model::encode`] outputs may stand in for the encoders.
    pub fn can_cache(&self) -> bool {
        self.regime().encoders_constant()
    }

    fn encoder(&self, m: Modality) -> &Encoder {
        match m {
            Modality::Vision => &self.vision,
            Modality::Language => &self.language,
        }
    }

    /// Runs one encoder, with any in-path adapters hooked in.
    fn run_encoder(&self, g: &mut Graph, m: Modality, tokens: NodeId) -> Result<(NodeId, LayerTaps)> {
        let enc = self.encoder(m);
        let in_path = self
            .side
            .as_ref()
            .filter(|s| s.config.form != InsertionForm::Side);
        let Some(side) = in_path else {
            return enc.run(g, &self.store, tokens);
        };
        let sequential = side.config.form == InsertionForm::Sequential;
        let mut taps = LayerTaps::default();
        let mut x = tokens;
        for i in 0..enc.n_layers() {
            let y = enc.attn_block(g, &self.store, i, x)?;
            let y = self.hook(g, side, m, i, Slot::Attention, y, if sequential { y } else { x })?;
            taps.mha_out.push(y);
            let z = enc.ffn_block(g, &self.store, i, y)?;
            let z = self.hook(g, side, m, i, Slot::FeedForward, z, if sequential { z } else { y })?;
            taps.ffn_out.push(z);
            x = z;
        }
        Ok((x, taps))
    }

    /// `out + Σ Δ(input)` over adapters hooked at this slot.
    #[allow(clippy::too_many_arguments)]
    fn hook(
        &self,
        g: &mut Graph,
        side: &SideNetwork,
        m: Modality,
        layer: usize,
        slot: Slot,
        out: NodeId,
        input: NodeId,
    ) -> Result<NodeId> {
        let mut y = out;
        for adapters in side.hooks(m, layer, slot) {
            if let Some(d) = adapters.delta(g, &self.store, m, input)? {
                y = g.with_scope(Scope::Adapter, |g| g.add(y, d))?;
            }
        }
        Ok(y)
    }

    /// Frozen encoder outputs and taps of one sample.
    pub fn encode(&self, image: &Image, tokens: &[usize]) -> Result<EncodedSample> {
        let mut g = Graph::new();
        let v = self.vision.embed_image(&mut g, &self.store, image)?;
        let l = self.language.embed_text(&mut g, &self.store, tokens)?;
        let (vo, vt) = self.run_encoder(&mut g, Modality::Vision, v)?;
        let (lo, lt) = self.run_encoder(&mut g, Modality::Language, l)?;
        let pairs = |t: &LayerTaps| -> Vec<(Tensor, Tensor)> {
            t.mha_out
                .iter()
                .zip(&t.ffn_out)
                .map(|(a, f)| (g.value(*a).clone(), g.value(*f).clone()))
                .collect()
        };
        Ok(EncodedSample {
            vision_out: g.value(vo).clone(),
            language_out: g.value(lo).clone(),
            vision_taps: pairs(&vt),
            language_taps: pairs(&lt),
        })
    }

    /// Records the full forward pass of one sample.
    pub fn forward(&self, g: &mut Graph, image: &Image, tokens: &[usize]) -> Result<ForwardOut> {
        let v = self.vision.embed_image(g, &self.store, image)?;
        let l = self.language.embed_text(g, &self.store, tokens)?;
        let (vo, vt) = self.run_encoder(g, Modality::Vision, v)?;
        let (lo, lt) = self.run_encoder(g, Modality::Language, l)?;
        self.head_from_encoders(g, vo, lo, vt, lt)
    }

    /// Forward from cached encoder outputs; equal to [`Model::forward`] to
    /// the last bit when [`Model::can_cache`] holds.
    pub fn forward_cached(&self, g: &mut Graph, enc: &EncodedSample) -> Result<ForwardOut> {
        if !self.can_cache() {
            return Err(Error::Contract(format!(
                "regime {} trains through the encoders and cannot use cached taps",
                self.regime()
            )));
        }
        let mut load = |m: Modality, out: &Tensor, taps: &[(Tensor, Tensor)]| {
            g.with_scope(m.scope(), |g| {
                let mut t = LayerTaps::default();
                for (a, f) in taps {
                    t.mha_out.push(g.constant(a.clone()));
                    t.ffn_out.push(g.constant(f.clone()));
                }
                (g.constant(out.clone()), t)
            })
        };
        let (vo, vt) = load(Modality::Vision, &enc.vision_out, &enc.vision_taps);
        let (lo, lt) = load(Modality::Language, &enc.language_out, &enc.language_taps);
        self.head_from_encoders(g, vo, lo, vt, lt)
    }

    fn head_from_encoders(
        &self,
        g: &mut Graph,
        vo: NodeId,
        lo: NodeId,
        vt: LayerTaps,
        lt: LayerTaps,
    ) -> Result<ForwardOut> {
        let (mut f_v, mut f_l) = (vo, lo);
        if let Some(side) = self.side.as_ref().filter(|s| s.config.form == InsertionForm::Side) {
            let (dv, dl) = crate::adapters::side_accumulate(g, &self.store, side, &vt, &lt)?;
            g.with_scope(Scope::Adapter, |g| -> Result<()> {
                if let Some(d) = dv {
                    f_v = g.add(vo, d)?;
                }
                if let Some(d) = dl {
                    f_l = g.add(lo, d)?;
                }
                Ok(())
            })?;
        }
        let fusion = self.fusion.fuse(g, &self.store, f_v, f_l)?;
        let pred = self.fusion.predict_box(g, &self.store, fusion.reg)?;
        Ok(ForwardOut {
            pred,
            f_v,
            f_l,
            vision_taps: vt,
            language_taps: lt,
            fusion,
        })
    }

    /// Predicted box from a recorded forward.
    pub fn pred_box(g: &Graph, out: &ForwardOut) -> BBox {
        let d = g.value(out.pred).data();
        BBox {
            x: d[0],
            y: d[1],
            w: d[2],
            h: d[3],
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn total_count(&self) -> usize {
        self.store.total_count()
    }

    pub fn group_count(&self, group: ParamGroup) -> usize {
        self.store.count(|p| p.group == group)
    }
}

/// Mean of per-sample box losses.
pub fn batch_loss(g: &mut Graph, preds: &[(NodeId, BBox)], lambda: f64, beta: f64) -> Result<NodeId> {
    if preds.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    g.with_scope(Scope::Loss, |g| {
        let losses = preds
            .iter()
            .map(|(p, gt)| g.box_loss(*p, *gt, lambda, beta))
            .collect::<Result<Vec<_>>>()?;
        let total = g.add_n(&losses)?;
        g.scale(total, 1.0 / preds.len() as f64)
    })
}
