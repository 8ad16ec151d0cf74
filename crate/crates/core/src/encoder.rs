//! Miniature frozen dual encoders.
//!
//! The vision encoder embeds non-overlapping `p×p` patches with a linear
//! map; the language encoder looks token ids up in an embedding table after
//! wrapping them in start/end markers. Both add fixed sinusoidal positional
//! encodings and run a stack of post-norm transformer layers. Every layer
//! exposes two taps: the attention sub-block output and the feed-forward
//! sub-block output, each taken after the residual sum and layer norm.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId, ParamGroup, ParamId, ParamStore, Scope, Tensor};
use crate::data::{Image, BACKGROUND};
use crate::error::{Error, Result};
use crate::nn::{init_tensor, sinusoidal, Init, LayerDims, Linear, TransformerLayer};

/// Id of the sentence-start marker in the language vocabulary.
pub const START_TOKEN: usize = 0;
/// Id of the sentence-end marker in the language vocabulary.
pub const END_TOKEN: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Vision,
    Language,
}

impl Modality {
    pub fn scope(self) -> Scope {
        match self {
            Modality::Vision => Scope::VisionEncoder,
            Modality::Language => Scope::LanguageEncoder,
        }
    }

    pub fn group(self) -> ParamGroup {
        match self {
            Modality::Vision => ParamGroup::VisionEncoder,
            Modality::Language => ParamGroup::LanguageEncoder,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Language => "language",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub channel_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        self.layer_dims().validate()
    }

    pub fn layer_dims(&self) -> LayerDims {
        LayerDims {
            channels: self.channel_dim,
            heads: self.n_heads,
            ffn: self.ffn_dim,
        }
    }
}

/// Image size and patch size for the vision tokeniser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible into {}-pixel patches",
                self.height, self.width, self.patch
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn n_tokens(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Patches in raster order, each flattened as `(row, col, channel)`.
    pub fn patchify(&self, image: &Image) -> Result<Tensor> {
        if image.height != self.height || image.width != self.width {
            return Err(Error::dim(
                "patchify",
                &[image.height, image.width],
                &[self.height, self.width],
            ));
        }
        let p = self.patch;
        let (gr, gc) = self.grid();
        let mut out = Vec::with_capacity(self.n_tokens() * self.patch_len());
        for pr in 0..gr {
            for pc in 0..gc {
                for r in 0..p {
                    let y = pr * p + r;
                    let start = (y * self.width + pc * p) * 3;
                    out.extend_from_slice(&image.pixels[start..start + p * 3]);
                }
            }
        }
        Tensor::matrix(self.n_tokens(), self.patch_len(), out)
    }
}

#[derive(Debug, Clone)]
pub enum Embedding {
    Patch { proj: Linear, geometry: PatchGeometry },
    Token { table: ParamId, vocab: usize },
}

/// Per-layer taps, indexed by 0-based layer.
#[derive(Debug, Clone, Default)]
pub struct LayerTaps {
    pub mha_out: Vec<NodeId>,
    pub ffn_out: Vec<NodeId>,
}

impl LayerTaps {
    pub fn len(&self) -> usize {
        self.mha_out.len() + self.ffn_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.mha_out.iter().chain(&self.ffn_out).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub modality: Modality,
    pub config: EncoderConfig,
    pub embedding: Embedding,
    pub layers: Vec<TransformerLayer>,
}

impl Encoder {
    pub fn vision(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: EncoderConfig,
        geometry: PatchGeometry,
    ) -> Result<Self> {
        config.validate()?;
        geometry.validate()?;
        let group = ParamGroup::VisionEncoder;
        let proj = Linear::new(
            store,
            rng,
            "vision.patch_embed",
            geometry.patch_len(),
            config.channel_dim,
            group,
            Init::XavierUniform,
            Init::Normal(0.02),
        );
        let layers = Self::build_layers(store, rng, Modality::Vision, &config)?;
        Ok(Self {
            modality: Modality::Vision,
            config,
            embedding: Embedding::Patch { proj, geometry },
            layers,
        })
    }

    /// `vocab` includes the two marker ids.
    pub fn language(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: EncoderConfig,
        vocab: usize,
    ) -> Result<Self> {
        config.validate()?;
        if vocab <= END_TOKEN + 1 {
            return Err(Error::Config(format!("vocabulary of {vocab} ids has no words")));
        }
        let table = store.insert(
            "language.token_embed",
            init_tensor(rng, &[vocab, config.channel_dim], Init::Normal(1.0)),
            ParamGroup::LanguageEncoder,
        );
        let layers = Self::build_layers(store, rng, Modality::Language, &config)?;
        Ok(Self {
            modality: Modality::Language,
            config,
            embedding: Embedding::Token { table, vocab },
            layers,
        })
    }

    fn build_layers(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        modality: Modality,
        config: &EncoderConfig,
    ) -> Result<Vec<TransformerLayer>> {
        let residual_scale = 1.0 / ((2 * config.n_layers) as f64).sqrt();
        (0..config.n_layers)
            .map(|i| {
                TransformerLayer::new(
                    store,
                    rng,
                    &format!("{}.layer{}", modality.prefix(), i + 1),
                    config.layer_dims(),
                    modality.group(),
                    residual_scale,
                )
            })
            .collect()
    }

    /// Patch embedding of background-centred pixels plus positional
    /// encodings: `N_v × C_v`. An empty canvas embeds to bias plus positions.
    pub fn embed_image(&self, g: &mut Graph, store: &ParamStore, image: &Image) -> Result<NodeId> {
        let Embedding::Patch { proj, geometry } = &self.embedding else {
            return Err(Error::Contract("embed_image on a language encoder".into()));
        };
        let mut patches = geometry.patchify(image)?;
        patches.data_mut().iter_mut().for_each(|v| *v -= BACKGROUND);
        g.with_scope(Scope::VisionEncoder, |g| {
            let x = g.constant(patches);
            let tokens = proj.forward(g, store, x)?;
            let pe = g.constant(sinusoidal(geometry.n_tokens(), self.config.channel_dim));
            g.add(tokens, pe)
        })
    }

    /// Marker-wrapped embedding lookup plus positional encodings:
    /// `(len + 2) × C_l`.
    pub fn embed_text(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<NodeId> {
        let Embedding::Token { table, vocab } = &self.embedding else {
            return Err(Error::Contract("embed_text on a vision encoder".into()));
        };
        if let Some(bad) = ids.iter().find(|&&i| i >= *vocab || i <= END_TOKEN) {
            return Err(Error::Input(format!(
                "token id {bad} is not a word id in a vocabulary of {vocab}"
            )));
        }
        let n = ids.len() + 2;
        if n < 3 {
            return Err(Error::Input("expression has no words".into()));
        }
        let mut onehot = vec![0.0; n * vocab];
        let seq = std::iter::once(START_TOKEN)
            .chain(ids.iter().copied())
            .chain(std::iter::once(END_TOKEN));
        for (pos, id) in seq.enumerate() {
            onehot[pos * vocab + id] = 1.0;
        }
        g.with_scope(Scope::LanguageEncoder, |g| {
            let oh = g.constant(Tensor::matrix(n, *vocab, onehot)?);
            let t = g.param(store, *table);
            let tokens = g.matmul(oh, t)?;
            let pe = g.constant(sinusoidal(n, self.config.channel_dim));
            g.add(tokens, pe)
        })
    }

    /// Runs one layer's attention sub-block, tagged with this encoder's scope.
    pub fn attn_block(&self, g: &mut Graph, store: &ParamStore, layer: usize, x: NodeId) -> Result<NodeId> {
        g.with_scope(self.modality.scope(), |g| {
            Ok(self.layers[layer].attn_block(g, store, x)?.0)
        })
    }

    pub fn ffn_block(&self, g: &mut Graph, store: &ParamStore, layer: usize, y: NodeId) -> Result<NodeId> {
        g.with_scope(self.modality.scope(), |g| self.layers[layer].ffn_block(g, store, y))
    }

    fn check_channels(&self, g: &Graph, x: NodeId) -> Result<()> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.config.channel_dim {
            return Err(Error::dim(
                "run_encoder",
                shape,
                &[shape[0], self.config.channel_dim],
            ));
        }
        Ok(())
    }

    /// Runs every layer, recording both taps of each.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, tokens: NodeId) -> Result<(NodeId, LayerTaps)> {
        self.check_channels(g, tokens)?;
        let mut taps = LayerTaps::default();
        let mut x = tokens;
        for i in 0..self.layers.len() {
            let y = self.attn_block(g, store, i, x)?;
            taps.mha_out.push(y);
            x = self.ffn_block(g, store, i, y)?;
            taps.ffn_out.push(x);
        }
        Ok((x, taps))
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}
