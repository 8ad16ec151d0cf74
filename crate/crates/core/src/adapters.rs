//! Adapters and the side network.
//!
//! Every adapter exposes a *delta* form (`s·f(x)`, without the input
//! re-added) used for off-path accumulation, and a residual form
//! `x + delta` used when the adapter sits inside an encoder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId, ParamGroup, ParamId, ParamStore, Scope};
use crate::encoder::{LayerTaps, Modality};
use crate::error::{Error, Result};
use crate::nn::{init_tensor, Init, Linear};

/// Where adapter deltas enter the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionForm {
    /// `y' = y + Δ(y)` on a sublayer output, feeding the next frozen layer.
    Sequential,
    /// `y' = y + Δ(x)` with `x` the sublayer input, feeding the next frozen layer.
    Parallel,
    /// Deltas of the taps are summed off-path and added to the final outputs.
    Side,
}

impl InsertionForm {
    pub const ALL: [InsertionForm; 3] = [Self::Sequential, Self::Parallel, Self::Side];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sequential => "sequential",
            Self::Parallel => "parallel",
            Self::Side => "side",
        }
    }
}

impl fmt::Display for InsertionForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InsertionForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown insertion form `{s}`")))
    }
}

/// The adapter kind at one tap position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    /// One intra-modality expert per encoder (VEA / LEA).
    Expert,
    /// One interaction adapter shared by the paired layers (IEA).
    Interaction,
}

impl SlotKind {
    fn name(self) -> &'static str {
        match self {
            Self::Expert => "lea_vea",
            Self::Interaction => "iea",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "lea_vea" => Some(Self::Expert),
            "iea" => Some(Self::Interaction),
            _ => None,
        }
    }
}

/// The two tap positions inside an encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Attention,
    FeedForward,
}

/// Adapter kind at the attention tap and at the feed-forward tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mixing {
    pub attention: SlotKind,
    pub feed_forward: SlotKind,
}

impl Mixing {
    pub const DEFAULT: Mixing = Mixing {
        attention: SlotKind::Interaction,
        feed_forward: SlotKind::Expert,
    };

    /// The four strategies in ablation order.
    pub fn all() -> [Mixing; 4] {
        use SlotKind::*;
        [
            Mixing { attention: Expert, feed_forward: Expert },
            Mixing { attention: Interaction, feed_forward: Interaction },
            Mixing { attention: Expert, feed_forward: Interaction },
            Mixing { attention: Interaction, feed_forward: Expert },
        ]
    }

    pub fn kind(&self, slot: Slot) -> SlotKind {
        match slot {
            Slot::Attention => self.attention,
            Slot::FeedForward => self.feed_forward,
        }
    }
}

impl Default for Mixing {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for Mixing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.attention.name(), self.feed_forward.name())
    }
}

impl FromStr for Mixing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown mixing strategy `{s}` (expected e.g. iea/lea_vea)"));
        let (a, f) = s.split_once('/').ok_or_else(bad)?;
        Ok(Mixing {
            attention: SlotKind::parse(a).ok_or_else(bad)?,
            feed_forward: SlotKind::parse(f).ok_or_else(bad)?,
        })
    }
}

/// Which adapter families are instantiated at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Components {
    pub lea: bool,
    pub vea: bool,
    pub iea: bool,
}

impl Components {
    pub const ALL: Components = Components {
        lea: true,
        vea: true,
        iea: true,
    };

    /// Rows of the component ablation: none, LEA, VEA, LEA+VEA, IEA, all.
    pub fn ablation_rows() -> [Components; 6] {
        let c = |lea, vea, iea| Components { lea, vea, iea };
        [
            c(false, false, false),
            c(true, false, false),
            c(false, true, false),
            c(true, true, false),
            c(false, false, true),
            c(true, true, true),
        ]
    }

    pub fn expert(&self, modality: Modality) -> bool {
        match modality {
            Modality::Vision => self.vea,
            Modality::Language => self.lea,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lea || self.vea || self.iea)
    }
}

impl Default for Components {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for Components {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.lea, "lea"), (self.vea, "vea"), (self.iea, "iea")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

impl FromStr for Components {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut c = Components {
            lea: false,
            vea: false,
            iea: false,
        };
        if s == "none" {
            return Ok(c);
        }
        for part in s.split('+') {
            match part.trim() {
                "lea" => c.lea = true,
                "vea" => c.vea = true,
                "iea" => c.iea = true,
                "all" => c = Components::ALL,
                other => return Err(Error::Config(format!("unknown adapter component `{other}`"))),
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub c_d: usize,
    pub c_i: usize,
    pub s: f64,
    pub form: InsertionForm,
    pub mixing: Mixing,
    pub components: Components,
    /// 1-based vision layer indices.
    pub vision_positions: Vec<usize>,
    /// 1-based language layer indices, paired by index with the vision list.
    pub language_positions: Vec<usize>,
}

impl AdapterConfig {
    /// Defaults at the reference dimensions (`C_v = 256`, `C_l = 768`, 6 and 12 layers).
    pub fn reference() -> Self {
        Self {
            c_d: 128,
            c_i: 256,
            s: 0.1,
            form: InsertionForm::Side,
            mixing: Mixing::DEFAULT,
            components: Components::ALL,
            vision_positions: (1..=6).collect(),
            language_positions: (7..=12).collect(),
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.vision_positions.len()
    }

    pub fn validate(&self, c_v: usize, c_l: usize, n_vision: usize, n_language: usize) -> Result<()> {
        if self.c_d == 0 {
            return Err(Error::Config("c_d must be at least 1".into()));
        }
        if self.c_i == 0 || self.c_i > c_v.min(c_l) {
            return Err(Error::Config(format!(
                "c_i = {} must lie in 1..={} (min of C_v = {c_v}, C_l = {c_l})",
                self.c_i,
                c_v.min(c_l)
            )));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::Config(format!("scale s = {} must be finite and >= 0", self.s)));
        }
        if self.vision_positions.len() != self.language_positions.len() {
            return Err(Error::Config(format!(
                "{} vision positions but {} language positions; they are paired by index",
                self.vision_positions.len(),
                self.language_positions.len()
            )));
        }
        check_positions("vision", &self.vision_positions, n_vision)?;
        check_positions("language", &self.language_positions, n_language)
    }

    /// Keeps `k` of the configured pairs, evenly spaced (2 of 6 keeps pairs
    /// 1 and 4, 4 of 6 keeps 1, 3, 4 and 6).
    pub fn with_density(mut self, k: usize) -> Result<Self> {
        let n = self.n_pairs();
        if k > n {
            return Err(Error::Config(format!("density {k} exceeds the {n} configured positions")));
        }
        let picks = density_indices(n, k);
        self.vision_positions = picks.iter().map(|&i| self.vision_positions[i]).collect();
        self.language_positions = picks.iter().map(|&i| self.language_positions[i]).collect();
        Ok(self)
    }
}

/// Indices `floor(i·n/k + 1/2)` for `i < k`.
pub fn density_indices(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| (2 * i * n + k) / (2 * k)).collect()
}

fn check_positions(what: &str, positions: &[usize], n_layers: usize) -> Result<()> {
    if let Some(&p) = positions.iter().find(|&&p| p == 0 || p > n_layers) {
        return Err(Error::Config(format!(
            "{what} position {p} is outside 1..={n_layers}"
        )));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{what} positions must be strictly increasing: {positions:?}")));
    }
    Ok(())
}

/// Parses `1,3,5` or `1-6` (inclusive ranges may be mixed with singles).
pub fn parse_positions(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    if s.trim().is_empty() {
        return Ok(out);
    }
    let bad = |p: &str| Error::Config(format!("bad position `{p}` in `{s}`"));
    for part in s.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad(part))?;
            let b: usize = b.trim().parse().map_err(|_| bad(part))?;
            if a > b {
                return Err(bad(part));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    Ok(out)
}

/// Inverse of [`parse_positions`]; runs of three or more become `a-b`.
pub fn format_positions(p: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < p.len() {
        let mut j = i;
        while j + 1 < p.len() && p[j + 1] == p[j] + 1 {
            j += 1;
        }
        if j >= i + 2 {
            parts.push(format!("{}-{}", p[i], p[j]));
        } else {
            parts.extend(p[i..=j].iter().map(|x| x.to_string()));
        }
        i = j + 1;
    }
    parts.join(",")
}

fn adapter_linear(store: &mut ParamStore, rng: &mut impl Rng, name: &str, i: usize, o: usize) -> Linear {
    Linear::new(store, rng, name, i, o, ParamGroup::Adapter, Init::KaimingNormal, Init::Zeros)
}

/// Bottleneck expert: `Δ(x) = s·(ReLU(x·W_down + b_down)·W_up + b_up)`.
#[derive(Debug, Clone)]
pub struct ExpertAdapter {
    pub modality: Modality,
    pub down: Linear,
    pub up: Linear,
    pub s: f64,
}

impl ExpertAdapter {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        modality: Modality,
        channels: usize,
        c_d: usize,
        s: f64,
    ) -> Self {
        Self {
            modality,
            down: adapter_linear(store, rng, &format!("{name}.down"), channels, c_d),
            up: adapter_linear(store, rng, &format!("{name}.up"), c_d, channels),
            s,
        }
    }

    pub fn delta(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let c = self.down.in_dim;
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != c {
            return Err(Error::dim("expert adapter", &shape, &[shape[0], c]));
        }
        g.with_scope(Scope::Adapter, |g| {
            let z = self.down.forward(g, store, x)?;
            let z = g.relu(z)?;
            let f = self.up.forward(g, store, z)?;
            g.scale(f, self.s)
        })
    }

    /// `x + Δ(x)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let d = self.delta(g, store, x)?;
        g.with_scope(Scope::Adapter, |g| g.add(x, d))
    }

    pub fn param_count(&self) -> usize {
        self.down.param_count() + self.up.param_count()
    }
}

/// Interaction adapter: per-modality down-projections, modality-unique
/// up-projections and one interactive up-projection shared by both paths.
#[derive(Debug, Clone)]
pub struct InteractionAdapter {
    pub vis_down: Linear,
    pub text_down: Linear,
    pub inter_up: Linear,
    /// `None` when `c_i` equals the vision width.
    pub vis_up: Option<Linear>,
    /// `None` when `c_i` equals the language width.
    pub text_up: Option<Linear>,
    pub s: f64,
}

impl InteractionAdapter {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_v: usize,
        c_l: usize,
        c_d: usize,
        c_i: usize,
        s: f64,
    ) -> Result<Self> {
        if c_i == 0 || c_i > c_v.min(c_l) {
            return Err(Error::Config(format!(
                "interaction width {c_i} must lie in 1..={}",
                c_v.min(c_l)
            )));
        }
        let unique = |store: &mut ParamStore, rng: &mut _, n: &str, width: usize| {
            (width > 0).then(|| adapter_linear(store, rng, &format!("{name}.{n}"), c_d, width))
        };
        let vis_down = adapter_linear(store, rng, &format!("{name}.vis_down"), c_v, c_d);
        let text_down = adapter_linear(store, rng, &format!("{name}.text_down"), c_l, c_d);
        let inter_up = adapter_linear(store, rng, &format!("{name}.inter_up"), c_d, c_i);
        let vis_up = unique(store, rng, "vis_up", c_v - c_i);
        let text_up = unique(store, rng, "text_up", c_l - c_i);
        Ok(Self {
            vis_down,
            text_down,
            inter_up,
            vis_up,
            text_up,
            s,
        })
    }

    pub fn width(&self, modality: Modality) -> usize {
        match modality {
            Modality::Vision => self.vis_down.in_dim,
            Modality::Language => self.text_down.in_dim,
        }
    }

    /// `s·concat(z·W_unique, z·W_inter)` with `z = ReLU(x·W_down)` for one modality.
    pub fn delta(&self, g: &mut Graph, store: &ParamStore, modality: Modality, x: NodeId) -> Result<NodeId> {
        let (down, unique) = match modality {
            Modality::Vision => (&self.vis_down, self.vis_up.as_ref()),
            Modality::Language => (&self.text_down, self.text_up.as_ref()),
        };
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != down.in_dim {
            return Err(Error::dim("interaction adapter", &shape, &[shape[0], down.in_dim]));
        }
        g.with_scope(Scope::Adapter, |g| {
            let z = down.forward(g, store, x)?;
            let z = g.relu(z)?;
            let mut parts = Vec::with_capacity(2);
            if let Some(u) = unique {
                parts.push(u.forward(g, store, z)?);
            }
            parts.push(self.inter_up.forward(g, store, z)?);
            let f = g.concat_cols(&parts)?;
            g.scale(f, self.s)
        })
    }

    /// Residual form on both modalities: `(x_v + Δ_v, x_l + Δ_l)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x_v: NodeId,
        x_l: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let dv = self.delta(g, store, Modality::Vision, x_v)?;
        let dl = self.delta(g, store, Modality::Language, x_l)?;
        g.with_scope(Scope::Adapter, |g| Ok((g.add(x_v, dv)?, g.add(x_l, dl)?)))
    }

    pub fn param_count(&self) -> usize {
        self.vis_down.param_count()
            + self.text_down.param_count()
            + self.inter_up.param_count()
            + self.vis_up.as_ref().map_or(0, Linear::param_count)
            + self.text_up.as_ref().map_or(0, Linear::param_count)
    }
}

/// Low-rank branch `alpha·(x·A)·B` beside a frozen projection.
#[derive(Debug, Clone)]
pub struct Lora {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 4, alpha: 1.0 }
    }
}

impl Lora {
    /// `A` is Kaiming-normal and `B` zero, so the branch starts as a no-op.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        config: LoraConfig,
    ) -> Result<Self> {
        if config.rank == 0 || config.rank > in_dim.min(out_dim) {
            return Err(Error::Config(format!(
                "LoRA rank {} must lie in 1..={}",
                config.rank,
                in_dim.min(out_dim)
            )));
        }
        let a = store.insert(
            format!("{name}.lora_a"),
            init_tensor(rng, &[in_dim, config.rank], Init::KaimingNormal),
            ParamGroup::Lora,
        );
        let b = store.insert(
            format!("{name}.lora_b"),
            init_tensor(rng, &[config.rank, out_dim], Init::Zeros),
            ParamGroup::Lora,
        );
        Ok(Self {
            a,
            b,
            rank: config.rank,
            alpha: config.alpha,
        })
    }

    pub fn delta(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        g.with_scope(Scope::Lora, |g| {
            let a = g.param(store, self.a);
            let b = g.param(store, self.b);
            let h = g.matmul(x, a)?;
            let h = g.matmul(h, b)?;
            g.scale(h, self.alpha)
        })
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        store.get(self.a).value.len() + store.get(self.b).value.len()
    }
}

/// `x·W + b + alpha·(x·A)·B`.
pub fn lora_forward(g: &mut Graph, store: &ParamStore, base: &Linear, lora: &Lora, x: NodeId) -> Result<NodeId> {
    let y = base.forward(g, store, x)?;
    let d = lora.delta(g, store, x)?;
    g.add(y, d)
}

/// Adapters at one tap position of a paired layer.
#[derive(Debug, Clone)]
pub enum SlotAdapters {
    Expert {
        vision: Option<ExpertAdapter>,
        language: Option<ExpertAdapter>,
    },
    Interaction(Option<InteractionAdapter>),
}

impl SlotAdapters {
    pub fn delta(&self, g: &mut Graph, store: &ParamStore, modality: Modality, x: NodeId) -> Result<Option<NodeId>> {
        match self {
            SlotAdapters::Expert { vision, language } => {
                let a = match modality {
                    Modality::Vision => vision,
                    Modality::Language => language,
                };
                a.as_ref().map(|a| a.delta(g, store, x)).transpose()
            }
            SlotAdapters::Interaction(a) => a.as_ref().map(|a| a.delta(g, store, modality, x)).transpose(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            SlotAdapters::Expert { vision, language } => {
                vision.as_ref().map_or(0, ExpertAdapter::param_count)
                    + language.as_ref().map_or(0, ExpertAdapter::param_count)
            }
            SlotAdapters::Interaction(a) => a.as_ref().map_or(0, InteractionAdapter::param_count),
        }
    }
}

/// One vision layer paired with one language layer.
#[derive(Debug, Clone)]
pub struct AdapterPair {
    /// 0-based layer indices.
    pub vision_layer: usize,
    pub language_layer: usize,
    pub attention: SlotAdapters,
    pub feed_forward: SlotAdapters,
}

impl AdapterPair {
    pub fn slot(&self, slot: Slot) -> &SlotAdapters {
        match slot {
            Slot::Attention => &self.attention,
            Slot::FeedForward => &self.feed_forward,
        }
    }

    pub fn layer(&self, modality: Modality) -> usize {
        match modality {
            Modality::Vision => self.vision_layer,
            Modality::Language => self.language_layer,
        }
    }
}

/// All adapters of a model, organised by paired layer.
#[derive(Debug, Clone)]
pub struct SideNetwork {
    pub config: AdapterConfig,
    pub pairs: Vec<AdapterPair>,
}

impl SideNetwork {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        config: AdapterConfig,
        c_v: usize,
        c_l: usize,
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(config.n_pairs());
        for (k, (&pv, &pl)) in config.vision_positions.iter().zip(&config.language_positions).enumerate() {
            let mut build = |slot: Slot| -> Result<SlotAdapters> {
                let tag = match slot {
                    Slot::Attention => "attn",
                    Slot::FeedForward => "ffn",
                };
                let name = format!("adapter.pair{}.{tag}", k + 1);
                Ok(match config.mixing.kind(slot) {
                    SlotKind::Expert => SlotAdapters::Expert {
                        vision: config.components.vea.then(|| {
                            ExpertAdapter::new(store, rng, &format!("{name}.vea"), Modality::Vision, c_v, config.c_d, config.s)
                        }),
                        language: config.components.lea.then(|| {
                            ExpertAdapter::new(store, rng, &format!("{name}.lea"), Modality::Language, c_l, config.c_d, config.s)
                        }),
                    },
                    SlotKind::Interaction => SlotAdapters::Interaction(if config.components.iea {
                        Some(InteractionAdapter::new(
                            store,
                            rng,
                            &format!("{name}.iea"),
                            c_v,
                            c_l,
                            config.c_d,
                            config.c_i,
                            config.s,
                        )?)
                    } else {
                        None
                    }),
                })
            };
            let attention = build(Slot::Attention)?;
            let feed_forward = build(Slot::FeedForward)?;
            pairs.push(AdapterPair {
                vision_layer: pv - 1,
                language_layer: pl - 1,
                attention,
                feed_forward,
            });
        }
        Ok(Self { config, pairs })
    }

    pub fn param_count(&self) -> usize {
        self.pairs
            .iter()
            .map(|p| p.attention.param_count() + p.feed_forward.param_count())
            .sum()
    }

    /// Adapter slots hooked on `layer` (0-based) of `modality`.
    pub fn hooks(&self, modality: Modality, layer: usize, slot: Slot) -> impl Iterator<Item = &SlotAdapters> {
        self.pairs
            .iter()
            .filter(move |p| p.layer(modality) == layer)
            .map(move |p| p.slot(slot))
    }

    /// Sum of all adapter deltas on one modality's taps, or `None` when no
    /// adapter touches that modality.
    pub fn accumulate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        modality: Modality,
        taps: &LayerTaps,
    ) -> Result<Option<NodeId>> {
        let mut deltas = Vec::new();
        for pair in &self.pairs {
            let layer = pair.layer(modality);
            for (slot, tap) in [(Slot::Attention, &taps.mha_out), (Slot::FeedForward, &taps.ffn_out)] {
                let x = *tap.get(layer).ok_or_else(|| {
                    Error::Contract(format!("no {slot:?} tap for {modality:?} layer {}", layer + 1))
                })?;
                if let Some(d) = pair.slot(slot).delta(g, store, modality, x)? {
                    deltas.push(d);
                }
            }
        }
        if deltas.is_empty() {
            return Ok(None);
        }
        g.with_scope(Scope::Adapter, |g| g.add_n(&deltas)).map(Some)
    }
}

/// Vision and language deltas accumulated from both encoders' taps.
pub fn side_accumulate(
    g: &mut Graph,
    store: &ParamStore,
    side: &SideNetwork,
    vision_taps: &LayerTaps,
    language_taps: &LayerTaps,
) -> Result<(Option<NodeId>, Option<NodeId>)> {
    Ok((
        side.accumulate(g, store, Modality::Vision, vision_taps)?,
        side.accumulate(g, store, Modality::Language, language_taps)?,
    ))
}
