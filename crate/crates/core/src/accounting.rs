//! Parameter counts and retained-activation reports.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, Components, Mixing, SideNetwork, SlotKind};
use crate::autograd::{Graph, NodeId, ParamGroup, ParamStore, Scope};
use crate::data::Sample;
use crate::error::Result;
use crate::model::{batch_loss, ForwardOut, Model};
use crate::regime::RegimeKind;
use crate::rng::{stream_rng, Stream};

/// Reference encoder widths.
pub const REF_C_V: usize = 256;
pub const REF_C_L: usize = 768;

/// `2·C·C_d + C_d + C`: down and up projections with biases.
pub fn expert_count(c: usize, c_d: usize) -> usize {
    2 * c * c_d + c_d + c
}

/// Both down-projections, the shared interactive up-projection and the two
/// modality-unique up-projections, all with biases.
pub fn interaction_count(c_v: usize, c_l: usize, c_d: usize, c_i: usize) -> usize {
    let uv = c_v.saturating_sub(c_i);
    let ul = c_l.saturating_sub(c_i);
    c_v * c_d + c_l * c_d + 2 * c_d + c_d * c_i + c_i + c_d * uv + uv + c_d * ul + ul
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCounts {
    pub vea_each: usize,
    pub lea_each: usize,
    pub iea_each: usize,
    pub vea_total: usize,
    pub lea_total: usize,
    pub iea_total: usize,
    pub total: usize,
}

/// Closed-form adapter counts for a configuration at the given widths.
pub fn count_params(cfg: &AdapterConfig, c_v: usize, c_l: usize) -> ComponentCounts {
    let vea_each = expert_count(c_v, cfg.c_d);
    let lea_each = expert_count(c_l, cfg.c_d);
    let iea_each = interaction_count(c_v, c_l, cfg.c_d, cfg.c_i);
    let (mut nv, mut nl, mut ni) = (0, 0, 0);
    for kind in [cfg.mixing.attention, cfg.mixing.feed_forward] {
        match kind {
            SlotKind::Expert => {
                nv += cfg.components.vea as usize;
                nl += cfg.components.lea as usize;
            }
            SlotKind::Interaction => ni += cfg.components.iea as usize,
        }
    }
    let pairs = cfg.n_pairs();
    let (vea_total, lea_total, iea_total) = (
        vea_each * nv * pairs,
        lea_each * nl * pairs,
        iea_each * ni * pairs,
    );
    ComponentCounts {
        vea_each,
        lea_each,
        iea_each,
        vea_total,
        lea_total,
        iea_total,
        total: vea_total + lea_total + iea_total,
    }
}

/// Counts at the reference widths.
pub fn count_params_reference(cfg: &AdapterConfig) -> ComponentCounts {
    count_params(cfg, REF_C_V, REF_C_L)
}

/// Two expert adapters per layer on 6 vision and 6 language layers.
pub fn vanilla_adapter_config(c_d: usize) -> AdapterConfig {
    AdapterConfig {
        c_d,
        mixing: Mixing {
            attention: SlotKind::Expert,
            feed_forward: SlotKind::Expert,
        },
        components: Components::ALL,
        ..AdapterConfig::reference()
    }
}

/// Instantiates the side network and counts stored elements.
pub fn enumerate_params(cfg: &AdapterConfig, c_v: usize, c_l: usize) -> Result<usize> {
    let mut store = ParamStore::new();
    let mut rng = stream_rng(0, Stream::Adapters, 0);
    let side = SideNetwork::new(&mut store, &mut rng, cfg.clone(), c_v, c_l)?;
    let counted = store.count(|p| p.group == ParamGroup::Adapter);
    debug_assert_eq!(counted, side.param_count());
    Ok(counted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean training loss per evaluation window.
    pub loss_curve: Vec<f64>,
    pub precision_at_05: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: RegimeKind,
    pub trainable_params: usize,
    pub total_params: usize,
    pub trainable_fraction: f64,
    pub adapter_params: usize,
    pub retained_activations: usize,
    pub metrics: Option<TaskMetrics>,
}

impl RegimeReport {
    pub fn new(model: &Model, retained_activations: usize, metrics: Option<TaskMetrics>) -> Self {
        let trainable = model.trainable_count();
        let total = model.total_count();
        Self {
            regime: model.regime(),
            trainable_params: trainable,
            total_params: total,
            trainable_fraction: trainable as f64 / total as f64,
            adapter_params: model.group_count(ParamGroup::Adapter),
            retained_activations,
            metrics,
        }
    }
}

/// A recorded batch forward with its loss, uncached.
pub struct RecordedBatch {
    pub graph: Graph,
    pub loss: NodeId,
    pub outs: Vec<ForwardOut>,
}

pub fn record_batch(model: &Model, batch: &[Sample], lambda: f64, beta: f64) -> Result<RecordedBatch> {
    let mut g = Graph::new();
    let mut outs = Vec::with_capacity(batch.len());
    let mut preds = Vec::with_capacity(batch.len());
    for s in batch {
        let out = model.forward(&mut g, &s.image, &s.tokens)?;
        preds.push((out.pred, s.gt));
        outs.push(out);
    }
    let loss = batch_loss(&mut g, &preds, lambda, beta)?;
    Ok(RecordedBatch { graph: g, loss, outs })
}

/// Elements retained for backward over one batch under the model's regime.
pub fn memory_report(model: &Model, batch: &[Sample]) -> Result<usize> {
    let r = record_batch(model, batch, 1.0, 1.0)?;
    r.graph.retained_activation_count(r.loss, &r.graph.trainable_leaves())
}

/// Edges whose source is an adapter node and whose target is an encoder node.
pub fn adapter_to_encoder_edges(g: &Graph) -> usize {
    g.edges()
        .filter(|&(from, to)| g.node(from).scope == Scope::Adapter && g.node(to).scope.is_encoder())
        .count()
}

/// Retained encoder-scope nodes that are not taps.
pub fn retained_encoder_internals(r: &RecordedBatch) -> Result<Vec<NodeId>> {
    let retained = r.graph.retained_tensors(r.loss, &r.graph.trainable_leaves())?;
    let taps: BTreeSet<NodeId> = r
        .outs
        .iter()
        .flat_map(|o| o.vision_taps.all().chain(o.language_taps.all()))
        .collect();
    Ok(retained
        .into_iter()
        .filter(|&n| r.graph.node(n).scope.is_encoder() && !taps.contains(&n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_component_counts() {
        let cfg = AdapterConfig::reference();
        let c = count_params_reference(&cfg);
        assert_eq!(c.vea_each, 65_920);
        assert_eq!(c.vea_total, 395_520);
        assert_eq!(c.lea_each, 197_504);
        assert_eq!(c.iea_each, 230_400);
        assert_eq!(c.total, 395_520 + 1_185_024 + 1_382_400);
        assert_eq!(count_params_reference(&vanilla_adapter_config(128)).total, 3_161_088);
    }

    #[test]
    fn closed_form_matches_enumeration_on_small_widths() {
        for mixing in Mixing::all() {
            for components in Components::ablation_rows() {
                for c_i in [2, 5, 8] {
                    let cfg = AdapterConfig {
                        c_d: 3,
                        c_i,
                        mixing,
                        components,
                        vision_positions: vec![1, 2],
                        language_positions: vec![3, 4],
                        ..AdapterConfig::reference()
                    };
                    assert_eq!(count_params(&cfg, 8, 12).total, enumerate_params(&cfg, 8, 12).unwrap());
                }
            }
        }
    }
}
