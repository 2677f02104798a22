//! Per-slot FLOPs and memory reductions under the current mask state.
//!
//! Removing a slot shrinks three things: the input side of every member
//! layer, the output side of every Conv/FC layer producing the slot's
//! channels, and every feature map on the transparent path between them.
//! Each term is evaluated with the currently live channel counts, so a
//! ledger must be rebuilt after every prune.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::accounting::layer_macs;
use crate::graph::{flops_of_graph, memory_of_graph, CompGraph, LayerId, LayerKind, Liveness};
use crate::grouping::GroupTable;
use crate::mask::MaskSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum NormMode {
    #[default]
    Memory,
    Flops,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("SlotAlreadyPruned: group {group} slot {slot}")]
    SlotAlreadyPruned { group: usize, slot: usize },
    #[error("DivisionByZero: group {group} slot {slot} has zero cost delta")]
    DivisionByZero { group: usize, slot: usize },
}

/// FLOPs and memory reduction of one slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlotCost {
    pub flops: u64,
    pub memory: u64,
    /// Pruning keeps at least one live input on every member and one live
    /// output on every producer.
    pub removable: bool,
}

/// Output channels (layer, channel) that disappear with a slot: the
/// producers' channels plus every transparent feature map they flow into.
pub fn slot_cells(
    graph: &CompGraph,
    groups: &GroupTable,
    gid: usize,
    slot: usize,
) -> BTreeSet<(LayerId, usize)> {
    let mut cells = BTreeSet::new();
    let mut stack: Vec<(LayerId, usize)> = groups.group(gid).slot_sources[slot].clone();
    while let Some((l, c)) = stack.pop() {
        if !cells.insert((l, c)) {
            continue;
        }
        for &u in graph.consumers(l) {
            let layer = graph.layer(u);
            match layer.kind {
                LayerKind::Conv(_) | LayerKind::Fc { .. } | LayerKind::Output => {}
                LayerKind::Concat => {
                    let mut off = 0;
                    for &i in &layer.inputs {
                        if i == l {
                            stack.push((u, off + c));
                        }
                        off += graph.shape(i).c;
                    }
                }
                _ => stack.push((u, c)),
            }
        }
    }
    cells
}

/// Reduction for one live slot given precomputed liveness.
pub fn slot_cost(
    graph: &CompGraph,
    groups: &GroupTable,
    live: &Liveness,
    gid: usize,
    slot: usize,
) -> SlotCost {
    let g = groups.group(gid);
    let cells = slot_cells(graph, groups, gid, slot);

    let mut touched: BTreeSet<LayerId> = g.members.iter().copied().collect();
    touched.extend(g.slot_sources[slot].iter().map(|&(p, _)| p));
    let mut removable = true;
    let mut flops = 0;
    for &l in &touched {
        if !graph.layer(l).kind.is_prunable() {
            continue;
        }
        let mut new_in = live.input[l].clone();
        if let Some(mi) = g.member_index(l) {
            for (j, &s) in g.member_slots[mi].iter().enumerate() {
                if s == slot {
                    new_in[j] = false;
                }
            }
        }
        let mut new_out = live.output[l].clone();
        for (c, v) in new_out.iter_mut().enumerate() {
            if cells.contains(&(l, c)) {
                *v = false;
            }
        }
        if !new_in.iter().any(|&v| v) || !new_out.iter().any(|&v| v) {
            removable = false;
        }
        let before = layer_macs(graph, l, &live.input[l], &live.output[l]);
        flops += before - layer_macs(graph, l, &new_in, &new_out);
    }

    let memory = cells
        .iter()
        .filter(|&&(l, c)| live.output[l][c])
        .map(|&(l, _)| {
            let s = graph.shape(l);
            (s.n * s.plane()) as u64
        })
        .sum();
    SlotCost {
        flops,
        memory,
        removable,
    }
}

pub fn delta_flops(
    graph: &CompGraph,
    groups: &GroupTable,
    masks: &MaskSet,
    gid: usize,
    slot: usize,
) -> Result<u64, CostError> {
    if !masks.is_live(gid, slot) {
        return Err(CostError::SlotAlreadyPruned { group: gid, slot });
    }
    let live = Liveness::compute(graph, groups, masks);
    Ok(slot_cost(graph, groups, &live, gid, slot).flops)
}

pub fn delta_memory(
    graph: &CompGraph,
    groups: &GroupTable,
    masks: &MaskSet,
    gid: usize,
    slot: usize,
) -> Result<u64, CostError> {
    if !masks.is_live(gid, slot) {
        return Err(CostError::SlotAlreadyPruned { group: gid, slot });
    }
    let live = Liveness::compute(graph, groups, masks);
    Ok(slot_cost(graph, groups, &live, gid, slot).memory)
}

/// Costs of every live slot of every unfrozen group for one mask state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostLedger {
    pub norm: NormMode,
    pub flops: u64,
    pub memory: u64,
    /// `None` for pruned slots and frozen groups.
    pub slots: Vec<Vec<Option<SlotCost>>>,
}

impl CostLedger {
    pub fn compute(
        graph: &CompGraph,
        groups: &GroupTable,
        masks: &MaskSet,
        norm: NormMode,
    ) -> Self {
        let live = Liveness::compute(graph, groups, masks);
        let slots = (0..groups.len())
            .map(|gid| {
                (0..groups.shared_mask_width(gid))
                    .map(|s| {
                        (!masks.is_frozen(gid) && masks.is_live(gid, s))
                            .then(|| slot_cost(graph, groups, &live, gid, s))
                    })
                    .collect()
            })
            .collect();
        CostLedger {
            norm,
            flops: flops_of_graph(graph, groups, masks),
            memory: memory_of_graph(graph, groups, masks),
            slots,
        }
    }

    pub fn get(&self, gid: usize, slot: usize) -> Option<SlotCost> {
        self.slots[gid][slot]
    }

    /// Divides raw scores by the chosen delta. Slots without a ledger entry
    /// map to `+inf`.
    pub fn normalize(&self, scores: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, CostError> {
        let mut out = Vec::with_capacity(scores.len());
        for (gid, row) in scores.iter().enumerate() {
            let mut norm_row = vec![f64::INFINITY; row.len()];
            for (s, &score) in row.iter().enumerate() {
                let Some(cost) = self.slots[gid][s] else {
                    continue;
                };
                let denom = match self.norm {
                    NormMode::Memory => cost.memory,
                    NormMode::Flops => cost.flops,
                    NormMode::None => {
                        norm_row[s] = score;
                        continue;
                    }
                };
                if denom == 0 {
                    return Err(CostError::DivisionByZero {
                        group: gid,
                        slot: s,
                    });
                }
                norm_row[s] = score / denom as f64;
            }
            out.push(norm_row);
        }
        Ok(out)
    }
}
