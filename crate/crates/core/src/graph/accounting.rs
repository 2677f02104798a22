//! FLOPs (multiply-accumulates) and feature-map memory under a mask state.

use alloc::vec;
use alloc::vec::Vec;

use super::{CompGraph, LayerKind};
use crate::grouping::GroupTable;
use crate::mask::MaskSet;

/// Which channels physically remain under a mask state.
///
/// A channel of a layer output survives iff some unmasked consumer input
/// (or the graph output) still reads it; masked prunable inputs are the
/// only places where liveness stops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Liveness {
    /// Per layer output, per channel.
    pub output: Vec<Vec<bool>>,
    /// Per prunable layer, per input channel (mask == 1); empty for others.
    pub input: Vec<Vec<bool>>,
}

impl Liveness {
    pub fn compute(graph: &CompGraph, groups: &GroupTable, masks: &MaskSet) -> Self {
        let mut output: Vec<Vec<bool>> = graph.shapes().iter().map(|s| vec![false; s.c]).collect();
        let mut input: Vec<Vec<bool>> = vec![Vec::new(); graph.len()];
        output[graph.output()].iter_mut().for_each(|v| *v = true);

        for id in (0..graph.len()).rev() {
            let layer = graph.layer(id);
            let need = core::mem::take(&mut output[id]);
            match &layer.kind {
                LayerKind::Input { .. } => {}
                LayerKind::Conv(_) | LayerKind::Fc { .. } => {
                    let (gid, slots) = groups
                        .slots_of(id)
                        .expect("every prunable layer belongs to a group");
                    let live: Vec<bool> = slots.iter().map(|&s| masks.is_live(gid, s)).collect();
                    let src = &mut output[layer.inputs[0]];
                    for (o, &l) in src.iter_mut().zip(&live) {
                        *o |= l;
                    }
                    input[id] = live;
                }
                LayerKind::Concat => {
                    let mut off = 0;
                    for &i in &layer.inputs {
                        let src = &mut output[i];
                        let w = src.len();
                        for (o, &n) in src.iter_mut().zip(&need[off..off + w]) {
                            *o |= n;
                        }
                        off += w;
                    }
                }
                LayerKind::Flatten => {
                    let i = layer.inputs[0];
                    let plane = graph.shape(i).plane();
                    let src = &mut output[i];
                    for (c, o) in src.iter_mut().enumerate() {
                        *o |= need[c * plane..(c + 1) * plane].iter().any(|&v| v);
                    }
                }
                _ => {
                    for &i in &layer.inputs {
                        for (o, &n) in output[i].iter_mut().zip(&need) {
                            *o |= n;
                        }
                    }
                }
            }
            output[id] = need;
        }
        for i in graph.inputs() {
            output[i].iter_mut().for_each(|v| *v = true);
        }
        Liveness { output, input }
    }

    pub fn live_outputs(&self, id: usize) -> usize {
        self.output[id].iter().filter(|&&v| v).count()
    }

    pub fn live_inputs(&self, id: usize) -> usize {
        self.input[id].iter().filter(|&&v| v).count()
    }
}

/// MACs of one Conv/FC layer given its live inputs and outputs.
pub(crate) fn layer_macs(graph: &CompGraph, id: usize, live_in: &[bool], live_out: &[bool]) -> u64 {
    let geo = graph.geometry(id).expect("conv or fc");
    let (ipg, opg) = (geo.in_per_group(), geo.out_per_group());
    (0..geo.groups)
        .map(|k| {
            let i = live_in[k * ipg..(k + 1) * ipg]
                .iter()
                .filter(|&&v| v)
                .count() as u64;
            let o = live_out[k * opg..(k + 1) * opg]
                .iter()
                .filter(|&&v| v)
                .count() as u64;
            i * o
        })
        .sum::<u64>()
        * geo.pair_macs()
}

/// Total multiply-accumulates of all Conv/FC layers, counting only live
/// channels. Other layers contribute nothing.
pub fn flops_of_graph(graph: &CompGraph, groups: &GroupTable, masks: &MaskSet) -> u64 {
    let live = Liveness::compute(graph, groups, masks);
    graph
        .prunable()
        .map(|id| layer_macs(graph, id, &live.input[id], &live.output[id]))
        .sum()
}

/// Total number of output feature-map elements over all layers (inputs
/// included, the output marker excluded since it aliases its input).
pub fn memory_of_graph(graph: &CompGraph, groups: &GroupTable, masks: &MaskSet) -> u64 {
    let live = Liveness::compute(graph, groups, masks);
    (0..graph.len())
        .filter(|&id| graph.layer(id).kind != LayerKind::Output)
        .map(|id| {
            let s = graph.shape(id);
            (s.n * s.plane() * live.live_outputs(id)) as u64
        })
        .sum()
}
