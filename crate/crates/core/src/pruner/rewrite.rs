//! Materializes a mask state into a physically smaller network.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::PruneError;
use crate::graph::{CompGraph, LayerKind, Liveness};
use crate::grouping::GroupTable;
use crate::mask::MaskSet;
use crate::tensor::{Real, Tensor};
use crate::weights::WeightStore;

fn kept(v: &[bool]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i)
        .collect()
}

fn select<T: Real>(t: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    Tensor::from_dims(&[idx.len()], idx.iter().map(|&i| t.data()[i]).collect()).unwrap()
}

fn bad(layer: &str, reason: impl Into<String>) -> PruneError {
    PruneError::Rewrite {
        layer: layer.into(),
        reason: reason.into(),
    }
}

/// Deletes every dead channel: masked inputs of Conv/FC layers, the
/// producer outputs nobody reads any more (with their biases and
/// BatchNorm parameters), and whole channel groups of grouped
/// convolutions. Layer ids and order are preserved.
pub fn rewrite<T: Real>(
    graph: &CompGraph,
    groups: &GroupTable,
    weights: &WeightStore<T>,
    masks: &MaskSet,
) -> Result<(CompGraph, WeightStore<T>), PruneError> {
    let live = Liveness::compute(graph, groups, masks);
    let mut specs = graph.to_specs();
    let mut out = WeightStore::new();

    for (id, layer) in graph.layers().iter().enumerate() {
        let keep_out = kept(&live.output[id]);
        let name = &layer.id;
        match &layer.kind {
            LayerKind::Conv(_) | LayerKind::Fc { .. } => {
                let src = layer.inputs[0];
                if live.input[id] != live.output[src] {
                    return Err(bad(name, "live inputs disagree with producer channels"));
                }
                let geo = graph.geometry(id).unwrap();
                let (ipg, opg) = (geo.in_per_group(), geo.out_per_group());
                let mut new_groups = 0;
                let mut new_ipg = None;
                // (output channel, kept in-group columns)
                let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
                for k in 0..geo.groups {
                    let cols: Vec<usize> =
                        (0..ipg).filter(|&j| live.input[id][k * ipg + j]).collect();
                    let outs: Vec<usize> = (k * opg..(k + 1) * opg)
                        .filter(|&o| live.output[id][o])
                        .collect();
                    if cols.is_empty() && outs.is_empty() {
                        continue;
                    }
                    if geo.groups > 1 && (cols.len() != ipg || outs.len() != opg) {
                        return Err(bad(
                            name,
                            format!("channel group {k} is only partly pruned"),
                        ));
                    }
                    if cols.is_empty() || outs.is_empty() {
                        return Err(PruneError::EmptyLayer(name.clone()));
                    }
                    if *new_ipg.get_or_insert(cols.len()) != cols.len() {
                        return Err(bad(name, "uneven channel groups"));
                    }
                    new_groups += 1;
                    rows.extend(outs.into_iter().map(|o| (o, cols.clone())));
                }
                if new_groups == 0 {
                    return Err(PruneError::EmptyLayer(name.clone()));
                }
                let cin = new_ipg.unwrap();
                let w = weights
                    .get(&format!("{name}.weight"))
                    .ok_or_else(|| bad(name, "missing weight"))?;
                let (kh, kw) = (geo.kernel_h, geo.kernel_w);
                let ksz = kh * kw;
                let mut data = Vec::with_capacity(rows.len() * cin * ksz);
                for (o, cols) in &rows {
                    for &j in cols {
                        let base = (o * ipg + j) * ksz;
                        data.extend_from_slice(&w.data()[base..base + ksz]);
                    }
                }
                let outs: Vec<usize> = rows.iter().map(|r| r.0).collect();
                let wt = match &mut specs[id].kind {
                    LayerKind::Conv(a) => {
                        a.out_channels = outs.len();
                        a.groups = new_groups;
                        Tensor::from_dims(&[outs.len(), cin, kh, kw], data)
                    }
                    LayerKind::Fc { out_channels } => {
                        *out_channels = outs.len();
                        Tensor::from_dims(&[outs.len(), cin], data)
                    }
                    _ => unreachable!(),
                };
                out.insert(format!("{name}.weight"), wt.unwrap());
                if let Some(b) = weights.get(&format!("{name}.bias")) {
                    out.insert(format!("{name}.bias"), select(b, &outs));
                }
            }
            LayerKind::BatchNorm(_) => {
                for p in ["weight", "bias", "running_mean", "running_var"] {
                    let key = format!("{name}.{p}");
                    let t = weights
                        .get(&key)
                        .ok_or_else(|| bad(name, format!("missing {p}")))?;
                    out.insert(key, select(t, &keep_out));
                }
            }
            LayerKind::Input { .. } | LayerKind::Output => {}
            _ => {
                // Transparent layers must carry exactly what their inputs keep.
                let expect: Vec<bool> = match &layer.kind {
                    LayerKind::Concat => layer
                        .inputs
                        .iter()
                        .flat_map(|&i| live.output[i].iter().copied())
                        .collect(),
                    LayerKind::Flatten => {
                        let plane = graph.input_shape(id).plane();
                        live.output[layer.inputs[0]]
                            .iter()
                            .flat_map(|&b| core::iter::repeat_n(b, plane))
                            .collect()
                    }
                    _ => live.output[layer.inputs[0]].clone(),
                };
                let same_inputs = matches!(layer.kind, LayerKind::Concat)
                    || layer
                        .inputs
                        .iter()
                        .all(|&i| live.output[i] == live.output[layer.inputs[0]]);
                if !same_inputs || expect != live.output[id] {
                    return Err(bad(name, "inconsistent channel liveness through layer"));
                }
            }
        }
    }

    let g = CompGraph::new(specs, graph.output_name())
        .map_err(|e| bad(graph.output_name(), format!("rewritten graph invalid: {e}")))?;
    for id in 0..g.len() {
        if g.shape(id).c != keep_count(&live, graph, id) {
            return Err(bad(&g.layer(id).id, "channel count changed unexpectedly"));
        }
    }
    Ok((g, out))
}

fn keep_count(live: &Liveness, graph: &CompGraph, id: usize) -> usize {
    match graph.layer(id).kind {
        LayerKind::Input { .. } => graph.shape(id).c,
        _ => live.live_outputs(id),
    }
}
