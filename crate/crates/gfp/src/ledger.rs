//! Mask files, prune-event ledgers and the reports derived from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use gfp_core::graph::{flops_of_graph, memory_of_graph, Liveness};
use gfp_core::mask::MaskError;
use gfp_core::{CompGraph, GroupTable, MaskSet, PruneEvent};

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("mask file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("mask file key `{0}` is not a group id")]
    BadKey(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("ledger line {line}: {reason}")]
    Line { line: usize, reason: String },
}

/// `{"<group id>": [0/1, ...]}` for every group.
pub fn masks_to_json(masks: &MaskSet) -> String {
    let map: serde_json::Map<String, serde_json::Value> = masks
        .groups()
        .iter()
        .enumerate()
        .map(|(g, m)| {
            (
                g.to_string(),
                m.iter().map(|&b| u64::from(b)).collect::<Vec<_>>().into(),
            )
        })
        .collect();
    serde_json::to_string_pretty(&map).expect("masks serialize")
}

pub fn masks_from_json(groups: &GroupTable, text: &str) -> Result<MaskSet, LedgerError> {
    let map: BTreeMap<String, Vec<u8>> = serde_json::from_str(text)?;
    let mut rows = vec![None; groups.len()];
    for (k, v) in map {
        let g: usize = k.parse().map_err(|_| LedgerError::BadKey(k.clone()))?;
        *rows.get_mut(g).ok_or(LedgerError::BadKey(k))? = Some(v);
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(g, r)| r.unwrap_or_else(|| vec![1; groups.shared_mask_width(g)]))
        .collect();
    Ok(MaskSet::from_vecs(groups, rows)?)
}

pub fn events_to_jsonl(events: &[PruneEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Parses a JSONL ledger; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn events_from_jsonl(text: &str) -> Result<Vec<PruneEvent>, LedgerError> {
    let mut out: Vec<PruneEvent> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| LedgerError::Line {
            line: i + 1,
            reason,
        };
        let e: PruneEvent = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if let Some(prev) = out.last() {
            if e.iteration <= prev.iteration {
                return Err(bad("iterations are not strictly increasing".into()));
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Applies the ledger's prunes to all-ones masks.
pub fn replay(groups: &GroupTable, events: &[PruneEvent]) -> Result<MaskSet, LedgerError> {
    let mut m = MaskSet::ones(groups);
    for (i, e) in events.iter().enumerate() {
        if e.group >= groups.len() || e.slot >= groups.shared_mask_width(e.group) {
            return Err(LedgerError::Line {
                line: i + 1,
                reason: format!("group {} slot {} does not exist", e.group, e.slot),
            });
        }
        m.prune(e.group, e.slot)?;
    }
    Ok(m)
}

/// Remaining output channels of every Conv/FC layer, in percent.
pub fn channel_profile(
    graph: &CompGraph,
    groups: &GroupTable,
    masks: &MaskSet,
) -> Vec<(String, usize, usize, f64)> {
    let live = Liveness::compute(graph, groups, masks);
    graph
        .prunable()
        .map(|id| {
            let total = graph.shape(id).c;
            let kept = live.live_outputs(id);
            (
                graph.layer(id).id.clone(),
                kept,
                total,
                100.0 * kept as f64 / total as f64,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub flops: u64,
    pub memory: u64,
}

/// FLOPs and memory after each event, starting from the unpruned network.
pub fn trajectory(
    graph: &CompGraph,
    groups: &GroupTable,
    events: &[PruneEvent],
) -> Vec<TrajectoryPoint> {
    let ones = MaskSet::ones(groups);
    let mut p = TrajectoryPoint {
        iteration: 0,
        flops: flops_of_graph(graph, groups, &ones),
        memory: memory_of_graph(graph, groups, &ones),
    };
    let mut out = vec![p.clone()];
    for e in events {
        p = TrajectoryPoint {
            iteration: e.iteration,
            flops: p.flops.saturating_sub(e.delta_flops),
            memory: p.memory.saturating_sub(e.delta_memory),
        };
        out.push(p.clone());
    }
    out
}

pub fn profile_table(rows: &[(String, usize, usize, f64)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let mut s = format!(
        "{:<width$}  {:>6}  {:>6}  {:>7}\n",
        "layer", "kept", "total", "percent"
    );
    for (name, kept, total, pct) in rows {
        let _ = writeln!(s, "{name:<width$}  {kept:>6}  {total:>6}  {pct:>6.2}%");
    }
    s
}

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let first = points.first().map_or(1, |p| p.flops.max(1));
    let mut s = String::from("iteration,flops,memory,flops_fraction\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{:.6}",
            p.iteration,
            p.flops,
            p.memory,
            p.flops as f64 / first as f64
        );
    }
    s
}
