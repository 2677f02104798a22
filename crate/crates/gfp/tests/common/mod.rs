//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use gfp::core::{CompGraph, LayerId, LayerKind};

type Cell = (LayerId, usize);

/// Physical channels (producer, channel) carried by every channel of every
/// layer output, by symbolic propagation in topological order.
pub fn channel_origins(g: &CompGraph) -> Vec<Vec<BTreeSet<Cell>>> {
    let mut out: Vec<Vec<BTreeSet<Cell>>> = Vec::with_capacity(g.len());
    for id in 0..g.len() {
        let l = g.layer(id);
        let c = g.shape(id).c;
        let row = match &l.kind {
            LayerKind::Input { .. } | LayerKind::Conv(_) | LayerKind::Fc { .. } => {
                (0..c).map(|ch| BTreeSet::from([(id, ch)])).collect()
            }
            LayerKind::Add => (0..c)
                .map(|ch| {
                    l.inputs
                        .iter()
                        .flat_map(|&i| out[i][ch].iter().copied())
                        .collect()
                })
                .collect(),
            LayerKind::Concat => l
                .inputs
                .iter()
                .flat_map(|&i| out[i].iter().cloned())
                .collect(),
            LayerKind::Flatten => {
                let plane = g.shape(l.inputs[0]).plane();
                (0..c)
                    .map(|j| out[l.inputs[0]][j / plane].clone())
                    .collect()
            }
            _ => out[l.inputs[0]].clone(),
        };
        out.push(row);
    }
    out
}

fn is_conv(g: &CompGraph, id: LayerId) -> bool {
    g.layer(id).kind.is_prunable()
}

fn groups_of_conv(g: &CompGraph, id: LayerId) -> usize {
    match g.layer(id).kind {
        LayerKind::Conv(a) => a.groups,
        _ => 1,
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct Conflict {
    pub layer: LayerId,
}

/// Brute-force grouping: two prunable layers must share a mask when their
/// inputs carry a common Conv/FC channel, or when one is a grouped conv
/// whose output channels the other reads. Closed under transitivity by
/// repeated pairwise relabelling. Returns the partition (members sorted,
/// groups sorted by first member), or the first member whose input
/// positions disagree with the shared slot structure.
pub fn oracle_groups(g: &CompGraph) -> Result<Vec<Vec<LayerId>>, Conflict> {
    let origins = channel_origins(g);
    let layers: Vec<LayerId> = (0..g.len()).filter(|&i| is_conv(g, i)).collect();
    let input_cells = |l: LayerId| -> Vec<BTreeSet<Cell>> { origins[g.layer(l).inputs[0]].clone() };
    let producers: BTreeMap<LayerId, BTreeSet<LayerId>> = layers
        .iter()
        .map(|&l| {
            let p = input_cells(l)
                .iter()
                .flatten()
                .map(|c| c.0)
                .filter(|&p| is_conv(g, p))
                .collect();
            (l, p)
        })
        .collect();
    let coupled = |a: LayerId, b: LayerId| {
        !producers[&a].is_disjoint(&producers[&b])
            || (groups_of_conv(g, a) > 1 && producers[&b].contains(&a))
            || (groups_of_conv(g, b) > 1 && producers[&a].contains(&b))
    };
    let mut label: BTreeMap<LayerId, LayerId> = layers.iter().map(|&l| (l, l)).collect();
    loop {
        let mut changed = false;
        for &a in &layers {
            for &b in &layers {
                let (la, lb) = (label[&a], label[&b]);
                if la != lb && coupled(a, b) {
                    let (keep, drop) = (la.min(lb), la.max(lb));
                    for v in label.values_mut() {
                        if *v == drop {
                            *v = keep;
                        }
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut parts: BTreeMap<LayerId, Vec<LayerId>> = BTreeMap::new();
    for (&l, &lab) in &label {
        parts.entry(lab).or_default().push(l);
    }
    let parts: Vec<Vec<LayerId>> = parts.into_values().collect();

    for members in &parts {
        // Channels that must disappear together: everything meeting at one
        // input position, and a grouped conv's input block with its output
        // block.
        let mut ties: Vec<BTreeSet<Cell>> = Vec::new();
        for &m in members {
            let cells = input_cells(m);
            ties.extend(cells.iter().cloned());
            let gk = groups_of_conv(g, m);
            if gk > 1 {
                let ipg = cells.len() / gk;
                let opg = g.shape(m).c / gk;
                for k in 0..gk {
                    let mut t: BTreeSet<Cell> = cells[k * ipg..(k + 1) * ipg]
                        .iter()
                        .flatten()
                        .copied()
                        .collect();
                    t.extend((k * opg..(k + 1) * opg).map(|o| (m, o)));
                    ties.push(t);
                }
            }
        }
        let mut class: BTreeMap<Cell, usize> = BTreeMap::new();
        for t in &ties {
            for &c in t {
                let next = class.len();
                class.entry(c).or_insert(next);
            }
        }
        loop {
            let mut changed = false;
            for t in &ties {
                let lo = t.iter().map(|c| class[c]).min().unwrap();
                for c in t {
                    let v = class.get_mut(c).unwrap();
                    if *v != lo {
                        *v = lo;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for &m in members {
            if producers[&m].iter().any(|&p| groups_of_conv(g, p) > 1) {
                continue;
            }
            let cells = input_cells(m);
            let gk = groups_of_conv(g, m);
            let expected = if gk > 1 { cells.len() / gk } else { 1 };
            let mut count: BTreeMap<usize, usize> = BTreeMap::new();
            for pos in &cells {
                *count.entry(class[pos.iter().next().unwrap()]).or_default() += 1;
            }
            if count.values().any(|&n| n != expected) {
                return Err(Conflict { layer: m });
            }
        }
    }
    Ok(parts)
}

/// Multiply-accumulates of an unmasked graph by walking every loop of every
/// Conv/FC layer.
pub fn brute_macs(g: &CompGraph) -> u64 {
    let mut total = 0u64;
    for id in 0..g.len() {
        let l = g.layer(id);
        let inp = g.shape(l.inputs.first().copied().unwrap_or(id));
        let out = g.shape(id);
        match &l.kind {
            LayerKind::Conv(a) => {
                let cin_g = inp.c / a.groups;
                for _n in 0..out.n {
                    for _o in 0..out.c {
                        for _y in 0..out.h {
                            for _x in 0..out.w {
                                for _i in 0..cin_g {
                                    for _ky in 0..a.kernel_h {
                                        for _kx in 0..a.kernel_w {
                                            total += 1;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Fc { out_channels } => {
                for _n in 0..out.n {
                    for _o in 0..*out_channels {
                        for _i in 0..inp.c * inp.h * inp.w {
                            total += 1;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    total
}

/// Feature-map elements of an unmasked graph, Output marker excluded.
pub fn brute_memory(g: &CompGraph) -> u64 {
    (0..g.len())
        .filter(|&i| !matches!(g.layer(i).kind, LayerKind::Output))
        .map(|i| g.shape(i).numel() as u64)
        .sum()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
