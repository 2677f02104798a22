//! Parent discovery and coupled-channel layer grouping.
//!
//! Every Conv/FC layer has a channel mask on its input. Layers whose masks
//! must agree (they read the same producer channels, or read the output of a
//! grouped conv whose input and output channel groups are tied) are collected
//! into one group that shares a single mask. Within a group, each mask *slot*
//! is one set of physical channels that disappears together when pruned.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{CompGraph, LayerId, LayerKind};

/// A Conv/FC (or Input) layer feeding a prunable layer, with the channel
/// range it occupies in the consumer's input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParentLink {
    pub parent: LayerId,
    /// First input channel of the consumer that carries `parent`'s channel 0.
    pub offset: usize,
    pub width: usize,
}

/// `P[l]` for every prunable layer `l`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParentMap {
    links: BTreeMap<LayerId, Vec<ParentLink>>,
    input_links: BTreeMap<LayerId, Vec<ParentLink>>,
    escaping: BTreeSet<LayerId>,
}

impl ParentMap {
    /// Conv/FC parents of `layer`.
    pub fn parents(&self, layer: LayerId) -> BTreeSet<LayerId> {
        self.links
            .get(&layer)
            .map(|v| v.iter().map(|l| l.parent).collect())
            .unwrap_or_default()
    }

    /// Parent links with channel offsets (Concat inputs get distinct offsets).
    pub fn links(&self, layer: LayerId) -> &[ParentLink] {
        self.links.get(&layer).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Links to graph inputs; image channels are never prunable.
    pub fn input_links(&self, layer: LayerId) -> &[ParentLink] {
        self.input_links
            .get(&layer)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Conv/FC layers whose output reaches the graph output without passing
    /// another Conv/FC.
    pub fn escapes(&self, layer: LayerId) -> bool {
        self.escaping.contains(&layer)
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.links.keys().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GroupingError {
    #[error("layer `{0}` mixes channels with spatial positions; channel pruning through it is unsupported")]
    ChannelMixing(String),
    #[error("InconsistentWidth in group {group}: member `{layer}` {reason}")]
    InconsistentWidth {
        group: usize,
        layer: String,
        reason: String,
    },
}

fn walk(
    graph: &CompGraph,
    node: LayerId,
    offset: usize,
    seen: &mut BTreeSet<(LayerId, usize)>,
    out: &mut Vec<ParentLink>,
) -> Result<(), GroupingError> {
    if !seen.insert((node, offset)) {
        return Ok(());
    }
    let layer = graph.layer(node);
    match &layer.kind {
        LayerKind::Conv(_) | LayerKind::Fc { .. } | LayerKind::Input { .. } => {
            out.push(ParentLink {
                parent: node,
                offset,
                width: graph.shape(node).c,
            });
        }
        LayerKind::Concat => {
            let mut acc = offset;
            for &i in &layer.inputs {
                walk(graph, i, acc, seen, out)?;
                acc += graph.shape(i).c;
            }
        }
        LayerKind::Flatten if graph.input_shape(node).plane() != 1 => {
            return Err(GroupingError::ChannelMixing(layer.id.clone()));
        }
        _ => {
            for &i in &layer.inputs {
                walk(graph, i, offset, seen, out)?;
            }
        }
    }
    Ok(())
}

/// Depth-first search from each Conv/FC layer's input back to the nearest
/// Conv/FC (or Input) layers, treating every other layer as transparent.
pub fn find_parents(graph: &CompGraph) -> Result<ParentMap, GroupingError> {
    let mut map = ParentMap::default();
    for l in graph.prunable() {
        let mut found = Vec::new();
        walk(
            graph,
            graph.layer(l).inputs[0],
            0,
            &mut BTreeSet::new(),
            &mut found,
        )?;
        found.sort();
        found.dedup();
        let (inputs, convs): (Vec<_>, Vec<_>) = found
            .into_iter()
            .partition(|p| matches!(graph.layer(p.parent).kind, LayerKind::Input { .. }));
        map.links.insert(l, convs);
        map.input_links.insert(l, inputs);
    }
    let mut found = Vec::new();
    walk(graph, graph.output(), 0, &mut BTreeSet::new(), &mut found)?;
    map.escaping = found.iter().map(|p| p.parent).collect();
    Ok(map)
}

/// One set of layers sharing a mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    /// Member layers in topological order.
    pub members: Vec<LayerId>,
    /// Union of the members' parent sets, `P[g]`.
    pub parents: Vec<LayerId>,
    /// Number of independently prunable mask slots.
    pub width: usize,
    /// Frozen groups keep an all-ones mask forever.
    pub frozen: bool,
    /// Per member (parallel to `members`): input channel -> slot.
    pub member_slots: Vec<Vec<usize>>,
    /// Per slot: the Conv/FC output channels that vanish with it.
    pub slot_sources: Vec<Vec<(LayerId, usize)>>,
}

impl Group {
    pub fn member_index(&self, layer: LayerId) -> Option<usize> {
        self.members.iter().position(|&m| m == layer)
    }

    /// Input channels of each member carried by `slot`.
    pub fn slot_inputs(&self, slot: usize) -> impl Iterator<Item = (LayerId, usize)> + '_ {
        self.members
            .iter()
            .zip(&self.member_slots)
            .flat_map(move |(&m, slots)| {
                slots
                    .iter()
                    .enumerate()
                    .filter(move |(_, &s)| s == slot)
                    .map(move |(j, _)| (m, j))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupTable {
    pub groups: Vec<Group>,
    layer_to_group: Vec<Option<usize>>,
}

impl GroupTable {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, gid: usize) -> &Group {
        &self.groups[gid]
    }

    pub fn group_of(&self, layer: LayerId) -> Option<usize> {
        self.layer_to_group.get(layer).copied().flatten()
    }

    /// Slot index of each input channel of a prunable layer.
    pub fn slots_of(&self, layer: LayerId) -> Option<(usize, &[usize])> {
        let gid = self.group_of(layer)?;
        let g = &self.groups[gid];
        let mi = g.member_index(layer)?;
        Some((gid, &g.member_slots[mi]))
    }

    /// Number of independently prunable slots shared by the group's members.
    pub fn shared_mask_width(&self, gid: usize) -> usize {
        self.groups[gid].width
    }

    /// Layer-level partition (sorted member lists, sorted by first member).
    pub fn partition(&self) -> Vec<Vec<LayerId>> {
        self.groups.iter().map(|g| g.members.clone()).collect()
    }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.parent[a.max(b)] = a.min(b);
        }
    }
}

/// Layer grouping over the prunable layers in topological order.
pub fn build_groups(graph: &CompGraph, parents: &ParentMap) -> Result<GroupTable, GroupingError> {
    let order: Vec<LayerId> = graph.prunable().collect();
    build_groups_in_order(graph, parents, &order)
}

/// Layer grouping with an explicit iteration order over the prunable layers.
///
/// A layer joins the first group whose parents (or grouped-conv members)
/// intersect its own parents. Groups that become coupled only through a
/// later layer are merged afterwards until no two groups overlap, so the
/// resulting partition does not depend on `order`.
pub fn build_groups_in_order(
    graph: &CompGraph,
    parents: &ParentMap,
    order: &[LayerId],
) -> Result<GroupTable, GroupingError> {
    struct Draft {
        members: BTreeSet<LayerId>,
        parents: BTreeSet<LayerId>,
    }
    let grouped = |l: &LayerId| graph.layer(*l).kind.is_grouped();
    let couples = |a: &Draft, b: &Draft| {
        a.parents
            .iter()
            .any(|p| b.parents.contains(p) || (b.members.contains(p) && grouped(p)))
    };

    let mut drafts: Vec<Draft> = Vec::new();
    for &l in order {
        let pl = parents.parents(l);
        let hit = drafts.iter_mut().find(|g| {
            pl.iter()
                .any(|p| g.parents.contains(p) || (g.members.contains(p) && grouped(p)))
        });
        match hit {
            Some(g) => {
                g.members.insert(l);
                g.parents.extend(pl);
            }
            None => drafts.push(Draft {
                members: BTreeSet::from([l]),
                parents: pl,
            }),
        }
    }
    loop {
        let mut pair = None;
        'scan: for a in 0..drafts.len() {
            for b in a + 1..drafts.len() {
                if couples(&drafts[a], &drafts[b]) || couples(&drafts[b], &drafts[a]) {
                    pair = Some((a, b));
                    break 'scan;
                }
            }
        }
        let Some((a, b)) = pair else { break };
        let gone = drafts.swap_remove(b);
        drafts[a].members.extend(gone.members);
        drafts[a].parents.extend(gone.parents);
    }
    drafts.sort_by_key(|d| d.members.first().copied());

    let mut layer_to_group = vec![None; graph.len()];
    let mut groups = Vec::with_capacity(drafts.len());
    for (gid, d) in drafts.into_iter().enumerate() {
        let members: Vec<LayerId> = d.members.into_iter().collect();
        for &m in &members {
            layer_to_group[m] = Some(gid);
        }
        groups.push(assign_slots(
            graph,
            parents,
            gid,
            members,
            d.parents.into_iter().collect(),
        )?);
    }
    Ok(GroupTable {
        groups,
        layer_to_group,
    })
}

/// Channel-level union of the group's member inputs and source channels.
fn assign_slots(
    graph: &CompGraph,
    parents: &ParentMap,
    gid: usize,
    members: Vec<LayerId>,
    group_parents: Vec<LayerId>,
) -> Result<Group, GroupingError> {
    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    enum Elem {
        Position(usize, usize),
        Source(LayerId, usize),
    }
    let mut ids: BTreeMap<Elem, usize> = BTreeMap::new();
    let mut elems: Vec<Elem> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut intern = |e: Elem, ids: &mut BTreeMap<Elem, usize>| -> usize {
        *ids.entry(e).or_insert_with(|| {
            elems.push(e);
            elems.len() - 1
        })
    };

    for (mi, &m) in members.iter().enumerate() {
        let c_in = graph.input_shape(m).c;
        for j in 0..c_in {
            intern(Elem::Position(mi, j), &mut ids);
        }
        for link in parents.links(m).iter().chain(parents.input_links(m)) {
            for c in 0..link.width {
                let a = intern(Elem::Position(mi, link.offset + c), &mut ids);
                let b = intern(Elem::Source(link.parent, c), &mut ids);
                edges.push((a, b));
            }
        }
        if let Some(geo) = graph.geometry(m).filter(|g| g.groups > 1) {
            let (ipg, opg) = (geo.in_per_group(), geo.out_per_group());
            for k in 0..geo.groups {
                let anchor = intern(Elem::Position(mi, k * ipg), &mut ids);
                for t in 1..ipg {
                    let e = intern(Elem::Position(mi, k * ipg + t), &mut ids);
                    edges.push((anchor, e));
                }
                for u in 0..opg {
                    let e = intern(Elem::Source(m, k * opg + u), &mut ids);
                    edges.push((anchor, e));
                }
            }
        }
    }
    let mut dsu = Dsu::new(elems.len());
    for (a, b) in edges {
        dsu.union(a, b);
    }

    let mut slot_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut member_slots = Vec::with_capacity(members.len());
    for (mi, &m) in members.iter().enumerate() {
        let c_in = graph.input_shape(m).c;
        let mut slots = Vec::with_capacity(c_in);
        for j in 0..c_in {
            let root = dsu.find(ids[&Elem::Position(mi, j)]);
            let next = slot_of_root.len();
            slots.push(*slot_of_root.entry(root).or_insert(next));
        }
        member_slots.push(slots);
    }
    let width = slot_of_root.len();

    let mut slot_sources = vec![Vec::new(); width];
    let mut frozen = group_parents.is_empty();
    for (i, e) in elems.iter().enumerate() {
        if let Elem::Source(p, c) = *e {
            let slot = slot_of_root[&dsu.find(i)];
            if matches!(graph.layer(p).kind, LayerKind::Input { .. }) {
                frozen = true;
            } else {
                if parents.escapes(p) {
                    frozen = true;
                }
                slot_sources[slot].push((p, c));
            }
        }
    }
    for s in &mut slot_sources {
        s.sort();
    }

    for (mi, &m) in members.iter().enumerate() {
        let mut count = vec![0usize; width];
        for &s in &member_slots[mi] {
            count[s] += 1;
        }
        let geo = graph.geometry(m).unwrap();
        let fed_by_grouped = parents
            .parents(m)
            .iter()
            .any(|&p| graph.layer(p).kind.is_grouped());
        // A grouped parent ties its output channels in blocks, so whoever
        // reads it inherits the block structure.
        let expected = if fed_by_grouped {
            None
        } else if geo.groups > 1 {
            Some(geo.in_per_group())
        } else {
            Some(1)
        };
        if let Some(per_slot) = expected {
            if let Some(&bad) = count.iter().find(|&&c| c != 0 && c != per_slot) {
                return Err(GroupingError::InconsistentWidth {
                    group: gid,
                    layer: graph.layer(m).id.clone(),
                    reason: alloc::format!(
                        "has {bad} input channels in one shared slot, expected {per_slot}"
                    ),
                });
            }
        }
    }

    Ok(Group {
        members,
        parents: group_parents,
        width,
        frozen,
        member_slots,
        slot_sources,
    })
}
