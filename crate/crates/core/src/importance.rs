//! Fisher-information channel importance.
//!
//! For a mask slot `i` the per-sample gradient is
//! `dL_n/dm_i = sum over copies x of sum_hw A_n * dL_n/dA~_n`, where the
//! copies are every input channel of every member layer that the slot
//! covers. The score is the sum over samples of its square; copies are
//! added before squaring.

use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{Gradients, Tape};
use crate::graph::CompGraph;
use crate::grouping::GroupTable;
use crate::mask::MaskSet;
use crate::tensor::Real;

/// Per-sample mask gradients of one prunable layer, `(n, c_in)` row-major.
///
/// The backward pass differentiates the batch-mean loss, so its
/// activation gradients are rescaled by `n` to give each sample's own
/// loss gradient.
pub fn sample_mask_grads<T: Real>(
    graph: &CompGraph,
    tape: &Tape<T>,
    grads: &Gradients<T>,
    layer: usize,
) -> Vec<f64> {
    let a = tape.unmasked_input(graph, layer);
    let Some(d) = grads.masked_input[layer].as_ref() else {
        let [n, c, ..] = a.shape();
        return vec![0.0; n * c];
    };
    let [n, c, h, w] = a.shape();
    let plane = h * w;
    let scale = n as f64;
    let mut out = vec![0.0; n * c];
    for (i, o) in out.iter_mut().enumerate() {
        let base = i * plane;
        let mut acc = 0.0f64;
        for k in base..base + plane {
            acc += a.data()[k].to_f64().unwrap() * d.data()[k].to_f64().unwrap();
        }
        *o = acc * scale;
    }
    out
}

/// Sums a layer's per-channel gradients into its group's slots: identity
/// for a plain layer, a per-channel-group sum for grouped convolutions.
pub fn reduce_in_layer(per_channel: &[f64], slots: &[usize], width: usize) -> Vec<f64> {
    let c = slots.len();
    let n = per_channel.len() / c.max(1);
    let mut out = vec![0.0; n * width];
    for (row, src) in out.chunks_mut(width).zip(per_channel.chunks(c)) {
        for (&s, &v) in slots.iter().zip(src) {
            row[s] += v;
        }
    }
    out
}

/// Element-wise sum of the members' `(n, width)` matrices.
pub fn reduce_cross_layer(members: &[Vec<f64>]) -> Vec<f64> {
    let mut out = members.first().cloned().unwrap_or_default();
    for m in members.iter().skip(1) {
        for (a, b) in out.iter_mut().zip(m) {
            *a += *b;
        }
    }
    out
}

/// Fully reduced `(n, width)` per-sample slot gradients for every group.
pub fn group_grads<T: Real>(
    graph: &CompGraph,
    groups: &GroupTable,
    tape: &Tape<T>,
    grads: &Gradients<T>,
) -> Vec<Vec<f64>> {
    groups
        .groups
        .iter()
        .map(|g| {
            let per_member: Vec<Vec<f64>> = g
                .members
                .iter()
                .zip(&g.member_slots)
                .map(|(&m, slots)| {
                    reduce_in_layer(&sample_mask_grads(graph, tape, grads, m), slots, g.width)
                })
                .collect();
            reduce_cross_layer(&per_member)
        })
        .collect()
}

/// Running sums of squared per-sample slot gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherAccumulator {
    sum_sq: Vec<Vec<f64>>,
    sum: Vec<Vec<f64>>,
    samples: usize,
}

impl FisherAccumulator {
    pub fn new(groups: &GroupTable) -> Self {
        let zeros: Vec<Vec<f64>> = groups.groups.iter().map(|g| vec![0.0; g.width]).collect();
        FisherAccumulator {
            sum_sq: zeros.clone(),
            sum: zeros,
            samples: 0,
        }
    }

    /// Adds one batch of reduced gradients for group `gid`, `(n, width)`.
    pub fn accumulate_group(&mut self, gid: usize, grads: &[f64]) {
        let w = self.sum_sq[gid].len();
        for row in grads.chunks(w) {
            for ((s2, s1), &v) in self.sum_sq[gid].iter_mut().zip(&mut self.sum[gid]).zip(row) {
                *s2 += v * v;
                *s1 += v;
            }
        }
    }

    /// Accumulates every group from one forward/backward pass.
    pub fn accumulate<T: Real>(
        &mut self,
        graph: &CompGraph,
        groups: &GroupTable,
        tape: &Tape<T>,
        grads: &Gradients<T>,
    ) {
        for (gid, g) in group_grads(graph, groups, tape, grads).iter().enumerate() {
            self.accumulate_group(gid, g);
        }
        self.samples += tape.batch();
    }

    pub fn zeroize(&mut self) {
        for v in self.sum_sq.iter_mut().chain(&mut self.sum) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.samples = 0;
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Accumulated `sum_n g_n^2` per slot, as stored.
    pub fn raw(&self) -> &[Vec<f64>] {
        &self.sum_sq
    }

    /// Scores for selection: pruned slots are `+inf`. With `first_order`
    /// the magnitude of the summed gradient is added.
    pub fn scores(&self, masks: &MaskSet, first_order: bool) -> Vec<Vec<f64>> {
        self.sum_sq
            .iter()
            .zip(&self.sum)
            .enumerate()
            .map(|(gid, (sq, s))| {
                sq.iter()
                    .zip(s)
                    .enumerate()
                    .map(|(i, (&q, &g))| {
                        if !masks.is_live(gid, i) {
                            f64::INFINITY
                        } else if first_order {
                            q + g.abs()
                        } else {
                            q
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
