use alloc::vec;
use alloc::vec::Vec;

use crate::graph::LayerId;
use crate::grouping::GroupTable;
use crate::tensor::Real;

/// Binary channel masks, one vector per group (initialized to all ones).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskSet {
    masks: Vec<Vec<u8>>,
    frozen: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("mask set has {actual} groups, group table has {expected}")]
    GroupCount { expected: usize, actual: usize },
    #[error("group {group}: mask width {actual}, expected {expected}")]
    Width {
        group: usize,
        expected: usize,
        actual: usize,
    },
    #[error("group {group}: mask entries must be 0 or 1")]
    NotBinary { group: usize },
    #[error("group {0} is frozen and cannot be pruned")]
    Frozen(usize),
    #[error("group {0} would have no live slot")]
    Empty(usize),
}

impl MaskSet {
    pub fn ones(groups: &GroupTable) -> Self {
        MaskSet {
            masks: groups.groups.iter().map(|g| vec![1; g.width]).collect(),
            frozen: groups.groups.iter().map(|g| g.frozen).collect(),
        }
    }

    /// Validates raw masks (e.g. from a mask file) against a group table.
    pub fn from_vecs(groups: &GroupTable, masks: Vec<Vec<u8>>) -> Result<Self, MaskError> {
        if masks.len() != groups.len() {
            return Err(MaskError::GroupCount {
                expected: groups.len(),
                actual: masks.len(),
            });
        }
        for (gid, (m, g)) in masks.iter().zip(&groups.groups).enumerate() {
            if m.len() != g.width {
                return Err(MaskError::Width {
                    group: gid,
                    expected: g.width,
                    actual: m.len(),
                });
            }
            if m.iter().any(|&v| v > 1) {
                return Err(MaskError::NotBinary { group: gid });
            }
            if !m.contains(&1) {
                return Err(MaskError::Empty(gid));
            }
            if g.frozen && m.contains(&0) {
                return Err(MaskError::Frozen(gid));
            }
        }
        Ok(MaskSet {
            masks,
            frozen: groups.groups.iter().map(|g| g.frozen).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn group(&self, gid: usize) -> &[u8] {
        &self.masks[gid]
    }

    pub fn groups(&self) -> &[Vec<u8>] {
        &self.masks
    }

    pub fn is_frozen(&self, gid: usize) -> bool {
        self.frozen[gid]
    }

    pub fn is_live(&self, gid: usize, slot: usize) -> bool {
        self.masks[gid][slot] == 1
    }

    pub fn live_count(&self, gid: usize) -> usize {
        self.masks[gid].iter().filter(|&&v| v == 1).count()
    }

    /// Sets a slot to 0. Masks are never un-pruned.
    pub fn prune(&mut self, gid: usize, slot: usize) -> Result<(), MaskError> {
        if self.frozen[gid] {
            return Err(MaskError::Frozen(gid));
        }
        if self.live_count(gid) == 1 && self.masks[gid][slot] == 1 {
            return Err(MaskError::Empty(gid));
        }
        self.masks[gid][slot] = 0;
        Ok(())
    }

    /// Masks as real-valued vectors, the form the engine consumes.
    pub fn as_real<T: Real>(&self) -> Vec<Vec<T>> {
        self.masks
            .iter()
            .map(|m| m.iter().map(|&v| T::lit(v as f64)).collect())
            .collect()
    }

    pub fn is_all_ones(&self) -> bool {
        self.masks.iter().all(|m| m.iter().all(|&v| v == 1))
    }

    /// Per-input-channel multiplier of a prunable layer.
    pub fn channel_mask<T: Real>(&self, groups: &GroupTable, layer: LayerId) -> Option<Vec<T>> {
        let (gid, slots) = groups.slots_of(layer)?;
        Some(
            slots
                .iter()
                .map(|&s| T::lit(self.masks[gid][s] as f64))
                .collect(),
        )
    }
}
