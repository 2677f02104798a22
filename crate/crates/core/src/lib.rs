//! Structured channel pruning for convolutional networks described as an
//! explicit computation graph.
//!
//! The crate is `no_std` (with `alloc`). It holds the pure algorithmic
//! pieces:
//!
//! * [`graph`]: layer IR, shape inference, FLOPs and memory accounting.
//! * [`grouping`]: parent discovery and coupled-channel layer grouping.
//! * [`engine`]: dense forward evaluation and reverse-mode gradients with
//!   mask multiplication on every prunable layer input.
//! * [`importance`]: Fisher-information channel importance.
//! * [`cost`]: per-slot FLOPs / memory reductions and score normalization.
//! * [`pruner`]: the interleaved fine-tune / accumulate / prune loop and
//!   the physical rewrite of a masked network.
//!
//! File formats, fixtures and the command-line front end live in the
//! companion `gfp` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cost;
pub mod data;
pub mod engine;
pub mod graph;
pub mod grouping;
pub mod importance;
pub mod mask;
pub mod pruner;
pub mod tensor;
pub mod weights;

pub use cost::{CostError, CostLedger, NormMode};
pub use data::{BatchSource, Dataset, ShuffledBatches};
pub use engine::{EngineError, Mode, Tape};
pub use graph::{CompGraph, GraphError, Layer, LayerId, LayerKind, Shape};
pub use grouping::{GroupTable, GroupingError, ParentMap};
pub use importance::FisherAccumulator;
pub use mask::MaskSet;
pub use pruner::{PruneConfig, PruneError, PruneEvent};
pub use tensor::Tensor;
pub use weights::{WeightError, WeightStore};
