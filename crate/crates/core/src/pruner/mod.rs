//! The interleaved fine-tune / accumulate / prune loop.

mod rewrite;

use alloc::string::String;
use alloc::vec::Vec;

use crate::cost::{CostError, CostLedger, NormMode};
use crate::data::{BatchSource, Dataset};
use crate::engine::{self, EngineError, Mode, Sgd};
use crate::graph::{flops_of_graph, memory_of_graph, CompGraph};
use crate::grouping::GroupTable;
use crate::importance::FisherAccumulator;
use crate::mask::MaskSet;
use crate::weights::WeightStore;

pub use rewrite::rewrite;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PruneConfig {
    /// Iterations between consecutive prunes.
    pub interval: usize,
    /// Stop once remaining FLOPs / initial FLOPs is at or below this.
    pub flops_target: f64,
    pub norm: NormMode,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub max_iterations: usize,
    pub seed: u64,
    pub min_live_slots: usize,
    /// Add `|sum_n g_n|` to each score.
    pub first_order: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            interval: 25,
            flops_target: 0.5,
            norm: NormMode::Memory,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            max_iterations: 100_000,
            seed: 0,
            min_live_slots: 1,
            first_order: false,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        let bad = |m: &str| Err(PruneError::InvalidConfig(String::from(m)));
        if self.interval == 0 {
            return bad("interval must be at least 1");
        }
        if !(self.flops_target > 0.0 && self.flops_target <= 1.0) {
            return bad("flops_target must lie in (0, 1]");
        }
        if self.min_live_slots == 0 {
            return bad("min_live_slots must be at least 1");
        }
        let negative = |v: f32| v.is_nan() || v < 0.0;
        if negative(self.lr) || !(0.0..1.0).contains(&self.momentum) || negative(self.weight_decay)
        {
            return bad("lr and weight_decay must be non-negative, momentum in [0, 1)");
        }
        Ok(())
    }
}

/// One pruned slot.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PruneEvent {
    pub iteration: usize,
    pub group: usize,
    pub slot: usize,
    pub score: f64,
    pub normalized_score: f64,
    pub delta_flops: u64,
    pub delta_memory: u64,
    pub flops_remaining_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PruneError {
    #[error("NothingPrunable: no group has a removable slot left")]
    NothingPrunable,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("EmptyLayer `{0}`")]
    EmptyLayer(String),
    #[error("rewrite of `{layer}` failed: {reason}")]
    Rewrite { layer: String, reason: String },
    #[error("iteration {iteration}: {source}")]
    Engine {
        iteration: usize,
        source: EngineError,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// State handed to an [`Observer`] after each prune.
pub struct PruneContext<'a> {
    pub graph: &'a CompGraph,
    pub groups: &'a GroupTable,
    pub weights: &'a WeightStore,
    pub masks: &'a MaskSet,
    pub ledger: &'a CostLedger,
}

/// Hooks into [`run`]; every method defaults to doing nothing.
pub trait Observer {
    fn on_step(&mut self, _iteration: usize, _loss: f32) {}
    fn on_prune(&mut self, _event: &PruneEvent, _ctx: &PruneContext<'_>) {}
}

impl Observer for () {}

/// Result of [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct PruneOutcome {
    pub masks: MaskSet,
    pub events: Vec<PruneEvent>,
    pub iterations: usize,
    pub initial_flops: u64,
    pub final_flops: u64,
    pub initial_memory: u64,
    pub final_memory: u64,
    /// Training loss of every iteration.
    pub losses: Vec<f32>,
}

/// Arg-min of the normalized scores over removable candidates; ties go to
/// the smallest `(group, slot)`.
pub fn select_victim(
    normalized: &[Vec<f64>],
    ledger: &CostLedger,
    masks: &MaskSet,
    min_live: usize,
) -> Result<(usize, usize), PruneError> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (gid, row) in normalized.iter().enumerate() {
        if masks.is_frozen(gid) || masks.live_count(gid) <= min_live {
            continue;
        }
        for (s, &v) in row.iter().enumerate() {
            let Some(cost) = ledger.get(gid, s) else {
                continue;
            };
            if !cost.removable || !masks.is_live(gid, s) {
                continue;
            }
            if best.is_none_or(|(b, ..)| v < b) {
                best = Some((v, gid, s));
            }
        }
    }
    best.map(|(_, g, s)| (g, s))
        .ok_or(PruneError::NothingPrunable)
}

/// One training step with the given masks; returns the batch loss.
pub fn train_step(
    graph: &CompGraph,
    groups: &GroupTable,
    weights: &mut WeightStore,
    masks: &MaskSet,
    opt: &mut Sgd,
    data: &mut impl BatchSource,
    acc: Option<&mut FisherAccumulator>,
) -> Result<f32, EngineError> {
    let (x, y) = data.next_batch();
    let (loss, tape) = engine::forward(
        graph,
        groups,
        weights,
        &masks.as_real(),
        &x,
        &y,
        Mode::Train,
    )?;
    let grads = engine::backward(graph, weights, &tape)?;
    if let Some(acc) = acc {
        acc.accumulate(graph, groups, &tape, &grads);
    }
    opt.step(weights, &grads.params);
    tape.update_running_stats(graph, weights);
    Ok(loss)
}

/// Fine-tunes while pruning one slot every `interval` iterations until the
/// FLOPs target is reached or `max_iterations` have run.
///
/// When the target is already met at the start (e.g. a target of 1.0) the
/// loop only fine-tunes, for `max_iterations`.
pub fn run(
    graph: &CompGraph,
    groups: &GroupTable,
    weights: &mut WeightStore,
    masks: MaskSet,
    data: &mut impl BatchSource,
    config: &PruneConfig,
    observer: &mut impl Observer,
) -> Result<PruneOutcome, PruneError> {
    config.validate()?;
    let mut masks = masks;
    let initial_flops = flops_of_graph(graph, groups, &masks);
    let initial_memory = memory_of_graph(graph, groups, &masks);
    let mut flops = initial_flops;
    let fraction = |f: u64| f as f64 / initial_flops.max(1) as f64;
    let pruning = fraction(flops) > config.flops_target;

    let mut opt = Sgd::new(config.lr, config.momentum, config.weight_decay);
    let mut acc = FisherAccumulator::new(groups);
    let mut events = Vec::new();
    let mut losses = Vec::new();
    let mut t = 0;
    while t < config.max_iterations {
        let loss = train_step(
            graph,
            groups,
            weights,
            &masks,
            &mut opt,
            data,
            pruning.then_some(&mut acc),
        )
        .map_err(|source| PruneError::Engine {
            iteration: t,
            source,
        })?;
        t += 1;
        losses.push(loss);
        observer.on_step(t, loss);
        if !pruning || t % config.interval != 0 {
            continue;
        }

        let ledger = CostLedger::compute(graph, groups, &masks, config.norm);
        let scores = acc.scores(&masks, config.first_order);
        let normalized = ledger.normalize(&scores)?;
        let (gid, slot) = select_victim(&normalized, &ledger, &masks, config.min_live_slots)?;
        let cost = ledger.get(gid, slot).unwrap();
        masks
            .prune(gid, slot)
            .map_err(|_| PruneError::NothingPrunable)?;
        flops -= cost.flops;
        let event = PruneEvent {
            iteration: t,
            group: gid,
            slot,
            score: scores[gid][slot],
            normalized_score: normalized[gid][slot],
            delta_flops: cost.flops,
            delta_memory: cost.memory,
            flops_remaining_fraction: fraction(flops),
        };
        acc.zeroize();
        let ledger = CostLedger::compute(graph, groups, &masks, config.norm);
        debug_assert_eq!(ledger.flops, flops);
        observer.on_prune(
            &event,
            &PruneContext {
                graph,
                groups,
                weights,
                masks: &masks,
                ledger: &ledger,
            },
        );
        events.push(event);
        if fraction(flops) <= config.flops_target {
            break;
        }
    }
    Ok(PruneOutcome {
        final_flops: flops_of_graph(graph, groups, &masks),
        final_memory: memory_of_graph(graph, groups, &masks),
        masks,
        events,
        iterations: t,
        initial_flops,
        initial_memory,
        losses,
    })
}

/// Plain supervised training for `steps` iterations; returns the losses.
pub fn finetune(
    graph: &CompGraph,
    groups: &GroupTable,
    weights: &mut WeightStore,
    masks: &MaskSet,
    data: &mut impl BatchSource,
    steps: usize,
    opt: &mut Sgd,
) -> Result<Vec<f32>, PruneError> {
    (0..steps)
        .map(|t| {
            train_step(graph, groups, weights, masks, opt, data, None).map_err(|source| {
                PruneError::Engine {
                    iteration: t,
                    source,
                }
            })
        })
        .collect()
}

/// Eval-mode mean loss and accuracy over a whole dataset.
pub fn evaluate(
    graph: &CompGraph,
    groups: &GroupTable,
    weights: &WeightStore,
    masks: &MaskSet,
    data: &Dataset,
    batch: usize,
) -> Result<(f64, f64), EngineError> {
    let real = masks.as_real();
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for (x, y) in data.sequential(batch) {
        let (l, tape) = engine::forward(graph, groups, weights, &real, &x, &y, Mode::Eval)?;
        loss += l as f64 * y.len() as f64;
        correct += tape.correct();
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}
