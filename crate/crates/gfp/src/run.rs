//! The `prune` pipeline: load artifacts, run the pruner, rewrite, fine-tune
//! and write everything to an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use gfp_core::engine::Sgd;
use gfp_core::graph::flops_of_graph;
use gfp_core::grouping::{build_groups, find_parents};
use gfp_core::pruner::{self, Observer, PruneContext, PruneOutcome};
use gfp_core::{
    CompGraph, Dataset, GroupTable, MaskSet, PruneConfig, PruneError, PruneEvent, ShuffledBatches,
    WeightStore,
};
use serde::{Deserialize, Serialize};

use crate::{blob, dataset, ledger, manifest};

/// Everything `gfp prune` needs. Paths are resolved relative to the working
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub graph: PathBuf,
    pub weights: PathBuf,
    pub weights_index: PathBuf,
    pub data: PathBuf,
    /// Held-out set for accuracy; the training data when absent.
    pub eval_data: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(flatten)]
    pub prune: PruneConfig,
    pub batch: usize,
    pub eval_batch: usize,
    /// Fine-tuning steps on the rewritten network.
    pub finetune_steps: usize,
    /// Write masks and ledger every this many prune events (0 = never).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: PathBuf::new(),
            weights: PathBuf::new(),
            weights_index: PathBuf::new(),
            data: PathBuf::new(),
            eval_data: None,
            out: PathBuf::new(),
            prune: PruneConfig::default(),
            batch: 32,
            eval_batch: 64,
            finetune_steps: 0,
            checkpoint_every: 0,
        }
    }
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0:#}")]
    Input(anyhow::Error),
    #[error("internal invariant violated: {0:#}")]
    Internal(anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Input(_) => 1,
            RunError::Internal(_) => 2,
        }
    }
}

impl From<anyhow::Error> for RunError {
    fn from(e: anyhow::Error) -> Self {
        RunError::Input(e)
    }
}

/// Pruner errors that point at a bug rather than at the inputs.
pub fn classify(e: PruneError) -> RunError {
    match e {
        PruneError::Rewrite { .. } | PruneError::EmptyLayer(_) | PruneError::Cost(_) => {
            RunError::Internal(e.into())
        }
        _ => RunError::Input(e.into()),
    }
}

pub fn read_graph(path: &Path) -> anyhow::Result<CompGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(manifest::parse_graph(&text)?)
}

pub fn read_weights(
    graph: &CompGraph,
    blob_path: &Path,
    index_path: &Path,
) -> anyhow::Result<WeightStore> {
    let bytes = fs::read(blob_path).with_context(|| format!("reading {}", blob_path.display()))?;
    let index = fs::read_to_string(index_path)
        .with_context(|| format!("reading {}", index_path.display()))?;
    Ok(blob::load_weights(graph, &bytes, &index)?)
}

pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    dataset::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn groups_of(graph: &CompGraph) -> anyhow::Result<GroupTable> {
    Ok(build_groups(graph, &find_parents(graph)?)?)
}

/// Writes manifest, blob and index as `<stem>.json`, `<stem>.bin`,
/// `<stem>.index.json` inside `dir`.
pub fn write_network(
    dir: &Path,
    stem: &str,
    graph: &CompGraph,
    weights: &WeightStore,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(format!("{stem}.json")),
        manifest::graph_to_json(graph),
    )?;
    let (bytes, index) = blob::encode(graph, weights);
    fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    fs::write(
        dir.join(format!("{stem}.index.json")),
        blob::index_to_json(&index),
    )?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// `complete`, or `partial` when the pruner stopped with an error.
    pub status: String,
    pub error: Option<String>,
    pub iterations: usize,
    pub events: usize,
    pub flops_initial: u64,
    pub flops_final: u64,
    pub flops_fraction: f64,
    pub memory_initial: u64,
    pub memory_final: u64,
    pub params_initial: usize,
    pub params_final: usize,
    pub eval_before: Accuracy,
    pub eval_pruned: Option<Accuracy>,
    pub eval_finetuned: Option<Accuracy>,
}

fn evaluate(
    graph: &CompGraph,
    groups: &GroupTable,
    w: &WeightStore,
    m: &MaskSet,
    data: &Dataset,
    batch: usize,
) -> anyhow::Result<Accuracy> {
    let (loss, accuracy) = pruner::evaluate(graph, groups, w, m, data, batch)?;
    Ok(Accuracy { loss, accuracy })
}

struct Checkpoints<'a> {
    dir: &'a Path,
    every: usize,
    events: Vec<PruneEvent>,
    masks: Option<MaskSet>,
    failed: Option<std::io::Error>,
}

impl Checkpoints<'_> {
    fn write(&mut self) {
        let Some(m) = &self.masks else { return };
        let r = fs::write(self.dir.join("masks.json"), ledger::masks_to_json(m)).and_then(|_| {
            fs::write(
                self.dir.join("events.jsonl"),
                ledger::events_to_jsonl(&self.events),
            )
        });
        if let Err(e) = r {
            self.failed.get_or_insert(e);
        }
    }
}

impl Observer for Checkpoints<'_> {
    fn on_prune(&mut self, event: &PruneEvent, ctx: &PruneContext<'_>) {
        self.events.push(event.clone());
        self.masks = Some(ctx.masks.clone());
        if self.every > 0 && self.events.len().is_multiple_of(self.every) {
            self.write();
        }
    }
}

/// Runs the whole pipeline and returns the summary that was written.
pub fn prune(cfg: &RunConfig) -> Result<Summary, RunError> {
    cfg.prune
        .validate()
        .map_err(|e| RunError::Input(e.into()))?;
    if cfg.batch == 0 || cfg.eval_batch == 0 {
        return Err(RunError::Input(anyhow::anyhow!(
            "batch sizes must be positive"
        )));
    }
    let graph = read_graph(&cfg.graph)?;
    let groups = groups_of(&graph)?;
    let mut weights = read_weights(&graph, &cfg.weights, &cfg.weights_index)?;
    let train = read_dataset(&cfg.data)?;
    let eval = match &cfg.eval_data {
        Some(p) => read_dataset(p)?,
        None => train.clone(),
    };
    for (name, d) in [("training", &train), ("evaluation", &eval)] {
        if d.is_empty() {
            return Err(RunError::Input(anyhow::anyhow!(
                "EmptyDataset: {name} set has no samples"
            )));
        }
    }
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;

    let ones = MaskSet::ones(&groups);
    let mut summary = Summary {
        status: "partial".into(),
        params_initial: weights.trainable_count(&graph),
        eval_before: evaluate(&graph, &groups, &weights, &ones, &eval, cfg.eval_batch)?,
        ..Summary::default()
    };

    let batch = cfg.batch.min(train.len());
    let mut stream = ShuffledBatches::new(&train, batch, cfg.prune.seed);
    let mut obs = Checkpoints {
        dir: &cfg.out,
        every: cfg.checkpoint_every,
        events: Vec::new(),
        masks: None,
        failed: None,
    };
    let result = pruner::run(
        &graph,
        &groups,
        &mut weights,
        ones,
        &mut stream,
        &cfg.prune,
        &mut obs,
    );
    let outcome: PruneOutcome = match result {
        Ok(o) => o,
        Err(e) => {
            obs.write();
            summary.events = obs.events.len();
            summary.error = Some(e.to_string());
            write_summary(&cfg.out, &summary)?;
            return Err(classify(e));
        }
    };
    if let Some(e) = obs.failed {
        return Err(RunError::Input(
            anyhow::Error::new(e).context("writing checkpoint"),
        ));
    }

    summary.iterations = outcome.iterations;
    summary.events = outcome.events.len();
    summary.flops_initial = outcome.initial_flops;
    summary.flops_final = outcome.final_flops;
    summary.flops_fraction = outcome.final_flops as f64 / outcome.initial_flops.max(1) as f64;
    summary.memory_initial = outcome.initial_memory;
    summary.memory_final = outcome.final_memory;
    summary.eval_pruned = Some(evaluate(
        &graph,
        &groups,
        &weights,
        &outcome.masks,
        &eval,
        cfg.eval_batch,
    )?);
    fs::write(
        cfg.out.join("masks.json"),
        ledger::masks_to_json(&outcome.masks),
    )
    .context("writing masks")?;
    fs::write(
        cfg.out.join("events.jsonl"),
        ledger::events_to_jsonl(&outcome.events),
    )
    .context("writing ledger")?;

    let (small, mut small_w) =
        pruner::rewrite(&graph, &groups, &weights, &outcome.masks).map_err(classify)?;
    let small_groups = groups_of(&small).map_err(RunError::Internal)?;
    let small_ones = MaskSet::ones(&small_groups);
    let recount = flops_of_graph(&small, &small_groups, &small_ones);
    if recount != outcome.final_flops {
        return Err(RunError::Internal(anyhow::anyhow!(
            "rewritten network has {recount} MACs, ledger says {}",
            outcome.final_flops
        )));
    }
    if cfg.finetune_steps > 0 {
        let mut opt = Sgd::new(cfg.prune.lr, cfg.prune.momentum, cfg.prune.weight_decay);
        let mut s = ShuffledBatches::new(&train, batch, cfg.prune.seed.wrapping_add(1));
        pruner::finetune(
            &small,
            &small_groups,
            &mut small_w,
            &small_ones,
            &mut s,
            cfg.finetune_steps,
            &mut opt,
        )
        .map_err(|e| RunError::Input(e.into()))?;
        summary.eval_finetuned = Some(evaluate(
            &small,
            &small_groups,
            &small_w,
            &small_ones,
            &eval,
            cfg.eval_batch,
        )?);
    }
    summary.params_final = small_w.trainable_count(&small);
    write_network(&cfg.out, "pruned", &small, &small_w)?;
    summary.status = "complete".into();
    write_summary(&cfg.out, &summary)?;
    Ok(summary)
}

fn write_summary(dir: &Path, s: &Summary) -> anyhow::Result<()> {
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(s)?)
        .context("writing summary")?;
    Ok(())
}

/// Plain training from scratch as used for the fixtures: momentum SGD,
/// batch 32, learning rate 0.05.
pub fn pretrain(
    graph: &CompGraph,
    groups: &GroupTable,
    weights: &mut WeightStore,
    data: &Dataset,
    steps: usize,
    seed: u64,
) -> Result<Vec<f32>, PruneError> {
    let ones = MaskSet::ones(groups);
    let mut opt = Sgd::new(0.05, 0.9, 1e-4);
    let mut s = ShuffledBatches::new(data, 32, seed);
    pruner::finetune(graph, groups, weights, &ones, &mut s, steps, &mut opt)
}

/// Loads a `RunConfig` JSON file.
pub fn read_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
