use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use gfp::core::graph::{flops_of_graph, memory_of_graph};
use gfp::core::pruner;
use gfp::core::weights::init_weights;
use gfp::core::{MaskSet, NormMode};
use gfp::run::{self, RunConfig, RunError};
use gfp::{dataset, fixtures, ledger};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "gfp",
    version,
    about = "Structured channel pruning with grouped Fisher importance"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    Memory,
    Flops,
    None,
}

impl From<Norm> for NormMode {
    fn from(n: Norm) -> Self {
        match n {
            Norm::Memory => NormMode::Memory,
            Norm::Flops => NormMode::Flops,
            Norm::None => NormMode::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// Residual CNN with grouped and depth-wise blocks, plus texture data.
    Reference,
    /// ResNet-style first bottleneck.
    Bottleneck,
    /// Random DAG (use --seed).
    Random,
}

#[derive(clap::Args)]
struct NetArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    weights_index: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a manifest and print its shape table.
    Validate {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Print the layer groups as JSON.
    Group {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Prune to a FLOPs target, rewrite and fine-tune.
    Prune(Box<PruneArgs>),
    /// Top-1 accuracy with eval-mode BatchNorm.
    Eval {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        data: PathBuf,
        /// Mask file to apply before evaluating.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Channel profile and FLOPs/memory trajectory of a prune ledger.
    Report {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Cross-check the profile against this mask file.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Write a fixture network, initial weights and datasets.
    Fixture {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        /// Pixel noise of the texture datasets.
        #[arg(long, default_value_t = 5.0)]
        noise: f32,
        /// SGD steps (batch 32, lr 0.05) before writing the weights.
        #[arg(long, default_value_t = 0)]
        pretrain_steps: usize,
    },
}

#[derive(clap::Args)]
struct PruneArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    weights_index: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    target_flops: Option<f64>,
    #[arg(long)]
    interval: Option<usize>,
    #[arg(long, value_enum)]
    norm: Option<Norm>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    finetune_steps: Option<usize>,
    #[arg(long)]
    min_live_slots: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn config_of(a: PruneArgs) -> anyhow::Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => run::read_config(p)?,
        None => RunConfig::default(),
    };
    set(&mut c.graph, a.graph);
    set(&mut c.weights, a.weights);
    set(&mut c.weights_index, a.weights_index);
    set(&mut c.data, a.data);
    set(&mut c.out, a.out);
    if a.eval_data.is_some() {
        c.eval_data = a.eval_data;
    }
    set(&mut c.prune.flops_target, a.target_flops);
    set(&mut c.prune.interval, a.interval);
    set(&mut c.prune.norm, a.norm.map(Into::into));
    set(&mut c.prune.lr, a.lr);
    set(&mut c.prune.momentum, a.momentum);
    set(&mut c.prune.weight_decay, a.weight_decay);
    set(&mut c.prune.seed, a.seed);
    set(&mut c.prune.max_iterations, a.max_iters);
    set(&mut c.prune.min_live_slots, a.min_live_slots);
    set(&mut c.checkpoint_every, a.checkpoint_every);
    set(&mut c.batch, a.batch);
    set(&mut c.finetune_steps, a.finetune_steps);
    for (name, p) in [
        ("graph", &c.graph),
        ("weights", &c.weights),
        ("weights-index", &c.weights_index),
        ("data", &c.data),
        ("out", &c.out),
    ] {
        if p.as_os_str().is_empty() {
            return Err(anyhow!(
                "missing --{name} (or `{}` in the config)",
                name.replace('-', "_")
            ));
        }
    }
    Ok(c)
}

fn validate(graph: &Path) -> Result<(), RunError> {
    let g = run::read_graph(graph)?;
    let groups = run::groups_of(&g)?;
    let ones = MaskSet::ones(&groups);
    print!("{}", g.shape_table());
    println!("flops {}", flops_of_graph(&g, &groups, &ones));
    println!("memory {}", memory_of_graph(&g, &groups, &ones));
    println!("OK");
    Ok(())
}

fn group(graph: &Path) -> Result<(), RunError> {
    let g = run::read_graph(graph)?;
    let t = run::groups_of(&g)?;
    let name = |i: &usize| g.layer(*i).id.clone();
    let rows: Vec<_> = t
        .groups
        .iter()
        .enumerate()
        .map(|(gid, gr)| {
            json!({
                "group_id": gid,
                "members": gr.members.iter().map(name).collect::<Vec<_>>(),
                "parents": gr.parents.iter().map(name).collect::<Vec<_>>(),
                "width": gr.width,
                "frozen": gr.frozen,
            })
        })
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&rows).map_err(anyhow::Error::from)?
    );
    Ok(())
}

fn eval(net: &NetArgs, data: &Path, masks: Option<&Path>, batch: usize) -> Result<(), RunError> {
    let g = run::read_graph(&net.graph)?;
    let groups = run::groups_of(&g)?;
    let w = run::read_weights(&g, &net.weights, &net.weights_index)?;
    let d = run::read_dataset(data)?;
    if d.is_empty() {
        return Err(anyhow!("EmptyDataset: {} has no samples", data.display()).into());
    }
    let m = match masks {
        Some(p) => {
            ledger::masks_from_json(&groups, &fs::read_to_string(p).context("reading masks")?)
                .map_err(anyhow::Error::from)?
        }
        None => MaskSet::ones(&groups),
    };
    let (loss, acc) =
        pruner::evaluate(&g, &groups, &w, &m, &d, batch.max(1)).map_err(anyhow::Error::from)?;
    println!(
        "{}",
        json!({"samples": d.len(), "loss": loss, "accuracy": acc})
    );
    Ok(())
}

fn report(graph: &Path, events: &Path, masks: Option<&Path>) -> Result<(), RunError> {
    let g = run::read_graph(graph)?;
    let groups = run::groups_of(&g)?;
    let text =
        fs::read_to_string(events).with_context(|| format!("reading {}", events.display()))?;
    let ev = ledger::events_from_jsonl(&text).map_err(anyhow::Error::from)?;
    let replayed = ledger::replay(&groups, &ev).map_err(anyhow::Error::from)?;
    let profile = ledger::channel_profile(&g, &groups, &replayed);
    if let Some(p) = masks {
        let m = ledger::masks_from_json(&groups, &fs::read_to_string(p).context("reading masks")?)
            .map_err(anyhow::Error::from)?;
        if ledger::channel_profile(&g, &groups, &m) != profile {
            return Err(anyhow!("mask file {} disagrees with the ledger", p.display()).into());
        }
    }
    let traj = ledger::trajectory(&g, &groups, &ev);
    let replay_flops = flops_of_graph(&g, &groups, &replayed);
    if traj.last().map(|p| p.flops) != Some(replay_flops) {
        return Err(
            anyhow!("ledger deltas do not telescope to the replayed FLOPs {replay_flops}").into(),
        );
    }
    println!("# remaining channels");
    print!("{}", ledger::profile_table(&profile));
    println!("# trajectory");
    print!("{}", ledger::trajectory_csv(&traj));
    Ok(())
}

fn fixture(
    kind: Kind,
    out: &Path,
    seed: u64,
    (train, test): (usize, usize),
    noise: f32,
    pretrain: usize,
) -> Result<(), RunError> {
    let (g, data) = match kind {
        Kind::Reference => (
            fixtures::reference_net(10),
            Some((
                fixtures::textures(train, 10, 32, noise, seed),
                fixtures::textures(test, 10, 32, noise, seed ^ 0x5eed),
            )),
        ),
        Kind::Bottleneck => (fixtures::bottleneck_block(), None),
        Kind::Random => (fixtures::random_dag(seed, 12), None),
    };
    let groups = run::groups_of(&g)?;
    let mut w = init_weights(&g, seed);
    if let Some((tr, te)) = &data {
        if pretrain > 0 {
            run::pretrain(&g, &groups, &mut w, tr, pretrain, seed).map_err(anyhow::Error::from)?;
        }
        fs::write(out.join("train.gfpd"), dataset::encode(tr)).context("writing train.gfpd")?;
        fs::write(out.join("test.gfpd"), dataset::encode(te)).context("writing test.gfpd")?;
    }
    run::write_network(out, "net", &g, &w)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), RunError> {
    match cmd {
        Cmd::Validate { graph } => validate(&graph),
        Cmd::Group { graph } => group(&graph),
        Cmd::Prune(args) => {
            let cfg = config_of(*args)?;
            let s = run::prune(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).map_err(anyhow::Error::from)?
            );
            Ok(())
        }
        Cmd::Eval {
            net,
            data,
            masks,
            batch,
        } => eval(&net, &data, masks.as_deref(), batch),
        Cmd::Report {
            graph,
            events,
            masks,
        } => report(&graph, &events, masks.as_deref()),
        Cmd::Fixture {
            kind,
            out,
            seed,
            train,
            test,
            noise,
            pretrain_steps,
        } => {
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fixture(kind, &out, seed, (train, test), noise, pretrain_steps)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
