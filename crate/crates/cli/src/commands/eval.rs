use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::Serialize;
use toast_core::archive::{encode_archive, Tensor};
use toast_core::engine::{forward, ModelConfig, OpCount};
use toast_core::tcs::{TcsPolicy, TcsRuntime};

use super::Globals;
use crate::error::{CliResult, InputContext};
use crate::files::{self, RunManifest};

/// Run the model on pre-embedded token batches.
#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub weights: PathBuf,
    pub inputs: PathBuf,
    pub out: PathBuf,
    /// Apply token channel selection with this policy.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Operation counts per batch. Defaults to `<out>.stats.json`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct BatchStats {
    pub name: String,
    pub ops: OpCount,
    /// MHSA plus FFN MACs, comparable with the flops report total.
    pub total: u64,
}

#[derive(Debug, Serialize)]
pub struct EvalStats {
    pub batches: Vec<BatchStats>,
    /// Extra MACs spent scoring channels, summed over batches.
    pub selection_total: u64,
}

#[derive(Serialize)]
struct Resolved<'a> {
    config: &'a ModelConfig,
    policy: Option<&'a TcsPolicy>,
}

pub fn run(args: &EvalArgs, g: Globals) -> CliResult<()> {
    let stats_path = args
        .stats
        .clone()
        .unwrap_or_else(|| files::sibling(&args.out, "stats.json"));
    let mut inputs = vec![args.model.as_path(), &args.weights, &args.inputs];
    inputs.extend(args.policy.as_deref());
    let outputs = [args.out.as_path(), &stats_path];
    files::check_outputs(&inputs, &outputs)?;

    let config = files::read_config(&args.model)?;
    let weights = files::read_weights(&config, &args.weights)?;
    let batches = files::read_batches(&config, &args.inputs)?;
    let policy = match &args.policy {
        Some(path) => {
            let mut p: TcsPolicy = files::read_json(path)?;
            if let Some(seed) = g.seed {
                p.seed = seed;
            }
            p.validate(&config).reading(path)?;
            Some(p)
        }
        None => None,
    };
    let runtime = match &policy {
        // static policies calibrate on the first batch
        Some(p) => Some(TcsRuntime::for_mode(&config, &weights, &batches[0].1, p)?),
        None => None,
    };

    let start = Instant::now();
    let mut tensors = Vec::with_capacity(batches.len());
    let mut stats = Vec::with_capacity(batches.len());
    for (name, x) in &batches {
        let (y, trace) = forward(&config, &weights, x, runtime.as_ref())?;
        tensors.push((name.clone(), Tensor::from(y)));
        stats.push(BatchStats {
            name: name.clone(),
            total: trace.ops.total(),
            ops: trace.ops,
        });
    }
    let elapsed = start.elapsed();
    let stats = EvalStats {
        selection_total: stats.iter().map(|s| s.ops.selection).sum(),
        batches: stats,
    };

    files::write_atomic(&args.out, &encode_archive(&tensors)?)?;
    files::write_atomic(&stats_path, &files::to_json(&stats)?)?;
    eprintln!(
        "{} batches in {:.3} s, {} MACs per batch",
        stats.batches.len(),
        elapsed.as_secs_f64(),
        stats.batches[0].total
    );
    if g.verbose {
        for b in &stats.batches {
            eprintln!("  {}: mhsa {} ffn {} selection {}", b.name, b.ops.mhsa_total(), b.ops.ffn_total(), b.ops.selection);
        }
    }
    let manifest = RunManifest::new(
        "eval",
        &inputs,
        &outputs,
        g.seed.or(policy.as_ref().map(|p| p.seed)).unwrap_or(0),
        &Resolved {
            config: &config,
            policy: runtime.as_ref().map(|r| r.policy()),
        },
    )?;
    manifest.emit(Some(&files::sibling(&args.out, "run.json")))
}
