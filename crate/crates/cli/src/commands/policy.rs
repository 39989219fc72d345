use std::path::PathBuf;

use clap::Args;
use toast_core::tcs::{LayerPolicy, TcsMode, TcsPolicy};

use super::Globals;
use crate::error::{CliResult, InputContext};
use crate::files::{self, RunManifest};

/// Write a TCS policy for a model.
///
/// Without ratio flags the layer-adaptive schedule is used. Any ratio flag
/// switches to one uniform setting for every layer.
#[derive(Debug, Args)]
pub struct PolicyArgs {
    pub model: PathBuf,
    pub out: PathBuf,
    #[arg(long)]
    pub fc1_keep: Option<f64>,
    #[arg(long)]
    pub fc2_keep: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Freeze selections from the first evaluated batch.
    #[arg(long = "static")]
    pub frozen: bool,
}

pub fn run(args: &PolicyArgs, g: Globals) -> CliResult<()> {
    files::check_outputs(&[&args.model], &[&args.out])?;
    let config = files::read_config(&args.model)?;
    let uniform = args.fc1_keep.is_some() || args.fc2_keep.is_some() || args.sample_rate.is_some();
    let mut policy = if uniform {
        let layer = LayerPolicy::uniform(
            args.fc1_keep.unwrap_or(1.0),
            args.fc2_keep.unwrap_or(1.0),
            args.sample_rate.unwrap_or(0.1),
        );
        TcsPolicy::uniform(&config, layer, g.seed())
    } else {
        TcsPolicy::layer_adaptive(&config, g.seed())
    };
    if args.frozen {
        policy.mode = TcsMode::Static;
    }
    policy.validate(&config).reading(&args.out)?;
    files::write_atomic(&args.out, &files::to_json(&policy)?)?;
    let kept = policy.kept_counts(&config);
    eprintln!("{} layers, kept FFN widths {:?}", kept.len(), kept);
    let manifest = RunManifest::new("policy", &[&args.model], &[&args.out], g.seed(), &policy)?;
    manifest.emit(Some(&files::sibling(&args.out, "run.json")))
}
