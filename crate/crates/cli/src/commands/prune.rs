use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use toast_core::archive::encode_archive;
use toast_core::engine::ModelConfig;
use toast_core::prune::{apply_plan, build_plan};

use super::Globals;
use crate::error::{CliError, CliResult};
use crate::files::{self, RunManifest};

/// Prune attention head dimensions by coupled geometric-median importance.
#[derive(Debug, Args)]
pub struct PruneArgs {
    pub model: PathBuf,
    pub weights: PathBuf,
    pub out: PathBuf,
    pub plan: PathBuf,
    /// Fraction of each head's dimensions to remove, in [0, 1).
    #[arg(long, allow_negative_numbers = true)]
    pub ratio: f64,
    /// Leave the first block untouched.
    #[arg(long)]
    pub skip_first: bool,
    /// Keep the original 1/sqrt(d_k) attention scale.
    #[arg(long)]
    pub scale_original: bool,
    /// Pruned model config. Defaults to `<out>.model.json`.
    #[arg(long)]
    pub config_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    config: &'a ModelConfig,
    ratio: f64,
    skip_first: bool,
    scale_original: bool,
}

pub fn run(args: &PruneArgs, g: Globals) -> CliResult<()> {
    if !(args.ratio < 1.0) {
        return Err(CliError::input(format!("ratio must be < 1, got {}", args.ratio)));
    }
    if !(args.ratio >= 0.0) {
        return Err(CliError::input(format!("ratio must be >= 0, got {}", args.ratio)));
    }
    let config_out = args
        .config_out
        .clone()
        .unwrap_or_else(|| files::sibling(&args.out, "model.json"));
    let inputs = [args.model.as_path(), &args.weights];
    let outputs = [args.out.as_path(), &args.plan, &config_out];
    files::check_outputs(&inputs, &outputs)?;

    let mut config = files::read_config(&args.model)?;
    if !config.is_unpruned() {
        return Err(CliError::input(format!(
            "{}: model is already pruned",
            args.model.display()
        )));
    }
    config.scale_original |= args.scale_original;
    let weights = files::read_weights(&config, &args.weights)?;
    let plan = build_plan(&config, &weights, args.ratio, args.skip_first)?;
    let (pruned_config, pruned) = apply_plan(&config, &weights, &plan)?;

    files::write_atomic(&args.out, &encode_archive(&pruned.to_named_tensors())?)?;
    files::write_atomic(&args.plan, &files::to_json(&plan)?)?;
    files::write_atomic(&config_out, &files::to_json(&pruned_config)?)?;

    eprintln!(
        "pruned {} layers, head width {} -> {:?}",
        config.num_layers,
        config.head_dim,
        plan.dk_primes()
    );
    let manifest = RunManifest::new(
        "prune",
        &inputs,
        &outputs,
        g.seed(),
        &Resolved {
            config: &config,
            ratio: args.ratio,
            skip_first: args.skip_first,
            scale_original: config.scale_original,
        },
    )?;
    manifest.emit(Some(&files::sibling(&args.out, "run.json")))
}
