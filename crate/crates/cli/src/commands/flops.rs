use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use toast_core::engine::{count_flops, FfnKeep, FlopsReport, ModelConfig};
use toast_core::prune::PruningPlan;
use toast_core::tcs::TcsPolicy;

use super::Globals;
use crate::error::{CliError, CliResult, InputContext};
use crate::files::{self, RunManifest};

/// Print the MAC count of a (possibly pruned) model as JSON.
#[derive(Debug, Args)]
pub struct FlopsArgs {
    pub model: PathBuf,
    /// Pruning plan applied on top of the model's head widths.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// TCS policy whose keep ratios set the FFN widths.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Where to put the run manifest. Defaults to standard error.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    config: &'a ModelConfig,
    ffn_keep: Option<&'a [FfnKeep]>,
}

/// Config after the optional plan, and FFN widths from the optional policy.
pub fn resolve(
    model: &Path,
    plan: Option<&Path>,
    policy: Option<&Path>,
) -> CliResult<(ModelConfig, Option<Vec<FfnKeep>>)> {
    let mut config = files::read_config(model)?;
    if let Some(path) = plan {
        let plan: PruningPlan = files::read_json(path)?;
        plan.validate(&config).reading(path)?;
        config = plan.apply_to_config(&config);
    }
    let keep = match policy {
        Some(path) => {
            let policy: TcsPolicy = files::read_json(path)?;
            policy.validate(&config).reading(path)?;
            Some(ffn_keep(&config, &policy))
        }
        None => None,
    };
    Ok((config, keep))
}

pub fn ffn_keep(config: &ModelConfig, policy: &TcsPolicy) -> Vec<FfnKeep> {
    policy
        .kept_counts(config)
        .into_iter()
        .map(|(kept_fc1_in, kept_expanded)| FfnKeep {
            kept_fc1_in,
            kept_expanded,
        })
        .collect()
}

pub fn run(args: &FlopsArgs, g: Globals) -> CliResult<()> {
    let mut inputs = vec![args.model.as_path()];
    inputs.extend(args.plan.as_deref());
    inputs.extend(args.policy.as_deref());
    let outputs: Vec<&Path> = args.manifest.iter().map(|p| p.as_path()).collect();
    files::check_outputs(&inputs, &outputs)?;

    let (config, keep) = resolve(&args.model, args.plan.as_deref(), args.policy.as_deref())?;
    let report: FlopsReport = count_flops(&config, keep.as_deref())?;
    let out = files::to_json(&report)?;
    std::io::stdout()
        .write_all(&out)
        .map_err(|e| CliError::Internal(e.into()))?;
    eprintln!(
        "{:.3} GMACs ({:.3} dense), reduction {:.2}%",
        report.gflops(),
        report.dense_total as f64 / 1e9,
        report.reduction_percent
    );
    let manifest = RunManifest::new(
        "flops",
        &inputs,
        &outputs,
        g.seed(),
        &Resolved {
            config: &config,
            ffn_keep: keep.as_deref(),
        },
    )?;
    manifest.emit(args.manifest.as_deref())
}
