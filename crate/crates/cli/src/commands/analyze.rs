use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use toast_core::analyze::{redundancy_report, AnalyzeOptions, RedundancyReport};
use toast_core::engine::ModelConfig;

use super::Globals;
use crate::error::{CliError, CliResult};
use crate::files::{self, RunManifest};

/// Profile FFN activations on calibration tokens.
#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub model: PathBuf,
    pub weights: PathBuf,
    pub calib: PathBuf,
    pub out: PathBuf,
    /// Also write the per-layer table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Magnitude below which an activation counts as zero.
    #[arg(long, default_value_t = AnalyzeOptions::default().eps)]
    pub eps: f64,
}

#[derive(Serialize)]
struct Resolved<'a> {
    config: &'a ModelConfig,
    options: &'a AnalyzeOptions,
}

pub fn run(args: &AnalyzeArgs, g: Globals) -> CliResult<()> {
    if !(args.eps >= 0.0 && args.eps.is_finite()) {
        return Err(CliError::input(format!("eps must be a finite value >= 0, got {}", args.eps)));
    }
    let inputs = [args.model.as_path(), &args.weights, &args.calib];
    let mut outputs = vec![args.out.as_path()];
    if let Some(csv) = &args.csv {
        outputs.push(csv);
    }
    files::check_outputs(&inputs, &outputs)?;

    let config = files::read_config(&args.model)?;
    let weights = files::read_weights(&config, &args.weights)?;
    let batches = files::read_batches(&config, &args.calib)?;
    let opts = AnalyzeOptions {
        eps: args.eps,
        seed: g.seed(),
        ..AnalyzeOptions::default()
    };
    let calib: Vec<_> = batches.into_iter().map(|(_, m)| m).collect();
    let report = redundancy_report(&config, &weights, &calib, &opts)?;

    files::write_atomic(&args.out, &files::to_json(&report)?)?;
    if let Some(csv) = &args.csv {
        files::write_atomic(csv, &super::report::to_csv(&report)?)?;
    }
    summarize(&report, g.verbose);
    let manifest = RunManifest::new(
        "analyze",
        &inputs,
        &outputs,
        g.seed(),
        &Resolved {
            config: &config,
            options: &opts,
        },
    )?;
    manifest.emit(Some(&files::sibling(&args.out, "run.json")))
}

fn summarize(report: &RedundancyReport, verbose: bool) {
    let n = report.layers.len() as f64;
    let mean = |f: fn(&toast_core::analyze::LayerRedundancy) -> f64| {
        report.layers.iter().map(f).sum::<f64>() / n
    };
    eprintln!(
        "analyzed {} layers: sparsity {:.3}, mean R2 {:.3}, effective rank {:.3}",
        report.layers.len(),
        mean(|l| l.sparsity),
        mean(|l| l.mean_r2),
        mean(|l| l.effective_rank_ratio)
    );
    if verbose {
        for l in &report.layers {
            eprintln!(
                "  layer {:>2}: sparsity {:.3} R2 {:.3} eff-rank {:.3}",
                l.layer, l.sparsity, l.mean_r2, l.effective_rank_ratio
            );
        }
    }
}
