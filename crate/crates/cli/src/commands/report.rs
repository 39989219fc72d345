use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use toast_core::analyze::RedundancyReport;

use super::Globals;
use crate::error::{CliError, CliResult};
use crate::files::{self, RunManifest};

/// Convert a redundancy report to CSV.
#[derive(Debug, Args)]
pub struct ReportArgs {
    pub report: PathBuf,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn to_csv(report: &RedundancyReport) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let internal = |e: csv::Error| CliError::Internal(e.into());
    w.write_record(["layer", "sparsity", "mean_r2", "eff_rank"])
        .map_err(internal)?;
    for l in &report.layers {
        w.write_record([
            l.layer.to_string(),
            l.sparsity.to_string(),
            l.mean_r2.to_string(),
            l.effective_rank_ratio.to_string(),
        ])
        .map_err(internal)?;
    }
    w.into_inner().map_err(|e| CliError::Internal(anyhow::anyhow!("{e}")))
}

pub fn run(args: &ReportArgs, g: Globals) -> CliResult<()> {
    let outputs: Vec<&std::path::Path> = args.csv.iter().map(|p| p.as_path()).collect();
    files::check_outputs(&[&args.report], &outputs)?;
    let report: RedundancyReport = files::read_json(&args.report)?;
    let csv = to_csv(&report)?;
    match &args.csv {
        Some(path) => files::write_atomic(path, &csv)?,
        None => std::io::stdout()
            .write_all(&csv)
            .map_err(|e| CliError::Internal(e.into()))?,
    }
    eprintln!("{} layers", report.layers.len());
    let manifest = RunManifest::new("report", &[&args.report], &outputs, g.seed(), &report)?;
    manifest.emit(args.csv.as_ref().map(|p| files::sibling(p, "run.json")).as_deref())
}
