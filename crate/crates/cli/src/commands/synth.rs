use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use toast_core::archive::{encode_archive, Tensor};
use toast_core::engine::ModelConfig;
use toast_core::fixture::{random_tokens, random_weights};
use toast_core::tcs::layer_seed;

use super::Globals;
use crate::error::{CliError, CliResult};
use crate::files::{self, RunManifest};

#[allow(clippy::enum_variant_names)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    DeitTiny,
    DeitSmall,
    DeitBase,
}

/// Write a random model and token batches for testing the pipeline.
#[derive(Debug, Args)]
pub struct SynthArgs {
    pub model: PathBuf,
    pub weights: PathBuf,
    pub inputs: PathBuf,
    #[arg(long, value_enum, default_value = "deit-tiny")]
    pub preset: Preset,
    /// Override the preset's depth.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Override the preset's token count.
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
}

#[derive(Serialize)]
struct Resolved<'a> {
    config: &'a ModelConfig,
    batches: usize,
}

pub fn run(args: &SynthArgs, g: Globals) -> CliResult<()> {
    if args.batches == 0 {
        return Err(CliError::input("batches must be at least 1"));
    }
    let outputs = [args.model.as_path(), &args.weights, &args.inputs];
    files::check_outputs(&[], &outputs)?;
    let base = match args.preset {
        Preset::DeitTiny => ModelConfig::deit_tiny(),
        Preset::DeitSmall => ModelConfig::deit_small(),
        Preset::DeitBase => ModelConfig::deit_base(),
    };
    let config = ModelConfig::dense(
        args.layers.unwrap_or(base.num_layers),
        args.tokens.unwrap_or(base.num_tokens),
        base.embed_dim,
        base.num_heads,
        base.mlp_dim,
        base.has_cls,
    );
    config.validate()?;
    let seed = g.seed();
    let weights = random_weights(&config, seed);
    let batches: Vec<(String, Tensor)> = (0..args.batches)
        .map(|b| {
            let x = random_tokens(&config, layer_seed(seed ^ 0x746f6b656e73, b));
            (format!("batch{b}"), Tensor::from(x))
        })
        .collect();

    files::write_atomic(&args.model, &files::to_json(&config)?)?;
    files::write_atomic(&args.weights, &encode_archive(&weights.to_named_tensors())?)?;
    files::write_atomic(&args.inputs, &encode_archive(&batches)?)?;
    eprintln!(
        "{} layers, {} tokens, width {}, {} batches",
        config.num_layers, config.num_tokens, config.embed_dim, args.batches
    );
    let manifest = RunManifest::new(
        "synth",
        &[],
        &outputs,
        seed,
        &Resolved {
            config: &config,
            batches: args.batches,
        },
    )?;
    manifest.emit(Some(&files::sibling(&args.weights, "run.json")))
}
