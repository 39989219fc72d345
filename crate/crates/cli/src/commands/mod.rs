pub mod analyze;
pub mod eval;
pub mod flops;
pub mod policy;
pub mod prune;
pub mod report;
pub mod synth;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: Option<u64>,
    pub verbose: bool,
}

impl Globals {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
