//! Command-line front end: argument parsing, dispatch and the exit-code
//! contract. Every command produces exactly one JSON document.

mod commands;
pub mod config;

pub use commands::read_records;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use i2t2i_core::protocols::TiePolicy;
use i2t2i_core::Error;
use serde_json::{json, Value};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_CACHE: u8 = 4;
pub const EXIT_SKIPPED: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "i2t2i", version, about = "Cycle-consistency caption evaluation")]
pub struct Cli {
    /// TOML or JSON config: registry, dataset roots, cache dir, policies.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured cache directory.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one caption against one image.
    Score(ScoreArgs),
    /// Score every caption of a manifest; records go to --out as JSONL.
    Evaluate(EvaluateArgs),
    /// Kendall correlation of records with the manifest's human judgments.
    Correlate(CorrelateArgs),
    /// Pairwise accuracy of true captions over their foils.
    Foil(PairwiseArgs),
    /// Pairwise accuracy of ground truth over hallucinated sentences.
    Haldetect(PairwiseArgs),
    /// Mean similarity of matching vs mismatched captions.
    Gap(GapArgs),
    /// Cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Convert a released dataset into a manifest.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, default_value = "noise-stub")]
    pub generator: String,
    #[arg(long, default_value = "pixel-stub")]
    pub encoder: String,
    /// Generation seed; defaults to the configured policy.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub caption: String,
    #[command(flatten)]
    pub backends: BackendArgs,
    /// Omit the timestamp so repeated runs print identical JSON.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backends: BackendArgs,
    /// Caption each image with this model instead of scoring the manifest's captions.
    #[arg(long)]
    pub captioner: Option<String>,
    #[arg(long)]
    pub prompt_template: Option<String>,
    /// Abort on the first failed cycle.
    #[arg(long)]
    pub fail_fast: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Drop invalid manifest rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrelationProtocol {
    Expert,
    Cf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to the manifest's dataset id.
    #[arg(long, value_enum)]
    pub protocol: Option<CorrelationProtocol>,
    /// Exclude pairs without exactly three expert judgments instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub allow_mixed: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieArg {
    Strict,
    HalfCredit,
}

impl From<TieArg> for TiePolicy {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::Strict => TiePolicy::Strict,
            TieArg::HalfCredit => TiePolicy::HalfCredit,
        }
    }
}

#[derive(Debug, Args)]
pub struct PairwiseArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// When given, every record must belong to this manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub tie_policy: Option<TieArg>,
    #[arg(long)]
    pub allow_mixed: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub backends: BackendArgs,
    #[arg(long)]
    pub pairing_seed: Option<u64>,
    /// Write a histogram of both score distributions as CSV.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    List,
    /// Re-hash every entry.
    Verify,
    /// Evict least-recently-used entries beyond the budget.
    Gc {
        #[arg(long)]
        max_bytes: u64,
        /// Manifests whose artifacts must survive.
        #[arg(long)]
        pin: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(subcommand)]
    pub source: IngestSource,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Drop invalid rows (reported) instead of failing.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Skip the check that every image file exists.
    #[arg(long, global = true)]
    pub no_check_images: bool,
}

#[derive(Debug, Subcommand)]
pub enum IngestSource {
    Flickr8kExpert {
        /// Dataset root; defaults to `datasets.flickr8k` in the config.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        image_dir: Option<PathBuf>,
        /// Expected pair count; 0 disables the check.
        #[arg(long, default_value_t = i2t2i_core::ingest::flickr8k::EXPERT_PAIRS)]
        expected_pairs: usize,
    },
    Flickr8kCf {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        image_dir: Option<PathBuf>,
    },
    Foil {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        image_dir: PathBuf,
    },
    Mhaldetect {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        image_dir: PathBuf,
    },
    Proposed {
        #[arg(long)]
        coco_captions: PathBuf,
        #[arg(long)]
        coco_images: PathBuf,
        #[arg(long)]
        flickr30k_captions: PathBuf,
        #[arg(long)]
        flickr30k_images: PathBuf,
        #[arg(long, default_value = "unspecified")]
        coco_split: String,
        #[arg(long, default_value_t = i2t2i_core::ingest::proposed::FLICKR30K_SLICE)]
        flickr30k_limit: usize,
    },
}

/// Exit code and the JSON document for stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub exit: u8,
    pub body: Value,
}

pub fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Transport(_) | Error::BackendFault(_) | Error::ContentPolicy(_) => EXIT_BACKEND,
        Error::CacheIntegrity { .. } => EXIT_CACHE,
        _ => EXIT_CONFIG,
    }
}

pub fn run(cli: Cli) -> Response {
    match commands::dispatch(&cli) {
        Ok(r) => r,
        Err(e) => {
            log::error!("{e}");
            let exit = exit_code(&e);
            let mut body = json!({ "error": e.to_string(), "exit_code": exit });
            if let Error::CacheIntegrity { digest, .. } = e.root() {
                body["digests"] = json!([digest]);
            }
            Response { exit, body }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::Configuration("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::BackendFault("x".into()).at_stage(i2t2i_core::Stage::Generation)), EXIT_BACKEND);
        assert_eq!(exit_code(&Error::CacheIntegrity { digest: "d".into(), reason: "r".into() }), EXIT_CACHE);
        assert_eq!(exit_code(&Error::Ingestion("x".into())), EXIT_CONFIG);
    }
}
