use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spoofdet::audio::Partition;
use spoofdet::config::FeatureChoice;
use spoofdet::scoring::Pooling;

#[derive(Debug, Parser)]
#[command(name = "spoofdet", version, about = "Partial synthetic-speech detection pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML pipeline configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-file work (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one feature archive per manifest entry.
    ExtractFeatures(ExtractFeatures),
    /// Train the speech activity detector on energy-labelled training audio.
    TrainSad(TrainSad),
    /// Write speech segments for every manifest entry.
    RunSad(RunSad),
    /// Add noise at a fixed SNR and write an augmented copy of the corpus.
    Augment(Augment),
    /// Train the x-ResNet embedding network.
    TrainModel(TrainModel),
    /// Write sliding-window embeddings for every manifest entry.
    ExtractEmbeddings(ExtractEmbeddings),
    /// Train the LDA + PLDA backend on training-partition embeddings.
    TrainBackend(TrainBackend),
    /// Train the spoof and pristine GMMs of the frame-level baseline.
    TrainGmm(TrainGmm),
    /// Score utterances with both poolings.
    Score(Score),
    /// Equal error rate of a score dump.
    Eval(Eval),
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Restrict to one partition.
    #[arg(long, value_parser = parse_partition)]
    pub partition: Option<Partition>,
}

fn parse_partition(s: &str) -> Result<Partition, String> {
    s.parse()
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SadArgs {
    /// SAD model used to drop non-speech frames.
    #[arg(long, value_name = "FILE")]
    pub sad: Option<PathBuf>,
    /// Keep every frame.
    #[arg(long)]
    pub no_sad: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Lfb,
    Mfcc,
}

impl From<KindArg> for FeatureChoice {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Lfb => FeatureChoice::Lfb,
            KindArg::Mfcc => FeatureChoice::Mfcc,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractFeatures {
    #[command(flatten)]
    pub input: ManifestArgs,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides `features.kind`.
    #[arg(long)]
    pub kind: Option<KindArg>,
}

#[derive(Debug, Args)]
pub struct TrainSad {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunSad {
    #[command(flatten)]
    pub input: ManifestArgs,
    #[arg(long, value_name = "FILE")]
    pub sad: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Augment {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Partition to augment.
    #[arg(long, value_parser = parse_partition, default_value = "train")]
    pub partition: Partition,
    /// Noise recordings, each at least as long as the clean audio.
    #[arg(long, value_name = "WAV", required = true)]
    pub noise: Vec<PathBuf>,
    /// Overrides `augment.snr_db`.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainModel {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Directory written by extract-features.
    #[arg(long, value_name = "DIR")]
    pub features: PathBuf,
    #[command(flatten)]
    pub sad: SadArgs,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Training log (default: the model path with a .log extension).
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractEmbeddings {
    #[command(flatten)]
    pub input: ManifestArgs,
    #[arg(long, value_name = "DIR")]
    pub features: PathBuf,
    #[command(flatten)]
    pub sad: SadArgs,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainBackend {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Directory written by extract-embeddings.
    #[arg(long, value_name = "DIR")]
    pub embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainGmm {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub features: PathBuf,
    #[command(flatten)]
    pub sad: SadArgs,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct SystemArgs {
    /// Embedding network (with --backend).
    #[arg(long, value_name = "FILE", requires = "backend", conflicts_with = "gmm")]
    pub model: Option<PathBuf>,
    /// LDA + PLDA backend (with --model).
    #[arg(long, value_name = "FILE", requires = "model")]
    pub backend: Option<PathBuf>,
    /// Frame-level GMM baseline instead of the network.
    #[arg(long, value_name = "FILE")]
    pub gmm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Score {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_partition, default_value = "eval")]
    pub partition: Partition,
    #[command(flatten)]
    pub sad: SadArgs,
    #[command(flatten)]
    pub system: SystemArgs,
    /// Score dump: `<path>\t<avg>\t<interleaved>` per utterance.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write each per-window score series as a one-column archive.
    #[arg(long, value_name = "DIR")]
    pub series: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_pooling, default_value = "interleaved")]
    pub pooling: Pooling,
    /// Also write the report here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    s.parse().map_err(|e: spoofdet::Error| e.to_string())
}
