use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rrsitr::objective::{BucketMode, ObjectiveOptions, RtlScope};
use rrsitr::{Hyper, LocalAggregation, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "rrsitr",
    version,
    about = "Noise-robust image-text retrieval on paired embeddings"
)]
pub struct Cli {
    /// Worker threads for parallel kernels (1 = strict single-threaded mode).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired-embedding dataset.
    Gen(GenArgs),
    /// Corrupt a fraction of pairs by shuffling their captions.
    Inject(InjectArgs),
    /// Train projection heads (full objective unless --variant says otherwise).
    Train(TrainArgs),
    /// Train one or all ablation variants and tabulate test retrieval.
    Ablate(AblateArgs),
    /// Evaluate a checkpoint on a clean test set.
    Eval(EvalArgs),
    /// Train and dump per-pair loss/weight/bucket CSVs for chosen epochs.
    Trace(TraceArgs),
    /// Dump a similarity matrix as CSV.
    Sims(SimsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// Random seed; falls back to RRSITR_SEED, then 0.
    #[arg(long, env = "RRSITR_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    /// Embedding width. Desk-scale default, far below real encoder widths.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Local parts per image.
    #[arg(long, default_value_t = rrsitr::data::DEFAULT_LOCAL_PARTS)]
    pub d1: usize,
    /// Local parts per caption.
    #[arg(long, default_value_t = rrsitr::data::DEFAULT_LOCAL_PARTS)]
    pub d2: usize,
    #[arg(long, default_value_t = 0.8)]
    pub spread: f64,
    #[arg(long, default_value_t = 0.8)]
    pub part_spread: f64,
    #[arg(long, default_value_t = 1.0)]
    pub view_noise: f64,
    #[arg(long, default_value_t = 0.8)]
    pub modality_gap: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output RRSE file for the training pairs.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Held-out pairs from the same world, written to --val-output.
    #[arg(long, default_value_t = 0, requires = "val_output")]
    pub val: usize,
    #[arg(long)]
    pub val_output: Option<PathBuf>,
    /// Held-out pairs from the same world, written to --test-output.
    #[arg(long, default_value_t = 0, requires = "test_output")]
    pub test: usize,
    #[arg(long)]
    pub test_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Clean input dataset (.rrse or .json manifest).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Fraction of pairs to corrupt, in [0, 1].
    #[arg(long)]
    pub rho: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output RRSE file; a JSON manifest recording the noise is written
    /// next to it with the extension replaced by `.json`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    #[arg(long, default_value_t = 5.0)]
    pub gamma1: f64,
    #[arg(long, default_value_t = 18.0)]
    pub gamma2: f64,
    #[arg(long, default_value_t = 0.6)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.8)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.9)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Learning rate. Desk-scale default for linear heads; see --encoder-lr.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Use the encoder fine-tuning rate 7e-6 instead of --lr.
    #[arg(long, conflicts_with = "lr")]
    pub encoder_lr: bool,
    #[arg(long, default_value_t = 0.7)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 200)]
    pub warmup: usize,
    #[arg(long, default_value_t = 50.0)]
    pub max_grad_norm: f64,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    /// Per-epoch increase of gamma2 (0 keeps it fixed).
    #[arg(long, default_value_t = 0.0)]
    pub gamma2_growth: f64,
    /// Head output width (defaults to the input width).
    #[arg(long)]
    pub dim_out: Option<usize>,
    #[arg(long, value_parser = parse::<LocalAggregation>, default_value = "normalized_frobenius")]
    pub local_aggregation: LocalAggregation,
    /// Anchors of the triplet term: full_batch or noisy_only.
    #[arg(long, value_parser = parse::<RtlScope>, default_value = "full_batch")]
    pub rtl_scope: RtlScope,
    /// Pairs summed by the self-paced terms: restricted or unrestricted.
    #[arg(long, value_parser = parse::<BucketMode>, default_value = "restricted")]
    pub bucket_mode: BucketMode,
    /// Record wall-clock seconds in the log (logs stop being reproducible).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

impl HyperArgs {
    pub fn hyper(&self, epochs: usize) -> Hyper {
        Hyper {
            tau: self.tau,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            sigma: self.sigma,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            alpha: self.alpha,
            lr: if self.encoder_lr {
                rrsitr::hyper::ENCODER_FINE_TUNE_LR
            } else {
                self.lr
            },
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup,
            max_grad_norm: self.max_grad_norm,
            epochs,
            batch_size: self.batch,
            seed: self.seed.seed,
            gamma2_growth: self.gamma2_growth,
        }
    }

    pub fn objective(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            local_aggregation: self.local_aggregation,
            rtl_scope: self.rtl_scope,
            bucket_mode: self.bucket_mode,
        }
    }
}

fn parse<T: std::str::FromStr<Err = rrsitr::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: rrsitr::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training set (.rrse or .json manifest).
    #[arg(long)]
    pub train: PathBuf,
    /// Clean validation set for checkpoint selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Clean test set; when given, a retrieval report is written.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, value_parser = parse::<Variant>, default_value = "full")]
    pub variant: Variant,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Directory for the manifest, checkpoint, log and reports.
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Variant name, label (#3) or number (3).
    #[arg(long, value_parser = parse::<Variant>, required_unless_present = "all", conflicts_with = "all")]
    pub variant: Option<Variant>,
    /// Run #1 to #8 and the full method.
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint (.rrsp).
    #[arg(long)]
    pub heads: PathBuf,
    /// Clean test set.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Variant the heads were trained as; variants without the local
    /// branch rank by global similarity alone.
    #[arg(long, value_parser = parse::<Variant>, default_value = "full")]
    pub variant: Variant,
    #[arg(long, value_parser = parse::<LocalAggregation>, default_value = "normalized_frobenius")]
    pub local_aggregation: LocalAggregation,
    /// Write the JSON report here instead of stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also print the CSV header and row.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Epochs to dump, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub epochs: Vec<usize>,
    /// Training length; defaults to the last traced epoch.
    #[arg(long)]
    pub train_epochs: Option<usize>,
    #[arg(long, value_parser = parse::<Variant>, default_value = "full")]
    pub variant: Variant,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SimKind {
    Global,
    Local,
    Fused,
}

#[derive(Debug, Args)]
pub struct SimsArgs {
    /// Dataset (.rrse or .json manifest).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to project through; raw embeddings when absent.
    #[arg(long)]
    pub heads: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SimKind::Fused)]
    pub kind: SimKind,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    #[arg(long, value_parser = parse::<LocalAggregation>, default_value = "normalized_frobenius")]
    pub local_aggregation: LocalAggregation,
    #[arg(short, long)]
    pub output: PathBuf,
}
