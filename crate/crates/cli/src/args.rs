use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "ctxsyn", version, about = "Context-aware video frame interpolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum Command {
    /// Synthesize the frame at time t between two frames.
    Interpolate(InterpolateArgs),
    /// Estimate forward and backward flow between two frames.
    Flow(FlowArgs),
    /// Train the synthesis network.
    Train(TrainArgs),
    /// Score a checkpoint (and the blending baselines) on ground-truth pairs.
    Eval(EvalArgs),
    /// Re-run a command from its manifest after verifying the input hashes.
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub first: PathBuf,
    #[arg(long)]
    pub second: PathBuf,
    /// Temporal position in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Model checkpoint (.ctxc).
    #[arg(long)]
    pub weights: PathBuf,
    /// Flow from first to second (.flo); estimated when absent.
    #[arg(long)]
    pub flow_fwd: Option<PathBuf>,
    /// Flow from second to first (.flo); estimated when absent.
    #[arg(long)]
    pub flow_bwd: Option<PathBuf>,
    /// Brightness-constancy threshold on the [0, 1] scale.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Also write both warped frames and their weight maps next to --out.
    #[arg(long)]
    pub emit_warped: bool,
    /// Feed zeros in place of the context maps.
    #[arg(long)]
    pub zero_context: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FlowArgs {
    #[arg(long)]
    pub first: PathBuf,
    #[arg(long)]
    pub second: PathBuf,
    #[arg(long)]
    pub out_fwd: PathBuf,
    #[arg(long)]
    pub out_bwd: PathBuf,
    /// Pyramid levels; fitted to the image size when absent.
    #[arg(long)]
    pub levels: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainArgs {
    /// Dataset root (<root>/<clip>/NNNNNN.ppm). Required unless --synthetic.
    #[arg(long, required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many generated 64x64 triplets instead of --data.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: Option<usize>,
    /// Checkpoint path; the loss log goes to <out>.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// l1, lap or feature-refine.
    #[arg(long, default_value = "lap")]
    pub loss: String,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Start from the weights of a checkpoint with fresh optimizer state;
    /// with feature-refine the whole run uses the feature loss.
    #[arg(long, conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 256)]
    pub crop: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long)]
    pub max_iterations: Option<u64>,
    /// Write the checkpoint every N iterations as well as at the end.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Per-row channel counts of the network.
    #[arg(long, value_delimiter = ',', default_value = "32,64,96")]
    pub channels: Vec<usize>,
    /// Frozen context extractor weights (ctx.weight, ctx.bias).
    #[arg(long)]
    pub context_weights: Option<PathBuf>,
    /// Feature network for feature-refine (feat.* entries).
    #[arg(long)]
    pub feature_weights: Option<PathBuf>,
    /// Keep only the N best-scoring patches.
    #[arg(long)]
    pub select: Option<usize>,
    /// Store estimated flows as sidecars in the dataset directory.
    #[arg(long)]
    pub cache_flow: bool,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalArgs {
    /// Directory of <example>/{first,second,gt}.ppm with optional fwd/bwd.flo.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
    /// Add rows for the bidirectional and forward blending baselines.
    #[arg(long)]
    pub with_baselines: bool,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long)]
    pub zero_context: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}
