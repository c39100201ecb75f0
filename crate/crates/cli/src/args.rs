use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use labelforge::manifest::{ArtifactKind, Split};

#[derive(Debug, Parser)]
#[command(
    name = "labelforge",
    version,
    about = "Drivable-area pseudo-label pipeline"
)]
pub struct Cli {
    /// TOML or JSON file with pipeline settings; flags given on the command
    /// line take precedence over it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads [default: $LABELFORGE_WORKERS, else one per core]
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create and maintain dataset manifests
    #[command(subcommand)]
    Manifest(ManifestCommand),
    /// Select one drivable-area mask per image as its pseudo-label
    Labelgen(LabelgenArgs),
    /// Generate fine-tuning pairs for the classifier from labeled images
    Scef(ScefArgs),
    /// Score predicted masks against ground truth
    Evaluate(EvaluateArgs),
    /// Render a TP/FN/FP overlay (green/red/blue) for one mask pair
    Overlay(OverlayArgs),
    /// Sweep pseudo-label quality over synthetic scenes and noise levels
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum ManifestCommand {
    /// Seeded train/val/test split of an id list
    Split(SplitArgs),
    /// Add the pre-training pool sampled from candidate ids
    Pool(PoolArgs),
    /// Record artifact paths for entries
    Attach(AttachArgs),
    /// Check every manifest invariant; exits nonzero on any violation
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// File with one image id per line
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "gt_dir",
        conflicts_with = "gt_dir"
    )]
    pub ids: Option<PathBuf>,

    /// Directory of ground-truth masks; ids are the file stems and each
    /// entry gets its gt_path
    #[arg(long, value_name = "DIR")]
    pub gt_dir: Option<PathBuf>,

    /// Training images [default: 173]
    #[arg(long)]
    pub train: Option<usize>,

    /// Validation images [default: 58]
    #[arg(long)]
    pub val: Option<usize>,

    /// Test images [default: 58]
    #[arg(long)]
    pub test: Option<usize>,

    /// Shuffle seed [default: config seed, else 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Manifest to write [default: config manifest]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Manifest to extend [default: config manifest]
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    /// File with one candidate image id per line
    #[arg(long, value_name = "FILE")]
    pub candidates: PathBuf,

    /// Pool size as a multiple of the labeled image count [default: 5]
    #[arg(long)]
    pub multiplier: Option<u32>,

    /// Sampling seed [default: config seed, else 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Where to write the result [default: overwrite the input manifest]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttachArgs {
    /// Manifest to update in place [default: config manifest]
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    /// Artifact kind: image, gt, proposals or pseudolabel
    #[arg(long)]
    pub kind: ArtifactKind,

    /// Entry to update
    #[arg(
        long,
        requires = "path",
        required_unless_present = "dir",
        conflicts_with = "dir"
    )]
    pub id: Option<String>,

    /// Artifact path for --id
    #[arg(long, value_name = "PATH")]
    pub path: Option<PathBuf>,

    /// Attach `<DIR>/<id>.<ext>` for every entry that has such a file
    #[arg(long, value_name = "DIR")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Manifest to check [default: config manifest]
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

/// Locations of the backend documents and the selection settings shared by
/// `labelgen` and `scef`.
#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Dataset manifest [default: config manifest]
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    /// Directory holding proposals/ and classifications/ [default: the
    /// manifest's directory]
    #[arg(long, value_name = "DIR")]
    pub backend_root: Option<PathBuf>,

    /// Proposals directory [default: <backend-root>/proposals]
    #[arg(long, value_name = "DIR")]
    pub proposals_root: Option<PathBuf>,

    /// Classifications directory [default: <backend-root>/classifications]
    #[arg(long, value_name = "DIR")]
    pub classifications_root: Option<PathBuf>,

    /// Output directory [default: config out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Largest proposals kept per image [default: 10]
    #[arg(long, value_name = "K")]
    pub top_k: Option<usize>,

    /// Class name that marks the drivable area [default: "drivable area"]
    #[arg(long, value_name = "NAME")]
    pub drivable_class: Option<String>,
}

#[derive(Debug, Args)]
pub struct LabelgenArgs {
    #[command(flatten)]
    pub backend: BackendArgs,

    /// Choose among all proposals instead of the top-K by area [default:
    /// top-K is applied]
    #[arg(long)]
    pub no_topk_at_inference: bool,

    /// Splits to label, comma separated [default: pretrain-pool]
    #[arg(long, value_delimiter = ',', value_name = "SPLIT")]
    pub splits: Vec<Split>,

    /// Record each pseudo-label path in the manifest
    #[arg(long)]
    pub update_manifest: bool,
}

#[derive(Debug, Args)]
pub struct ScefArgs {
    #[command(flatten)]
    pub backend: BackendArgs,

    /// Ground-truth directory for entries without a gt_path [default: the
    /// manifest's directory]
    #[arg(long, value_name = "DIR")]
    pub gt_root: Option<PathBuf>,

    /// Splits to process, comma separated [default: train,val,test]
    #[arg(long, value_delimiter = ',', value_name = "SPLIT")]
    pub splits: Vec<Split>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted masks (.json, .rle or .png)
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,

    /// Directory of ground-truth masks with matching names [default: config
    /// gt_root]
    #[arg(long, value_name = "DIR")]
    pub gt: Option<PathBuf>,

    /// Output directory for metrics.json and per_image.csv [default: config
    /// out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Only evaluate the ids listed in this file, one per line [default:
    /// every mask in the prediction directory]
    #[arg(long, value_name = "FILE")]
    pub ids: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Predicted mask
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,

    /// Ground-truth mask
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,

    /// Image shown under unmarked pixels [default: black]
    #[arg(long, value_name = "FILE")]
    pub image: Option<PathBuf>,

    /// PNG to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of random scenes
    #[arg(long, value_name = "N")]
    pub scenes: usize,

    /// JSON noise grid: a list of noise specs, or per-parameter value lists
    #[arg(long, value_name = "FILE")]
    pub noise_grid: PathBuf,

    /// CSV to write, one row per noise cell
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Scene and noise seed [default: config seed, else 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Scene width in pixels [default: 64]
    #[arg(long, value_name = "PX")]
    pub width: Option<u32>,

    /// Scene height in pixels [default: 48]
    #[arg(long, value_name = "PX")]
    pub height: Option<u32>,

    /// Largest proposals kept per image [default: 10]
    #[arg(long, value_name = "K")]
    pub top_k: Option<usize>,

    /// Also write the scenes as an on-disk corpus (backend documents, gt
    /// masks, manifest) to DIR; needs a single-cell grid
    #[arg(long, value_name = "DIR")]
    pub emit_corpus: Option<PathBuf>,
}
