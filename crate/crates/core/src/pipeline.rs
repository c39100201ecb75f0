//! Batch operations behind the command-line tool: pseudo-label generation,
//! fine-tuning pair generation, evaluation, overlays and synthetic corpora.
//!
//! Per-image failures never abort a batch. Results are always reported in
//! manifest (or sorted id) order, whatever order the workers finish in.

use std::collections::BTreeSet;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{
    self, load_mask, render_overlay, save_mask_png, ImagingError, MASK_EXTENSIONS,
};
use crate::io::write_json_atomic;
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::mask::{confusion, MaskError, RleMask};
use crate::metrics::{
    aggregate_global, compute_metrics, ConfusionCounts, MetricReport, MetricsError,
};
use crate::protocol::{
    self, attach_classifications, BackendLayout, ClassificationDocument, MissingClassification,
    ProposalsDocument, ProtocolError,
};
use crate::scef::{resolve_artifact, ImageFailure};
use crate::select::{
    rank_by_area, select_drivable, SelectError, SelectionReason, SelectionResult,
    DEFAULT_DRIVABLE_CLASS, DEFAULT_TOP_K,
};
use crate::synth::{self, derive_seed, NoiseSpec, SceneSpec, SynthError};

pub const WORKERS_ENV: &str = "LABELFORGE_WORKERS";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {kind} for {image}: {}", path.display())]
    MissingArtifact {
        image: String,
        kind: &'static str,
        path: PathBuf,
    },
    #[error("no ground truth for prediction {image} under {}", gt_root.display())]
    MissingPair { image: String, gt_root: PathBuf },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::MissingArtifact { .. } => "missing-artifact",
            Self::MissingPair { .. } => "missing-pair",
            Self::Protocol(e) => e.kind(),
            Self::Select(_) => "no-proposals",
            Self::Imaging(_) => "imaging",
            Self::Mask(_) => "mask",
            Self::Metrics(_) => "empty-input",
            Self::Synth(_) => "synth",
            Self::Io { .. } => "io",
            Self::Config(_) => "config",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Effective settings of a run. Every field has a default, so config files
/// may be partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub top_k: usize,
    pub drivable_class: String,
    pub apply_topk_at_inference: bool,
    pub manifest: Option<PathBuf>,
    pub proposals_root: Option<PathBuf>,
    pub classifications_root: Option<PathBuf>,
    pub gt_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            drivable_class: DEFAULT_DRIVABLE_CLASS.to_string(),
            apply_topk_at_inference: true,
            manifest: None,
            proposals_root: None,
            classifications_root: None,
            gt_root: None,
            out: None,
            seed: 0,
            workers: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML or JSON config file, chosen by extension.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.top_k == 0 {
            return Err(PipelineError::Config("top_k must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn top_k(&self) -> NonZeroUsize {
        NonZeroUsize::new(self.top_k).unwrap_or(NonZeroUsize::MIN)
    }

    /// Resolves a required path setting, failing early when it is unset or
    /// does not exist.
    pub fn require_existing(
        &self,
        name: &str,
        value: &Option<PathBuf>,
    ) -> Result<PathBuf, PipelineError> {
        let p = value
            .clone()
            .ok_or_else(|| PipelineError::Config(format!("{name} is not set")))?;
        if !p.exists() {
            return Err(PipelineError::Config(format!(
                "{name} {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    /// Writes the effective config next to a run's outputs.
    pub fn echo_into(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        write_json_atomic(&path, self).map_err(io_err(&path))
    }
}

/// Worker count from `LABELFORGE_WORKERS`, when set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub selection: SelectionResult,
    pub mask: RleMask,
    pub missing: Vec<MissingClassification>,
}

/// Selects the drivable-area mask for one image: optional top-K area filter,
/// classification join, then drivable selection.
pub fn pseudo_label(
    proposals: &ProposalsDocument,
    classifications: &ClassificationDocument,
    top_k: Option<NonZeroUsize>,
    drivable_class: &str,
) -> Result<PseudoLabel, PipelineError> {
    let candidates = match top_k {
        Some(k) => rank_by_area(&proposals.to_proposals(), k),
        None => proposals.to_proposals(),
    };
    let joined = attach_classifications(proposals, candidates, classifications)?;
    let selection = select_drivable(&joined.proposals, drivable_class)?;
    let mask = joined
        .proposals
        .iter()
        .find(|p| p.id == selection.chosen)
        .map(|p| p.mask.clone())
        .expect("selection refers to an input proposal");
    Ok(PseudoLabel {
        selection,
        mask,
        missing: joined.missing,
    })
}

pub fn pseudolabel_dir(out: &Path) -> PathBuf {
    out.join("pseudolabels")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageLabel {
    pub image: String,
    #[serde(flatten)]
    pub selection: SelectionResult,
    pub area: u64,
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabelgenStats {
    pub images: usize,
    pub labeled: usize,
    pub failed: usize,
    pub labeled_drivable: usize,
    pub fallback_best_score: usize,
    pub fallback_largest_area: usize,
    pub missing_classifications: usize,
}

#[derive(Debug)]
pub struct LabelgenOutcome {
    pub labels: Vec<ImageLabel>,
    pub failures: Vec<ImageFailure<PipelineError>>,
    pub missing: Vec<MissingClassification>,
    pub stats: LabelgenStats,
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    image: &'a str,
    kind: &'static str,
    error: String,
}

#[derive(Serialize)]
struct LabelgenReport<'a> {
    stats: &'a LabelgenStats,
    labels: &'a [ImageLabel],
    failures: Vec<FailureRecord<'a>>,
    missing_classifications: &'a [MissingClassification],
}

/// One JSON object per failure, for machine-readable error streams.
pub fn failure_json_line(image: &str, kind: &'static str, error: &dyn std::fmt::Display) -> String {
    serde_json::to_string(&FailureRecord {
        image,
        kind,
        error: error.to_string(),
    })
    .expect("failure serializes")
}

pub struct LabelgenInputs<'a> {
    pub manifest: &'a DatasetManifest,
    pub manifest_dir: &'a Path,
    pub layout: BackendLayout,
    pub out: &'a Path,
    pub splits: &'a [Split],
}

fn label_entry(
    entry: &ManifestEntry,
    inputs: &LabelgenInputs<'_>,
    cfg: &PipelineConfig,
) -> Result<(ImageLabel, Vec<MissingClassification>), PipelineError> {
    let id = entry.id.as_str();
    let proposals_path = entry
        .proposals_path
        .as_deref()
        .map(|p| crate::manifest::resolve_relative(p, inputs.manifest_dir))
        .unwrap_or_else(|| inputs.layout.proposals_path(id));
    let classifications_path = inputs.layout.classifications_path(id);
    for (kind, path) in [
        ("proposals", &proposals_path),
        ("classifications", &classifications_path),
    ] {
        if !path.exists() {
            return Err(PipelineError::MissingArtifact {
                image: id.to_string(),
                kind,
                path: path.clone(),
            });
        }
    }
    let doc = protocol::load_proposals(&proposals_path)?;
    let classes = protocol::load_classifications(&classifications_path)?;
    let top_k = cfg.apply_topk_at_inference.then(|| cfg.top_k());
    let label = pseudo_label(&doc, &classes, top_k, &cfg.drivable_class)?;

    let dir = pseudolabel_dir(inputs.out);
    let json_path = dir.join(format!("{id}.json"));
    write_json_atomic(&json_path, &label.mask).map_err(io_err(&json_path))?;
    save_mask_png(&dir.join(format!("{id}.png")), &label.mask.decode())?;
    Ok((
        ImageLabel {
            image: id.to_string(),
            area: label.mask.area(),
            selection: label.selection,
            mask_path: json_path,
        },
        label.missing,
    ))
}

/// Writes one pseudo-label per selected manifest entry to
/// `<out>/pseudolabels/<id>.{json,png}` and a run report to
/// `<out>/labelgen_report.json`.
pub fn run_labelgen(
    inputs: &LabelgenInputs<'_>,
    cfg: &PipelineConfig,
) -> Result<LabelgenOutcome, PipelineError> {
    let entries: Vec<&ManifestEntry> = inputs.manifest.entries_in(inputs.splits).collect();
    let results: Vec<_> = entries
        .par_iter()
        .map(|e| label_entry(e, inputs, cfg))
        .collect();

    let mut outcome = LabelgenOutcome {
        labels: Vec::new(),
        failures: Vec::new(),
        missing: Vec::new(),
        stats: LabelgenStats {
            images: entries.len(),
            ..Default::default()
        },
    };
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok((label, missing)) => {
                match label.selection.reason {
                    SelectionReason::LabeledDrivable => outcome.stats.labeled_drivable += 1,
                    SelectionReason::FallbackBestScore => outcome.stats.fallback_best_score += 1,
                    SelectionReason::FallbackLargestArea => {
                        outcome.stats.fallback_largest_area += 1
                    }
                }
                outcome.missing.extend(missing);
                outcome.labels.push(label);
            }
            Err(error) => outcome.failures.push(ImageFailure {
                image: entry.id.clone(),
                error,
            }),
        }
    }
    outcome.stats.labeled = outcome.labels.len();
    outcome.stats.failed = outcome.failures.len();
    outcome.stats.missing_classifications = outcome.missing.len();

    let report = LabelgenReport {
        stats: &outcome.stats,
        labels: &outcome.labels,
        failures: outcome
            .failures
            .iter()
            .map(|f| FailureRecord {
                image: &f.image,
                kind: f.error.kind(),
                error: f.error.to_string(),
            })
            .collect(),
        missing_classifications: &outcome.missing,
    };
    let report_path = inputs.out.join("labelgen_report.json");
    write_json_atomic(&report_path, &report).map_err(io_err(&report_path))?;
    Ok(outcome)
}

/// Mask file for `id` under `root`, trying each known extension.
pub fn find_mask(root: &Path, id: &str) -> Option<PathBuf> {
    MASK_EXTENSIONS
        .iter()
        .map(|ext| root.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// Sorted ids of every mask file directly under `root`.
pub fn mask_ids(root: &Path) -> Result<Vec<String>, PipelineError> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(root).map_err(io_err(root))? {
        let path = entry.map_err(io_err(root))?.path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| MASK_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if known && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageEvaluation {
    pub image: String,
    pub counts: ConfusionCounts,
    pub report: MetricReport,
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    /// Metrics of the summed confusion counts over every evaluated image.
    pub global: Option<MetricReport>,
    pub per_image: Vec<ImageEvaluation>,
    pub failures: Vec<ImageFailure<PipelineError>>,
}

fn evaluate_one(
    id: &str,
    pred_root: &Path,
    gt_root: &Path,
) -> Result<ImageEvaluation, PipelineError> {
    let pred_path = find_mask(pred_root, id).ok_or_else(|| PipelineError::MissingArtifact {
        image: id.to_string(),
        kind: "prediction",
        path: pred_root.join(id),
    })?;
    let gt_path = find_mask(gt_root, id).ok_or_else(|| PipelineError::MissingPair {
        image: id.to_string(),
        gt_root: gt_root.to_path_buf(),
    })?;
    let counts = confusion(&load_mask(&pred_path)?, &load_mask(&gt_path)?)?;
    Ok(ImageEvaluation {
        image: id.to_string(),
        counts,
        report: compute_metrics(counts),
    })
}

/// Compares every prediction under `pred_root` (or only `ids`) against the
/// same-named ground-truth mask under `gt_root`.
pub fn evaluate_dirs(
    pred_root: &Path,
    gt_root: &Path,
    ids: Option<Vec<String>>,
) -> Result<EvaluateOutcome, PipelineError> {
    let ids = match ids {
        Some(ids) => ids,
        None => mask_ids(pred_root)?,
    };
    let results: Vec<_> = ids
        .par_iter()
        .map(|id| evaluate_one(id, pred_root, gt_root))
        .collect();
    let mut per_image = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(e) => per_image.push(e),
            Err(error) => failures.push(ImageFailure {
                image: id.clone(),
                error,
            }),
        }
    }
    let global = aggregate_global(per_image.iter().map(|e| &e.counts)).ok();
    Ok(EvaluateOutcome {
        global,
        per_image,
        failures,
    })
}

#[derive(Serialize)]
struct PerImageRow<'a> {
    image: &'a str,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    miou: f64,
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
}

pub fn write_per_image_csv<W: std::io::Write>(rows: &[ImageEvaluation], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in rows {
        w.serialize(PerImageRow {
            image: &e.image,
            accuracy: e.report.accuracy,
            precision: e.report.precision,
            recall: e.report.recall,
            f1: e.report.f1,
            miou: e.report.iou,
            tp: e.counts.tp,
            tn: e.counts.tn,
            fp: e.counts.fp,
            fn_: e.counts.fn_,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Renders the TP/FN/FP overlay of two mask files, optionally over an image.
pub fn overlay_files(
    pred: &Path,
    gt: &Path,
    image: Option<&Path>,
    out: &Path,
) -> Result<image::RgbImage, PipelineError> {
    let pred = load_mask(pred)?;
    let gt = load_mask(gt)?;
    let base = match image {
        Some(p) => Some(
            image::open(p)
                .map_err(|source| ImagingError::Decode {
                    path: p.to_path_buf(),
                    source,
                })?
                .to_rgb8(),
        ),
        None => None,
    };
    let rendered = render_overlay(&pred, &gt, base.as_ref())?;
    imaging::save_rgb_png(out, &rendered)?;
    Ok(rendered)
}

/// Writes a hermetic corpus under `dir`: backend documents, ground-truth
/// masks and a manifest whose entries are all in the pre-training pool.
///
/// Layout: `proposals/`, `classifications/`, `gt/<id>.png`, `manifest.json`.
pub fn emit_synthetic_corpus(
    dir: &Path,
    scenes: &[SceneSpec],
    noise: &NoiseSpec,
    seed: u64,
) -> Result<DatasetManifest, PipelineError> {
    noise.validate()?;
    let layout = BackendLayout::under(dir);
    let entries: Vec<Result<ManifestEntry, PipelineError>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let id = format!("synth_{i:05}");
            let rendered = synth::render_scene(scene)?;
            let (p, c) =
                synth::perturb_and_classify(&id, &rendered, noise, derive_seed(seed, i as u64));
            protocol::save_proposals(&layout.proposals_path(&id), &p)?;
            protocol::save_classifications(&layout.classifications_path(&id), &c)?;
            let gt_rel = PathBuf::from("gt").join(format!("{id}.png"));
            save_mask_png(&dir.join(&gt_rel), &rendered.gt)?;
            let mut entry = ManifestEntry::new(id.clone(), Split::PretrainPool);
            entry.gt_path = Some(gt_rel);
            entry.proposals_path = Some(PathBuf::from("proposals").join(format!("{id}.json")));
            Ok(entry)
        })
        .collect();
    let manifest = DatasetManifest {
        schema_version: crate::manifest::SCHEMA_VERSION,
        split_seed: seed,
        entries: entries.into_iter().collect::<Result<_, _>>()?,
        pool: None,
    };
    manifest
        .save(&dir.join("manifest.json"))
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(manifest)
}

/// Ground-truth lookup used by fine-tuning pair generation and evaluation:
/// the manifest's `gt_path`, else `<gt_root>/<id>.{png,json,rle}`.
pub fn gt_path_for(entry: &ManifestEntry, manifest_dir: &Path, gt_root: &Path) -> PathBuf {
    resolve_artifact(
        entry.gt_path.as_deref(),
        manifest_dir,
        gt_root,
        &entry.id,
        &["png", "json", "rle"],
    )
}
