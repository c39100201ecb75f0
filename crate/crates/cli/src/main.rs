mod args;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::Parser;
use labelforge::io::write_json_atomic;
use labelforge::manifest::{
    split_dataset, DatasetManifest, Split, SplitSizes, DEFAULT_POOL_MULTIPLIER, DEFAULT_SPLIT_SIZES,
};
use labelforge::pipeline::{
    self, emit_synthetic_corpus, evaluate_dirs, failure_json_line, find_mask, mask_ids,
    overlay_files, run_labelgen, with_workers, workers_from_env, LabelgenInputs, PipelineConfig,
};
use labelforge::protocol::BackendLayout;
use labelforge::scef::{batch_generate, ScefBatchConfig};
use labelforge::synth::{self, default_distractors, random_scenes, NoiseGrid, SweepOptions};

use args::{
    AttachArgs, BackendArgs, Cli, Command, EvaluateArgs, LabelgenArgs, ManifestCommand,
    OverlayArgs, PoolArgs, ScefArgs, SplitArgs, SynthArgs, ValidateArgs,
};

const DEFAULT_SYNTH_WIDTH: u32 = 64;
const DEFAULT_SYNTH_HEIGHT: u32 = 48;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{}", failure_json_line("", "fatal", &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}

/// Returns whether the command finished without hard errors.
fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if cfg.workers.is_none() {
        cfg.workers = workers_from_env();
    }
    cfg.validate()?;
    let workers = cfg.workers;
    with_workers(workers, move || match cli.command {
        Command::Manifest(cmd) => cmd_manifest(cmd, &cfg),
        Command::Labelgen(a) => cmd_labelgen(a, cfg),
        Command::Scef(a) => cmd_scef(a, cfg),
        Command::Evaluate(a) => cmd_evaluate(a, cfg),
        Command::Overlay(a) => cmd_overlay(a),
        Command::Synth(a) => cmd_synth(a, cfg),
    })
}

fn report_failure(image: &str, kind: &'static str, error: &dyn std::fmt::Display) {
    eprintln!("{}", failure_json_line(image, kind, error));
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn manifest_path(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.manifest.clone()).ok_or_else(|| {
        anyhow!("no manifest given (use --manifest or set `manifest` in the config)")
    })
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `path` relative to `base` when it lies under it, else absolute.
fn relative_to(path: &Path, base: &Path) -> Result<PathBuf> {
    let path = std::path::absolute(path)?;
    let base = std::path::absolute(base)?;
    Ok(path
        .strip_prefix(&base)
        .map(Path::to_path_buf)
        .unwrap_or(path))
}

fn cmd_manifest(cmd: ManifestCommand, cfg: &PipelineConfig) -> Result<bool> {
    match cmd {
        ManifestCommand::Split(a) => manifest_split(a, cfg),
        ManifestCommand::Pool(a) => manifest_pool(a, cfg),
        ManifestCommand::Attach(a) => manifest_attach(a, cfg),
        ManifestCommand::Validate(a) => manifest_validate(a, cfg),
    }
}

fn manifest_split(a: SplitArgs, cfg: &PipelineConfig) -> Result<bool> {
    let out = manifest_path(a.out, cfg)?;
    let ids = match (&a.ids, &a.gt_dir) {
        (Some(file), _) => read_id_list(file)?,
        (None, Some(dir)) => mask_ids(dir)?,
        (None, None) => bail!("either --ids or --gt-dir is required"),
    };
    let sizes = SplitSizes {
        train: a.train.unwrap_or(DEFAULT_SPLIT_SIZES.train),
        val: a.val.unwrap_or(DEFAULT_SPLIT_SIZES.val),
        test: a.test.unwrap_or(DEFAULT_SPLIT_SIZES.test),
    };
    let mut manifest = split_dataset(&ids, sizes, a.seed.unwrap_or(cfg.seed))?;
    if let Some(dir) = &a.gt_dir {
        let base = parent_dir(&out);
        for e in &mut manifest.entries {
            let file = find_mask(dir, &e.id).expect("id came from this directory");
            e.gt_path = Some(relative_to(&file, &base)?);
        }
    }
    manifest.save(&out)?;
    println!(
        "{}: train {} / val {} / test {} / unassigned {}",
        out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        manifest.count(Split::Unassigned)
    );
    Ok(true)
}

fn manifest_pool(a: PoolArgs, cfg: &PipelineConfig) -> Result<bool> {
    let path = manifest_path(a.manifest, cfg)?;
    let manifest = DatasetManifest::load(&path)?;
    let candidates = read_id_list(&a.candidates)?;
    let pooled = manifest.build_pretrain_pool(
        &candidates,
        a.multiplier.unwrap_or(DEFAULT_POOL_MULTIPLIER),
        a.seed.unwrap_or(cfg.seed),
    )?;
    let out = a.out.unwrap_or(path);
    pooled.save(&out)?;
    println!(
        "{}: pretrain-pool {} of {} candidates",
        out.display(),
        pooled.count(Split::PretrainPool),
        candidates.len()
    );
    Ok(true)
}

fn manifest_attach(a: AttachArgs, cfg: &PipelineConfig) -> Result<bool> {
    let path = manifest_path(a.manifest, cfg)?;
    let mut manifest = DatasetManifest::load(&path)?;
    let mut attached = 0;
    match (a.id, a.path, a.dir) {
        (Some(id), Some(p), _) => {
            manifest.attach_artifact(&id, a.kind, p)?;
            attached = 1;
        }
        (None, _, Some(dir)) => {
            let base = parent_dir(&path);
            let found: Vec<(String, PathBuf)> = std::fs::read_dir(&dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
                .collect();
            for entry in manifest.entries.clone() {
                let mut matches: Vec<&PathBuf> = found
                    .iter()
                    .filter(|(stem, _)| *stem == entry.id)
                    .map(|(_, p)| p)
                    .collect();
                matches.sort();
                if let Some(p) = matches.first() {
                    manifest.attach_artifact(&entry.id, a.kind, relative_to(p, &base)?)?;
                    attached += 1;
                }
            }
        }
        _ => bail!("give either --id with --path, or --dir"),
    }
    manifest.save(&path)?;
    println!("{}: attached {attached} path(s)", path.display());
    Ok(true)
}

fn manifest_validate(a: ValidateArgs, cfg: &PipelineConfig) -> Result<bool> {
    let path = manifest_path(a.manifest, cfg)?;
    let manifest = DatasetManifest::load(&path)?;
    let problems = manifest.validate();
    for p in &problems {
        report_failure("", "manifest-invariant", p);
    }
    println!(
        "{}: {} entries, {} violation(s)",
        path.display(),
        manifest.entries.len(),
        problems.len()
    );
    Ok(problems.is_empty())
}

struct BackendSetup {
    manifest: DatasetManifest,
    manifest_path: PathBuf,
    manifest_dir: PathBuf,
    layout: BackendLayout,
    out: PathBuf,
}

/// Folds backend flags into `cfg` and resolves every path the run needs.
fn backend_setup(a: BackendArgs, cfg: &mut PipelineConfig) -> Result<BackendSetup> {
    if let Some(m) = a.manifest {
        cfg.manifest = Some(m);
    }
    if let Some(root) = a.backend_root {
        let layout = BackendLayout::under(&root);
        cfg.proposals_root = Some(layout.proposals_dir);
        cfg.classifications_root = Some(layout.classifications_dir);
    }
    if a.proposals_root.is_some() {
        cfg.proposals_root = a.proposals_root;
    }
    if a.classifications_root.is_some() {
        cfg.classifications_root = a.classifications_root;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    if let Some(k) = a.top_k {
        cfg.top_k = k;
    }
    if let Some(c) = a.drivable_class {
        cfg.drivable_class = c;
    }
    cfg.validate()?;

    let manifest_path = cfg.require_existing("manifest", &cfg.manifest)?;
    let manifest_dir = parent_dir(&manifest_path);
    let default_layout = BackendLayout::under(&manifest_dir);
    let layout = BackendLayout {
        proposals_dir: cfg
            .proposals_root
            .clone()
            .unwrap_or(default_layout.proposals_dir),
        classifications_dir: cfg
            .classifications_root
            .clone()
            .unwrap_or(default_layout.classifications_dir),
    };
    let out = cfg.out.clone().ok_or_else(|| {
        anyhow!("no output directory given (use --out or set `out` in the config)")
    })?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    Ok(BackendSetup {
        manifest,
        manifest_path,
        manifest_dir,
        layout,
        out,
    })
}

fn cmd_labelgen(a: LabelgenArgs, mut cfg: PipelineConfig) -> Result<bool> {
    if a.no_topk_at_inference {
        cfg.apply_topk_at_inference = false;
    }
    let setup = backend_setup(a.backend, &mut cfg)?;
    cfg.echo_into(&setup.out)?;
    let splits = if a.splits.is_empty() {
        vec![Split::PretrainPool]
    } else {
        a.splits
    };
    let inputs = LabelgenInputs {
        manifest: &setup.manifest,
        manifest_dir: &setup.manifest_dir,
        layout: setup.layout.clone(),
        out: &setup.out,
        splits: &splits,
    };
    let outcome = run_labelgen(&inputs, &cfg)?;
    for f in &outcome.failures {
        report_failure(&f.image, f.error.kind(), &f.error);
    }
    let s = &outcome.stats;
    println!(
        "labeled {}/{} images ({} labeled drivable, {} best-score fallback, {} largest-area fallback), {} failed, {} missing classifications",
        s.labeled, s.images, s.labeled_drivable, s.fallback_best_score, s.fallback_largest_area, s.failed,
        s.missing_classifications
    );

    if a.update_manifest {
        let mut manifest = setup.manifest.clone();
        for label in &outcome.labels {
            let rel = relative_to(&label.mask_path, &setup.manifest_dir)?;
            manifest.attach_artifact(&label.image, labelforge::ArtifactKind::Pseudolabel, rel)?;
        }
        manifest.save(&setup.manifest_path)?;
    }
    Ok(outcome.failures.is_empty())
}

fn cmd_scef(a: ScefArgs, mut cfg: PipelineConfig) -> Result<bool> {
    if a.gt_root.is_some() {
        cfg.gt_root = a.gt_root;
    }
    let setup = backend_setup(a.backend, &mut cfg)?;
    cfg.echo_into(&setup.out)?;
    let batch = ScefBatchConfig {
        layout: setup.layout,
        gt_root: cfg
            .gt_root
            .clone()
            .unwrap_or_else(|| setup.manifest_dir.clone()),
        out_root: setup.out.clone(),
        top_k: cfg.top_k(),
        drivable_class: cfg.drivable_class.clone(),
        splits: if a.splits.is_empty() {
            Split::LABELED.to_vec()
        } else {
            a.splits
        },
    };
    let outcome = batch_generate(&setup.manifest, &setup.manifest_dir, &batch);
    for f in &outcome.failures {
        report_failure(&f.image, f.error.kind(), &f.error);
    }
    write_json_atomic(&setup.out.join("scef_summary.json"), &outcome.summary)?;
    let s = &outcome.summary;
    println!(
        "{} images, {} pairs, {} with zero max IoU, {} failed",
        s.images,
        s.pairs,
        s.zero_max_iou_images.len(),
        s.failed_images
    );
    Ok(outcome.failures.is_empty())
}

fn cmd_evaluate(a: EvaluateArgs, mut cfg: PipelineConfig) -> Result<bool> {
    if a.gt.is_some() {
        cfg.gt_root = a.gt;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let gt_root = cfg.require_existing("gt root", &cfg.gt_root)?;
    ensure!(
        a.pred.is_dir(),
        "prediction directory {} does not exist",
        a.pred.display()
    );
    let out = cfg.out.clone().ok_or_else(|| {
        anyhow!("no output directory given (use --out or set `out` in the config)")
    })?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cfg.echo_into(&out)?;

    let ids = a.ids.as_deref().map(read_id_list).transpose()?;
    let outcome = evaluate_dirs(&a.pred, &gt_root, ids)?;
    for f in &outcome.failures {
        report_failure(&f.image, f.error.kind(), &f.error);
    }

    let csv_path = out.join("per_image.csv");
    let mut buf = Vec::new();
    pipeline::write_per_image_csv(&outcome.per_image, &mut buf)?;
    labelforge::io::write_atomic(&csv_path, &buf)?;

    match &outcome.global {
        Some(report) => {
            write_json_atomic(&out.join("metrics.json"), report)?;
            let p = report.percentages();
            println!("images     {}", outcome.per_image.len());
            for (name, v) in ["accuracy", "precision", "recall", "f1", "miou"]
                .iter()
                .zip(p)
            {
                println!("{name:<10} {v:.2}");
            }
        }
        None => println!("no image could be evaluated"),
    }
    Ok(outcome.failures.is_empty() && outcome.global.is_some())
}

fn cmd_overlay(a: OverlayArgs) -> Result<bool> {
    let img = overlay_files(&a.pred, &a.gt, a.image.as_deref(), &a.out)?;
    let count = |c| img.pixels().filter(|p| **p == c).count();
    println!(
        "{}: {} TP (green), {} FN (red), {} FP (blue)",
        a.out.display(),
        count(labelforge::imaging::TP_COLOR),
        count(labelforge::imaging::FN_COLOR),
        count(labelforge::imaging::FP_COLOR)
    );
    Ok(true)
}

fn cmd_synth(a: SynthArgs, mut cfg: PipelineConfig) -> Result<bool> {
    ensure!(a.scenes > 0, "--scenes must be at least 1");
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(k) = a.top_k {
        cfg.top_k = k;
    }
    cfg.validate()?;
    let text = std::fs::read_to_string(&a.noise_grid)
        .with_context(|| format!("reading {}", a.noise_grid.display()))?;
    let grid: NoiseGrid = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", a.noise_grid.display()))?;
    let cells = grid.cells();
    ensure!(
        !cells.is_empty(),
        "noise grid {} has no cells",
        a.noise_grid.display()
    );

    let (w, h) = (
        a.width.unwrap_or(DEFAULT_SYNTH_WIDTH),
        a.height.unwrap_or(DEFAULT_SYNTH_HEIGHT),
    );
    let scenes = random_scenes(a.scenes, w, h, default_distractors(w, h), cfg.seed);

    if let Some(dir) = &a.emit_corpus {
        ensure!(
            cells.len() == 1,
            "--emit-corpus needs a noise grid with exactly one cell"
        );
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        cfg.echo_into(dir)?;
        let manifest = emit_synthetic_corpus(dir, &scenes, &cells[0], cfg.seed)?;
        println!("{}: {} images", dir.display(), manifest.entries.len());
    }

    let options = SweepOptions {
        top_k: cfg.apply_topk_at_inference.then(|| cfg.top_k()),
        drivable_class: cfg.drivable_class.clone(),
    };
    let sweep = synth::run_quality_sweep(&cells, &scenes, cfg.seed, &options)?;
    let mut clean = true;
    for (cell, noise) in sweep.iter().zip(&cells) {
        for (i, e) in &cell.failures {
            clean = false;
            report_failure(
                &format!("scene{i:04}"),
                "synth",
                &format!("{e} (noise {noise:?})"),
            );
        }
    }
    let mut buf = Vec::new();
    synth::write_sweep_csv(&sweep, &mut buf)?;
    labelforge::io::write_atomic(&a.out, &buf)?;

    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for cell in &sweep {
        let n = cell.noise;
        let metrics = cell
            .report
            .map_or_else(|| "-".to_string(), |r| r.percent_line());
        writeln!(
            out,
            "jitter {:.2} split {:.2} drop {:.2} confusion {:.2}: {metrics} ({} images)",
            n.boundary_jitter, n.split_prob, n.drop_prob, n.classifier_confusion, cell.n_images
        )?;
    }
    out.flush()?;
    Ok(clean)
}
