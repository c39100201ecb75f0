//! Synthetic road scenes and a simulated segmenter/classifier, so the whole
//! pipeline and its quality metrics run without real models or data.
//!
//! A scene is a road polygon plus axis-aligned distractor rectangles placed
//! by rejection sampling so that no two regions share a pixel. Pixels belong
//! to a polygon when their center lies inside it (even-odd rule).
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`. [`perturb_and_classify`] draws every random value in a
//! fixed order whatever the noise levels are, so two runs that differ only in
//! noise magnitude see the same underlying draws. Byte-level reproducibility
//! is promised within this implementation only.

use std::io;
use std::num::NonZeroUsize;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{confusion, MaskRaster};
use crate::metrics::{aggregate_global, ConfusionCounts, MetricReport};
use crate::pipeline::pseudo_label;
use crate::protocol::{
    ClassificationDocument, ClassificationResult, ImageSize, ProposalEntry, ProposalsDocument,
};
use crate::select::DEFAULT_DRIVABLE_CLASS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("road polygon rasterizes to zero pixels")]
    DegenerateRoad,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
    #[error("could not place distractor {index} without overlapping other regions")]
    DistractorPlacement { index: usize },
}

/// Road outline in pixel coordinates; `(0,0)` is the top-left image corner
/// and `(width,height)` the bottom-right one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RoadShape {
    Trapezoid {
        top_y: f64,
        bottom_y: f64,
        top_left_x: f64,
        top_right_x: f64,
        bottom_left_x: f64,
        bottom_right_x: f64,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

impl RoadShape {
    pub fn full_frame(width: u32, height: u32) -> Self {
        let (w, h) = (f64::from(width), f64::from(height));
        RoadShape::Polygon {
            vertices: vec![[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]],
        }
    }

    pub fn vertices(&self) -> Vec<[f64; 2]> {
        match self {
            RoadShape::Trapezoid {
                top_y,
                bottom_y,
                top_left_x,
                top_right_x,
                bottom_left_x,
                bottom_right_x,
            } => vec![
                [*top_left_x, *top_y],
                [*top_right_x, *top_y],
                [*bottom_right_x, *bottom_y],
                [*bottom_left_x, *bottom_y],
            ],
            RoadShape::Polygon { vertices } => vertices.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorSpec {
    pub count: usize,
    /// Side lengths are drawn uniformly from `min_size..=max_size`.
    pub min_size: u32,
    pub max_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub road: RoadShape,
    pub distractors: DistractorSpec,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScene(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image is {}x{}", self.width, self.height));
        }
        let vertices = self.road.vertices();
        if vertices.len() < 3 {
            return bad("road polygon needs at least 3 vertices".into());
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        for [x, y] in vertices {
            if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
                return bad(format!("road vertex ({x}, {y}) lies outside the image"));
            }
        }
        let d = self.distractors;
        if d.count > 0
            && (d.min_size == 0
                || d.min_size > d.max_size
                || d.max_size > self.width.min(self.height))
        {
            return bad(format!(
                "distractor size range {}..={} does not fit",
                d.min_size, d.max_size
            ));
        }
        Ok(())
    }

    /// A random trapezoidal road receding towards the horizon.
    pub fn random(width: u32, height: u32, distractors: DistractorSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_e5ce_9e5c_e9e5);
        let (w, h) = (f64::from(width), f64::from(height));
        let center = w * rng.random_range(0.4..=0.6);
        let half_top = w * rng.random_range(0.05..=0.15);
        let road = RoadShape::Trapezoid {
            top_y: h * rng.random_range(0.4..=0.6),
            bottom_y: h,
            top_left_x: center - half_top,
            top_right_x: center + half_top,
            bottom_left_x: w * rng.random_range(0.0..=0.15),
            bottom_right_x: w * rng.random_range(0.85..=1.0),
        };
        Self {
            width,
            height,
            road,
            distractors,
            seed,
        }
    }
}

/// `count` random scenes with sequentially derived seeds.
pub fn random_scenes(
    count: usize,
    width: u32,
    height: u32,
    distractors: DistractorSpec,
    seed: u64,
) -> Vec<SceneSpec> {
    (0..count)
        .map(|i| SceneSpec::random(width, height, distractors, derive_seed(seed, i as u64)))
        .collect()
}

/// Default distractor layout for a `width × height` scene.
pub fn default_distractors(width: u32, height: u32) -> DistractorSpec {
    let side = width.min(height);
    DistractorSpec {
        count: 3,
        min_size: (side / 10).max(1),
        max_size: (side / 5).max(1),
    }
}

/// SplitMix64 finalizer over `seed` and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    fn raster(&self, width: u32, height: u32) -> MaskRaster {
        MaskRaster::from_fn(width, height, |x, y| {
            x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
        })
        .expect("scene dimensions validated")
    }
}

/// Even-odd scanline fill of `vertices`, sampling pixel centers.
pub fn rasterize_polygon(vertices: &[[f64; 2]], width: u32, height: u32) -> MaskRaster {
    let mut mask = MaskRaster::empty(width, height).expect("non-zero dimensions");
    let n = vertices.len();
    let mut crossings = Vec::with_capacity(n);
    for y in 0..height {
        let yc = f64::from(y) + 0.5;
        crossings.clear();
        for i in 0..n {
            let [ax, ay] = vertices[i];
            let [bx, by] = vertices[(i + 1) % n];
            if (ay <= yc) != (by <= yc) {
                crossings.push(ax + (yc - ay) * (bx - ax) / (by - ay));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            // pixel x is inside when span[0] <= x + 0.5 < span[1]
            let start = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(f64::from(width));
            let (start, end) = (start as u32, end.max(0.0) as u32);
            for x in start..end {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub width: u32,
    pub height: u32,
    pub gt: MaskRaster,
    /// Road first, then distractors; pairwise disjoint.
    pub regions: Vec<MaskRaster>,
    pub road_polygon: Vec<[f64; 2]>,
    pub distractor_rects: Vec<Rect>,
}

pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let road_polygon = spec.road.vertices();
    let gt = rasterize_polygon(&road_polygon, w, h);
    if gt.is_empty() {
        return Err(SynthError::DegenerateRoad);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut occupied = gt.clone();
    let mut regions = vec![gt.clone()];
    let mut rects = Vec::with_capacity(spec.distractors.count);
    let d = spec.distractors;
    for index in 0..d.count {
        let mut placed = None;
        for _ in 0..1000 {
            let rw = rng.random_range(d.min_size..=d.max_size);
            let rh = rng.random_range(d.min_size..=d.max_size);
            let rect = Rect {
                x: rng.random_range(0..=w - rw),
                y: rng.random_range(0..=h - rh),
                w: rw,
                h: rh,
            };
            let free = (rect.y..rect.y + rect.h)
                .all(|y| (rect.x..rect.x + rect.w).all(|x| !occupied.get(x, y)));
            if free {
                placed = Some(rect);
                break;
            }
        }
        let rect = placed.ok_or(SynthError::DistractorPlacement { index })?;
        let raster = rect.raster(w, h);
        occupied = occupied.union(&raster).expect("same dimensions");
        regions.push(raster);
        rects.push(rect);
    }

    Ok(RenderedScene {
        width: w,
        height: h,
        gt,
        regions,
        road_polygon,
        distractor_rects: rects,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Maximum displacement of each road vertex and rectangle edge, in
    /// pixels.
    #[serde(default)]
    pub boundary_jitter: f64,
    /// Chance the road comes back as two proposals.
    #[serde(default)]
    pub split_prob: f64,
    /// Chance the road proposal is missing.
    #[serde(default)]
    pub drop_prob: f64,
    /// Chance the drivable label lands on a distractor instead of the road.
    #[serde(default)]
    pub classifier_confusion: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.boundary_jitter >= 0.0 && self.boundary_jitter.is_finite()) {
            return Err(SynthError::InvalidNoise(format!(
                "boundary_jitter {} must be a finite non-negative number",
                self.boundary_jitter
            )));
        }
        for (name, p) in [
            ("split_prob", self.split_prob),
            ("drop_prob", self.drop_prob),
            ("classifier_confusion", self.classifier_confusion),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidNoise(format!(
                    "{name} {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// A noise grid as written in files: either an explicit list of specs, or
/// per-parameter value lists expanded to their cartesian product.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum NoiseGrid {
    Cells(Vec<NoiseSpec>),
    Axes {
        #[serde(default = "zero_axis")]
        boundary_jitter: Vec<f64>,
        #[serde(default = "zero_axis")]
        split_prob: Vec<f64>,
        #[serde(default = "zero_axis")]
        drop_prob: Vec<f64>,
        #[serde(default = "zero_axis")]
        classifier_confusion: Vec<f64>,
    },
}

fn zero_axis() -> Vec<f64> {
    vec![0.0]
}

impl NoiseGrid {
    pub fn cells(&self) -> Vec<NoiseSpec> {
        match self {
            NoiseGrid::Cells(c) => c.clone(),
            NoiseGrid::Axes {
                boundary_jitter,
                split_prob,
                drop_prob,
                classifier_confusion,
            } => {
                let mut out = Vec::new();
                for &j in boundary_jitter {
                    for &s in split_prob {
                        for &d in drop_prob {
                            for &c in classifier_confusion {
                                out.push(NoiseSpec {
                                    boundary_jitter: j,
                                    split_prob: s,
                                    drop_prob: d,
                                    classifier_confusion: c,
                                });
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

const DISTRACTOR_CLASSES: [&str; 4] = ["building", "car", "sky", "vegetation"];
const ROAD_MISLABEL: &str = "sidewalk";

/// Scores for a proposal labeled with a non-drivable class: the label wins
/// with `top`, the drivable class trails with `drivable`.
fn scores_for(label: &str, top: f64, drivable: f64) -> std::collections::BTreeMap<String, f64> {
    [
        (label.to_string(), top),
        (DEFAULT_DRIVABLE_CLASS.to_string(), drivable),
    ]
    .into()
}

fn jitter_rect(r: &Rect, j: f64, u: [f64; 4], width: u32, height: u32) -> MaskRaster {
    let (w, h) = (f64::from(width), f64::from(height));
    let x0 = (f64::from(r.x) + j * u[0]).round().clamp(0.0, w);
    let x1 = (f64::from(r.x + r.w) + j * u[1]).round().clamp(0.0, w);
    let y0 = (f64::from(r.y) + j * u[2]).round().clamp(0.0, h);
    let y1 = (f64::from(r.y + r.h) + j * u[3]).round().clamp(0.0, h);
    MaskRaster::from_fn(width, height, |x, y| {
        let (xf, yf) = (f64::from(x), f64::from(y));
        xf >= x0 && xf < x1 && yf >= y0 && yf < y1
    })
    .expect("scene dimensions")
}

/// Simulates the segmenter and classifier on a rendered scene.
///
/// With all-zero noise the proposals are exactly the scene regions and the
/// road is labeled drivable with score 1.0.
pub fn perturb_and_classify(
    image: &str,
    scene: &RenderedScene,
    noise: &NoiseSpec,
    seed: u64,
) -> (ProposalsDocument, ClassificationDocument) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (scene.width, scene.height);
    let mut unit = || rng.random_range(-1.0..=1.0);

    let vertex_units: Vec<[f64; 2]> = scene
        .road_polygon
        .iter()
        .map(|_| [unit(), unit()])
        .collect();
    let rect_units: Vec<[f64; 4]> = scene
        .distractor_rects
        .iter()
        .map(|_| [unit(), unit(), unit(), unit()])
        .collect();
    let u_drop: f64 = rng.random();
    let u_split: f64 = rng.random();
    let u_confuse: f64 = rng.random();
    let split_frac = rng.random_range(0.3..=0.7);
    let confuse_pick: f64 = rng.random();
    let distractor_draws: Vec<(usize, f64, f64)> = scene
        .distractor_rects
        .iter()
        .map(|_| {
            (
                rng.random_range(0..DISTRACTOR_CLASSES.len()),
                rng.random_range(0.6..=1.0),
                rng.random_range(0.0..0.4),
            )
        })
        .collect();
    let road_draws: [(f64, f64); 2] = [
        (rng.random_range(0.6..=1.0), rng.random_range(0.0..0.4)),
        (rng.random_range(0.6..=1.0), rng.random_range(0.0..0.4)),
    ];

    let j = noise.boundary_jitter;
    let road = if j == 0.0 {
        scene.gt.clone()
    } else {
        let (wf, hf) = (f64::from(w), f64::from(h));
        let moved: Vec<[f64; 2]> = scene
            .road_polygon
            .iter()
            .zip(&vertex_units)
            .map(|([x, y], [ux, uy])| [(x + j * ux).clamp(0.0, wf), (y + j * uy).clamp(0.0, hf)])
            .collect();
        rasterize_polygon(&moved, w, h)
    };

    let n_distractors = scene.distractor_rects.len();
    let confused = n_distractors > 0 && u_confuse < noise.classifier_confusion;
    let confused_target =
        ((confuse_pick * n_distractors as f64) as usize).min(n_distractors.saturating_sub(1));

    struct Slot {
        mask: MaskRaster,
        label: String,
        scores: std::collections::BTreeMap<String, f64>,
    }
    let drivable_scores = || [(DEFAULT_DRIVABLE_CLASS.to_string(), 1.0)].into();
    let mut slots = Vec::new();

    if u_drop >= noise.drop_prob {
        let mut pieces = vec![road];
        if u_split < noise.split_prob {
            let xs: Vec<u32> = (0..w)
                .filter(|&x| (0..h).any(|y| pieces[0].get(x, y)))
                .collect();
            if let (Some(&lo), Some(&hi)) = (xs.first(), xs.last()) {
                let cut = lo + ((f64::from(hi - lo + 1) * split_frac).round() as u32);
                let left =
                    MaskRaster::from_fn(w, h, |x, y| x < cut && pieces[0].get(x, y)).expect("dims");
                let right = MaskRaster::from_fn(w, h, |x, y| x >= cut && pieces[0].get(x, y))
                    .expect("dims");
                if !left.is_empty() && !right.is_empty() {
                    let (big, small) = if left.area() >= right.area() {
                        (left, right)
                    } else {
                        (right, left)
                    };
                    pieces = vec![big, small];
                }
            }
        }
        for (i, mask) in pieces.into_iter().enumerate() {
            let (top, drivable) = road_draws[i];
            let (label, scores) = if i == 0 && !confused {
                (DEFAULT_DRIVABLE_CLASS.to_string(), drivable_scores())
            } else {
                (
                    ROAD_MISLABEL.to_string(),
                    scores_for(ROAD_MISLABEL, top, drivable),
                )
            };
            slots.push(Slot {
                mask,
                label,
                scores,
            });
        }
    }

    for (i, rect) in scene.distractor_rects.iter().enumerate() {
        let mask = if j == 0.0 {
            scene.regions[i + 1].clone()
        } else {
            jitter_rect(rect, j, rect_units[i], w, h)
        };
        let (class_idx, top, drivable) = distractor_draws[i];
        let (label, scores) = if confused && i == confused_target {
            (DEFAULT_DRIVABLE_CLASS.to_string(), drivable_scores())
        } else {
            let class = DISTRACTOR_CLASSES[class_idx];
            (class.to_string(), scores_for(class, top, drivable))
        };
        slots.push(Slot {
            mask,
            label,
            scores,
        });
    }

    slots.shuffle(&mut rng);

    let mut proposals = Vec::with_capacity(slots.len());
    let mut results = Vec::with_capacity(slots.len());
    for (i, slot) in slots.into_iter().enumerate() {
        let id = format!("p{i:02}");
        proposals.push(ProposalEntry {
            id: id.clone(),
            mask: slot.mask.to_rle(),
            raw_score: None,
        });
        results.push(ClassificationResult {
            proposal_id: id,
            class_label: slot.label,
            class_scores: slot.scores,
        });
    }

    let proposals_doc = ProposalsDocument {
        image: image.to_string(),
        image_size: ImageSize {
            width: w,
            height: h,
        },
        generator: format!(
            "synth-mock jitter={} split={} drop={} confusion={}",
            noise.boundary_jitter, noise.split_prob, noise.drop_prob, noise.classifier_confusion
        ),
        proposals,
    };
    let classification_doc = ClassificationDocument {
        image: image.to_string(),
        classifier: "synth-mock".to_string(),
        results,
    };
    (proposals_doc, classification_doc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub noise: NoiseSpec,
    /// `None` when no scene produced a pseudo-label.
    pub report: Option<MetricReport>,
    pub n_images: usize,
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub top_k: Option<NonZeroUsize>,
    pub drivable_class: String,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            top_k: NonZeroUsize::new(crate::select::DEFAULT_TOP_K),
            drivable_class: DEFAULT_DRIVABLE_CLASS.to_string(),
        }
    }
}

/// Runs proposal ranking, classification join, selection and evaluation for
/// every (noise cell, scene) pair. Scene `i` uses the same perturbation seed
/// in every cell. Failing scenes are recorded and skipped.
pub fn run_quality_sweep(
    grid: &[NoiseSpec],
    scenes: &[SceneSpec],
    seed: u64,
    options: &SweepOptions,
) -> Result<Vec<SweepCell>, SynthError> {
    for n in grid {
        n.validate()?;
    }
    let rendered: Vec<Result<RenderedScene, SynthError>> =
        scenes.par_iter().map(render_scene).collect();

    let cells = grid
        .par_iter()
        .map(|noise| {
            let per_scene: Vec<Result<ConfusionCounts, String>> = rendered
                .par_iter()
                .enumerate()
                .map(|(i, scene)| {
                    let scene = scene.as_ref().map_err(|e| e.to_string())?;
                    let image = format!("scene{i:04}");
                    let (p, c) =
                        perturb_and_classify(&image, scene, noise, derive_seed(seed, i as u64));
                    let label = pseudo_label(&p, &c, options.top_k, &options.drivable_class)
                        .map_err(|e| e.to_string())?;
                    confusion(&label.mask.decode(), &scene.gt).map_err(|e| e.to_string())
                })
                .collect();
            let mut counts = Vec::new();
            let mut failures = Vec::new();
            for (i, r) in per_scene.into_iter().enumerate() {
                match r {
                    Ok(c) => counts.push(c),
                    Err(e) => failures.push((i, e)),
                }
            }
            SweepCell {
                noise: *noise,
                report: aggregate_global(&counts).ok(),
                n_images: counts.len(),
                failures,
            }
        })
        .collect();
    Ok(cells)
}

#[derive(Serialize)]
struct SweepRow {
    boundary_jitter: f64,
    split_prob: f64,
    drop_prob: f64,
    classifier_confusion: f64,
    accuracy: Option<f64>,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
    miou: Option<f64>,
    n_images: usize,
}

/// CSV with one row per cell; metric columns are ratios and stay empty for
/// cells without any evaluated image.
pub fn write_sweep_csv<W: io::Write>(cells: &[SweepCell], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for cell in cells {
        let r = cell.report;
        w.serialize(SweepRow {
            boundary_jitter: cell.noise.boundary_jitter,
            split_prob: cell.noise.split_prob,
            drop_prob: cell.noise.drop_prob,
            classifier_confusion: cell.noise.classifier_confusion,
            accuracy: r.map(|r| r.accuracy),
            precision: r.map(|r| r.precision),
            recall: r.map(|r| r.recall),
            f1: r.map(|r| r.f1),
            miou: r.map(|r| r.iou),
            n_images: cell.n_images,
        })?;
    }
    w.flush()?;
    Ok(())
}
