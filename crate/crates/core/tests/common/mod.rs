//! Test-only reference implementations. Nothing here calls the crate's IoU,
//! confusion or selection code; masks are plain pixel sets.

#![allow(dead_code)]

use std::collections::HashSet;

use labelforge::scef::{LabeledPair, Provenance, ScefRecord};
use labelforge::{MaskRaster, Proposal};

pub type PixelSet = HashSet<(u32, u32)>;

pub fn pixel_set(width: u32, bits: &[bool]) -> PixelSet {
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| (i as u32 % width, i as u32 / width))
        .collect()
}

/// IoU as an exact fraction `(intersection, union)`.
pub fn iou_fraction(a: &PixelSet, b: &PixelSet) -> (u64, u64) {
    (a.intersection(b).count() as u64, a.union(b).count() as u64)
}

pub fn fraction_to_f64((num, den): (u64, u64)) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// One oracle input: raw pixel grids plus zero-shot labels.
#[derive(Debug, Clone)]
pub struct Instance {
    pub width: u32,
    pub height: u32,
    pub gt: Vec<bool>,
    pub proposals: Vec<(String, Vec<bool>, String)>,
}

impl Instance {
    pub fn gt_raster(&self) -> MaskRaster {
        MaskRaster::new(self.width, self.height, self.gt.clone()).unwrap()
    }

    pub fn to_proposals(&self) -> Vec<Proposal> {
        self.proposals
            .iter()
            .map(|(id, bits, label)| {
                let m = MaskRaster::new(self.width, self.height, bits.clone()).unwrap();
                let mut p = Proposal::unclassified(id.clone(), m.to_rle(), "img");
                p.class_label = label.clone();
                p
            })
            .collect()
    }
}

/// Reference pair generation: enumerate pixel sets, order candidates by
/// (IoU desc, area desc, id asc) with exact fraction comparison, replace the
/// first.
pub fn scef_oracle(inst: &Instance, drivable_class: &str) -> ScefRecord {
    let gt = pixel_set(inst.width, &inst.gt);
    let sets: Vec<PixelSet> = inst
        .proposals
        .iter()
        .map(|(_, b, _)| pixel_set(inst.width, b))
        .collect();
    let fractions: Vec<(u64, u64)> = sets.iter().map(|s| iou_fraction(s, &gt)).collect();

    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by(|&i, &j| {
        let (ni, di) = fractions[i];
        let (nj, dj) = fractions[j];
        // empty unions count as 1/1
        let (ni, di) = if di == 0 { (1, 1) } else { (ni, di) };
        let (nj, dj) = if dj == 0 { (1, 1) } else { (nj, dj) };
        (nj * di)
            .cmp(&(ni * dj))
            .then(sets[j].len().cmp(&sets[i].len()))
            .then(inst.proposals[i].0.cmp(&inst.proposals[j].0))
    });
    let best = order[0];

    let gt_raster = inst.gt_raster();
    let pairs = inst
        .proposals
        .iter()
        .enumerate()
        .map(|(i, (_, bits, label))| {
            let score = fraction_to_f64(fractions[i]);
            if i == best {
                LabeledPair {
                    mask: gt_raster.to_rle(),
                    category: drivable_class.to_string(),
                    provenance: Provenance::GtReplacement,
                    iou_vs_gt: score,
                }
            } else {
                LabeledPair {
                    mask: MaskRaster::new(inst.width, inst.height, bits.clone())
                        .unwrap()
                        .to_rle(),
                    category: label.clone(),
                    provenance: Provenance::ClipZeroShot,
                    iou_vs_gt: score,
                }
            }
        })
        .collect();
    ScefRecord {
        image: "img".into(),
        argmax_index: best,
        scores: fractions.into_iter().map(fraction_to_f64).collect(),
        pairs,
    }
}

/// Small deterministic generator (xorshift64*) so oracles do not share the
/// crate's RNG plumbing.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next(&mut self) -> u64 {
        let mut x = self.0.max(1);
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    pub fn chance(&mut self, num: u64, den: u64) -> bool {
        self.below(den) < num
    }
}

const LABELS: [&str; 4] = ["sky", "car", "building", "drivable area"];

/// Random instance on a grid of at most 16×16 with 1–10 proposals. Masks
/// are random rectangles, sometimes with speckle, so IoU ties and empty
/// proposals both occur.
pub fn random_instance(rng: &mut XorShift) -> Instance {
    let width = 1 + rng.below(16) as u32;
    let height = 1 + rng.below(16) as u32;
    let n = (width * height) as usize;
    let rect_mask = |rng: &mut XorShift| -> Vec<bool> {
        let x0 = rng.below(width as u64) as u32;
        let y0 = rng.below(height as u64) as u32;
        let x1 = x0 + rng.below((width - x0) as u64 + 1) as u32;
        let y1 = y0 + rng.below((height - y0) as u64 + 1) as u32;
        let speckle = rng.chance(1, 4);
        (0..n)
            .map(|i| {
                let (x, y) = (i as u32 % width, i as u32 / width);
                let inside = x >= x0 && x < x1 && y >= y0 && y < y1;
                if speckle && rng.chance(1, 8) {
                    !inside
                } else {
                    inside
                }
            })
            .collect()
    };
    let gt = rect_mask(rng);
    let count = 1 + rng.below(10) as usize;
    let mut ids: Vec<String> = (0..count).map(|i| format!("m{i}")).collect();
    // shuffle ids so tie-breaks do not follow input order
    for i in (1..ids.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        ids.swap(i, j);
    }
    let proposals = ids
        .into_iter()
        .map(|id| {
            let bits = if rng.chance(1, 6) {
                gt.clone()
            } else {
                rect_mask(rng)
            };
            let label = LABELS[rng.below(LABELS.len() as u64) as usize].to_string();
            (id, bits, label)
        })
        .collect();
    Instance {
        width,
        height,
        gt,
        proposals,
    }
}
