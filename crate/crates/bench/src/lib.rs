//! Fixtures shared by the benchmarks.

use labelforge::synth::{
    default_distractors, perturb_and_classify, render_scene, NoiseSpec, SceneSpec,
};
use labelforge::{MaskRaster, Proposal};

/// A noisy street scene: its ground truth and the classified proposals a
/// backend would deliver for it.
pub struct Fixture {
    pub gt: MaskRaster,
    pub proposals: Vec<Proposal>,
}

pub fn scene(width: u32, height: u32, seed: u64) -> Fixture {
    let spec = SceneSpec::random(width, height, default_distractors(width, height), seed);
    let rendered = render_scene(&spec).expect("random scenes render");
    let noise = NoiseSpec {
        boundary_jitter: 3.0,
        split_prob: 0.5,
        drop_prob: 0.0,
        classifier_confusion: 0.0,
    };
    let (doc, classes) = perturb_and_classify("bench", &rendered, &noise, seed);
    let joined =
        labelforge::protocol::join_classifications(&doc, &classes).expect("mock documents agree");
    Fixture {
        gt: rendered.gt,
        proposals: joined.proposals,
    }
}

/// Alternating stripes, the worst case for run-length encoding.
pub fn stripes(width: u32, height: u32) -> MaskRaster {
    MaskRaster::from_fn(width, height, |x, _| x % 2 == 0).expect("nonzero dimensions")
}
