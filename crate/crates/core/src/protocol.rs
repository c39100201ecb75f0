//! File-based exchange format with external proposal generators and
//! classifiers.
//!
//! One proposals document and one classification document per image:
//!
//! ```text
//! <root>/proposals/<image-id>.json
//! <root>/classifications/<image-id>.json
//! ```
//!
//! Documents are validated on load. Writers go through an atomic rename and
//! emit canonical JSON, so identical documents are byte-identical.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::write_json_atomic;
use crate::mask::{MaskError, RleJson, RleMask};
use crate::select::{argmax_class, Proposal};
use crate::synth::{self, NoiseSpec, SceneSpec, SynthError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("proposal {proposal_id}: dimension mismatch: {detail}")]
    DimensionMismatch { proposal_id: String, detail: String },
    #[error("proposal {proposal_id}: invalid mask: {source}")]
    InvalidMask {
        proposal_id: String,
        #[source]
        source: MaskError,
    },
    #[error("duplicate proposal id {0:?}")]
    DuplicateId(String),
    #[error("invalid image id {0:?}")]
    InvalidImageId(String),
    #[error("proposal {proposal_id}: score {score} for class {class:?} outside [0, 1]")]
    ScoreOutOfRange {
        proposal_id: String,
        class: String,
        score: f64,
    },
    #[error("proposal {proposal_id}: label {label:?} is not the top-scoring class {argmax:?}")]
    LabelNotArgmax {
        proposal_id: String,
        label: String,
        argmax: String,
    },
    #[error("classification refers to unknown proposal {0:?}")]
    UnknownProposal(String),
    #[error(
        "image id mismatch: proposals for {proposals:?}, classifications for {classifications:?}"
    )]
    ImageIdMismatch {
        proposals: String,
        classifications: String,
    },
}

impl ProtocolError {
    /// Stable machine-readable kind, used on error streams.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Parse(_) => "parse-error",
            Self::DimensionMismatch { .. } => "dimension-mismatch",
            Self::InvalidMask { .. } => "invalid-mask",
            Self::DuplicateId(_) => "duplicate-id",
            Self::InvalidImageId(_) => "invalid-image-id",
            Self::ScoreOutOfRange { .. } => "score-out-of-range",
            Self::LabelNotArgmax { .. } => "label-not-argmax",
            Self::UnknownProposal(_) => "unknown-proposal",
            Self::ImageIdMismatch { .. } => "image-id-mismatch",
        }
    }
}

/// Image ids double as file stems, so they must be non-empty and free of
/// path separators.
pub fn is_valid_image_id(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\', '\0'])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalEntry {
    pub id: String,
    pub mask: RleMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalsDocument {
    pub image: String,
    pub image_size: ImageSize,
    pub generator: String,
    pub proposals: Vec<ProposalEntry>,
}

#[derive(Deserialize)]
struct RawProposalEntry {
    id: String,
    mask: RleJson,
    #[serde(default)]
    raw_score: Option<f64>,
}

#[derive(Deserialize)]
struct RawProposalsDocument {
    image: String,
    image_size: ImageSize,
    generator: String,
    proposals: Vec<RawProposalEntry>,
}

impl ProposalsDocument {
    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        let raw: RawProposalsDocument =
            serde_json::from_str(text).map_err(|e| ProtocolError::Parse(e.to_string()))?;
        let size = raw.image_size;
        let mut proposals = Vec::with_capacity(raw.proposals.len());
        for p in raw.proposals {
            let mask = RleMask::try_from(p.mask).map_err(|e| match e {
                MaskError::RunSumMismatch { .. } => ProtocolError::DimensionMismatch {
                    proposal_id: p.id.clone(),
                    detail: e.to_string(),
                },
                other => ProtocolError::InvalidMask {
                    proposal_id: p.id.clone(),
                    source: other,
                },
            })?;
            proposals.push(ProposalEntry {
                id: p.id,
                mask,
                raw_score: p.raw_score,
            });
        }
        let doc = Self {
            image: raw.image,
            image_size: size,
            generator: raw.generator,
            proposals,
        };
        doc.validate()?;
        Ok(doc)
    }

    /// Checks the cross-field invariants: masks match the image size and ids
    /// are unique.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !is_valid_image_id(&self.image) {
            return Err(ProtocolError::InvalidImageId(self.image.clone()));
        }
        let mut seen = HashSet::new();
        for p in &self.proposals {
            let (w, h) = p.mask.dims();
            if (w, h) != (self.image_size.width, self.image_size.height) {
                return Err(ProtocolError::DimensionMismatch {
                    proposal_id: p.id.clone(),
                    detail: format!(
                        "mask is {w}x{h}, image is {}x{}",
                        self.image_size.width, self.image_size.height
                    ),
                });
            }
            if !seen.insert(p.id.as_str()) {
                return Err(ProtocolError::DuplicateId(p.id.clone()));
            }
        }
        Ok(())
    }

    /// The proposals as unclassified [`Proposal`]s, in document order.
    pub fn to_proposals(&self) -> Vec<Proposal> {
        self.proposals
            .iter()
            .map(|p| Proposal::unclassified(p.id.clone(), p.mask.clone(), self.image.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub proposal_id: String,
    pub class_label: String,
    /// May be empty when the classifier reports labels only.
    #[serde(default)]
    pub class_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationDocument {
    pub image: String,
    pub classifier: String,
    pub results: Vec<ClassificationResult>,
}

impl ClassificationDocument {
    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| ProtocolError::Parse(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    /// Self-contained checks; references to proposals are checked when the
    /// document is joined with its proposals.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !is_valid_image_id(&self.image) {
            return Err(ProtocolError::InvalidImageId(self.image.clone()));
        }
        let mut seen = HashSet::new();
        for r in &self.results {
            if !seen.insert(r.proposal_id.as_str()) {
                return Err(ProtocolError::DuplicateId(r.proposal_id.clone()));
            }
            for (class, &score) in &r.class_scores {
                if !(0.0..=1.0).contains(&score) {
                    return Err(ProtocolError::ScoreOutOfRange {
                        proposal_id: r.proposal_id.clone(),
                        class: class.clone(),
                        score,
                    });
                }
            }
            if let Some(top) = argmax_class(&r.class_scores) {
                if top != r.class_label {
                    return Err(ProtocolError::LabelNotArgmax {
                        proposal_id: r.proposal_id.clone(),
                        label: r.class_label.clone(),
                        argmax: top.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String, ProtocolError> {
    fs::read_to_string(path).map_err(|source| ProtocolError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_proposals(path: &Path) -> Result<ProposalsDocument, ProtocolError> {
    ProposalsDocument::from_json(&read_text(path)?)
}

pub fn load_classifications(path: &Path) -> Result<ClassificationDocument, ProtocolError> {
    ClassificationDocument::from_json(&read_text(path)?)
}

pub fn save_proposals(path: &Path, doc: &ProposalsDocument) -> Result<(), ProtocolError> {
    doc.validate()?;
    write_json_atomic(path, doc).map_err(|source| ProtocolError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_classifications(
    path: &Path,
    doc: &ClassificationDocument,
) -> Result<(), ProtocolError> {
    doc.validate()?;
    write_json_atomic(path, doc).map_err(|source| ProtocolError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A proposal that had no entry in the classification document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MissingClassification {
    pub image: String,
    pub proposal_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinOutcome {
    pub proposals: Vec<Proposal>,
    pub missing: Vec<MissingClassification>,
}

pub fn join_classifications(
    proposals: &ProposalsDocument,
    classifications: &ClassificationDocument,
) -> Result<JoinOutcome, ProtocolError> {
    attach_classifications(proposals, proposals.to_proposals(), classifications)
}

/// Like [`join_classifications`] but classifies only `subset`, typically the
/// output of area ranking. References are still checked against the full
/// proposals document.
pub fn attach_classifications(
    proposals: &ProposalsDocument,
    subset: Vec<Proposal>,
    classifications: &ClassificationDocument,
) -> Result<JoinOutcome, ProtocolError> {
    if proposals.image != classifications.image {
        return Err(ProtocolError::ImageIdMismatch {
            proposals: proposals.image.clone(),
            classifications: classifications.image.clone(),
        });
    }
    let known: HashSet<&str> = proposals.proposals.iter().map(|p| p.id.as_str()).collect();
    let mut by_id: HashMap<&str, &ClassificationResult> = HashMap::new();
    for r in &classifications.results {
        if !known.contains(r.proposal_id.as_str()) {
            return Err(ProtocolError::UnknownProposal(r.proposal_id.clone()));
        }
        by_id.insert(r.proposal_id.as_str(), r);
    }

    let mut out = JoinOutcome {
        proposals: Vec::with_capacity(subset.len()),
        missing: Vec::new(),
    };
    for mut p in subset {
        match by_id.get(p.id.as_str()) {
            Some(r) => {
                p.class_label = r.class_label.clone();
                p.class_scores = (!r.class_scores.is_empty()).then(|| r.class_scores.clone());
                out.proposals.push(p);
            }
            None => out.missing.push(MissingClassification {
                image: proposals.image.clone(),
                proposal_id: p.id,
            }),
        }
    }
    Ok(out)
}

/// Directory layout shared by producers and consumers of backend documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendLayout {
    pub proposals_dir: PathBuf,
    pub classifications_dir: PathBuf,
}

impl BackendLayout {
    pub fn under(root: &Path) -> Self {
        Self {
            proposals_dir: root.join("proposals"),
            classifications_dir: root.join("classifications"),
        }
    }

    pub fn proposals_path(&self, image: &str) -> PathBuf {
        self.proposals_dir.join(format!("{image}.json"))
    }

    pub fn classifications_path(&self, image: &str) -> PathBuf {
        self.classifications_dir.join(format!("{image}.json"))
    }
}

/// Deterministic stand-in for the segmenter and classifier: renders a
/// synthetic scene and perturbs it according to `noise`.
pub fn mock_backend(
    image: &str,
    scene: &SceneSpec,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(ProposalsDocument, ClassificationDocument), SynthError> {
    let rendered = synth::render_scene(scene)?;
    Ok(synth::perturb_and_classify(image, &rendered, noise, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskRaster;

    fn doc_json(runs_b: &str, id_b: &str) -> String {
        format!(
            r#"{{"image":"img0","image_size":{{"width":2,"height":2}},"generator":"test",
            "proposals":[{{"id":"a","mask":{{"w":2,"h":2,"runs":[0,4]}},"raw_score":0.9}},
                         {{"id":"{id_b}","mask":{{"w":2,"h":2,"runs":{runs_b}}}}}]}}"#
        )
    }

    type Row<'a> = (&'a str, &'a str, &'a [(&'a str, f64)]);

    fn classification(results: &[Row]) -> ClassificationDocument {
        ClassificationDocument {
            image: "img0".into(),
            classifier: "test".into(),
            results: results
                .iter()
                .map(|(id, label, scores)| ClassificationResult {
                    proposal_id: id.to_string(),
                    class_label: label.to_string(),
                    class_scores: scores.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn load_valid_document() {
        let doc = ProposalsDocument::from_json(&doc_json("[1,3]", "b")).unwrap();
        assert_eq!(doc.proposals.len(), 2);
        assert_eq!(doc.proposals[0].raw_score, Some(0.9));
        assert_eq!(doc.proposals[1].mask.area(), 3);
    }

    #[test]
    fn load_rejects_run_sum() {
        let err = ProposalsDocument::from_json(&doc_json("[1,2]", "b")).unwrap_err();
        assert!(
            matches!(err, ProtocolError::DimensionMismatch { .. }),
            "{err}"
        );
    }

    #[test]
    fn load_rejects_wrong_mask_size() {
        let text = doc_json("[1,3]", "b").replace(r#""width":2"#, r#""width":4"#);
        let err = ProposalsDocument::from_json(&text).unwrap_err();
        assert!(
            matches!(err, ProtocolError::DimensionMismatch { .. }),
            "{err}"
        );
    }

    #[test]
    fn load_rejects_duplicate_id() {
        let err = ProposalsDocument::from_json(&doc_json("[1,3]", "a")).unwrap_err();
        assert!(
            matches!(err, ProtocolError::DuplicateId(ref id) if id == "a"),
            "{err}"
        );
    }

    #[test]
    fn load_rejects_garbage() {
        assert!(matches!(
            ProposalsDocument::from_json("{not json"),
            Err(ProtocolError::Parse(_))
        ));
        assert!(matches!(
            ProposalsDocument::from_json(&doc_json("[1,0,3]", "b")),
            Err(ProtocolError::InvalidMask { .. })
        ));
    }

    #[test]
    fn classification_validation() {
        let ok = classification(&[("a", "road", &[("road", 0.8), ("sky", 0.2)])]);
        assert!(ok.validate().is_ok());
        let bad = classification(&[("a", "road", &[("road", 1.2)])]);
        assert!(matches!(
            bad.validate(),
            Err(ProtocolError::ScoreOutOfRange { .. })
        ));
        let bad = classification(&[("a", "sky", &[("road", 0.8), ("sky", 0.2)])]);
        assert!(matches!(
            bad.validate(),
            Err(ProtocolError::LabelNotArgmax { .. })
        ));
        let bad = classification(&[("a", "x", &[]), ("a", "y", &[])]);
        assert!(matches!(bad.validate(), Err(ProtocolError::DuplicateId(_))));
    }

    #[test]
    fn join_matching() {
        let doc = ProposalsDocument::from_json(&doc_json("[1,3]", "b")).unwrap();
        let c = classification(&[
            ("a", "sky", &[("sky", 0.7), ("drivable area", 0.3)]),
            ("b", "drivable area", &[("drivable area", 0.9)]),
        ]);
        let out = join_classifications(&doc, &c).unwrap();
        assert_eq!(out.proposals.len(), 2);
        assert!(out.missing.is_empty());
        assert_eq!(out.proposals[1].class_label, "drivable area");
        assert_eq!(out.proposals[0].score_for("drivable area"), Some(0.3));
    }

    #[test]
    fn join_reports_missing() {
        let doc = ProposalsDocument::from_json(&doc_json("[1,3]", "b")).unwrap();
        let c = classification(&[("a", "sky", &[])]);
        let out = join_classifications(&doc, &c).unwrap();
        assert_eq!(out.proposals.len(), 1);
        assert_eq!(out.proposals[0].class_scores, None);
        assert_eq!(
            out.missing,
            vec![MissingClassification {
                image: "img0".into(),
                proposal_id: "b".into()
            }]
        );
    }

    #[test]
    fn join_rejects_mismatch() {
        let doc = ProposalsDocument::from_json(&doc_json("[1,3]", "b")).unwrap();
        let mut c = classification(&[("a", "sky", &[])]);
        c.image = "other".into();
        assert!(matches!(
            join_classifications(&doc, &c),
            Err(ProtocolError::ImageIdMismatch { .. })
        ));
        let c = classification(&[("zzz", "sky", &[])]);
        assert!(matches!(
            join_classifications(&doc, &c),
            Err(ProtocolError::UnknownProposal(_))
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = BackendLayout::under(dir.path());
        let mask = MaskRaster::from_fn(3, 2, |x, _| x > 0).unwrap().to_rle();
        let doc = ProposalsDocument {
            image: "frame_1".into(),
            image_size: ImageSize {
                width: 3,
                height: 2,
            },
            generator: "unit".into(),
            proposals: vec![ProposalEntry {
                id: "p0".into(),
                mask,
                raw_score: None,
            }],
        };
        save_proposals(&layout.proposals_path("frame_1"), &doc).unwrap();
        assert_eq!(
            load_proposals(&layout.proposals_path("frame_1")).unwrap(),
            doc
        );

        let c = ClassificationDocument {
            image: "frame_1".into(),
            classifier: "unit".into(),
            results: vec![],
        };
        save_classifications(&layout.classifications_path("frame_1"), &c).unwrap();
        assert_eq!(
            load_classifications(&layout.classifications_path("frame_1")).unwrap(),
            c
        );
    }

    #[test]
    fn image_ids() {
        assert!(is_valid_image_id("um_000001"));
        assert!(!is_valid_image_id(""));
        assert!(!is_valid_image_id("a/b"));
        assert!(!is_valid_image_id(".."));
    }
}
