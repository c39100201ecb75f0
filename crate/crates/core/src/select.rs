//! Area-based proposal filtering and drivable-mask selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::RleMask;

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_DRIVABLE_CLASS: &str = "drivable area";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectError {
    #[error("no proposals to select from")]
    NoProposals,
}

/// A candidate mask for one image, optionally carrying classifier output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: String,
    pub mask: RleMask,
    /// Empty until the proposal has been classified.
    #[serde(default)]
    pub class_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_scores: Option<BTreeMap<String, f64>>,
    pub source_image: String,
}

impl Proposal {
    pub fn unclassified(
        id: impl Into<String>,
        mask: RleMask,
        source_image: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            mask,
            class_label: String::new(),
            class_scores: None,
            source_image: source_image.into(),
        }
    }

    pub fn area(&self) -> u64 {
        self.mask.area()
    }

    pub fn score_for(&self, class: &str) -> Option<f64> {
        self.class_scores.as_ref()?.get(class).copied()
    }
}

/// Highest-scoring class; ties go to the lexicographically smallest name.
pub fn argmax_class(scores: &BTreeMap<String, f64>) -> Option<&str> {
    // BTreeMap iterates in ascending key order, so keeping the first maximum
    // is the lexicographic tie-break.
    let mut best: Option<(&str, f64)> = None;
    for (class, &score) in scores {
        match best {
            Some((_, s)) if score.total_cmp(&s) != Ordering::Greater => {}
            _ => best = Some((class, score)),
        }
    }
    best.map(|(c, _)| c)
}

/// Keeps the `k` largest non-empty proposals, largest first; equal areas are
/// ordered by ascending id.
pub fn rank_by_area(props: &[Proposal], k: NonZeroUsize) -> Vec<Proposal> {
    let mut kept: Vec<&Proposal> = props.iter().filter(|p| p.area() > 0).collect();
    kept.sort_by(|a, b| b.area().cmp(&a.area()).then_with(|| a.id.cmp(&b.id)));
    kept.into_iter().take(k.get()).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionReason {
    LabeledDrivable,
    FallbackBestScore,
    /// Nothing labeled drivable and no proposal carries a drivable score.
    FallbackLargestArea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: String,
    pub reason: SelectionReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drivable_score: Option<f64>,
}

/// Total order: drivable score, then area, then the smaller id wins.
fn preference(drivable_class: &str) -> impl Fn(&&Proposal, &&Proposal) -> Ordering + '_ {
    move |a, b| {
        let sa = a.score_for(drivable_class);
        let sb = b.score_for(drivable_class);
        let by_score = match (sa, sb) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
            (None, None) => Ordering::Equal,
        };
        by_score
            .then_with(|| a.area().cmp(&b.area()))
            .then_with(|| b.id.cmp(&a.id))
    }
}

pub fn select_drivable(
    props: &[Proposal],
    drivable_class: &str,
) -> Result<SelectionResult, SelectError> {
    if props.is_empty() {
        return Err(SelectError::NoProposals);
    }
    let prefer = preference(drivable_class);

    let labeled = props
        .iter()
        .filter(|p| p.class_label == drivable_class)
        .max_by(&prefer);
    let (chosen, reason) = match labeled {
        Some(p) => (p, SelectionReason::LabeledDrivable),
        None => {
            let best = props.iter().max_by(&prefer).expect("non-empty");
            if best.score_for(drivable_class).is_some() {
                (best, SelectionReason::FallbackBestScore)
            } else {
                (best, SelectionReason::FallbackLargestArea)
            }
        }
    };
    Ok(SelectionResult {
        chosen: chosen.id.clone(),
        reason,
        drivable_score: chosen.score_for(drivable_class),
    })
}
