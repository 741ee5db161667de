//! Retrieval-augmented trajectory captioning: retrieve similar training
//! trajectories, use their gold captions as few-shot references, and prompt
//! a generator with the test trajectory's structural features and visited
//! area descriptions. The struct/sem ablation modes drop retrieval and
//! semantics respectively.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{sanitize_punctuation, PromptBundle};
use crate::geo::{CellIndex, HexConfig};
use crate::provider::{cosine, Embedder, ProviderError, TextProvider};
use crate::roadnet::RoadGraph;
use crate::traj::{dominant_cell, structural_features, Trajectory};

#[derive(Debug, Error)]
pub enum RapError {
    #[error("empty caption index")]
    EmptyIndex,
    #[error("rap mode requires retrieved examples")]
    MissingExamples,
    #[error("provider produced an empty caption")]
    EmptyCaption,
    #[error(transparent)]
    Traj(#[from] crate::traj::TrajError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Captioning mode: structural features only, plus semantics, or the full
/// retrieval-augmented pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaptionMode {
    Struct,
    Sem,
    Rap,
}

impl CaptionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaptionMode::Struct => "struct",
            CaptionMode::Sem => "sem",
            CaptionMode::Rap => "rap",
        }
    }
}

/// Pre-built index over (trajectory text representation, gold caption).
#[derive(Debug, Clone, Default)]
pub struct CaptionIndex {
    entries: Vec<CaptionEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEntry {
    pub traj_id: u64,
    pub embedding: Vec<f64>,
    pub caption: String,
}

impl CaptionIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CaptionEntry] {
        &self.entries
    }
}

/// The text representation embedded for retrieval: structural features
/// (with road names) plus the visited cells' area descriptions, in visit
/// order.
pub fn trajectory_text(
    t: &Trajectory,
    g: &RoadGraph,
    cells: &CellIndex,
    cfg: &HexConfig,
) -> Result<String, RapError> {
    let features = structural_features(t, g)?;
    let mut text = features.to_text();
    let mut seen = BTreeSet::new();
    let segs = t.segments(g)?;
    text.push_str("visited areas (in order):\n");
    for seg in segs {
        let cell = dominant_cell(seg, cfg)?;
        if seen.insert(cell) {
            if let Some(meta) = cells.get(&cell) {
                text.push_str("  - ");
                text.push_str(&meta.description);
                text.push('\n');
            }
        }
    }
    Ok(text)
}

/// Build the caption index from training (trajectory, caption) pairs.
pub fn build_caption_index(
    train: &[(Trajectory, String)],
    embedder: &dyn Embedder,
    g: &RoadGraph,
    cells: &CellIndex,
    cfg: &HexConfig,
) -> Result<CaptionIndex, RapError> {
    if train.is_empty() {
        return Err(RapError::EmptyIndex);
    }
    let mut entries = Vec::with_capacity(train.len());
    for (t, caption) in train {
        let text = trajectory_text(t, g, cells, cfg)?;
        entries.push(CaptionEntry {
            traj_id: t.mm_id,
            embedding: embedder.embed(&text),
            caption: caption.clone(),
        });
    }
    entries.sort_by_key(|e| e.traj_id);
    Ok(CaptionIndex { entries })
}

/// Top-K most similar training captions by cosine over the text
/// representation, ties toward smaller ids; the query trajectory itself is
/// excluded when it appears in the index.
pub fn retrieve_examples(
    t: &Trajectory,
    idx: &CaptionIndex,
    k: usize,
    embedder: &dyn Embedder,
    g: &RoadGraph,
    cells: &CellIndex,
    cfg: &HexConfig,
) -> Result<Vec<(String, f64)>, RapError> {
    if idx.is_empty() {
        return Err(RapError::EmptyIndex);
    }
    let query = embedder.embed(&trajectory_text(t, g, cells, cfg)?);
    let mut scored: Vec<(&CaptionEntry, f64)> = idx
        .entries
        .iter()
        .filter(|e| e.traj_id != t.mm_id)
        .map(|e| (e, cosine(&query, &e.embedding)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.traj_id.cmp(&b.0.traj_id)));
    Ok(scored
        .into_iter()
        .take(k.max(1))
        .map(|(e, s)| (e.caption.clone(), s))
        .collect())
}

/// Default few-shot example count.
pub const DEFAULT_FEW_SHOT_K: usize = 3;

const CAPTION_DIRECTIVE: &str = "Write one factual third-person caption in present tense \
covering origin, key route behaviors and semantic zones traversed, and destination. \
Do not infer driver intent.";

/// Assemble the captioning prompt for a mode. Struct mode carries only the
/// geometry block; sem adds visited-area descriptions; rap adds the
/// retrieved example captions.
pub fn assemble_caption_prompt(
    t: &Trajectory,
    examples: &[(String, f64)],
    mode: CaptionMode,
    g: &RoadGraph,
    cells: &CellIndex,
    cfg: &HexConfig,
) -> Result<PromptBundle, RapError> {
    if mode == CaptionMode::Rap && examples.is_empty() {
        return Err(RapError::MissingExamples);
    }
    let features = structural_features(t, g)?;
    let mut user = String::new();
    user.push_str(CAPTION_DIRECTIVE);
    user.push_str("\n\n");
    if mode == CaptionMode::Rap {
        user.push_str("REFERENCE CAPTIONS (style and granularity only):\n");
        for (caption, _) in examples {
            user.push_str("  * ");
            user.push_str(caption);
            user.push('\n');
        }
        user.push('\n');
    }
    user.push_str("TRAJECTORY FEATURES:\n");
    match mode {
        CaptionMode::Struct => user.push_str(&features.geometry_text()),
        CaptionMode::Sem | CaptionMode::Rap => {
            user.push_str(&trajectory_text(t, g, cells, cfg)?);
        }
    }
    Ok(PromptBundle {
        system: "You caption map-matched driving trajectories factually.".into(),
        user,
    })
}

/// Generate a caption through a provider; output is punctuation-sanitized
/// before returning.
pub fn caption(gen: &dyn TextProvider, prompt: &PromptBundle) -> Result<String, RapError> {
    let raw = gen.complete(&prompt.system, &prompt.user)?;
    let text = sanitize_punctuation(raw.trim());
    if text.is_empty() {
        return Err(RapError::EmptyCaption);
    }
    Ok(text)
}
