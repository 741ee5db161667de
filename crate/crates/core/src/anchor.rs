//! Anchor-based instruction-conditioned route generation.
//!
//! Three stages: retrieve a similar training trajectory by instruction
//! embedding (the anchor), extract and ground spatial constraints from the
//! instruction, then seed a soft-weighted chain Dijkstra with the grounded
//! destination, waypoints, and skeleton waypoints sampled from the anchor.
//! The DestSP (BM25 or embedding destination retrieval + shortest path) and
//! ConstrSP (destination + waypoints) baselines share the grounding and
//! routing machinery.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::Bm25Index;
use crate::geo::{self, CellId, CellIndex, GeoPoint, HexConfig};
use crate::provider::{cosine, Embedder, ProviderError, TextProvider};
use crate::roadnet::{chain_dijkstra, RoadGraph, SoftWeights};
use crate::traj::{dominant_cell, Trajectory};

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("empty index")]
    EmptyIndex,
    #[error("no cells available for grounding")]
    NoCells,
    #[error("constraint extraction failed: no destination in {0:?}")]
    ExtractionFailure(String),
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Roadnet(#[from] crate::roadnet::RoadnetError),
    #[error(transparent)]
    Traj(#[from] crate::traj::TrajError),
    #[error(transparent)]
    Geo(#[from] geo::GeoError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// One indexed training pair: instruction embedding plus the spatial keys
/// used for filtering and reranking.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub traj_id: u64,
    pub embedding: Vec<f64>,
    pub start_cell: CellId,
    pub endpoint: GeoPoint,
}

/// Pre-built retrieval index over (instruction, trajectory) training pairs.
#[derive(Debug, Clone, Default)]
pub struct TrajIndex {
    entries: Vec<IndexEntry>,
    dim: usize,
}

impl TrajIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }
}

/// Build the anchor index. Deterministic given the embedder; entries keep
/// the start cell and endpoint of each training trajectory.
pub fn build_index(
    train: &[(String, Trajectory)],
    embedder: &dyn Embedder,
    g: &RoadGraph,
    cfg: &HexConfig,
) -> Result<TrajIndex, AnchorError> {
    if train.is_empty() {
        return Err(AnchorError::EmptyIndex);
    }
    let mut entries = Vec::with_capacity(train.len());
    for (instruction, t) in train {
        let first = g.segment(t.rid_list[0])?;
        let last = g.segment(*t.rid_list.last().unwrap())?;
        entries.push(IndexEntry {
            traj_id: t.mm_id,
            embedding: embedder.embed(instruction),
            start_cell: dominant_cell(first, cfg)?,
            endpoint: last.end,
        });
    }
    entries.sort_by_key(|e| e.traj_id);
    Ok(TrajIndex { dim: embedder.dim(), entries })
}

/// Ranked anchor candidates; `filter_fallback` records that the start-cell
/// filter emptied the pool and was abandoned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnchors {
    pub candidates: Vec<(u64, f64)>,
    pub filter_fallback: bool,
}

/// Cosine top-`pool` retrieval with optional start-cell filtering and
/// destination-proximity reranking (stable, so cosine order breaks ties).
pub fn retrieve_anchor(
    instruction: &str,
    idx: &TrajIndex,
    start_cell: Option<CellId>,
    dest_hint: Option<GeoPoint>,
    pool: usize,
    embedder: &dyn Embedder,
) -> Result<RankedAnchors, AnchorError> {
    if idx.is_empty() {
        return Err(AnchorError::EmptyIndex);
    }
    if embedder.dim() != idx.dim {
        return Err(AnchorError::DimMismatch(embedder.dim(), idx.dim));
    }
    let pool = pool.max(1);
    let query = embedder.embed(instruction);

    let mut filter_fallback = false;
    let filtered: Vec<&IndexEntry> = match start_cell {
        Some(cell) => {
            let hits: Vec<&IndexEntry> =
                idx.entries.iter().filter(|e| e.start_cell == cell).collect();
            if hits.is_empty() {
                filter_fallback = true;
                idx.entries.iter().collect()
            } else {
                hits
            }
        }
        None => idx.entries.iter().collect(),
    };

    let mut scored: Vec<(u64, f64, GeoPoint)> = filtered
        .iter()
        .map(|e| (e.traj_id, cosine(&query, &e.embedding), e.endpoint))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(pool);

    if let Some(hint) = dest_hint {
        // Stable rerank by endpoint distance keeps cosine order for ties.
        scored.sort_by(|a, b| {
            let da = geo::haversine_km(a.2, hint).unwrap_or(f64::INFINITY);
            let db = geo::haversine_km(b.2, hint).unwrap_or(f64::INFINITY);
            da.total_cmp(&db)
        });
    }
    Ok(RankedAnchors {
        candidates: scored.into_iter().map(|(id, s, _)| (id, s)).collect(),
        filter_fallback,
    })
}

/// Structured spatial constraints extracted from an instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub destination_phrase: String,
    pub waypoints: Vec<String>,
    pub preferences: Vec<(PrefKind, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrefKind {
    Prefer,
    Avoid,
}

/// Instruction-to-constraints extraction seam.
pub trait ConstraintExtractor: Send + Sync {
    fn extract(&self, instruction: &str) -> Result<ConstraintSet, AnchorError>;
}

/// Rule-based default extractor: cue patterns over normalized text.
#[derive(Debug, Clone, Default)]
pub struct RuleExtractor;

const DEST_CUES: [&str; 1] = ["to"];
const WAYPOINT_CUES: [&str; 3] = ["via", "through", "past"];
const AVOID_CUES: [&str; 2] = ["avoid", "avoiding"];
const PREFER_CUES: [&str; 3] = ["prefer", "favor", "keep to"];
const STOP_WORDS: [&str; 8] = ["then", "and", "before", "after", "so", "but", "where", "until"];
const URGENCY_WORDS: [&str; 9] = [
    "now", "quick", "quickly", "fast", "hurry", "please", "asap", "immediately", "pronto",
];
const ARTICLES: [&str; 3] = ["the", "a", "an"];

fn sentences(text: &str) -> Vec<Vec<String>> {
    text.to_lowercase()
        .split(['.', '!', '?'])
        .map(|s| {
            s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

fn is_cue(token: &str) -> bool {
    DEST_CUES.contains(&token)
        || WAYPOINT_CUES.contains(&token)
        || AVOID_CUES.contains(&token)
        || PREFER_CUES.contains(&token)
}

/// Collect the phrase after a cue: up to five tokens, stopping at the next
/// cue or conjunction, with leading articles dropped.
fn phrase_after(tokens: &[String], start: usize) -> String {
    let mut words = Vec::new();
    for tok in tokens.iter().skip(start) {
        if is_cue(tok) || STOP_WORDS.contains(&tok.as_str()) {
            break;
        }
        if words.is_empty() && ARTICLES.contains(&tok.as_str()) {
            continue;
        }
        words.push(tok.clone());
        if words.len() == 5 {
            break;
        }
    }
    words.join(" ")
}

impl ConstraintExtractor for RuleExtractor {
    fn extract(&self, instruction: &str) -> Result<ConstraintSet, AnchorError> {
        let sents = sentences(instruction);
        let mut destination = String::new();
        let mut waypoints = Vec::new();
        let mut preferences = Vec::new();

        for tokens in &sents {
            let mut i = 0;
            while i < tokens.len() {
                let tok = tokens[i].as_str();
                if DEST_CUES.contains(&tok) && destination.is_empty() {
                    let phrase = phrase_after(tokens, i + 1);
                    if !phrase.is_empty() {
                        destination = phrase;
                    }
                } else if WAYPOINT_CUES.contains(&tok) {
                    let phrase = phrase_after(tokens, i + 1);
                    if !phrase.is_empty() && !waypoints.contains(&phrase) {
                        waypoints.push(phrase);
                    }
                } else if AVOID_CUES.contains(&tok) {
                    let phrase = phrase_after(tokens, i + 1);
                    if !phrase.is_empty() {
                        preferences.push((PrefKind::Avoid, phrase));
                    }
                } else if PREFER_CUES.contains(&tok)
                    || (tok == "keep" && tokens.get(i + 1).map(String::as_str) == Some("to"))
                {
                    let skip = if tok == "keep" { i + 2 } else { i + 1 };
                    let phrase = phrase_after(tokens, skip);
                    if !phrase.is_empty() {
                        preferences.push((PrefKind::Prefer, phrase));
                        if tok == "keep" {
                            i = skip;
                        }
                    }
                }
                i += 1;
            }
        }

        // Bare-destination fallback: a short leading noun phrase with only
        // urgency filler in the remaining sentences ("Hospital. Now.").
        if destination.is_empty() {
            let stripped: Vec<String> = sents
                .first()
                .map(|s| {
                    s.iter()
                        .filter(|t| !URGENCY_WORDS.contains(&t.as_str()) && !ARTICLES.contains(&t.as_str()))
                        .cloned()
                        .collect()
                })
                .unwrap_or_default();
            let rest_is_filler = sents[1..]
                .iter()
                .all(|s| s.iter().all(|t| URGENCY_WORDS.contains(&t.as_str())));
            if !stripped.is_empty() && stripped.len() <= 4 && rest_is_filler {
                destination = stripped.join(" ");
            }
        }

        if destination.is_empty() {
            return Err(AnchorError::ExtractionFailure(instruction.to_string()));
        }
        Ok(ConstraintSet { destination_phrase: destination, waypoints, preferences })
    }
}

/// Provider-backed extractor expecting a JSON reply; falls back to the
/// rule-based extractor on transport or schema failure.
pub struct ProviderExtractor<P: TextProvider> {
    provider: P,
    fallback: RuleExtractor,
}

impl<P: TextProvider> ProviderExtractor<P> {
    pub fn new(provider: P) -> Self {
        ProviderExtractor { provider, fallback: RuleExtractor }
    }
}

const EXTRACTOR_SYSTEM_PROMPT: &str = "\
Extract spatial constraints from the navigation instruction. Reply with
ONLY JSON: {\"destination\": \"...\", \"waypoints\": [..],
\"prefer\": [..], \"avoid\": [..]}.";

impl<P: TextProvider> ConstraintExtractor for ProviderExtractor<P> {
    fn extract(&self, instruction: &str) -> Result<ConstraintSet, AnchorError> {
        let parsed = self
            .provider
            .complete(EXTRACTOR_SYSTEM_PROMPT, instruction)
            .ok()
            .and_then(|reply| serde_json::from_str::<serde_json::Value>(reply.trim()).ok())
            .and_then(|v| {
                let dest = v["destination"].as_str()?.trim().to_string();
                if dest.is_empty() {
                    return None;
                }
                let list = |key: &str| -> Vec<String> {
                    v[key]
                        .as_array()
                        .map(|a| {
                            a.iter()
                                .filter_map(|x| x.as_str().map(|s| s.trim().to_lowercase()))
                                .filter(|s| !s.is_empty())
                                .collect()
                        })
                        .unwrap_or_default()
                };
                let mut preferences: Vec<(PrefKind, String)> =
                    list("prefer").into_iter().map(|p| (PrefKind::Prefer, p)).collect();
                preferences.extend(list("avoid").into_iter().map(|p| (PrefKind::Avoid, p)));
                Some(ConstraintSet {
                    destination_phrase: dest.to_lowercase(),
                    waypoints: list("waypoints"),
                    preferences,
                })
            });
        match parsed {
            Some(cs) => Ok(cs),
            None => self.fallback.extract(instruction),
        }
    }
}

/// Cached cell-description embeddings for phrase grounding.
#[derive(Debug, Clone, Default)]
pub struct CellEmbeddings {
    entries: Vec<(CellId, Vec<f64>)>,
}

impl CellEmbeddings {
    /// Embed every cell's searchable text: description plus gazetteer
    /// names, so exact name matches score highest.
    pub fn build(cells: &CellIndex, embedder: &dyn Embedder) -> Self {
        let entries = cells
            .iter()
            .map(|(id, meta)| {
                let mut text = meta.description.clone();
                for name in meta.road_names.iter().chain(meta.poi_names.iter()) {
                    text.push(' ');
                    text.push_str(name);
                }
                (*id, embedder.embed(&text))
            })
            .collect();
        CellEmbeddings { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Segments grouped by dominant cell, computed once per graph.
pub fn segments_by_cell(
    g: &RoadGraph,
    cfg: &HexConfig,
) -> Result<BTreeMap<CellId, Vec<u64>>, AnchorError> {
    let mut out: BTreeMap<CellId, Vec<u64>> = BTreeMap::new();
    for seg in g.segments() {
        out.entry(dominant_cell(seg, cfg)?).or_default().push(seg.rid);
    }
    Ok(out)
}

/// Ground a phrase to cells by embedding similarity; each returned cell
/// carries the rids of segments whose dominant cell it is. Ties break by
/// cell id.
pub fn ground_phrase(
    phrase: &str,
    embeds: &CellEmbeddings,
    embedder: &dyn Embedder,
    by_cell: &BTreeMap<CellId, Vec<u64>>,
    top: usize,
) -> Result<Vec<(CellId, Vec<u64>)>, AnchorError> {
    if embeds.is_empty() {
        return Err(AnchorError::NoCells);
    }
    let query = embedder.embed(phrase);
    let mut scored: Vec<(&CellId, f64)> = embeds
        .entries
        .iter()
        .map(|(id, emb)| (id, cosine(&query, emb)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(scored
        .into_iter()
        .take(top.max(1))
        .map(|(id, _)| (*id, by_cell.get(id).cloned().unwrap_or_default()))
        .collect())
}

/// Skeleton waypoints: `m` rids at evenly spaced rank positions over the
/// anchor's interior (first and last segments excluded).
pub fn sample_skeleton(anchor: &Trajectory, m: usize) -> Vec<u64> {
    if m == 0 || anchor.rid_list.len() <= 2 {
        return Vec::new();
    }
    let interior = &anchor.rid_list[1..anchor.rid_list.len() - 1];
    let len = interior.len();
    let m = m.min(len);
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let pos = (j + 1) * len / (m + 1);
        out.push(interior[pos.min(len - 1)]);
    }
    out.dedup();
    out
}

/// Routing bias configuration: soft multipliers plus how many cells a
/// preference phrase grounds to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsConfig {
    pub mu_prefer: f64,
    pub mu_avoid: f64,
    pub class_bias: BTreeMap<String, f64>,
    pub pref_top_cells: usize,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            mu_prefer: 0.7,
            mu_avoid: 1.5,
            class_bias: BTreeMap::new(),
            pref_top_cells: 5,
        }
    }
}

/// Everything phrase grounding needs, bundled once per city.
pub struct GroundingContext<'a> {
    pub g: &'a RoadGraph,
    pub cfg: &'a HexConfig,
    pub embedder: &'a dyn Embedder,
    pub embeds: &'a CellEmbeddings,
    pub by_cell: &'a BTreeMap<CellId, Vec<u64>>,
}

impl<'a> GroundingContext<'a> {
    /// The candidate destination segment of each top-ranked cell: the
    /// smallest rid in the highest-scoring cells that contain segments.
    pub fn dest_candidates(&self, phrase: &str, top: usize) -> Result<Vec<u64>, AnchorError> {
        let ranked = ground_phrase(phrase, self.embeds, self.embedder, self.by_cell, top * 2)?;
        let mut out = Vec::new();
        for (_, rids) in ranked {
            if let Some(&rid) = rids.iter().min() {
                out.push(rid);
                if out.len() == top {
                    break;
                }
            }
        }
        if out.is_empty() {
            return Err(AnchorError::NoCells);
        }
        Ok(out)
    }

    pub fn waypoint_segment(&self, phrase: &str) -> Result<Option<u64>, AnchorError> {
        let ranked = ground_phrase(phrase, self.embeds, self.embedder, self.by_cell, 3)?;
        Ok(ranked
            .into_iter()
            .find_map(|(_, rids)| rids.into_iter().min()))
    }

    fn preference_cells(&self, phrase: &str, top: usize) -> Result<BTreeSet<CellId>, AnchorError> {
        let ranked = ground_phrase(phrase, self.embeds, self.embedder, self.by_cell, top)?;
        Ok(ranked.into_iter().map(|(cell, _)| cell).collect())
    }
}

/// Route generation diagnostics carried alongside every prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RouteDiagnostics {
    pub dropped_waypoints: Vec<u64>,
    pub filter_fallback: bool,
    pub failed: bool,
    pub notes: Vec<String>,
}

/// Synthetic timestamp speed for predicted routes, km/h.
pub const SYNTH_SPEED_KMH: f64 = 30.0;

fn synth_times(g: &RoadGraph, rids: &[u64], start_time: i64) -> Vec<i64> {
    let speed_ms = SYNTH_SPEED_KMH / 3.6;
    let mut out = Vec::with_capacity(rids.len());
    let mut t = 0.0f64;
    for &rid in rids {
        out.push(start_time + t.round() as i64);
        if let Ok(seg) = g.segment(rid) {
            t += seg.length_m / speed_ms;
        }
    }
    out
}

/// Seed a soft-weighted chain Dijkstra with the grounded constraints:
/// start, grounded waypoint segments, skeleton rids, then the top
/// destination candidate. Preferences compile into soft cell weights.
/// Total unreachability degenerates to a start-only prediction with the
/// failure flag set, never an error.
#[allow(clippy::too_many_arguments)]
pub fn generate_route(
    g: &RoadGraph,
    start: u64,
    cs: &ConstraintSet,
    skeleton: &[u64],
    dest_candidates: &[u64],
    gc: &GroundingContext,
    weights_cfg: &WeightsConfig,
    pred_id: u64,
    start_time: i64,
) -> Result<(Trajectory, RouteDiagnostics), AnchorError> {
    if dest_candidates.is_empty() {
        return Err(AnchorError::NoCells);
    }
    let dest = dest_candidates[0];

    let mut soft = SoftWeights::with_hex(*gc.cfg);
    soft.mu_prefer = weights_cfg.mu_prefer;
    soft.mu_avoid = weights_cfg.mu_avoid;
    soft.class_bias = weights_cfg.class_bias.clone();
    for (kind, phrase) in &cs.preferences {
        let cells = gc.preference_cells(phrase, weights_cfg.pref_top_cells)?;
        match kind {
            PrefKind::Prefer => soft.prefer_cells.extend(cells),
            PrefKind::Avoid => soft.avoid_cells.extend(cells),
        }
    }

    let mut waypoints = vec![start];
    let mut notes = Vec::new();
    for phrase in &cs.waypoints {
        match gc.waypoint_segment(phrase)? {
            Some(rid) => waypoints.push(rid),
            None => notes.push(format!("waypoint {phrase:?} did not ground to any segment")),
        }
    }
    waypoints.extend_from_slice(skeleton);
    waypoints.push(dest);

    let chain = chain_dijkstra(g, &waypoints, &soft)?;
    let failed = chain.dropped_waypoints.contains(&dest);
    if failed {
        notes.push("destination unreachable from start".into());
    }
    let times = synth_times(g, &chain.rids, start_time);
    let pred = Trajectory::new(pred_id, chain.rids, times)?;
    Ok((
        pred,
        RouteDiagnostics {
            dropped_waypoints: chain.dropped_waypoints,
            filter_fallback: false,
            failed,
            notes,
        },
    ))
}

/// Destination retrieval mode for the DestSP baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DestMode {
    Bm25,
    Embed,
}

/// A prediction plus the per-destination-candidate routes that oracle
/// metrics select over.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPrediction {
    pub prediction: Trajectory,
    pub candidates: Vec<Trajectory>,
    pub diagnostics: RouteDiagnostics,
}

/// City-level runner bundling every immutable input the pipelines share.
pub struct AnchorRunner<'a> {
    pub g: &'a RoadGraph,
    pub cells: &'a CellIndex,
    pub cfg: &'a HexConfig,
    pub embedder: &'a dyn Embedder,
    pub weights: WeightsConfig,
    embeds: CellEmbeddings,
    by_cell: BTreeMap<CellId, Vec<u64>>,
    bm25: Bm25Index<CellId>,
    /// Destination candidate pool size (the H@5 framing).
    pub n_dest_candidates: usize,
}

impl<'a> AnchorRunner<'a> {
    pub fn new(
        g: &'a RoadGraph,
        cells: &'a CellIndex,
        cfg: &'a HexConfig,
        embedder: &'a dyn Embedder,
        weights: WeightsConfig,
    ) -> Result<Self, AnchorError> {
        let embeds = CellEmbeddings::build(cells, embedder);
        let by_cell = segments_by_cell(g, cfg)?;
        let bm25 = Bm25Index::build(cells.iter().map(|(id, meta)| {
            let mut text = meta.description.clone();
            for name in meta.road_names.iter().chain(meta.poi_names.iter()) {
                text.push(' ');
                text.push_str(name);
            }
            (*id, text)
        }));
        Ok(AnchorRunner {
            g,
            cells,
            cfg,
            embedder,
            weights,
            embeds,
            by_cell,
            bm25,
            n_dest_candidates: 5,
        })
    }

    pub fn grounding(&self) -> GroundingContext<'_> {
        GroundingContext {
            g: self.g,
            cfg: self.cfg,
            embedder: self.embedder,
            embeds: &self.embeds,
            by_cell: &self.by_cell,
        }
    }

    fn bm25_dest_candidates(&self, phrase: &str, top: usize) -> Result<Vec<u64>, AnchorError> {
        let ranked = self.bm25.rank(phrase, top * 2);
        let mut out = Vec::new();
        for (cell, _) in ranked {
            if let Some(&rid) = self.by_cell.get(&cell).and_then(|r| r.iter().min()) {
                out.push(rid);
                if out.len() == top {
                    break;
                }
            }
        }
        if out.is_empty() {
            // Lexical miss: fall back to embedding grounding so a
            // prediction always exists.
            return self.grounding().dest_candidates(phrase, top);
        }
        Ok(out)
    }

    fn route_per_candidate(
        &self,
        start: u64,
        cs: &ConstraintSet,
        skeleton: &[u64],
        dest_candidates: &[u64],
        pred_id: u64,
        start_time: i64,
    ) -> Result<AnchorPrediction, AnchorError> {
        let gc = self.grounding();
        let mut candidates = Vec::with_capacity(dest_candidates.len());
        let mut diagnostics = RouteDiagnostics::default();
        for (i, &dest) in dest_candidates.iter().enumerate() {
            let (route, diag) =
                generate_route(self.g, start, cs, skeleton, &[dest], &gc, &self.weights, pred_id, start_time)?;
            if i == 0 {
                diagnostics = diag;
            }
            candidates.push(route);
        }
        Ok(AnchorPrediction {
            prediction: candidates[0].clone(),
            candidates,
            diagnostics,
        })
    }

    /// DestSP baseline: ground the extracted destination lexically (BM25)
    /// or by embedding, then route with a plain shortest path.
    pub fn destsp(
        &self,
        instruction: &str,
        start: u64,
        mode: DestMode,
        extractor: &dyn ConstraintExtractor,
        pred_id: u64,
        start_time: i64,
    ) -> Result<AnchorPrediction, AnchorError> {
        let cs = extractor.extract(instruction)?;
        let dests = match mode {
            DestMode::Bm25 => self.bm25_dest_candidates(&cs.destination_phrase, self.n_dest_candidates)?,
            DestMode::Embed => self
                .grounding()
                .dest_candidates(&cs.destination_phrase, self.n_dest_candidates)?,
        };
        let empty = ConstraintSet {
            destination_phrase: cs.destination_phrase.clone(),
            waypoints: vec![],
            preferences: vec![],
        };
        self.route_per_candidate(start, &empty, &[], &dests, pred_id, start_time)
    }

    /// ConstrSP baseline: DestSP plus grounded waypoints through the chain
    /// search; no skeleton, no soft preferences.
    pub fn constrsp(
        &self,
        instruction: &str,
        start: u64,
        extractor: &dyn ConstraintExtractor,
        pred_id: u64,
        start_time: i64,
    ) -> Result<AnchorPrediction, AnchorError> {
        let cs = extractor.extract(instruction)?;
        let dests = self
            .grounding()
            .dest_candidates(&cs.destination_phrase, self.n_dest_candidates)?;
        let no_prefs = ConstraintSet {
            destination_phrase: cs.destination_phrase.clone(),
            waypoints: cs.waypoints.clone(),
            preferences: vec![],
        };
        self.route_per_candidate(start, &no_prefs, &[], &dests, pred_id, start_time)
    }

    /// The full three-stage pipeline: anchor retrieval, constraint
    /// extraction and grounding, soft-weighted chain routing with skeleton
    /// waypoints from the anchor.
    #[allow(clippy::too_many_arguments)]
    pub fn trajanchor(
        &self,
        instruction: &str,
        start: u64,
        idx: &TrajIndex,
        train: &BTreeMap<u64, Trajectory>,
        extractor: &dyn ConstraintExtractor,
        pool: usize,
        skeleton_m: usize,
        pred_id: u64,
        start_time: i64,
    ) -> Result<AnchorPrediction, AnchorError> {
        let cs = extractor.extract(instruction)?;
        let dests = self
            .grounding()
            .dest_candidates(&cs.destination_phrase, self.n_dest_candidates)?;
        let dest_hint = self
            .g
            .segment(dests[0])
            .ok()
            .map(|s| s.end);
        let start_cell = dominant_cell(self.g.segment(start)?, self.cfg)?;
        let ranked = retrieve_anchor(
            instruction,
            idx,
            Some(start_cell),
            dest_hint,
            pool,
            self.embedder,
        )?;
        let skeleton = ranked
            .candidates
            .first()
            .and_then(|(id, _)| train.get(id))
            .map(|anchor| sample_skeleton(anchor, skeleton_m))
            .unwrap_or_default();
        let mut pred = self.route_per_candidate(start, &cs, &skeleton, &dests, pred_id, start_time)?;
        pred.diagnostics.filter_fallback = ranked.filter_fallback;
        Ok(pred)
    }
}
