//! Prompt assembly, pluggable generation and judging, the five quality
//! control stages, rubric scoring, plus-minus-one agreement, and top-N
//! selection.
//!
//! Generation is provider-mediated: the deterministic [`TemplateGenerator`]
//! fills templates straight from the compressed-trajectory JSON embedded in
//! the prompt, and any remote LLM plugs in over the same
//! [`TextProvider`](crate::provider::TextProvider) seam. QC is gazetteer
//! driven: mention extraction is exact normalized matching against the
//! vocabulary the generator was allowed to use, so every check stays
//! deterministic and testable.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{normalize_name, CellIndex};
use crate::intent::{IntentProfile, PersonaStyle, Style};
use crate::metrics::text::{contains_phrase, tokenize};
use crate::provider::{ProviderError, TextProvider};
use crate::traj::PhaseSeq;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("retrieval assignment leaves dimension {0} uncovered")]
    UncoveredDimension(u8),
    #[error("retrieval assignment names invalid dimension {0}")]
    InvalidDimension(u8),
    #[error("provider output violates the record schema: {0}")]
    SchemaViolation(String),
    #[error("field {0} is empty")]
    EmptyField(&'static str),
    #[error("score cards misaligned: {0}")]
    MisalignedIds(String),
    #[error("cannot select top {n} from {len} scored records")]
    InvalidTopN { n: usize, len: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// System + user prompt pair sent to a provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
}

/// The fixed system prompt for multi-task annotation generation.
pub const SYSTEM_PROMPT: &str = "\
## 1. Core Directive
Reverse-engineer the traveler's intent from a real driving trajectory
(compressed JSON with semantics, topology, headings).

* Data Grounding [ZERO TOLERANCE]: ONLY use features present in the data.
  Do not invent traffic lights, bridges, tunnels, or unseen landmarks.
* Anti-Tour-Guide: focus on the end goal plus 1-2 constraints and
  selectively ignore intermediate phases.
* Phase Alignment [ZERO TOLERANCE]: origin wording from phase 0 only,
  destination wording from the last phase only, waypoints from the middle.
* Parrot Ban [ZERO TOLERANCE]: NEVER copy GIS/GNN labels.
  WATERFRONT -> \"by the river\"; GREEN/PARK -> \"the park\";
  URBAN/INLAND -> \"downtown\"; COASTAL/BEACH -> \"the beach\".
* No em-dashes or semicolons in any output.

## 2. Intent Taxonomy (4 dimensions, 10 scenarios)
  Dim 1 Destination: 1.1 Exact Anchor, 1.2 Fuzzy Semantic
  Dim 2 Waypoint: 2.1 Strict Sequential, 2.2 Flexible, 2.3 Zone
  Dim 3 Route Pref: 3.1 Semantic, 3.2 Topological, 3.3 Orthogonal
  Dim 4 Temporal: 4.1 Time-of-Day, 4.2 Pace/Duration

## 3. Three Instruction Styles
  Literal: faithful, explicit. Concise: ultra-short.
  Chatty: conversational. Each with a DIFFERENT opener.

## 4. Retrieval Queries & Caption
* 3 retrieval queries: search-style, NOT navigation. Together they cover
  all 4 dimensions.
* 1 caption: third-person, factual, present tense.

## 5. Output Format (JSON, no chain-of-thought)
{ \"_intent_planning\": \"...\", \"_retrieval_planning\": \"...\",
  \"instruction_literal\": \"...\", \"instruction_concise\": \"...\",
  \"instruction_chatty\": \"...\", \"retrieval_query_1\": \"...\",
  \"retrieval_query_2\": \"...\", \"retrieval_query_3\": \"...\",
  \"trajectory_caption\": \"...\" }
";

/// Which intent dimensions each of the three retrieval queries covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionAssignment(pub [Vec<u8>; 3]);

impl DimensionAssignment {
    pub fn validate(&self) -> Result<(), AnnotateError> {
        let mut covered = BTreeSet::new();
        for dims in &self.0 {
            for &d in dims {
                if !(1..=4).contains(&d) {
                    return Err(AnnotateError::InvalidDimension(d));
                }
                covered.insert(d);
            }
        }
        for d in 1..=4u8 {
            if !covered.contains(&d) {
                return Err(AnnotateError::UncoveredDimension(d));
            }
        }
        Ok(())
    }

    fn line(&self, i: usize) -> String {
        self.0[i]
            .iter()
            .map(|d| format!("Dim {d}"))
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

/// Deterministic per-trajectory assignment: a seeded shuffle of the four
/// dimensions, two to the first query and one to each of the others.
pub fn default_assignment(seed: u64, traj_id: u64) -> DimensionAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA551_6000_0000_0003);
    rng.set_stream(traj_id);
    let mut dims = [1u8, 2, 3, 4];
    for i in 0..4 {
        let j = rng.gen_range(i..4);
        dims.swap(i, j);
    }
    let mut first = vec![dims[0], dims[1]];
    first.sort_unstable();
    DimensionAssignment([first, vec![dims[2]], vec![dims[3]]])
}

/// Assemble the per-trajectory user prompt. Byte-deterministic given
/// identical inputs.
pub fn build_prompt(
    ps: &PhaseSeq,
    profile: &IntentProfile,
    style: &PersonaStyle,
    assignment: &DimensionAssignment,
) -> Result<PromptBundle, AnnotateError> {
    assignment.validate()?;
    let mut user = String::new();
    user.push_str(
        "For this trajectory, generate three instructions (literal, concise, chatty) reflecting these intent type(s):\n\n",
    );
    user.push_str(&format!("  {}\n\n", profile.scenario_line()));
    user.push_str("INTENT PLANNING (required): output \"_intent_planning\" first.\n\n");
    user.push_str("RETRIEVAL ASSIGNMENT (3 queries cover ALL 4 DIMENSIONS):\n");
    for i in 0..3 {
        user.push_str(&format!("  - retrieval_query_{} -> {}\n", i + 1, assignment.line(i)));
    }
    user.push_str(&format!("\nSPEAKER PERSONA: {}\n\n", style.persona));
    user.push_str("STYLE GUIDANCE:\n");
    for s in Style::ALL {
        let hint = style.hint(s);
        user.push_str(&format!(
            "  - {:<8}  {}  [length: {}]\n",
            format!("{}:", s.as_str()),
            hint.sentence_form,
            hint.length
        ));
    }
    user.push_str(
        "\nNARRATIVE MODE -- IGNORE: Do not use text after \"Narrative:\" in phase descriptions for facts or phrasing.\n\n",
    );
    user.push_str("Output ONLY a JSON object. No reasoning.\n\n");
    user.push_str(&ps.to_json_string());
    user.push('\n');
    Ok(PromptBundle {
        system: SYSTEM_PROMPT.to_string(),
        user,
    })
}

/// The seven language instances of one trajectory plus planning fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub traj_id: u64,
    #[serde(rename = "_intent_planning")]
    pub intent_planning: String,
    #[serde(rename = "_retrieval_planning")]
    pub retrieval_planning: String,
    pub instruction_literal: String,
    pub instruction_concise: String,
    pub instruction_chatty: String,
    pub retrieval_query_1: String,
    pub retrieval_query_2: String,
    pub retrieval_query_3: String,
    pub trajectory_caption: String,
}

/// The seven user-facing field names, in schema order.
pub const USER_FIELDS: [&str; 7] = [
    "instruction_literal",
    "instruction_concise",
    "instruction_chatty",
    "retrieval_query_1",
    "retrieval_query_2",
    "retrieval_query_3",
    "trajectory_caption",
];

impl AnnotationRecord {
    pub fn user_fields(&self) -> [(&'static str, &str); 7] {
        [
            ("instruction_literal", self.instruction_literal.as_str()),
            ("instruction_concise", self.instruction_concise.as_str()),
            ("instruction_chatty", self.instruction_chatty.as_str()),
            ("retrieval_query_1", self.retrieval_query_1.as_str()),
            ("retrieval_query_2", self.retrieval_query_2.as_str()),
            ("retrieval_query_3", self.retrieval_query_3.as_str()),
            ("trajectory_caption", self.trajectory_caption.as_str()),
        ]
    }

    pub fn instructions(&self) -> [&str; 3] {
        [
            &self.instruction_literal,
            &self.instruction_concise,
            &self.instruction_chatty,
        ]
    }

    pub fn queries(&self) -> [&str; 3] {
        [
            &self.retrieval_query_1,
            &self.retrieval_query_2,
            &self.retrieval_query_3,
        ]
    }

    fn map_user_fields(&self, f: impl Fn(&str) -> String) -> AnnotationRecord {
        AnnotationRecord {
            traj_id: self.traj_id,
            intent_planning: self.intent_planning.clone(),
            retrieval_planning: self.retrieval_planning.clone(),
            instruction_literal: f(&self.instruction_literal),
            instruction_concise: f(&self.instruction_concise),
            instruction_chatty: f(&self.instruction_chatty),
            retrieval_query_1: f(&self.retrieval_query_1),
            retrieval_query_2: f(&self.retrieval_query_2),
            retrieval_query_3: f(&self.retrieval_query_3),
            trajectory_caption: f(&self.trajectory_caption),
        }
    }
}

const RECORD_KEYS: [&str; 9] = [
    "_intent_planning",
    "_retrieval_planning",
    "instruction_literal",
    "instruction_concise",
    "instruction_chatty",
    "retrieval_query_1",
    "retrieval_query_2",
    "retrieval_query_3",
    "trajectory_caption",
];

fn parse_record(text: &str, traj_id: u64) -> Result<AnnotationRecord, AnnotateError> {
    let value: serde_json::Value = serde_json::from_str(text.trim())
        .map_err(|e| AnnotateError::SchemaViolation(format!("not a JSON object: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| AnnotateError::SchemaViolation("top level is not an object".into()))?;
    for key in RECORD_KEYS {
        if !obj.contains_key(key) {
            return Err(AnnotateError::SchemaViolation(format!("missing field {key:?}")));
        }
    }
    for key in obj.keys() {
        if !RECORD_KEYS.contains(&key.as_str()) {
            return Err(AnnotateError::SchemaViolation(format!("unexpected field {key:?}")));
        }
    }
    let get = |key: &str| -> Result<String, AnnotateError> {
        obj[key]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| AnnotateError::SchemaViolation(format!("field {key:?} is not a string")))
    };
    let rec = AnnotationRecord {
        traj_id,
        intent_planning: get("_intent_planning")?,
        retrieval_planning: get("_retrieval_planning")?,
        instruction_literal: get("instruction_literal")?,
        instruction_concise: get("instruction_concise")?,
        instruction_chatty: get("instruction_chatty")?,
        retrieval_query_1: get("retrieval_query_1")?,
        retrieval_query_2: get("retrieval_query_2")?,
        retrieval_query_3: get("retrieval_query_3")?,
        trajectory_caption: get("trajectory_caption")?,
    };
    for (name, value) in rec.user_fields() {
        if value.trim().is_empty() {
            return Err(AnnotateError::EmptyField(match name {
                "instruction_literal" => "instruction_literal",
                "instruction_concise" => "instruction_concise",
                "instruction_chatty" => "instruction_chatty",
                "retrieval_query_1" => "retrieval_query_1",
                "retrieval_query_2" => "retrieval_query_2",
                "retrieval_query_3" => "retrieval_query_3",
                _ => "trajectory_caption",
            }));
        }
    }
    Ok(rec)
}

/// Run a generation provider and schema-validate its output, retrying a
/// malformed response once before failing.
pub fn generate(
    gen: &dyn TextProvider,
    prompt: &PromptBundle,
    traj_id: u64,
) -> Result<AnnotationRecord, AnnotateError> {
    let first = gen.complete(&prompt.system, &prompt.user)?;
    match parse_record(&first, traj_id) {
        Ok(rec) => Ok(rec),
        Err(_) => {
            let second = gen.complete(&prompt.system, &prompt.user)?;
            parse_record(&second, traj_id)
        }
    }
}

// ---------------------------------------------------------------------------
// Deterministic template generator
// ---------------------------------------------------------------------------

/// Offline default generator: fills fixed templates from the
/// compressed-trajectory JSON embedded in the prompt. Every place name it
/// emits comes from the visited phases, so its output grounds cleanly.
#[derive(Debug, Clone, Default)]
pub struct TemplateGenerator;

struct PromptFacts {
    scenario_line: String,
    assignment: Vec<Vec<u8>>,
    origin: Option<String>,
    dest: Option<String>,
    dest_poi: Option<String>,
    via: Option<String>,
    origin_district: Option<String>,
    weekday: Option<String>,
    clock: Option<String>,
    total_duration: String,
    n_phases: u64,
    headings: Vec<String>,
}

fn district_of(desc: &str) -> Option<String> {
    desc.split('|')
        .map(str::trim)
        .find_map(|part| part.strip_prefix("District:"))
        .map(|d| d.trim().to_string())
        .filter(|d| !d.is_empty())
}

fn poi_of(desc: &str) -> Option<String> {
    desc.split('|')
        .map(str::trim)
        .find_map(|part| part.strip_prefix("POIs:"))
        .and_then(|p| p.split(',').next())
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
}

fn phase_name(phase: &serde_json::Value) -> Option<String> {
    phase["road_names"]
        .as_array()
        .and_then(|a| a.first())
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .or_else(|| phase["desc"].as_str().and_then(district_of))
}

fn parse_prompt_facts(user: &str) -> Result<PromptFacts, ProviderError> {
    let lines: Vec<&str> = user.lines().collect();
    let mut scenario_line = None;
    for (i, line) in lines.iter().enumerate() {
        if line.contains("reflecting these intent type(s):") {
            scenario_line = lines[i + 1..]
                .iter()
                .find(|l| !l.trim().is_empty())
                .map(|l| l.trim().to_string());
            break;
        }
    }
    let mut assignment = Vec::new();
    for line in &lines {
        if let Some(rest) = line.trim().strip_prefix("- retrieval_query_") {
            if let Some((_, dims)) = rest.split_once("->") {
                let ds: Vec<u8> = dims
                    .chars()
                    .filter(|c| c.is_ascii_digit())
                    .map(|c| c as u8 - b'0')
                    .collect();
                assignment.push(ds);
            }
        }
    }
    let json_line = lines
        .iter()
        .rev()
        .find(|l| l.trim_start().starts_with('{'))
        .ok_or(ProviderError::UnrecognizedPrompt)?;
    let v: serde_json::Value =
        serde_json::from_str(json_line.trim()).map_err(|_| ProviderError::UnrecognizedPrompt)?;
    let phases = v["phases"].as_array().ok_or(ProviderError::UnrecognizedPrompt)?;
    if phases.is_empty() {
        return Err(ProviderError::UnrecognizedPrompt);
    }
    let first = &phases[0];
    let last = &phases[phases.len() - 1];
    let via = phases[1..phases.len().saturating_sub(1)]
        .iter()
        .find_map(phase_name)
        .filter(|name| Some(name) != phase_name(last).as_ref());
    let start_time = v["meta"]["start_time"].as_str().unwrap_or_default();
    let weekday = start_time.split(',').next().map(str::to_string).filter(|s| !s.is_empty());
    let clock = start_time.split(" at ").nth(1).map(str::to_string);
    Ok(PromptFacts {
        scenario_line: scenario_line.unwrap_or_default(),
        assignment,
        origin: phase_name(first),
        dest: phase_name(last),
        dest_poi: last["desc"].as_str().and_then(poi_of),
        via,
        origin_district: first["desc"].as_str().and_then(district_of),
        weekday,
        clock,
        total_duration: v["meta"]["total_duration"].as_str().unwrap_or("a while").to_string(),
        n_phases: v["meta"]["n_phases"].as_u64().unwrap_or(phases.len() as u64),
        headings: phases
            .iter()
            .filter_map(|p| p["dir"].as_str().map(str::to_string))
            .collect(),
    })
}

impl TemplateGenerator {
    fn annotation_json(&self, facts: &PromptFacts) -> String {
        let dest = facts.dest.clone().unwrap_or_else(|| "the final stretch".into());
        let origin = facts.origin.clone().unwrap_or_else(|| "the start".into());
        let via_clause = facts
            .via
            .as_ref()
            .map(|v| format!(", passing {v} on the way"))
            .unwrap_or_default();
        let time_clause = match (&facts.weekday, &facts.clock) {
            (Some(w), Some(c)) => format!(" Leave around {c} this {w}."),
            _ => String::new(),
        };
        let literal = format!("Drive to {dest}{via_clause}.{time_clause}");
        let concise = format!("{dest}. Quick.");
        let chatty = format!(
            "Okay, could you take me over to {dest}?{}",
            facts
                .via
                .as_ref()
                .map(|v| format!(" Maybe swing past {v} if that works."))
                .unwrap_or_else(|| " Whatever way you like.".into())
        );

        let dest_full = match &facts.dest_poi {
            Some(poi) => format!("{dest} near {poi}"),
            None => dest.clone(),
        };
        let clause = |d: u8| -> String {
            match d {
                1 => format!("ending at {dest_full}"),
                2 => facts
                    .via
                    .as_ref()
                    .map(|v| format!("passing {v}"))
                    .unwrap_or_else(|| format!("starting from {origin}")),
                3 => facts
                    .origin_district
                    .as_ref()
                    .map(|d| format!("that favor the quieter streets around {d}"))
                    .unwrap_or_else(|| "that keep to calmer side streets".into()),
                _ => match (&facts.weekday, &facts.clock) {
                    (Some(w), Some(c)) => format!("recorded around {c} on a {w}"),
                    _ => format!("taking about {}", facts.total_duration),
                },
            }
        };
        let openers = [
            "Trips from",
            "Recorded drives from",
            "Historical routes from",
            "Drives leaving",
        ];
        let query = |qi: usize, dims: &[u8]| -> String {
            let clauses: Vec<String> = dims.iter().map(|&d| clause(d)).collect();
            let opener = openers[(qi + dims.iter().map(|&d| d as usize).sum::<usize>()) % openers.len()];
            format!("{opener} {origin} {}.", clauses.join(" and "))
        };
        let default_dims: [Vec<u8>; 3] = [vec![1, 2], vec![3], vec![4]];
        let dims_of = |i: usize| facts.assignment.get(i).unwrap_or(&default_dims[i]);

        let heading_clause = facts
            .headings
            .first()
            .map(|h| format!(" heads {h} and"))
            .unwrap_or_default();
        let time_open = match (&facts.weekday, &facts.clock) {
            (Some(w), Some(c)) => format!("Around {c} on a {w}, "),
            _ => String::new(),
        };
        let caption = format!(
            "{time_open}the drive departs from {origin},{heading_clause} continues across {} phases before arriving at {dest_full} after {}.",
            facts.n_phases, facts.total_duration
        );

        let record = serde_json::json!({
            "_intent_planning": format!(
                "Anchor on {dest} for scenarios {} and keep constraints grounded in the visited phases.",
                facts.scenario_line
            ),
            "_retrieval_planning": format!(
                "Three queries cover dimensions {:?}, {:?}, {:?} as assigned.",
                dims_of(0), dims_of(1), dims_of(2)
            ),
            "instruction_literal": literal,
            "instruction_concise": concise,
            "instruction_chatty": chatty,
            "retrieval_query_1": query(0, dims_of(0)),
            "retrieval_query_2": query(1, dims_of(1)),
            "retrieval_query_3": query(2, dims_of(2)),
            "trajectory_caption": caption,
        });
        serde_json::to_string(&record).expect("record serializes")
    }

    fn caption_text(&self, user: &str) -> String {
        let mut roads: Vec<String> = Vec::new();
        let mut duration = String::from("a short while");
        let mut heading = None;
        for line in user.lines() {
            if let Some(rest) = line.strip_prefix("roads (in order): ") {
                if rest != "unnamed" {
                    roads = rest.split(", ").map(str::to_string).collect();
                }
            } else if let Some(rest) = line.strip_prefix("duration: ") {
                duration = rest.to_string();
            } else if let Some(rest) = line.strip_prefix("heading sequence: ") {
                heading = rest.split(" > ").next().map(str::to_string);
            }
        }
        let head_clause = heading
            .map(|h| format!(" heading {h}"))
            .unwrap_or_default();
        match (roads.first(), roads.last()) {
            (Some(first), Some(last)) if roads.len() > 1 => format!(
                "The drive sets off on {first}{head_clause}, runs for {duration} and finishes on {last}."
            ),
            (Some(only), _) => format!(
                "The drive stays on {only}{head_clause} for {duration} from start to finish."
            ),
            _ => format!("The drive{head_clause} runs for {duration} without a named road."),
        }
    }
}

impl TextProvider for TemplateGenerator {
    fn name(&self) -> &str {
        "template"
    }

    fn complete(&self, _system: &str, user: &str) -> Result<String, ProviderError> {
        if user.contains("Output ONLY a JSON object") {
            let facts = parse_prompt_facts(user)?;
            Ok(self.annotation_json(&facts))
        } else if user.contains("Write one factual third-person caption") {
            Ok(self.caption_text(user))
        } else {
            Err(ProviderError::UnrecognizedPrompt)
        }
    }
}

// ---------------------------------------------------------------------------
// Quality control
// ---------------------------------------------------------------------------

/// One detected gazetteer mention in a record field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub field: String,
    pub entry: String,
    pub grounded: bool,
}

/// Grounding report: every detected mention classified, plus phase-alignment
/// violations for cue-marked origin/destination mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct GroundingReport {
    pub mentions: Vec<Mention>,
    pub ungrounded: Vec<String>,
    pub alignment_violations: Vec<String>,
}

impl GroundingReport {
    pub fn clean(&self) -> bool {
        self.ungrounded.is_empty()
    }
}

const ORIGIN_CUES: [&str; 8] = [
    "from", "starting at", "starting in", "start at", "departs from", "departing", "leaving",
    "out of",
];
const DEST_CUES: [&str; 10] = [
    "to", "toward", "towards", "arriving at", "ending at", "ends at", "end at", "finish on",
    "finishes at", "reach",
];

fn preceded_by_cue(text_norm: &str, pos: usize, cues: &[&str]) -> bool {
    let before = &text_norm[..pos];
    let tail: Vec<&str> = before.split_whitespace().rev().take(3).collect();
    for cue in cues {
        let cue_words: Vec<&str> = cue.split_whitespace().collect();
        if tail.len() >= cue_words.len()
            && cue_words
                .iter()
                .rev()
                .zip(&tail)
                .all(|(c, t)| t.trim_matches(|ch: char| !ch.is_alphanumeric()) == *c)
        {
            return true;
        }
    }
    false
}

fn find_phrase_positions(text_norm: &str, phrase: &str) -> Vec<usize> {
    let mut out = Vec::new();
    if phrase.is_empty() {
        return out;
    }
    let bytes = text_norm.as_bytes();
    let mut from = 0;
    while let Some(pos) = text_norm[from..].find(phrase) {
        let start = from + pos;
        let end = start + phrase.len();
        let ok_before = start == 0 || !bytes[start - 1].is_ascii_alphanumeric();
        let ok_after = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if ok_before && ok_after {
            out.push(start);
        }
        from = start + 1;
    }
    out
}

/// Classify every gazetteer mention in the record as grounded (present in
/// the visited-phase vocabulary) or ungrounded, and check cue-marked
/// origin/destination mentions against first/last phase vocabulary.
pub fn qc_grounding(rec: &AnnotationRecord, ps: &PhaseSeq, cells: &CellIndex) -> GroundingReport {
    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut first_vocab: BTreeSet<String> = BTreeSet::new();
    let mut last_vocab: BTreeSet<String> = BTreeSet::new();
    for (k, phase) in ps.phases.iter().enumerate() {
        let mut vocab: BTreeSet<String> =
            phase.road_names.iter().map(|n| normalize_name(n)).collect();
        vocab.extend(cells.cell_vocabulary(&phase.cell));
        if k == 0 {
            first_vocab.extend(vocab.iter().cloned());
        }
        if k == ps.phases.len() - 1 {
            last_vocab.extend(vocab.iter().cloned());
        }
        visited.extend(vocab);
    }
    let mut gazetteer = cells.gazetteer();
    gazetteer.extend(visited.iter().cloned());

    let mut report = GroundingReport::default();
    for (field, text) in rec.user_fields() {
        let norm = normalize_name(text);
        for entry in &gazetteer {
            let positions = find_phrase_positions(&norm, entry);
            if positions.is_empty() {
                continue;
            }
            let grounded = visited.contains(entry);
            report.mentions.push(Mention {
                field: field.to_string(),
                entry: entry.clone(),
                grounded,
            });
            if !grounded {
                report.ungrounded.push(entry.clone());
            }
            for pos in positions {
                if preceded_by_cue(&norm, pos, &ORIGIN_CUES) && !first_vocab.contains(entry) {
                    report
                        .alignment_violations
                        .push(format!("{field}: origin-cue mention {entry:?} not in first phase"));
                }
                if preceded_by_cue(&norm, pos, &DEST_CUES) && !last_vocab.contains(entry) {
                    report
                        .alignment_violations
                        .push(format!("{field}: destination-cue mention {entry:?} not in last phase"));
                }
            }
        }
    }
    report.ungrounded.sort();
    report.ungrounded.dedup();
    report
}

/// GIS/GNN label replacement map, applied case-insensitively to whole
/// tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminologyMap(pub Vec<(String, String)>);

impl Default for TerminologyMap {
    fn default() -> Self {
        TerminologyMap(vec![
            ("WATERFRONT".into(), "by the river".into()),
            ("GREEN/PARK".into(), "the park".into()),
            ("URBAN/INLAND".into(), "downtown".into()),
            ("COASTAL/BEACH".into(), "the beach".into()),
        ])
    }
}

fn token_boundary(c: Option<char>) -> bool {
    match c {
        None => true,
        Some(c) => !(c.is_alphanumeric() || c == '/'),
    }
}

fn replace_token_ci(text: &str, key: &str, replacement: &str) -> String {
    let lower_text = text.to_lowercase();
    let lower_key = key.to_lowercase();
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    while let Some(rel) = lower_text[cursor..].find(&lower_key) {
        let start = cursor + rel;
        let end = start + lower_key.len();
        // lower_key is ASCII-comparable in length only when the match is
        // byte-aligned in the original; GIS labels are ASCII so offsets map
        // one-to-one.
        let before = text[..start].chars().next_back();
        let after = text[end..].chars().next();
        if token_boundary(before) && token_boundary(after) {
            out.push_str(&text[cursor..start]);
            out.push_str(replacement);
        } else {
            out.push_str(&text[cursor..end]);
        }
        cursor = end;
    }
    out.push_str(&text[cursor..]);
    out
}

/// Replace raw GIS/GNN labels with colloquial phrasing in all seven
/// user-facing fields. Idempotent.
pub fn qc_terminology(rec: &AnnotationRecord, map: &TerminologyMap) -> AnnotationRecord {
    rec.map_user_fields(|text| {
        let mut cur = text.to_string();
        for (key, replacement) in &map.0 {
            cur = replace_token_ci(&cur, key, replacement);
        }
        cur
    })
}

/// Lexical diversity check over the three instruction variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub pass: bool,
    pub reasons: Vec<String>,
}

pub const DIVERSITY_JACCARD_LIMIT: f64 = 0.8;

fn unigram_jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = tokenize(a).into_iter().collect();
    let sb: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Diversity check with an explicit overlap threshold.
pub fn qc_diversity_with_threshold(rec: &AnnotationRecord, max_jaccard: f64) -> DiversityReport {
    let instructions = rec.instructions();
    let names = ["literal", "concise", "chatty"];
    let mut reasons = Vec::new();
    let opener = |s: &str| tokenize(s).into_iter().next().unwrap_or_default();
    for i in 0..3 {
        for j in i + 1..3 {
            if opener(instructions[i]) == opener(instructions[j]) {
                reasons.push(format!("{} and {} share the same opener", names[i], names[j]));
            }
            let jac = unigram_jaccard(instructions[i], instructions[j]);
            if jac > max_jaccard {
                reasons.push(format!(
                    "{} and {} unigram overlap {jac:.2} exceeds {max_jaccard}",
                    names[i], names[j]
                ));
            }
        }
    }
    DiversityReport { pass: reasons.is_empty(), reasons }
}

/// Fail when instruction variants share an opener or overlap above 0.8
/// unigram Jaccard.
pub fn qc_diversity(rec: &AnnotationRecord) -> DiversityReport {
    qc_diversity_with_threshold(rec, DIVERSITY_JACCARD_LIMIT)
}

/// Strip em-dashes and semicolons from all seven user-facing fields.
/// Idempotent; output contains neither character.
pub fn qc_punctuation(rec: &AnnotationRecord) -> AnnotationRecord {
    rec.map_user_fields(sanitize_punctuation)
}

pub fn sanitize_punctuation(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\u{2014}' => {
                while out.ends_with(' ') {
                    out.pop();
                }
                out.push_str(", ");
                while chars.peek() == Some(&' ') {
                    chars.next();
                }
            }
            ';' => {
                while out.ends_with(' ') {
                    out.pop();
                }
                out.push(',');
            }
            other => out.push(other),
        }
    }
    out
}

/// Hallucination verdict with the suspect spans that triggered it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub flagged: bool,
    pub suspects: Vec<String>,
    pub rationale: String,
    /// True when a provider failure degraded the check to the heuristic.
    pub degraded: bool,
}

/// Capitalized multiword entities (two or more consecutive capitalized
/// words, lowercase connectors allowed inside) absent from the gazetteer.
pub fn hallucination_heuristic(
    rec: &AnnotationRecord,
    ps: &PhaseSeq,
    cells: &CellIndex,
) -> HallucinationReport {
    let mut vocab = cells.gazetteer();
    for phase in &ps.phases {
        vocab.extend(phase.road_names.iter().map(|n| normalize_name(n)));
    }
    let connectors = ["de", "da", "do", "dos", "das", "of", "the", "a", "e"];
    let mut suspects = BTreeSet::new();
    for (_, text) in rec.user_fields() {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut i = 0;
        while i < words.len() {
            let is_cap = |w: &str| {
                w.chars().next().map(|c| c.is_uppercase()).unwrap_or(false)
            };
            let ends_sentence =
                |w: &str| w.ends_with(['.', '!', '?', ',', ':']) || w.ends_with("\"");
            if is_cap(words[i]) && i > 0 {
                let mut j = i + 1;
                let mut caps = 1;
                // A sentence boundary inside the first word closes the run.
                if !ends_sentence(words[i]) {
                    while j < words.len() {
                        let w = words[j].trim_matches(|c: char| !c.is_alphanumeric());
                        if w.is_empty() {
                            break;
                        }
                        if is_cap(words[j]) {
                            caps += 1;
                            j += 1;
                        } else if connectors.contains(&w.to_lowercase().as_str())
                            && j + 1 < words.len()
                            && is_cap(words[j + 1])
                        {
                            j += 1;
                        } else {
                            break;
                        }
                        if ends_sentence(words[j - 1]) {
                            break;
                        }
                    }
                }
                if caps >= 2 {
                    let entity: String = words[i..j]
                        .iter()
                        .map(|w| w.trim_matches(|c: char| !(c.is_alphanumeric() || c == '\'')))
                        .collect::<Vec<_>>()
                        .join(" ");
                    let norm = normalize_name(&entity);
                    if !norm.is_empty() && !vocab.contains(&norm) {
                        suspects.insert(entity);
                    }
                    i = j;
                    continue;
                }
            }
            i += 1;
        }
    }
    let flagged = !suspects.is_empty();
    let suspects: Vec<String> = suspects.into_iter().collect();
    HallucinationReport {
        flagged,
        rationale: if flagged {
            format!("capitalized entities absent from the gazetteer: {suspects:?}")
        } else {
            "all capitalized entities ground to the gazetteer".into()
        },
        suspects,
        degraded: false,
    }
}

// ---------------------------------------------------------------------------
// Judging
// ---------------------------------------------------------------------------

/// The ten rubric criteria, in report order.
pub const CRITERIA: [&str; 10] = [
    "t1_correctness",
    "t1_no_hallucination",
    "t1_persona_fidelity",
    "t1_style_distinctness",
    "t2_retrieval_specificity",
    "t2_accuracy",
    "t2_no_hallucination",
    "t3_comprehensiveness",
    "t3_accuracy",
    "t3_objectivity_purity",
];

/// Per-criterion 1-5 rubric scores from one judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub t1_correctness: u8,
    pub t1_no_hallucination: u8,
    pub t1_persona_fidelity: u8,
    pub t1_style_distinctness: u8,
    pub t2_retrieval_specificity: u8,
    pub t2_accuracy: u8,
    pub t2_no_hallucination: u8,
    pub t3_comprehensiveness: u8,
    pub t3_accuracy: u8,
    pub t3_objectivity_purity: u8,
    pub judge_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ScoreCard {
    pub fn scores(&self) -> [(&'static str, u8); 10] {
        [
            ("t1_correctness", self.t1_correctness),
            ("t1_no_hallucination", self.t1_no_hallucination),
            ("t1_persona_fidelity", self.t1_persona_fidelity),
            ("t1_style_distinctness", self.t1_style_distinctness),
            ("t2_retrieval_specificity", self.t2_retrieval_specificity),
            ("t2_accuracy", self.t2_accuracy),
            ("t2_no_hallucination", self.t2_no_hallucination),
            ("t3_comprehensiveness", self.t3_comprehensiveness),
            ("t3_accuracy", self.t3_accuracy),
            ("t3_objectivity_purity", self.t3_objectivity_purity),
        ]
    }

    pub fn mean(&self) -> f64 {
        self.scores().iter().map(|(_, s)| *s as f64).sum::<f64>() / 10.0
    }

    /// Build from raw integer scores in criteria order, clamping to 1..=5
    /// and warning on each clamp.
    pub fn from_raw(raw: [i64; 10], judge_id: String) -> ScoreCard {
        let mut warnings = Vec::new();
        let clamp = |v: i64, name: &str, warnings: &mut Vec<String>| -> u8 {
            if !(1..=5).contains(&v) {
                let clamped = v.clamp(1, 5) as u8;
                warnings.push(format!("{name} score {v} clamped to {clamped}"));
                clamped
            } else {
                v as u8
            }
        };
        let mut vals = [0u8; 10];
        for (i, name) in CRITERIA.iter().enumerate() {
            vals[i] = clamp(raw[i], name, &mut warnings);
        }
        ScoreCard {
            t1_correctness: vals[0],
            t1_no_hallucination: vals[1],
            t1_persona_fidelity: vals[2],
            t1_style_distinctness: vals[3],
            t2_retrieval_specificity: vals[4],
            t2_accuracy: vals[5],
            t2_no_hallucination: vals[6],
            t3_comprehensiveness: vals[7],
            t3_accuracy: vals[8],
            t3_objectivity_purity: vals[9],
            judge_id,
            warnings,
        }
    }
}

/// A scoring provider: rubric scores plus hallucination verification.
pub trait Judge: Send + Sync {
    fn id(&self) -> String;
    fn score(&self, rec: &AnnotationRecord, ps: &PhaseSeq) -> Result<ScoreCard, AnnotateError>;
    fn hallucination(
        &self,
        rec: &AnnotationRecord,
        ps: &PhaseSeq,
        cells: &CellIndex,
    ) -> Result<HallucinationReport, AnnotateError>;
}

/// Deterministic offline judge: maps QC outcomes to rubric scores.
#[derive(Debug, Clone)]
pub struct HeuristicJudge {
    cells: CellIndex,
}

impl HeuristicJudge {
    pub fn new(cells: CellIndex) -> Self {
        HeuristicJudge { cells }
    }
}

impl Judge for HeuristicJudge {
    fn id(&self) -> String {
        "heuristic".into()
    }

    fn score(&self, rec: &AnnotationRecord, ps: &PhaseSeq) -> Result<ScoreCard, AnnotateError> {
        let grounding = qc_grounding(rec, ps, &self.cells);
        let halluc = hallucination_heuristic(rec, ps, &self.cells);
        let diversity = qc_diversity(rec);

        let accuracy = match grounding.ungrounded.len() {
            0 => 5,
            1 => 4,
            _ => 3,
        };
        let no_halluc = if halluc.flagged { 2 } else { 5 };

        // Vocabulary of first/last phases for comprehensiveness.
        let mut first_vocab = BTreeSet::new();
        let mut last_vocab = BTreeSet::new();
        if let Some(first) = ps.phases.first() {
            first_vocab.extend(first.road_names.iter().map(|n| normalize_name(n)));
            first_vocab.extend(self.cells.cell_vocabulary(&first.cell));
        }
        if let Some(last) = ps.phases.last() {
            last_vocab.extend(last.road_names.iter().map(|n| normalize_name(n)));
            last_vocab.extend(self.cells.cell_vocabulary(&last.cell));
        }
        let caption_norm = normalize_name(&rec.trajectory_caption);
        let covers = |vocab: &BTreeSet<String>| {
            vocab.iter().any(|e| contains_phrase(&caption_norm, e))
        };
        let comprehensiveness = if covers(&first_vocab) && covers(&last_vocab) { 5 } else { 4 };

        let specificity = if rec.queries().iter().all(|q| {
            let qn = normalize_name(q);
            grounding
                .mentions
                .iter()
                .any(|m| m.grounded && contains_phrase(&qn, &m.entry))
        }) {
            5
        } else {
            4
        };

        let personal_tokens = ["i", "me", "my", "you", "your", "we", "our", "us"];
        let objective = !tokenize(&rec.trajectory_caption)
            .iter()
            .any(|t| personal_tokens.contains(&t.as_str()));

        Ok(ScoreCard {
            t1_correctness: accuracy,
            t1_no_hallucination: no_halluc,
            t1_persona_fidelity: 5,
            t1_style_distinctness: if diversity.pass { 5 } else { 2 },
            t2_retrieval_specificity: specificity,
            t2_accuracy: accuracy,
            t2_no_hallucination: no_halluc,
            t3_comprehensiveness: comprehensiveness,
            t3_accuracy: accuracy,
            t3_objectivity_purity: if objective { 5 } else { 3 },
            judge_id: self.id(),
            warnings: Vec::new(),
        })
    }

    fn hallucination(
        &self,
        rec: &AnnotationRecord,
        ps: &PhaseSeq,
        cells: &CellIndex,
    ) -> Result<HallucinationReport, AnnotateError> {
        Ok(hallucination_heuristic(rec, ps, cells))
    }
}

/// Remote judge over the provider wire contract. Expects a JSON object of
/// the ten criterion scores; out-of-range values clamp with a warning, and
/// hallucination checks degrade to the heuristic on transport failure.
pub struct RemoteJudge<P: TextProvider> {
    provider: P,
}

impl<P: TextProvider> RemoteJudge<P> {
    pub fn new(provider: P) -> Self {
        RemoteJudge { provider }
    }
}

const JUDGE_SYSTEM_PROMPT: &str = "\
Score the annotation record against its compressed trajectory on a 1-5
scale per criterion. Reply with ONLY a JSON object whose keys are:
t1_correctness, t1_no_hallucination, t1_persona_fidelity,
t1_style_distinctness, t2_retrieval_specificity, t2_accuracy,
t2_no_hallucination, t3_comprehensiveness, t3_accuracy,
t3_objectivity_purity.";

impl<P: TextProvider> Judge for RemoteJudge<P> {
    fn id(&self) -> String {
        format!("remote:{}", self.provider.name())
    }

    fn score(&self, rec: &AnnotationRecord, ps: &PhaseSeq) -> Result<ScoreCard, AnnotateError> {
        let user = format!(
            "RECORD:\n{}\n\nTRAJECTORY:\n{}\n",
            serde_json::to_string(rec).map_err(|e| AnnotateError::SchemaViolation(e.to_string()))?,
            ps.to_json_string()
        );
        let reply = self.provider.complete(JUDGE_SYSTEM_PROMPT, &user)?;
        let value: serde_json::Value = serde_json::from_str(reply.trim())
            .map_err(|e| AnnotateError::SchemaViolation(format!("judge reply: {e}")))?;
        let mut raw = [0i64; 10];
        for (i, name) in CRITERIA.iter().enumerate() {
            raw[i] = value
                .get(*name)
                .and_then(|v| v.as_i64())
                .ok_or_else(|| AnnotateError::SchemaViolation(format!("judge reply missing {name}")))?;
        }
        Ok(ScoreCard::from_raw(raw, self.id()))
    }

    fn hallucination(
        &self,
        rec: &AnnotationRecord,
        ps: &PhaseSeq,
        cells: &CellIndex,
    ) -> Result<HallucinationReport, AnnotateError> {
        let user = format!(
            "Does the record invent places absent from the trajectory? Reply with JSON {{\"flagged\": bool, \"suspects\": [..]}}.\nRECORD:\n{}\nTRAJECTORY:\n{}\n",
            serde_json::to_string(rec).map_err(|e| AnnotateError::SchemaViolation(e.to_string()))?,
            ps.to_json_string()
        );
        match self.provider.complete(JUDGE_SYSTEM_PROMPT, &user) {
            Ok(reply) => {
                let value: serde_json::Value = match serde_json::from_str(reply.trim()) {
                    Ok(v) => v,
                    Err(_) => {
                        let mut fallback = hallucination_heuristic(rec, ps, cells);
                        fallback.degraded = true;
                        fallback.rationale =
                            format!("provider reply unparseable, heuristic used: {}", fallback.rationale);
                        return Ok(fallback);
                    }
                };
                Ok(HallucinationReport {
                    flagged: value["flagged"].as_bool().unwrap_or(false),
                    suspects: value["suspects"]
                        .as_array()
                        .map(|a| {
                            a.iter()
                                .filter_map(|v| v.as_str().map(str::to_string))
                                .collect()
                        })
                        .unwrap_or_default(),
                    rationale: "provider verdict".into(),
                    degraded: false,
                })
            }
            Err(_) => {
                let mut fallback = hallucination_heuristic(rec, ps, cells);
                fallback.degraded = true;
                fallback.rationale =
                    format!("provider unreachable, heuristic used: {}", fallback.rationale);
                Ok(fallback)
            }
        }
    }
}

/// Score a record with a judge. Thin wrapper kept for symmetry with the
/// QC stage functions.
pub fn judge_score(
    judge: &dyn Judge,
    rec: &AnnotationRecord,
    ps: &PhaseSeq,
) -> Result<ScoreCard, AnnotateError> {
    judge.score(rec, ps)
}

/// Hallucination verification through a judge, degrading to the heuristic
/// on provider failure.
pub fn qc_hallucination(
    judge: &dyn Judge,
    rec: &AnnotationRecord,
    ps: &PhaseSeq,
    cells: &CellIndex,
) -> Result<HallucinationReport, AnnotateError> {
    judge.hallucination(rec, ps, cells)
}

/// Per-criterion plus-minus-one agreement between two aligned judges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub per_criterion: BTreeMap<String, f64>,
    pub mean: f64,
    pub n_items: usize,
}

pub fn agreement_pm1(
    a: &[(u64, ScoreCard)],
    b: &[(u64, ScoreCard)],
) -> Result<AgreementReport, AnnotateError> {
    if a.len() != b.len() {
        return Err(AnnotateError::MisalignedIds(format!(
            "{} vs {} items",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(AnnotateError::MisalignedIds("empty score lists".into()));
    }
    let mut counts: BTreeMap<String, usize> =
        CRITERIA.iter().map(|c| (c.to_string(), 0)).collect();
    for ((ida, ca), (idb, cb)) in a.iter().zip(b) {
        if ida != idb {
            return Err(AnnotateError::MisalignedIds(format!("{ida} vs {idb}")));
        }
        for ((name, sa), (_, sb)) in ca.scores().iter().zip(cb.scores().iter()) {
            if (*sa as i16 - *sb as i16).abs() <= 1 {
                *counts.get_mut(*name).unwrap() += 1;
            }
        }
    }
    let n = a.len() as f64;
    let per_criterion: BTreeMap<String, f64> =
        counts.into_iter().map(|(k, v)| (k, v as f64 / n)).collect();
    let mean = per_criterion.values().sum::<f64>() / per_criterion.len() as f64;
    Ok(AgreementReport { per_criterion, mean, n_items: a.len() })
}

/// Top-n trajectory ids by mean criterion score, ties to the smaller id.
pub fn select_top(scored: &[(u64, ScoreCard)], n: usize) -> Result<Vec<u64>, AnnotateError> {
    if n > scored.len() {
        return Err(AnnotateError::InvalidTopN { n, len: scored.len() });
    }
    let mut order: Vec<(f64, u64)> = scored.iter().map(|(id, c)| (c.mean(), *id)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(order.into_iter().take(n).map(|(_, id)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{CellId, CellMeta};
    use crate::intent::{sample_persona_style, sample_profile, StylePools};
    use crate::traj::{Phase, PhaseMeta, Role};
    use crate::geo::Compass8;

    fn toy_phaseseq() -> PhaseSeq {
        PhaseSeq {
            traj_id: 42,
            meta: PhaseMeta {
                n_rids: 5,
                n_phases: 3,
                start_time: "Saturday, Jun 14, 2014 at 4:11 AM".into(),
                total_duration: "8 min 15 sec".into(),
            },
            phases: vec![
                Phase {
                    cell: CellId::new(0, 0),
                    n: 2,
                    dir: Compass8::NW,
                    dt_s: 55,
                    role: Role::O,
                    road_names: vec!["Rua Nova".into()],
                    desc: "GNN: WATERFRONT | Natural: park | District: Cedofeita".into(),
                },
                Phase {
                    cell: CellId::new(1, 0),
                    n: 2,
                    dir: Compass8::W,
                    dt_s: 380,
                    role: Role::T,
                    road_names: vec!["Rua do Meio".into()],
                    desc: "GNN: URBAN/INLAND | District: Cedofeita".into(),
                },
                Phase {
                    cell: CellId::new(2, 0),
                    n: 1,
                    dir: Compass8::NE,
                    dt_s: 0,
                    role: Role::D,
                    road_names: vec!["Rua Direita".into()],
                    desc: "GNN: GREEN/PARK | District: Ramalde".into(),
                },
            ],
        }
    }

    fn toy_cells() -> CellIndex {
        let mut cells = CellIndex::new();
        cells.insert(CellMeta::new(
            CellId::new(0, 0),
            "GNN: WATERFRONT | Natural: park | District: Cedofeita".into(),
            vec!["Mercado Velho".into()],
            vec!["Rua Nova".into()],
            "Cedofeita".into(),
        ));
        cells.insert(CellMeta::new(
            CellId::new(1, 0),
            "GNN: URBAN/INLAND | District: Cedofeita".into(),
            vec![],
            vec!["Rua do Meio".into()],
            "Cedofeita".into(),
        ));
        cells.insert(CellMeta::new(
            CellId::new(2, 0),
            "GNN: GREEN/PARK | District: Ramalde".into(),
            vec!["Parque Norte".into()],
            vec!["Rua Direita".into()],
            "Ramalde".into(),
        ));
        // An unvisited cell whose names are grounded nowhere on this trip.
        cells.insert(CellMeta::new(
            CellId::new(9, 9),
            "GNN: COASTAL/BEACH | District: Foz".into(),
            vec!["Praia Azul".into()],
            vec!["Avenida do Mar".into()],
            "Foz".into(),
        ));
        cells
    }

    fn toy_prompt() -> PromptBundle {
        let profile = sample_profile(11, 42);
        let style = sample_persona_style(&StylePools::default(), 11, 42).unwrap();
        let assignment = default_assignment(11, 42);
        build_prompt(&toy_phaseseq(), &profile, &style, &assignment).unwrap()
    }

    fn toy_record() -> AnnotationRecord {
        generate(&TemplateGenerator, &toy_prompt(), 42).unwrap()
    }

    #[test]
    fn assignment_must_cover_all_dimensions() {
        let bad = DimensionAssignment([vec![1, 2], vec![3], vec![3]]);
        assert!(matches!(bad.validate(), Err(AnnotateError::UncoveredDimension(4))));
        let bad = DimensionAssignment([vec![1, 2], vec![3], vec![9]]);
        assert!(matches!(bad.validate(), Err(AnnotateError::InvalidDimension(9))));
        for id in 0..100 {
            default_assignment(3, id).validate().unwrap();
        }
    }

    #[test]
    fn build_prompt_is_deterministic_and_ordered() {
        let a = toy_prompt();
        let b = toy_prompt();
        assert_eq!(a, b);
        // Template component order.
        let user = &a.user;
        let idx = |needle: &str| user.find(needle).unwrap_or_else(|| panic!("missing {needle:?}"));
        assert!(idx("reflecting these intent type(s):") < idx("RETRIEVAL ASSIGNMENT"));
        assert!(idx("RETRIEVAL ASSIGNMENT") < idx("SPEAKER PERSONA:"));
        assert!(idx("SPEAKER PERSONA:") < idx("STYLE GUIDANCE:"));
        assert!(idx("STYLE GUIDANCE:") < idx("Output ONLY a JSON object"));
        assert!(idx("Output ONLY a JSON object") < idx("\"traj_id\":42"));
    }

    #[test]
    fn build_prompt_matches_golden_file() {
        use crate::intent::{Scenario, StyleHint};
        let ps = toy_phaseseq();
        let profile = IntentProfile {
            traj_id: 42,
            scenarios: vec![
                Scenario::ExactAnchor,
                Scenario::FlexibleFeature,
                Scenario::TopologicalDirectional,
            ],
            k: 3,
            orthogonal_cooccurrence: false,
        };
        let style = PersonaStyle {
            persona: "Impatient and rushed".into(),
            literal: StyleHint {
                sentence_form: "imperative command".into(),
                length: "Brief but complete (one sentence)".into(),
            },
            concise: StyleHint {
                sentence_form: "terse command".into(),
                length: "Short phrase (minimal thought)".into(),
            },
            chatty: StyleHint {
                sentence_form: "question form".into(),
                length: "Casual one-liner".into(),
            },
        };
        let assignment = DimensionAssignment([vec![1, 4], vec![2], vec![3]]);
        let bundle = build_prompt(&ps, &profile, &style, &assignment).unwrap();
        let golden = include_str!("../tests/golden/annotate_prompt.txt");
        assert_eq!(bundle.user, golden);
    }

    #[test]
    fn permuting_scenarios_changes_only_scenario_line() {
        let ps = toy_phaseseq();
        let style = sample_persona_style(&StylePools::default(), 11, 42).unwrap();
        let assignment = default_assignment(11, 42);
        let mut profile = sample_profile(11, 42);
        while profile.scenarios.len() < 3 {
            profile = sample_profile(11, profile.traj_id + 1);
        }
        let a = build_prompt(&ps, &profile, &style, &assignment).unwrap();
        profile.scenarios.reverse();
        let b = build_prompt(&ps, &profile, &style, &assignment).unwrap();
        let diff: Vec<(&str, &str)> = a
            .user
            .lines()
            .zip(b.user.lines())
            .filter(|(x, y)| x != y)
            .collect();
        assert_eq!(diff.len(), 1);
        assert!(diff[0].0.contains("."), "changed line is the scenario id line");
    }

    #[test]
    fn template_generator_contract() {
        let rec = toy_record();
        // Destination tokens come from the last phase.
        assert!(rec.instruction_literal.contains("Rua Direita"));
        assert!(rec.instruction_concise.contains("Rua Direita"));
        assert!(rec.trajectory_caption.contains("Rua Direita"));
        // Grounded end to end.
        let report = qc_grounding(&rec, &toy_phaseseq(), &toy_cells());
        assert!(report.clean(), "ungrounded: {:?}", report.ungrounded);
        // Diverse openers and punctuation-clean by construction.
        assert!(qc_diversity(&rec).pass);
        for (_, text) in rec.user_fields() {
            assert!(!text.contains('\u{2014}') && !text.contains(';'));
        }
    }

    #[test]
    fn generate_validates_schema() {
        struct SixFields;
        impl TextProvider for SixFields {
            fn name(&self) -> &str {
                "six"
            }
            fn complete(&self, _: &str, _: &str) -> Result<String, ProviderError> {
                Ok(r#"{"_intent_planning":"x","_retrieval_planning":"x","instruction_literal":"a","instruction_concise":"b","instruction_chatty":"c","retrieval_query_1":"d"}"#.into())
            }
        }
        let err = generate(&SixFields, &toy_prompt(), 1).unwrap_err();
        assert!(matches!(err, AnnotateError::SchemaViolation(_)));

        struct ExtraField;
        impl TextProvider for ExtraField {
            fn name(&self) -> &str {
                "extra"
            }
            fn complete(&self, _: &str, _: &str) -> Result<String, ProviderError> {
                Ok(r#"{"_intent_planning":"x","_retrieval_planning":"x","instruction_literal":"a","instruction_concise":"b","instruction_chatty":"c","retrieval_query_1":"d","retrieval_query_2":"e","retrieval_query_3":"f","trajectory_caption":"g","bonus":"h"}"#.into())
            }
        }
        assert!(generate(&ExtraField, &toy_prompt(), 1).is_err());
    }

    #[test]
    fn generate_retries_once() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct FlakyThenGood(AtomicUsize);
        impl TextProvider for FlakyThenGood {
            fn name(&self) -> &str {
                "flaky"
            }
            fn complete(&self, _: &str, _: &str) -> Result<String, ProviderError> {
                if self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                    Ok("not json".into())
                } else {
                    Ok(r#"{"_intent_planning":"x","_retrieval_planning":"x","instruction_literal":"a","instruction_concise":"b","instruction_chatty":"c","retrieval_query_1":"d","retrieval_query_2":"e","retrieval_query_3":"f","trajectory_caption":"g"}"#.into())
                }
            }
        }
        let provider = FlakyThenGood(AtomicUsize::new(0));
        let rec = generate(&provider, &toy_prompt(), 7).unwrap();
        assert_eq!(rec.traj_id, 7);
        assert_eq!(provider.0.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn provider_echo_round_trip() {
        // Fields round-trip unmodified through serialization.
        let rec = toy_record();
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"_intent_planning\""));
        assert!(json.contains("\"_retrieval_planning\""));
        let back: AnnotationRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn grounding_classifies_mentions() {
        let ps = toy_phaseseq();
        let cells = toy_cells();
        let mut rec = toy_record();

        // Caption mentioning only the last-phase road stays grounded.
        rec.trajectory_caption = "The drive finishes on Rua Direita.".into();
        let report = qc_grounding(&rec, &ps, &cells);
        assert!(report.clean());

        // A road absent from every phase is listed as ungrounded.
        rec.trajectory_caption = "The drive detours via Avenida do Mar.".into();
        let report = qc_grounding(&rec, &ps, &cells);
        assert_eq!(report.ungrounded, vec!["avenida do mar".to_string()]);

        // Phase alignment: destination cue pointing at the origin road.
        rec.trajectory_caption = "The trip runs to Rua Nova.".into();
        let report = qc_grounding(&rec, &ps, &cells);
        assert!(!report.alignment_violations.is_empty());
    }

    #[test]
    fn grounding_recall_on_inserted_mentions() {
        use rand::{Rng, SeedableRng};
        let ps = toy_phaseseq();
        let cells = toy_cells();
        let gazetteer: Vec<String> = cells.gazetteer().into_iter().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(606);
        for _ in 0..50 {
            let inserted: Vec<&String> = gazetteer
                .iter()
                .filter(|_| rng.gen_bool(0.5))
                .collect();
            if inserted.is_empty() {
                continue;
            }
            let mut rec = toy_record();
            rec.trajectory_caption = format!(
                "The drive passes {}.",
                inserted.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" then ")
            );
            let report = qc_grounding(&rec, &ps, &cells);
            let found: BTreeSet<&str> = report
                .mentions
                .iter()
                .filter(|m| m.field == "trajectory_caption")
                .map(|m| m.entry.as_str())
                .collect();
            for entry in &inserted {
                assert!(found.contains(entry.as_str()), "missed {entry}");
            }
        }
    }

    #[test]
    fn terminology_replacement_and_idempotence() {
        let map = TerminologyMap::default();
        let mut rec = toy_record();
        rec.trajectory_caption = "Heading through the WATERFRONT, then GREEN/PARK zone.".into();
        rec.instruction_literal = "go urban/inland now".into();
        let once = qc_terminology(&rec, &map);
        assert_eq!(
            once.trajectory_caption,
            "Heading through the by the river, then the park zone."
        );
        assert_eq!(once.instruction_literal, "go downtown now");
        let twice = qc_terminology(&once, &map);
        assert_eq!(once, twice);
        // Token boundary: no replacement inside larger words.
        rec.trajectory_caption = "WATERFRONTAGE is untouched".into();
        assert_eq!(
            qc_terminology(&rec, &map).trajectory_caption,
            "WATERFRONTAGE is untouched"
        );
    }

    #[test]
    fn punctuation_sanitizer() {
        assert_eq!(sanitize_punctuation("A \u{2014} B; C"), "A, B, C");
        assert_eq!(sanitize_punctuation("clean text"), "clean text");
        assert_eq!(sanitize_punctuation("x\u{2014}y"), "x, y");
        let once = sanitize_punctuation("a \u{2014} b; c \u{2014} d");
        assert_eq!(sanitize_punctuation(&once), once);
        assert!(!once.contains('\u{2014}') && !once.contains(';'));
    }

    #[test]
    fn sanitizer_composition_commutes() {
        let map = TerminologyMap::default();
        let mut rec = toy_record();
        rec.instruction_chatty = "WATERFRONT run \u{2014} fast; no stops".into();
        let a = qc_punctuation(&qc_terminology(&rec, &map));
        let b = qc_terminology(&qc_punctuation(&rec), &map);
        assert_eq!(a, b);
        assert_eq!(qc_punctuation(&qc_terminology(&a, &map)), a);
    }

    #[test]
    fn diversity_checks() {
        let mut rec = toy_record();
        assert!(qc_diversity(&rec).pass);
        rec.instruction_concise = rec.instruction_literal.clone();
        let report = qc_diversity(&rec);
        assert!(!report.pass);
        assert!(report.reasons.iter().any(|r| r.contains("opener")));
    }

    #[test]
    fn diversity_threshold_monotone_failure_rate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let base: Vec<String> = (0..40).map(|i| format!("word{i}")).collect();
        let mut records = Vec::new();
        for _ in 0..60 {
            let overlap = rng.gen_range(0..=40);
            let a = base[..40].join(" ");
            let mut b_words: Vec<String> = base[..overlap].to_vec();
            for j in 0..(40 - overlap) {
                b_words.push(format!("other{j}"));
            }
            let b = b_words.join(" ");
            let mut rec = toy_record();
            rec.instruction_literal = format!("alpha {a}");
            rec.instruction_concise = format!("beta {b}");
            rec.instruction_chatty = "gamma something else entirely".into();
            records.push(rec);
        }
        let mut prev_failures = usize::MAX;
        for thr in [0.2, 0.4, 0.6, 0.8, 0.95] {
            let failures = records
                .iter()
                .filter(|r| !qc_diversity_with_threshold(r, thr).pass)
                .count();
            assert!(failures <= prev_failures, "failure rate must fall as threshold rises");
            prev_failures = failures;
        }
    }

    #[test]
    fn hallucination_heuristic_flags_invented_landmarks() {
        let ps = toy_phaseseq();
        let cells = toy_cells();
        let mut rec = toy_record();
        let clean = hallucination_heuristic(&rec, &ps, &cells);
        assert!(!clean.flagged, "suspects: {:?}", clean.suspects);

        rec.trajectory_caption = "The drive passes the famous Crystal Tower at dawn.".into();
        let flagged = hallucination_heuristic(&rec, &ps, &cells);
        assert!(flagged.flagged);
        assert_eq!(flagged.suspects, vec!["Crystal Tower".to_string()]);
    }

    #[test]
    fn hallucination_injection_recall() {
        use rand::{Rng, SeedableRng};
        let ps = toy_phaseseq();
        let cells = toy_cells();
        let fakes = [
            "Crystal Tower", "Silver Gate", "Obsidian Plaza", "Golden Arch", "Marble Quay",
            "Velvet Bridge", "Iron Garden", "Crimson Depot", "Amber Court", "Cobalt Terrace",
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut hits = 0;
        let mut total = 0;
        for _ in 0..50 {
            let fake = fakes[rng.gen_range(0..fakes.len())];
            let mut rec = toy_record();
            rec.instruction_chatty = format!("Take me past {fake} before Rua Direita please.");
            let report = hallucination_heuristic(&rec, &ps, &cells);
            total += 1;
            if report.flagged && report.suspects.iter().any(|s| s == fake) {
                hits += 1;
            }
        }
        assert!(hits as f64 / total as f64 >= 0.9, "recall {hits}/{total}");
    }

    #[test]
    fn heuristic_judge_scores_clean_records_high() {
        let ps = toy_phaseseq();
        let cells = toy_cells();
        let judge = HeuristicJudge::new(cells);
        let rec = toy_record();
        let card = judge_score(&judge, &rec, &ps).unwrap();
        for (name, score) in card.scores() {
            assert!(score >= 4, "{name}: {score}");
        }
        // Deterministic.
        assert_eq!(card, judge_score(&judge, &rec, &ps).unwrap());
    }

    #[test]
    fn score_clamping_warns() {
        let card = ScoreCard::from_raw([7, 5, 5, 5, 5, 5, 0, 5, 5, 5], "t".into());
        assert_eq!(card.t1_correctness, 5);
        assert_eq!(card.t2_no_hallucination, 1);
        assert_eq!(card.warnings.len(), 2);
    }

    #[test]
    fn agreement_counting() {
        let mk = |v: u8| ScoreCard::from_raw([v as i64; 10], "x".into());
        let a = vec![(1u64, mk(5)), (2, mk(4))];
        let same = agreement_pm1(&a, &a).unwrap();
        assert_eq!(same.mean, 1.0);

        let b = vec![(1u64, mk(3)), (2, mk(4))];
        let mixed = agreement_pm1(&a, &b).unwrap();
        // Item 1 scores (5,3): off by 2 on every criterion -> 0.5 each.
        for frac in mixed.per_criterion.values() {
            assert_eq!(*frac, 0.5);
        }

        let misaligned = vec![(9u64, mk(5)), (2, mk(4))];
        assert!(agreement_pm1(&a, &misaligned).is_err());

        // Counting oracle over random cards.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let rand_card = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut raw = [0i64; 10];
            for r in &mut raw {
                *r = rng.gen_range(1..=5);
            }
            ScoreCard::from_raw(raw, "r".into())
        };
        let xs: Vec<(u64, ScoreCard)> = (0..30).map(|i| (i, rand_card(&mut rng))).collect();
        let ys: Vec<(u64, ScoreCard)> = (0..30).map(|i| (i, rand_card(&mut rng))).collect();
        let got = agreement_pm1(&xs, &ys).unwrap();
        for (ci, name) in CRITERIA.iter().enumerate() {
            let want = xs
                .iter()
                .zip(&ys)
                .filter(|((_, a), (_, b))| {
                    let sa = a.scores()[ci].1 as i16;
                    let sb = b.scores()[ci].1 as i16;
                    (sa - sb).abs() <= 1
                })
                .count() as f64
                / 30.0;
            assert_eq!(got.per_criterion[*name], want);
        }
    }

    #[test]
    fn select_top_ordering() {
        let mk = |mean: u8| ScoreCard::from_raw([mean as i64; 10], "x".into());
        let scored = vec![(3u64, mk(4)), (1, mk(5)), (2, mk(4)), (4, mk(2))];
        assert_eq!(select_top(&scored, 4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(select_top(&scored, 2).unwrap(), vec![1, 2]);
        assert!(select_top(&scored, 5).is_err());

        // Permutation invariance.
        let mut shuffled = scored.clone();
        shuffled.reverse();
        assert_eq!(select_top(&shuffled, 3).unwrap(), select_top(&scored, 3).unwrap());
    }
}
