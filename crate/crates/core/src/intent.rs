//! Four-dimensional travel-intent taxonomy and the seeded samplers that
//! condition annotation generation.
//!
//! Ten scenarios span four dimensions (Destination, Waypoint, Route
//! Preference, Temporal/Pace). Each trajectory draws k scenarios without
//! replacement, k weighted toward 2-3, with exactly one Destination scenario
//! always present. Sampling is a pure function of (seed, traj_id) via
//! per-trajectory rng streams.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntentError {
    #[error("empty pool: {0}")]
    EmptyPool(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("pools config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// The ten taxonomy scenarios. Display form is the dotted id (`1.1` ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    ExactAnchor,
    FuzzySemantic,
    StrictSequential,
    FlexibleFeature,
    PassThroughZone,
    SemanticConstraints,
    TopologicalDirectional,
    OrthogonalComposition,
    TimeOfDay,
    PaceDuration,
}

impl Scenario {
    pub const ALL: [Scenario; 10] = [
        Scenario::ExactAnchor,
        Scenario::FuzzySemantic,
        Scenario::StrictSequential,
        Scenario::FlexibleFeature,
        Scenario::PassThroughZone,
        Scenario::SemanticConstraints,
        Scenario::TopologicalDirectional,
        Scenario::OrthogonalComposition,
        Scenario::TimeOfDay,
        Scenario::PaceDuration,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Scenario::ExactAnchor => "1.1",
            Scenario::FuzzySemantic => "1.2",
            Scenario::StrictSequential => "2.1",
            Scenario::FlexibleFeature => "2.2",
            Scenario::PassThroughZone => "2.3",
            Scenario::SemanticConstraints => "3.1",
            Scenario::TopologicalDirectional => "3.2",
            Scenario::OrthogonalComposition => "3.3",
            Scenario::TimeOfDay => "4.1",
            Scenario::PaceDuration => "4.2",
        }
    }

    pub fn dimension(&self) -> u8 {
        self.id().as_bytes()[0] - b'0'
    }

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::ExactAnchor => "Exact Anchor",
            Scenario::FuzzySemantic => "Fuzzy Semantic",
            Scenario::StrictSequential => "Strict Sequential",
            Scenario::FlexibleFeature => "Flexible / Feature",
            Scenario::PassThroughZone => "Pass-through Zone",
            Scenario::SemanticConstraints => "Semantic Constraints",
            Scenario::TopologicalDirectional => "Topological / Directional",
            Scenario::OrthogonalComposition => "Orthogonal Composition",
            Scenario::TimeOfDay => "Time-of-Day",
            Scenario::PaceDuration => "Pace / Duration",
        }
    }

    pub fn from_id(id: &str) -> Option<Scenario> {
        Scenario::ALL.iter().copied().find(|s| s.id() == id)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Scenario-count distribution over k in 1..=5.
pub const COUNT_WEIGHTS: [f64; 5] = [0.15, 0.35, 0.30, 0.15, 0.05];

/// The sampled intent profile of one trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentProfile {
    pub traj_id: u64,
    pub scenarios: Vec<Scenario>,
    pub k: usize,
    /// Scenario 3.3 composes semantic-vs-topology tension; its co-occurrence
    /// with 3.1/3.2 is permitted and surfaced here for downstream metadata.
    pub orthogonal_cooccurrence: bool,
}

impl IntentProfile {
    pub fn scenario_line(&self) -> String {
        self.scenarios
            .iter()
            .map(|s| s.id().to_string())
            .collect::<Vec<_>>()
            .join(" + ")
    }

    /// Dimensions covered by this profile, ascending.
    pub fn dimensions(&self) -> BTreeSet<u8> {
        self.scenarios.iter().map(|s| s.dimension()).collect()
    }
}

/// Rng stream domains so the profile and persona draws of one trajectory
/// never overlap.
const STREAM_PROFILE: u64 = 0x1;
const STREAM_STYLE: u64 = 0x2;

fn stream_rng(seed: u64, traj_id: u64, domain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (domain.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    rng.set_stream(traj_id);
    rng
}

/// Sample the intent profile of one trajectory: k ~ COUNT_WEIGHTS, one
/// destination scenario uniform over {1.1, 1.2}, remaining k-1 uniform
/// without replacement from the eight scenarios of dimensions 2-4.
pub fn sample_profile(seed: u64, traj_id: u64) -> IntentProfile {
    let mut rng = stream_rng(seed, traj_id, STREAM_PROFILE);

    let u: f64 = rng.gen();
    let mut k = COUNT_WEIGHTS.len();
    let mut acc = 0.0;
    for (i, w) in COUNT_WEIGHTS.iter().enumerate() {
        acc += w;
        if u < acc {
            k = i + 1;
            break;
        }
    }

    let destination = if rng.gen_bool(0.5) {
        Scenario::ExactAnchor
    } else {
        Scenario::FuzzySemantic
    };

    let mut rest: Vec<Scenario> = Scenario::ALL
        .iter()
        .copied()
        .filter(|s| s.dimension() != 1)
        .collect();
    // Partial Fisher-Yates: draw k-1 without replacement.
    let mut picked = Vec::with_capacity(k - 1);
    for i in 0..k - 1 {
        let j = rng.gen_range(i..rest.len());
        rest.swap(i, j);
        picked.push(rest[i]);
    }
    picked.sort();

    let mut scenarios = vec![destination];
    scenarios.extend(picked);
    let dims3: Vec<Scenario> = scenarios
        .iter()
        .copied()
        .filter(|s| s.dimension() == 3)
        .collect();
    let orthogonal_cooccurrence =
        dims3.len() > 1 && dims3.contains(&Scenario::OrthogonalComposition);

    IntentProfile { traj_id, scenarios, k, orthogonal_cooccurrence }
}

/// The three instruction styles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Style {
    Literal,
    Concise,
    Chatty,
}

impl Style {
    pub const ALL: [Style; 3] = [Style::Literal, Style::Concise, Style::Chatty];

    pub fn as_str(&self) -> &'static str {
        match self {
            Style::Literal => "literal",
            Style::Concise => "concise",
            Style::Chatty => "chatty",
        }
    }
}

/// Per-style sentence-form and length guidance for one trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleHint {
    pub sentence_form: String,
    pub length: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaStyle {
    pub persona: String,
    pub literal: StyleHint,
    pub concise: StyleHint,
    pub chatty: StyleHint,
}

impl PersonaStyle {
    pub fn hint(&self, style: Style) -> &StyleHint {
        match style {
            Style::Literal => &self.literal,
            Style::Concise => &self.concise,
            Style::Chatty => &self.chatty,
        }
    }
}

/// The configurable pools behind persona/style sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePools {
    pub persona: Vec<String>,
    pub literal_forms: Vec<String>,
    pub concise_forms: Vec<String>,
    pub chatty_forms: Vec<String>,
    pub literal_lengths: Vec<String>,
    pub concise_lengths: Vec<String>,
    pub chatty_lengths: Vec<String>,
}

impl Default for StylePools {
    fn default() -> Self {
        let v = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        StylePools {
            persona: v(&[
                "Impatient and rushed",
                "Calm and methodical",
                "Chatty tourist",
                "Brisk local commuter",
                "Polite newcomer",
                "Tired night-shift worker",
                "Cheerful weekend explorer",
                "No-nonsense business traveler",
                "Anxious first-time visitor",
                "Laid-back regular",
            ]),
            literal_forms: v(&[
                "imperative command",
                "declarative statement",
                "sequenced action",
                "context-aware continuation",
                "telegraphic/terse",
                "coordinate-style",
            ]),
            concise_forms: v(&[
                "single word or minimal fragment",
                "terse command",
                "abbreviated phrase",
                "constraint-first",
                "destination-only",
            ]),
            chatty_forms: v(&[
                "question form",
                "complaint or reaction",
                "narrative/storytelling",
                "casual suggestion",
                "soft request",
                "trailing/open-ended",
            ]),
            literal_lengths: v(&[
                "Brief but complete (one sentence)",
                "Moderate (dest. + 1-2 constraints)",
                "Detailed (dest. + waypoints + constr.)",
            ]),
            concise_lengths: v(&[
                "Ultra-terse (telegram, fragments ok)",
                "Short phrase (minimal thought)",
                "Brief sentence (concise, grammatical)",
            ]),
            chatty_lengths: v(&[
                "Casual one-liner",
                "Conversational (a couple sentences)",
                "Chatty and detailed (rambling ok)",
            ]),
        }
    }
}

impl StylePools {
    fn check(&self) -> Result<(), IntentError> {
        if self.persona.is_empty() {
            return Err(IntentError::EmptyPool("persona"));
        }
        if self.literal_forms.is_empty() {
            return Err(IntentError::EmptyPool("literal_forms"));
        }
        if self.concise_forms.is_empty() {
            return Err(IntentError::EmptyPool("concise_forms"));
        }
        if self.chatty_forms.is_empty() {
            return Err(IntentError::EmptyPool("chatty_forms"));
        }
        if self.literal_lengths.is_empty() {
            return Err(IntentError::EmptyPool("literal_lengths"));
        }
        if self.concise_lengths.is_empty() {
            return Err(IntentError::EmptyPool("concise_lengths"));
        }
        if self.chatty_lengths.is_empty() {
            return Err(IntentError::EmptyPool("chatty_lengths"));
        }
        Ok(())
    }

    /// Parse the key-value pools config: `key = value` lines, repeated keys
    /// append, `#` comments.
    pub fn load(path: &Path) -> Result<Self, IntentError> {
        let text = std::fs::read_to_string(path)?;
        let mut pools = StylePools {
            persona: vec![],
            literal_forms: vec![],
            concise_forms: vec![],
            chatty_forms: vec![],
            literal_lengths: vec![],
            concise_lengths: vec![],
            chatty_lengths: vec![],
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(IntentError::Parse {
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            let value = value.trim().to_string();
            match key.trim() {
                "persona" => pools.persona.push(value),
                "literal_forms" => pools.literal_forms.push(value),
                "concise_forms" => pools.concise_forms.push(value),
                "chatty_forms" => pools.chatty_forms.push(value),
                "literal_lengths" => pools.literal_lengths.push(value),
                "concise_lengths" => pools.concise_lengths.push(value),
                "chatty_lengths" => pools.chatty_lengths.push(value),
                other => {
                    return Err(IntentError::Parse {
                        line: i + 1,
                        msg: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        pools.check()?;
        Ok(pools)
    }

    pub fn save(&self, path: &Path) -> Result<(), IntentError> {
        let mut out = String::new();
        let mut emit = |key: &str, values: &[String]| {
            for v in values {
                out.push_str(key);
                out.push_str(" = ");
                out.push_str(v);
                out.push('\n');
            }
        };
        emit("persona", &self.persona);
        emit("literal_forms", &self.literal_forms);
        emit("concise_forms", &self.concise_forms);
        emit("chatty_forms", &self.chatty_forms);
        emit("literal_lengths", &self.literal_lengths);
        emit("concise_lengths", &self.concise_lengths);
        emit("chatty_lengths", &self.chatty_lengths);
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Draw a persona plus per-style sentence-form and length hints, uniform
/// over the configured pools.
pub fn sample_persona_style(
    pools: &StylePools,
    seed: u64,
    traj_id: u64,
) -> Result<PersonaStyle, IntentError> {
    pools.check()?;
    let mut rng = stream_rng(seed, traj_id, STREAM_STYLE);
    let pick = |rng: &mut ChaCha8Rng, pool: &[String]| pool[rng.gen_range(0..pool.len())].clone();
    Ok(PersonaStyle {
        persona: pick(&mut rng, &pools.persona),
        literal: StyleHint {
            sentence_form: pick(&mut rng, &pools.literal_forms),
            length: pick(&mut rng, &pools.literal_lengths),
        },
        concise: StyleHint {
            sentence_form: pick(&mut rng, &pools.concise_forms),
            length: pick(&mut rng, &pools.concise_lengths),
        },
        chatty: StyleHint {
            sentence_form: pick(&mut rng, &pools.chatty_forms),
            length: pick(&mut rng, &pools.chatty_lengths),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn taxonomy_table_is_exact() {
        assert_eq!(Scenario::ALL.len(), 10);
        let ids: Vec<&str> = Scenario::ALL.iter().map(|s| s.id()).collect();
        assert_eq!(
            ids,
            vec!["1.1", "1.2", "2.1", "2.2", "2.3", "3.1", "3.2", "3.3", "4.1", "4.2"]
        );
        let by_dim: BTreeMap<u8, usize> =
            Scenario::ALL.iter().fold(BTreeMap::new(), |mut m, s| {
                *m.entry(s.dimension()).or_default() += 1;
                m
            });
        assert_eq!(by_dim, BTreeMap::from([(1, 2), (2, 3), (3, 3), (4, 2)]));
    }

    #[test]
    fn profile_structure_invariants() {
        for traj_id in 0..2000u64 {
            let p = sample_profile(42, traj_id);
            assert_eq!(p.k, p.scenarios.len());
            assert!((1..=5).contains(&p.k));
            let dim1 = p.scenarios.iter().filter(|s| s.dimension() == 1).count();
            assert_eq!(dim1, 1, "exactly one destination scenario");
            if p.k == 1 {
                assert_eq!(p.scenarios[0].dimension(), 1);
            }
            let distinct: BTreeSet<_> = p.scenarios.iter().collect();
            assert_eq!(distinct.len(), p.scenarios.len(), "without replacement");
        }
    }

    #[test]
    fn profile_deterministic_in_seed_and_id() {
        let a = sample_profile(7, 123);
        let b = sample_profile(7, 123);
        assert_eq!(a, b);
        let c = sample_profile(8, 123);
        let d = sample_profile(7, 124);
        // Different streams; overwhelmingly likely to differ somewhere over
        // many ids, but single draws may collide. Just assert determinism
        // plus at least one difference across a range.
        let mut any_diff_seed = c != a;
        let mut any_diff_id = d != a;
        for id in 0..200 {
            any_diff_seed |= sample_profile(8, id) != sample_profile(7, id);
            any_diff_id |= sample_profile(7, id) != sample_profile(7, id + 1);
        }
        assert!(any_diff_seed && any_diff_id);
    }

    #[test]
    fn count_distribution_matches_weights() {
        let n = 100_000u64;
        let mut counts = [0usize; 5];
        for traj_id in 0..n {
            let p = sample_profile(1234, traj_id);
            counts[p.k - 1] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - COUNT_WEIGHTS[i]).abs() <= 0.01,
                "k={} freq {freq} vs weight {}",
                i + 1,
                COUNT_WEIGHTS[i]
            );
        }
    }

    #[test]
    fn persona_style_uniformity() {
        let pools = StylePools::default();
        let n = 60_000u64;
        let mut form_counts: BTreeMap<String, usize> = BTreeMap::new();
        for traj_id in 0..n {
            let ps = sample_persona_style(&pools, 9, traj_id).unwrap();
            *form_counts.entry(ps.literal.sentence_form).or_default() += 1;
        }
        assert_eq!(form_counts.len(), 6);
        for (form, c) in form_counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 1.0 / 6.0).abs() <= 0.01, "{form}: {freq}");
        }
    }

    #[test]
    fn persona_style_determinism_and_single_pool() {
        let pools = StylePools::default();
        let a = sample_persona_style(&pools, 5, 77).unwrap();
        let b = sample_persona_style(&pools, 5, 77).unwrap();
        assert_eq!(a, b);

        let single = StylePools {
            persona: vec!["Only one".into()],
            ..StylePools::default()
        };
        for id in 0..50 {
            assert_eq!(sample_persona_style(&single, 1, id).unwrap().persona, "Only one");
        }
    }

    #[test]
    fn empty_pool_is_configuration_error() {
        let mut pools = StylePools::default();
        pools.chatty_lengths.clear();
        assert!(matches!(
            sample_persona_style(&pools, 1, 1),
            Err(IntentError::EmptyPool("chatty_lengths"))
        ));
    }

    #[test]
    fn pools_config_round_trip() {
        let pools = StylePools::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pools.conf");
        pools.save(&path).unwrap();
        assert_eq!(StylePools::load(&path).unwrap(), pools);

        std::fs::write(&path, "persona Hello\n").unwrap();
        assert!(matches!(StylePools::load(&path), Err(IntentError::Parse { line: 1, .. })));
    }
}
