//! Text metrics for trajectory captioning: ROUGE-L, METEOR (exact + stem
//! matching), POI recall, named-location counting, and an optional
//! embedding-based token F1 behind a pluggable scorer.

use std::collections::BTreeSet;

use crate::geo::normalize_name;
use crate::provider::Embedder;

/// Lowercased alphanumeric word tokens. Shared by every text metric so
/// results are invariant under case and surrounding punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let n = a.len();
    let m = b.len();
    if n == 0 || m == 0 {
        return 0;
    }
    let mut prev = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        for j in 1..=m {
            cur[j] = if a[i - 1] == b[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(cur[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// ROUGE-L: token-level longest-common-subsequence F score,
/// F = 2PR/(P+R) with P = LCS/|pred| and R = LCS/|ref|. Zero when either
/// side is empty.
pub fn rouge_l(pred: &str, reference: &str) -> f64 {
    let p = tokenize(pred);
    let r = tokenize(reference);
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&p, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let prec = lcs / p.len() as f64;
    let rec = lcs / r.len() as f64;
    2.0 * prec * rec / (prec + rec)
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: f64 = 3.0;
const METEOR_GAMMA: f64 = 0.5;

/// Fixed suffix-stripping stemmer used by the METEOR stem stage.
pub fn stem(token: &str) -> String {
    let t = token;
    let strip = |s: &str, suf: &str, min_stem: usize| -> Option<String> {
        s.strip_suffix(suf)
            .filter(|rest| rest.len() >= min_stem)
            .map(|rest| rest.to_string())
    };
    if let Some(s) = strip(t, "ing", 3) {
        return s;
    }
    if let Some(s) = t.strip_suffix("ies").filter(|r| r.len() >= 2) {
        return format!("{s}y");
    }
    if let Some(s) = strip(t, "ed", 3) {
        return s;
    }
    if let Some(s) = strip(t, "ly", 3) {
        return s;
    }
    if let Some(s) = strip(t, "es", 3) {
        return s;
    }
    if let Some(s) = strip(t, "s", 3) {
        return s;
    }
    t.to_string()
}

/// Greedy two-stage unigram alignment: exact matches first, then
/// stem-equal matches over the remainder. Each token matches at most once;
/// candidates bind to the first unmatched counterpart in order.
fn align(pred: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut used_ref = vec![false; reference.len()];
    let mut match_of_pred: Vec<Option<usize>> = vec![None; pred.len()];
    for (i, tok) in pred.iter().enumerate() {
        if let Some(j) = reference
            .iter()
            .enumerate()
            .position(|(j, r)| !used_ref[j] && r == tok)
        {
            used_ref[j] = true;
            match_of_pred[i] = Some(j);
        }
    }
    for (i, tok) in pred.iter().enumerate() {
        if match_of_pred[i].is_some() {
            continue;
        }
        let st = stem(tok);
        if let Some(j) = reference
            .iter()
            .enumerate()
            .position(|(j, r)| !used_ref[j] && stem(r) == st)
        {
            used_ref[j] = true;
            match_of_pred[i] = Some(j);
        }
    }
    match_of_pred
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (i, j)))
        .collect()
}

/// Count chunks: maximal runs of matches that are consecutive in both the
/// prediction and the reference.
fn chunk_count(matches: &[(usize, usize)]) -> usize {
    if matches.is_empty() {
        return 0;
    }
    let mut chunks = 1;
    for w in matches.windows(2) {
        if w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1 {
            chunks += 1;
        }
    }
    chunks
}

/// METEOR with exact + stem unigram matching.
///
/// F_mean = P·R / (α·P + (1−α)·R) with α = 0.9, penalized by
/// γ·frag^β (β = 3, γ = 0.5) where frag = (chunks − 1) / max(m − 1, 1);
/// a perfectly ordered alignment carries no penalty, so identical texts
/// score exactly 1.
pub fn meteor(pred: &str, reference: &str) -> f64 {
    let p = tokenize(pred);
    let r = tokenize(reference);
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let matches = align(&p, &r);
    let m = matches.len();
    if m == 0 {
        return 0.0;
    }
    let prec = m as f64 / p.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let f_mean = prec * rec / (METEOR_ALPHA * prec + (1.0 - METEOR_ALPHA) * rec);
    let chunks = chunk_count(&matches);
    let frag = (chunks - 1) as f64 / (m - 1).max(1) as f64;
    let penalty = METEOR_GAMMA * frag.powf(METEOR_BETA);
    f_mean * (1.0 - penalty)
}

/// POI recall of a generated caption against the ground-truth POI set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoiRecall {
    pub value: f64,
    pub n_gt: usize,
}

/// Normalized word-boundary phrase search. Both sides must already be
/// normalized via [`normalize_name`].
pub fn contains_phrase(text_norm: &str, phrase_norm: &str) -> bool {
    if phrase_norm.is_empty() {
        return false;
    }
    let bytes = text_norm.as_bytes();
    let mut from = 0;
    while let Some(pos) = text_norm[from..].find(phrase_norm) {
        let start = from + pos;
        let end = start + phrase_norm.len();
        let boundary_before = start == 0 || !is_word_byte(bytes[start - 1]);
        let boundary_after = end == bytes.len() || !is_word_byte(bytes[end]);
        if boundary_before && boundary_after {
            return true;
        }
        from = start + 1;
    }
    false
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

/// Fraction of ground-truth POI names whose normalized form occurs in the
/// prediction; vacuously 1.0 when the ground-truth set is empty (the count
/// is reported alongside).
pub fn poi_recall(pred: &str, gt_pois: &BTreeSet<String>) -> PoiRecall {
    if gt_pois.is_empty() {
        return PoiRecall { value: 1.0, n_gt: 0 };
    }
    let text = normalize_name(pred);
    let hit = gt_pois
        .iter()
        .filter(|poi| contains_phrase(&text, &normalize_name(poi)))
        .count();
    PoiRecall {
        value: hit as f64 / gt_pois.len() as f64,
        n_gt: gt_pois.len(),
    }
}

/// Number of distinct normalized gazetteer entries occurring in the text.
pub fn named_location_count(pred: &str, gazetteer: &BTreeSet<String>) -> usize {
    let text = normalize_name(pred);
    gazetteer
        .iter()
        .filter(|entry| contains_phrase(&text, &normalize_name(entry)))
        .count()
}

/// Embedding-based token-matching F1: greedy max-cosine alignment of token
/// embeddings in both directions. The scorer is pluggable; the offline
/// default is the hash embedder.
pub fn embedding_f1(pred: &str, reference: &str, embedder: &dyn Embedder) -> f64 {
    let p = tokenize(pred);
    let r = tokenize(reference);
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let pe: Vec<Vec<f64>> = p.iter().map(|t| embedder.embed(t)).collect();
    let re: Vec<Vec<f64>> = r.iter().map(|t| embedder.embed(t)).collect();
    let side = |xs: &[Vec<f64>], ys: &[Vec<f64>]| -> f64 {
        xs.iter()
            .map(|x| {
                ys.iter()
                    .map(|y| crate::provider::cosine(x, y))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / xs.len() as f64
    };
    let prec = side(&pe, &re);
    let rec = side(&re, &pe);
    if prec + rec <= 0.0 {
        return 0.0;
    }
    2.0 * prec * rec / (prec + rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_l_formula_arithmetic() {
        assert_eq!(rouge_l("the cat sat", "the cat sat"), 1.0);
        assert_eq!(rouge_l("alpha beta", "gamma delta"), 0.0);
        // "the cat sat" vs "the cat": LCS 2, P = 2/3, R = 1, F = 0.8.
        assert!((rouge_l("the cat sat", "the cat") - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l("", "the cat"), 0.0);
        // Case and punctuation insensitive.
        assert_eq!(rouge_l("The Cat, sat.", "the cat sat"), 1.0);
    }

    #[test]
    fn meteor_identity_and_disjoint() {
        assert_eq!(meteor("the drive heads north", "the drive heads north"), 1.0);
        assert_eq!(meteor("alpha beta", "gamma delta"), 0.0);
        assert_eq!(meteor("", "x"), 0.0);
    }

    #[test]
    fn meteor_stem_matching() {
        // "turns" aligns with "turn" through the stem stage.
        let s = meteor("the car turns", "the car turn");
        assert!(s > 0.9, "stem match should align all tokens: {s}");
    }

    /// Independent reference implementation of the same formula, built
    /// from scratch with different data handling.
    #[allow(clippy::needless_range_loop)]
    fn meteor_oracle(pred: &str, reference: &str) -> f64 {
        let p = tokenize(pred);
        let r = tokenize(reference);
        if p.is_empty() || r.is_empty() {
            return 0.0;
        }
        // Greedy matching identical to the documented contract:
        // exact pass then stem pass, first unmatched reference wins.
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut taken = vec![false; r.len()];
        for pass in 0..2 {
            for i in 0..p.len() {
                if pairs.iter().any(|&(pi, _)| pi == i) {
                    continue;
                }
                for j in 0..r.len() {
                    if taken[j] {
                        continue;
                    }
                    let hit = if pass == 0 {
                        p[i] == r[j]
                    } else {
                        stem(&p[i]) == stem(&r[j])
                    };
                    if hit {
                        pairs.push((i, j));
                        taken[j] = true;
                        break;
                    }
                }
            }
        }
        pairs.sort();
        let m = pairs.len();
        if m == 0 {
            return 0.0;
        }
        let prec = m as f64 / p.len() as f64;
        let rec = m as f64 / r.len() as f64;
        let f = prec * rec / (0.9 * prec + 0.1 * rec);
        let mut chunks = 1;
        for w in pairs.windows(2) {
            if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
                chunks += 1;
            }
        }
        let frag = (chunks - 1) as f64 / (m - 1).max(1) as f64;
        f * (1.0 - 0.5 * frag.powi(3))
    }

    #[test]
    fn meteor_matches_reference_implementation() {
        let cases = [
            ("the drive heads north on main street", "the drive heads north on main street"),
            ("drive north then east to the park", "the route heads north and east toward the park"),
            ("turning left at the river crossing", "turns left at the river"),
            ("a b c d", "d c b a"),
            ("one two three", "one three two"),
            ("quick northbound run", "slow southbound crawl"),
        ];
        for (p, r) in cases {
            let got = meteor(p, r);
            let want = meteor_oracle(p, r);
            assert!((got - want).abs() < 1e-12, "{p:?} vs {r:?}: {got} != {want}");
        }
    }

    #[test]
    fn meteor_penalizes_scatter() {
        let ordered = meteor("a b c d e", "a b c d e");
        let scattered = meteor("a c e b d", "a b c d e");
        assert!(ordered > scattered);
    }

    #[test]
    fn poi_recall_counting() {
        let pois: BTreeSet<String> =
            ["cafe central", "ponte d"].iter().map(|s| s.to_string()).collect();
        let all = poi_recall("passing Café Central then Ponte D", &pois);
        assert_eq!(all.value, 1.0);
        assert_eq!(all.n_gt, 2);
        let none = poi_recall("a quiet drive", &pois);
        assert_eq!(none.value, 0.0);
        let empty = poi_recall("anything", &BTreeSet::new());
        assert_eq!(empty.value, 1.0);
        assert_eq!(empty.n_gt, 0);

        // Word boundaries: "central" must not match inside "centralized".
        let tricky: BTreeSet<String> = ["central"].iter().map(|s| s.to_string()).collect();
        assert_eq!(poi_recall("centralized depot", &tricky).value, 0.0);
        assert_eq!(poi_recall("the central depot", &tricky).value, 1.0);
    }

    #[test]
    fn poi_recall_fuzzed_subsets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(404);
        let pool: Vec<String> = (0..20).map(|i| format!("place {i}")).collect();
        for _ in 0..100 {
            let gt: BTreeSet<String> = pool
                .iter()
                .filter(|_| rng.gen_bool(0.4))
                .cloned()
                .collect();
            let mentioned: Vec<&String> =
                gt.iter().filter(|_| rng.gen_bool(0.5)).collect();
            let text = mentioned
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            let got = poi_recall(&text, &gt);
            if gt.is_empty() {
                assert_eq!(got.value, 1.0);
            } else {
                assert_eq!(got.value, mentioned.len() as f64 / gt.len() as f64);
            }
        }
    }

    #[test]
    fn named_location_count_distinct() {
        let gaz: BTreeSet<String> = ["rua nova", "ponte d", "cedofeita"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(named_location_count("", &gaz), 0);
        assert_eq!(
            named_location_count("Rua Nova, then Rua Nova again", &gaz),
            1
        );
        assert_eq!(
            named_location_count("from Cedofeita via Rua Nova to Ponte D", &gaz),
            3
        );
    }

    #[test]
    fn embedding_f1_identity_tops_disjoint() {
        let embedder = crate::provider::HashEmbedder::default();
        let same = embedding_f1("north on main street", "north on main street", &embedder);
        assert!((same - 1.0).abs() < 1e-9);
        let diff = embedding_f1("north on main street", "zqx vvb qqq", &embedder);
        assert!(diff < same);
    }
}
