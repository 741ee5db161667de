//! BM25 ranking over a small document corpus, used for lexical destination
//! grounding against cell area descriptions.

use std::collections::BTreeMap;

use crate::metrics::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Inverted index over documents keyed by an ordered id type.
#[derive(Debug, Clone)]
pub struct Bm25Index<K: Ord + Clone> {
    postings: BTreeMap<String, BTreeMap<K, u32>>,
    doc_len: BTreeMap<K, u32>,
    avg_len: f64,
}

impl<K: Ord + Clone> Bm25Index<K> {
    pub fn build(docs: impl IntoIterator<Item = (K, String)>) -> Self {
        let mut postings: BTreeMap<String, BTreeMap<K, u32>> = BTreeMap::new();
        let mut doc_len = BTreeMap::new();
        for (id, text) in docs {
            let tokens = tokenize(&text);
            doc_len.insert(id.clone(), tokens.len() as u32);
            for tok in tokens {
                *postings.entry(tok).or_default().entry(id.clone()).or_default() += 1;
            }
        }
        let n = doc_len.len().max(1) as f64;
        let avg_len = doc_len.values().map(|&l| l as f64).sum::<f64>() / n;
        Bm25Index { postings, doc_len, avg_len }
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.doc_len.len() as f64;
        let df = self.postings.get(term).map(|p| p.len()).unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Ranked (id, score) pairs for a query, highest first, score ties
    /// broken by ascending id. Zero-scoring documents are omitted.
    pub fn rank(&self, query: &str, top: usize) -> Vec<(K, f64)> {
        let mut scores: BTreeMap<K, f64> = BTreeMap::new();
        for term in tokenize(query) {
            let Some(posting) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for (id, &tf) in posting {
                let dl = self.doc_len[id] as f64;
                let tf = tf as f64;
                let denom = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_len.max(1e-12));
                *scores.entry(id.clone()).or_default() += idf * tf * (BM25_K1 + 1.0) / denom;
            }
        }
        let mut ranked: Vec<(K, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top);
        ranked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_index() -> Bm25Index<u32> {
        Bm25Index::build([
            (1u32, "quiet park with tree lined paths".to_string()),
            (2, "busy market square with dining and shopping".to_string()),
            (3, "riverside docks with warehouses".to_string()),
            (4, "park and garden next to the river".to_string()),
        ])
    }

    #[test]
    fn exact_phrase_ranks_its_document_first() {
        let idx = toy_index();
        let ranked = idx.rank("busy market square", 4);
        assert_eq!(ranked[0].0, 2);
    }

    /// Term-frequency oracle: a document repeating the query term scores
    /// above one mentioning it once, all else equal.
    #[test]
    fn term_frequency_ordering() {
        let idx = Bm25Index::build([
            (1u32, "park".to_string()),
            (2, "park park park filler filler".to_string()),
            (3, "filler filler filler filler filler".to_string()),
        ]);
        let ranked = idx.rank("park", 3);
        assert_eq!(ranked.len(), 2, "zero-score docs omitted");
        // Doc 1 is shorter; doc 2 has higher tf. Verify against the formula
        // computed longhand.
        let n = 3.0f64;
        let df = 2.0f64;
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        let avg = (1.0 + 5.0 + 5.0) / 3.0;
        let score = |tf: f64, dl: f64| {
            idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avg))
        };
        let want1 = score(1.0, 1.0);
        let want2 = score(3.0, 5.0);
        let got: BTreeMap<u32, f64> = ranked.into_iter().collect();
        assert!((got[&1] - want1).abs() < 1e-12);
        assert!((got[&2] - want2).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let idx = Bm25Index::build([
            (7u32, "same words here".to_string()),
            (3, "same words here".to_string()),
        ]);
        let ranked = idx.rank("same words", 2);
        assert_eq!(ranked[0].0, 3);
        assert_eq!(ranked[1].0, 7);
        assert!((ranked[0].1 - ranked[1].1).abs() < 1e-12);
    }

    #[test]
    fn rare_terms_outweigh_common() {
        let idx = toy_index();
        let ranked = idx.rank("docks", 4);
        assert_eq!(ranked[0].0, 3);
    }
}
