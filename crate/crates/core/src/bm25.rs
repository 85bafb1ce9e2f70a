//! Okapi BM25 over the passages of a single knowledge store.

use std::collections::HashMap;

use crate::corpus::{DocRef, KnowledgeStore};
use crate::error::{Error, Result};
use crate::num::Real;

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params<T> {
    /// Term-frequency saturation.
    pub k1: T,
    /// Length normalization strength, in `[0, 1]`.
    pub b: T,
}

impl<T: Real> Default for Bm25Params<T> {
    fn default() -> Self {
        Bm25Params {
            k1: T::lit(1.2),
            b: T::lit(0.75),
        }
    }
}

impl<T: Real> Bm25Params<T> {
    pub fn new(k1: T, b: T) -> Result<Self> {
        if !k1.is_finite() || k1 < T::zero() {
            return Err(Error::Config(format!("k1 must be >= 0, got {k1:?}")));
        }
        if !(T::zero()..=T::one()).contains(&b) {
            return Err(Error::Config(format!("b must be in [0, 1], got {b:?}")));
        }
        Ok(Bm25Params { k1, b })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredDoc<T> {
    pub doc: DocRef,
    pub score: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Posting {
    pub ordinal: usize,
    pub tf: usize,
}

#[derive(Clone, Debug)]
pub struct Bm25Index<T> {
    doc_refs: Vec<DocRef>,
    doc_lengths: Vec<usize>,
    avg_doc_length: T,
    doc_frequencies: HashMap<String, usize>,
    /// Sorted by ordinal.
    postings: HashMap<String, Vec<Posting>>,
    params: Bm25Params<T>,
}

impl<T: Real> Bm25Index<T> {
    /// Indexes every non-blank passage of the store.
    pub fn build(store: &KnowledgeStore, params: Bm25Params<T>) -> Self {
        Self::from_docs(store.retrievable(), params)
    }

    pub fn from_docs<'a>(
        docs: impl IntoIterator<Item = (DocRef, &'a str)>,
        params: Bm25Params<T>,
    ) -> Self {
        let mut doc_refs = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();

        for (ordinal, (doc, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { ordinal, tf });
            }
            doc_refs.push(doc);
            doc_lengths.push(tokens.len());
        }

        let n_docs = doc_refs.len();
        let avg_doc_length = if n_docs == 0 {
            T::zero()
        } else {
            T::from_count(doc_lengths.iter().sum()) / T::from_count(n_docs)
        };
        let doc_frequencies = postings
            .iter()
            .map(|(term, list)| (term.clone(), list.len()))
            .collect();

        Bm25Index {
            doc_refs,
            doc_lengths,
            avg_doc_length,
            doc_frequencies,
            postings,
            params,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_refs.len()
    }

    pub fn doc_refs(&self) -> &[DocRef] {
        &self.doc_refs
    }

    pub fn doc_lengths(&self) -> &[usize] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> T {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params<T> {
        self.params
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.doc_frequencies.get(term).copied().unwrap_or(0)
    }

    pub fn doc_frequencies(&self) -> &HashMap<String, usize> {
        &self.doc_frequencies
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, positive for every df.
    pub fn idf(&self, term: &str) -> T {
        let n = T::from_count(self.n_docs());
        let df = T::from_count(self.doc_frequency(term));
        let half = T::lit(0.5);
        (T::one() + (n - df + half) / (df + half)).ln()
    }

    fn term_weight(&self, idf: T, tf: usize, ordinal: usize) -> T {
        let Bm25Params { k1, b } = self.params;
        let tf = T::from_count(tf);
        let len = T::from_count(self.doc_lengths[ordinal]);
        let norm = T::one() - b + b * len / self.avg_doc_length;
        idf * tf * (k1 + T::one()) / (tf + k1 * norm)
    }

    /// BM25 score of one indexed document. Repeated query terms count once.
    pub fn score<S: AsRef<str>>(&self, query_tokens: &[S], ordinal: usize) -> Result<T> {
        if ordinal >= self.n_docs() {
            return Err(Error::OutOfRange {
                ordinal,
                n_docs: self.n_docs(),
            });
        }
        let mut total = T::zero();
        for term in unique_terms(query_tokens) {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by_key(&ordinal, |p| p.ordinal) {
                total = total + self.term_weight(self.idf(term), list[pos].tf, ordinal);
            }
        }
        Ok(total)
    }

    /// Top `top_k` documents with a positive score, best first, ties broken by
    /// ascending document reference.
    pub fn retrieve(&self, query: &str, top_k: usize) -> Vec<ScoredDoc<T>> {
        if top_k == 0 || self.n_docs() == 0 {
            return Vec::new();
        }
        let tokens = tokenize(query);
        let mut scores = vec![T::zero(); self.n_docs()];
        for term in unique_terms(&tokens) {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                scores[p.ordinal] = scores[p.ordinal] + self.term_weight(idf, p.tf, p.ordinal);
            }
        }

        let mut hits: Vec<ScoredDoc<T>> = scores
            .into_iter()
            .enumerate()
            .filter(|(_, s)| *s > T::zero())
            .map(|(ordinal, score)| ScoredDoc {
                doc: self.doc_refs[ordinal],
                score,
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then(a.doc.cmp(&b.doc))
        });
        hits.truncate(top_k);
        hits
    }
}

fn unique_terms<S: AsRef<str>>(tokens: &[S]) -> Vec<&str> {
    let mut seen = std::collections::HashSet::new();
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| seen.insert(*t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UrlEntry;
    use proptest::prelude::*;

    type Index = Bm25Index<f64>;

    fn two_doc() -> Index {
        Index::from_docs(
            [(DocRef::new(0, 0), "a b"), (DocRef::new(0, 1), "b c")],
            Bm25Params::default(),
        )
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("The cat, the CAT."), ["the", "cat", "the", "cat"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ,;- ").is_empty());
        assert_eq!(tokenize("COVID-19 cases"), ["covid", "19", "cases"]);
        assert_eq!(tokenize("Café_au lait"), ["café", "au", "lait"]);
    }

    #[test]
    fn counts_documents() {
        let store = KnowledgeStore::new(
            0,
            vec![
                UrlEntry {
                    url: "u0".into(),
                    passages: vec!["x".into(), "".into(), "y".into()],
                },
                UrlEntry {
                    url: "u1".into(),
                    passages: vec!["z".into(), "w".into()],
                },
            ],
        );
        let index = Index::build(&store, Bm25Params::default());
        assert_eq!(index.n_docs(), 4);
        assert!(!index.doc_refs().contains(&DocRef::new(0, 1)));
        assert!(index.doc_refs().contains(&DocRef::new(0, 2)));

        let empty = Index::build(&KnowledgeStore::new(0, vec![]), Bm25Params::default());
        assert_eq!(empty.n_docs(), 0);
        assert_eq!(empty.avg_doc_length(), 0.0);
        assert!(empty.retrieve("anything", 10).is_empty());
    }

    #[test]
    fn document_frequencies() {
        let index = two_doc();
        assert_eq!(index.doc_frequency("a"), 1);
        assert_eq!(index.doc_frequency("b"), 2);
        assert_eq!(index.doc_frequency("c"), 1);
        assert_eq!(index.avg_doc_length(), 2.0);
    }

    #[test]
    #[allow(clippy::approx_constant)] // the frozen six-digit hand value
    fn hand_computed_scores() {
        let index = two_doc();
        // idf(a) = ln 2, tf part = 1 * 2.2 / 2.2 = 1
        let s = index.score(&["a"], 0).unwrap();
        assert!((s - 0.693147).abs() < 1e-6, "{s}");
        assert!((s - 2f64.ln()).abs() < 1e-12);
        assert_eq!(index.score(&["a"], 1).unwrap(), 0.0);
        // idf(b) = ln 1.2 for both documents
        for ord in 0..2 {
            let s = index.score(&["b"], ord).unwrap();
            assert!((s - 0.182322).abs() < 1e-6, "{s}");
        }
        assert_eq!(index.score(&["zzz"], 0).unwrap(), 0.0);
        assert!(matches!(
            index.score(&["a"], 2),
            Err(Error::OutOfRange { ordinal: 2, n_docs: 2 })
        ));
    }

    #[test]
    fn repeated_query_terms_count_once() {
        let index = two_doc();
        assert_eq!(
            index.score(&["a", "a", "b"], 0).unwrap(),
            index.score(&["a", "b"], 0).unwrap()
        );
    }

    #[test]
    fn retrieve_edge_cases() {
        let index = two_doc();
        assert!(index.retrieve("a b", 0).is_empty());
        assert!(index.retrieve("nothing here", 5).is_empty());
        let hits = index.retrieve("b", 5);
        // equal scores fall back to document order
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].doc, DocRef::new(0, 0));
        assert_eq!(hits[1].doc, DocRef::new(0, 1));
        let hits = index.retrieve("A", 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc, DocRef::new(0, 0));
    }

    #[test]
    fn f32_index_agrees_with_f64() {
        let docs = [
            (DocRef::new(0, 0), "the quick brown fox"),
            (DocRef::new(0, 1), "a lazy dog sleeps"),
            (DocRef::new(1, 0), "the fox jumps over the dog"),
        ];
        let a = Bm25Index::<f32>::from_docs(docs, Bm25Params::default());
        let b = Bm25Index::<f64>::from_docs(docs, Bm25Params::default());
        let ra: Vec<_> = a.retrieve("fox dog", 3).iter().map(|h| h.doc).collect();
        let rb: Vec<_> = b.retrieve("fox dog", 3).iter().map(|h| h.doc).collect();
        assert_eq!(ra, rb);
    }

    #[test]
    fn param_validation() {
        assert!(Bm25Params::new(1.2f64, 0.75).is_ok());
        assert!(Bm25Params::new(-0.1f64, 0.75).is_err());
        assert!(Bm25Params::new(1.2f64, 1.5).is_err());
        assert!(Bm25Params::new(f64::NAN, 0.5).is_err());
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<String>> {
        let word = proptest::sample::select(vec!["a", "b", "c", "d", "e", "f", "g"]);
        proptest::collection::vec(
            proptest::collection::vec(word, 0..8).prop_map(|w| w.join(" ")),
            1..12,
        )
    }

    proptest! {
        #[test]
        fn index_statistics_hold(corpus in corpus_strategy()) {
            let docs: Vec<_> = corpus.iter().enumerate()
                .map(|(i, t)| (DocRef::new(i, 0), t.as_str())).collect();
            let index = Index::from_docs(docs, Bm25Params::default());
            let mean = index.doc_lengths().iter().sum::<usize>() as f64 / index.n_docs() as f64;
            prop_assert!((index.avg_doc_length() - mean).abs() < 1e-12);
            for (term, df) in index.doc_frequencies() {
                let list = index.postings(term);
                prop_assert_eq!(*df, list.len());
                prop_assert!(list.windows(2).all(|w| w[0].ordinal < w[1].ordinal));
                prop_assert!(list.iter().all(|p| p.ordinal < index.n_docs()));
                prop_assert!(index.idf(term) > 0.0);
            }
        }

        #[test]
        fn retrieve_prefix_property(corpus in corpus_strategy(), q in "[a-h ]{0,10}", k in 0usize..10) {
            let docs: Vec<_> = corpus.iter().enumerate()
                .map(|(i, t)| (DocRef::new(i, 0), t.as_str())).collect();
            let index = Index::from_docs(docs, Bm25Params::default());
            let short = index.retrieve(&q, k);
            let long = index.retrieve(&q, k + 1);
            prop_assert!(short.len() <= k);
            prop_assert_eq!(&long[..short.len()], &short[..]);
            prop_assert!(long.windows(2).all(|w| w[0].score >= w[1].score));
        }

        #[test]
        fn unrelated_document_keeps_positive_set(corpus in corpus_strategy(), q in "[a-g ]{1,10}") {
            let docs: Vec<_> = corpus.iter().enumerate()
                .map(|(i, t)| (DocRef::new(i, 0), t.as_str())).collect();
            let before = Index::from_docs(docs.clone(), Bm25Params::default());
            let mut extended = docs;
            extended.push((DocRef::new(99, 0), "x y z unrelated"));
            let after = Index::from_docs(extended, Bm25Params::default());
            let set = |idx: &Index| {
                let mut v: Vec<_> = idx.retrieve(&q, usize::MAX).into_iter().map(|h| h.doc).collect();
                v.sort();
                v
            };
            prop_assert_eq!(set(&before), set(&after));
        }
    }
}
