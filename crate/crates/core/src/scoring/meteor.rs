//! Unigram METEOR (exact-match stage, optional suffix stemming).
//!
//! The alignment takes every possible one-to-one token match, which fixes `m`,
//! and among those alignments searches for one with the fewest chunks.
//! Fewest-chunk alignment is a hard combinatorial problem in general. Repeated
//! words are the only source of choice, so the search is exact for ordinary
//! sentences and falls back to the best alignment found within a node budget
//! otherwise.

use std::collections::HashMap;

use serde::Serialize;

use crate::bm25::tokenize;
use crate::error::{Error, Result};
use crate::num::Real;

/// Search nodes explored before settling for the best alignment so far.
const NODE_BUDGET: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeteorParams<T> {
    /// Fragmentation penalty weight.
    pub gamma: T,
    /// Fragmentation penalty exponent.
    pub beta: T,
    /// Match suffix-stripped tokens instead of surface forms.
    pub stemming: bool,
}

impl<T: Real> Default for MeteorParams<T> {
    fn default() -> Self {
        MeteorParams {
            gamma: T::lit(0.5),
            beta: T::lit(3.0),
            stemming: false,
        }
    }
}

impl<T: Real> MeteorParams<T> {
    pub fn with_stemming(stemming: bool) -> Self {
        MeteorParams {
            stemming,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Best METEOR score of `hypothesis` against any of `references`.
pub fn meteor<T: Real, S: AsRef<str>>(
    hypothesis: &str,
    references: &[S],
    params: &MeteorParams<T>,
) -> Result<T> {
    if references.is_empty() {
        return Err(Error::EmptyReferenceList);
    }
    let hyp = keys(hypothesis, params.stemming);
    Ok(references
        .iter()
        .map(|r| score_tokens(&hyp, &keys(r.as_ref(), params.stemming), params))
        .fold(T::zero(), T::max))
}

fn keys(text: &str, stemming: bool) -> Vec<String> {
    let tokens = tokenize(text);
    if stemming {
        tokens.iter().map(|t| stem(t)).collect()
    } else {
        tokens
    }
}

/// Score of one hypothesis/reference pair of already tokenized text.
pub fn score_tokens<T: Real>(hyp: &[String], reference: &[String], params: &MeteorParams<T>) -> T {
    if hyp.is_empty() || reference.is_empty() {
        return T::zero();
    }
    let Alignment { matches, chunks } = align(hyp, reference);
    if matches == 0 {
        return T::zero();
    }
    let m = T::from_count(matches);
    let precision = m / T::from_count(hyp.len());
    let recall = m / T::from_count(reference.len());
    let f_mean = T::lit(10.0) * precision * recall / (recall + T::lit(9.0) * precision);
    let penalty = params.gamma * (T::from_count(chunks) / m).powf(params.beta);
    f_mean * (T::one() - penalty)
}

/// Maximum exact alignment with the fewest chunks found.
pub fn align<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Alignment {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut hyp_ids = Vec::with_capacity(hyp.len());
    for t in hyp {
        let n = ids.len();
        hyp_ids.push(*ids.entry(t.as_ref()).or_insert(n));
    }
    let mut ref_ids = Vec::with_capacity(reference.len());
    for t in reference {
        let n = ids.len();
        ref_ids.push(*ids.entry(t.as_ref()).or_insert(n));
    }
    let vocab = ids.len();

    let mut ref_positions = vec![Vec::new(); vocab];
    for (r, &w) in ref_ids.iter().enumerate() {
        ref_positions[w].push(r);
    }
    let mut hyp_count = vec![0usize; vocab];
    for &w in &hyp_ids {
        hyp_count[w] += 1;
    }
    let need: Vec<usize> = (0..vocab)
        .map(|w| hyp_count[w].min(ref_positions[w].len()))
        .collect();
    let matches: usize = need.iter().sum();
    if matches == 0 {
        return Alignment { matches: 0, chunks: 0 };
    }

    let mut search = ChunkSearch {
        hyp: &hyp_ids,
        ref_positions: &ref_positions,
        need_left: need,
        hyp_left: hyp_count,
        used: vec![false; ref_ids.len()],
        best: usize::MAX,
        nodes: 0,
    };
    search.descend(0, None, 0);
    Alignment {
        matches,
        chunks: search.best,
    }
}

struct ChunkSearch<'a> {
    hyp: &'a [usize],
    ref_positions: &'a [Vec<usize>],
    need_left: Vec<usize>,
    hyp_left: Vec<usize>,
    used: Vec<bool>,
    best: usize,
    nodes: usize,
}

impl ChunkSearch<'_> {
    /// `prev` is the reference position aligned to hypothesis position `h - 1`.
    fn descend(&mut self, h: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best {
            return;
        }
        if h == self.hyp.len() {
            self.best = chunks;
            return;
        }
        self.nodes += 1;
        if self.nodes > NODE_BUDGET && self.best != usize::MAX {
            return;
        }

        let w = self.hyp[h];
        self.hyp_left[w] -= 1;
        if self.need_left[w] > 0 {
            self.need_left[w] -= 1;
            let continuation = prev.map(|p| p + 1);
            let mut options: Vec<usize> = self.ref_positions[w]
                .iter()
                .copied()
                .filter(|&r| !self.used[r])
                .collect();
            if let Some(pos) = options.iter().position(|&r| Some(r) == continuation) {
                let r = options.remove(pos);
                options.insert(0, r);
            }
            for r in options {
                let cost = if Some(r) == continuation { 0 } else { 1 };
                self.used[r] = true;
                self.descend(h + 1, Some(r), chunks + cost);
                self.used[r] = false;
            }
            self.need_left[w] += 1;
        }
        // leaving this occurrence unmatched is allowed while enough later
        // occurrences remain to reach the required match count
        if self.hyp_left[w] >= self.need_left[w] {
            self.descend(h + 1, None, chunks);
        }
        self.hyp_left[w] += 1;
    }
}

/// Light suffix stripping for the optional stem-matching mode.
pub fn stem(token: &str) -> String {
    let t = token;
    let n = t.chars().count();
    let strip = |suffix: &str, min_len: usize| -> Option<String> {
        (n >= min_len && t.ends_with(suffix)).then(|| t[..t.len() - suffix.len()].to_string())
    };
    if let Some(s) = strip("ies", 5) {
        return s + "y";
    }
    if let Some(s) = strip("sses", 6) {
        return s + "ss";
    }
    for (suffix, min_len) in [("ingly", 8), ("edly", 7), ("ing", 6), ("ed", 5), ("ly", 5), ("es", 5)] {
        if let Some(s) = strip(suffix, min_len) {
            return s;
        }
    }
    if n >= 4 && t.ends_with('s') && !t.ends_with("ss") && !t.ends_with("us") {
        return t[..t.len() - 1].to_string();
    }
    t.to_string()
}
