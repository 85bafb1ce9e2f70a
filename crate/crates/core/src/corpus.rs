//! Loading claims and knowledge stores; reading and writing predictions.
//!
//! Passages inside a knowledge store are addressed positionally: the URL's
//! line number in the store file and the passage's index inside that URL's
//! `url2text` array. [`DocRef`] carries that pair and renders as `i_j`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Diagnostics, EvidenceItem, VerdictReport};

/// Verdict labels of the four-way classification task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictLabel {
    #[serde(rename = "Supported")]
    Supported,
    #[serde(rename = "Refuted")]
    Refuted,
    #[serde(rename = "Not Enough Evidence")]
    NotEnoughEvidence,
    #[serde(rename = "Conflicting Evidence/Cherry-Picking")]
    ConflictingEvidenceCherryPicking,
}

impl VerdictLabel {
    pub const ALL: [VerdictLabel; 4] = [
        VerdictLabel::Supported,
        VerdictLabel::Refuted,
        VerdictLabel::NotEnoughEvidence,
        VerdictLabel::ConflictingEvidenceCherryPicking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Supported => "Supported",
            VerdictLabel::Refuted => "Refuted",
            VerdictLabel::NotEnoughEvidence => "Not Enough Evidence",
            VerdictLabel::ConflictingEvidenceCherryPicking => "Conflicting Evidence/Cherry-Picking",
        }
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerdictLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VerdictLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown verdict label {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerType {
    Extractive,
    Abstractive,
    Boolean,
    Unanswerable,
}

impl AnswerType {
    pub const ALL: [AnswerType; 4] = [
        AnswerType::Extractive,
        AnswerType::Abstractive,
        AnswerType::Boolean,
        AnswerType::Unanswerable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::Extractive => "Extractive",
            AnswerType::Abstractive => "Abstractive",
            AnswerType::Boolean => "Boolean",
            AnswerType::Unanswerable => "Unanswerable",
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnswerType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown answer type {s:?}"))
    }
}

/// Position of one passage inside a knowledge store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DocRef {
    pub url_index: usize,
    pub text_index: usize,
}

impl DocRef {
    pub fn new(url_index: usize, text_index: usize) -> Self {
        DocRef {
            url_index,
            text_index,
        }
    }

    /// Parses a citation as a model might write it: `3_1`, `<3_1>`, ` <3_1>. `.
    pub fn parse_citation(s: &str) -> Option<DocRef> {
        let s = s.trim().trim_end_matches(['.', ',', ';']).trim();
        let s = s
            .strip_prefix('<')
            .and_then(|s| s.strip_suffix('>'))
            .unwrap_or(s);
        s.trim().parse().ok()
    }
}

impl fmt::Display for DocRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.url_index, self.text_index)
    }
}

impl FromStr for DocRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDocId(s.to_string());
        let (url, text) = s.split_once('_').ok_or_else(bad)?;
        let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        if !digits(url) || !digits(text) {
            return Err(bad());
        }
        Ok(DocRef {
            url_index: url.parse().map_err(|_| bad())?,
            text_index: text.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldQA {
    pub question: String,
    pub answers: Vec<String>,
}

/// Gold verdict and evidence; present together or not at all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldAnnotation {
    pub verdict: VerdictLabel,
    pub evidence: Vec<GoldQA>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClaimRecord {
    pub claim_id: usize,
    pub text: String,
    pub gold: Option<GoldAnnotation>,
}

impl ClaimRecord {
    pub fn gold_verdict(&self) -> Option<VerdictLabel> {
        self.gold.as_ref().map(|g| g.verdict)
    }

    pub fn gold_evidence(&self) -> Option<&[GoldQA]> {
        self.gold.as_ref().map(|g| g.evidence.as_slice())
    }
}

#[derive(Deserialize)]
struct RawClaim {
    claim: Option<String>,
    label: Option<String>,
    questions: Option<Vec<RawQuestion>>,
}

#[derive(Deserialize)]
struct RawQuestion {
    question: String,
    #[serde(default)]
    answers: Vec<RawAnswer>,
}

#[derive(Deserialize)]
struct RawAnswer {
    answer: String,
}

/// Reads a claims file. `claim_id` is the position in the JSON array.
pub fn load_claims(path: impl AsRef<Path>) -> Result<Vec<ClaimRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<RawClaim> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::malformed(path, e.to_string()))?;

    raw.into_iter()
        .enumerate()
        .map(|(claim_id, r)| {
            let bad = |detail: String| Error::malformed(path, format!("claim {claim_id}: {detail}"));
            let text = r.claim.ok_or_else(|| bad("missing `claim` field".into()))?;
            if text.trim().is_empty() {
                return Err(bad("`claim` is empty".into()));
            }
            let gold = match (r.label, r.questions) {
                (None, None) => None,
                (Some(label), Some(questions)) => {
                    let verdict = label.parse().map_err(bad)?;
                    let evidence = questions
                        .into_iter()
                        .enumerate()
                        .map(|(qi, q)| {
                            if q.answers.is_empty() {
                                return Err(bad(format!("question {qi} has no answers")));
                            }
                            if q.answers.iter().any(|a| a.answer.is_empty()) {
                                return Err(bad(format!("question {qi} has an empty answer")));
                            }
                            Ok(GoldQA {
                                question: q.question,
                                answers: q.answers.into_iter().map(|a| a.answer).collect(),
                            })
                        })
                        .collect::<Result<_>>()?;
                    Some(GoldAnnotation { verdict, evidence })
                }
                (Some(_), None) => return Err(bad("`label` without `questions`".into())),
                (None, Some(_)) => return Err(bad("`questions` without `label`".into())),
            };
            Ok(ClaimRecord {
                claim_id,
                text,
                gold,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlEntry {
    pub url: String,
    #[serde(rename = "url2text")]
    pub passages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeStore {
    pub claim_id: usize,
    pub entries: Vec<UrlEntry>,
}

impl KnowledgeStore {
    pub fn new(claim_id: usize, entries: Vec<UrlEntry>) -> Self {
        KnowledgeStore { claim_id, entries }
    }

    /// Looks up the URL and passage text addressed by `doc`.
    pub fn resolve(&self, doc: DocRef) -> Result<(&str, &str)> {
        let entry = self
            .entries
            .get(doc.url_index)
            .ok_or(Error::UnknownDocRef(doc))?;
        let passage = entry
            .passages
            .get(doc.text_index)
            .ok_or(Error::UnknownDocRef(doc))?;
        Ok((&entry.url, passage))
    }

    /// Every passage with its address, in file order.
    pub fn passages(&self) -> impl Iterator<Item = (DocRef, &str)> {
        self.entries.iter().enumerate().flat_map(|(i, e)| {
            e.passages
                .iter()
                .enumerate()
                .map(move |(j, p)| (DocRef::new(i, j), p.as_str()))
        })
    }

    /// Passages eligible for retrieval. Blank passages keep their index slot
    /// but are never candidates.
    pub fn retrievable(&self) -> impl Iterator<Item = (DocRef, &str)> {
        self.passages().filter(|(_, p)| !p.trim().is_empty())
    }

    pub fn passage_count(&self) -> usize {
        self.entries.iter().map(|e| e.passages.len()).sum()
    }
}

/// Reads a JSON Lines knowledge store (`{"url": .., "url2text": [..]}` per line).
pub fn load_store(path: impl AsRef<Path>, claim_id: usize) -> Result<KnowledgeStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: UrlEntry = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, format!("line {}: {e}", lineno + 1)))?;
        entries.push(entry);
    }
    Ok(KnowledgeStore { claim_id, entries })
}

/// One row of the predictions file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub claim_id: usize,
    pub claim: String,
    pub pred_label: VerdictLabel,
    pub justification: String,
    pub evidence: Vec<PredictionEvidence>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionEvidence {
    pub question: String,
    pub answer: String,
    pub answer_type: AnswerType,
    pub url: String,
    pub scraped_text: String,
    /// `i_j`, or empty when the store had nothing to cite.
    pub citation_id: String,
}

impl From<&VerdictReport> for PredictionRecord {
    fn from(r: &VerdictReport) -> Self {
        PredictionRecord {
            claim_id: r.claim_id,
            claim: r.claim.clone(),
            pred_label: r.verdict,
            justification: r.justification.clone(),
            evidence: r
                .evidence
                .iter()
                .map(|e| PredictionEvidence {
                    question: e.question.clone(),
                    answer: e.answer.clone(),
                    answer_type: e.answer_type,
                    url: e.url.clone(),
                    scraped_text: e.scraped_text.clone(),
                    citation_id: e.citation.map(|c| c.to_string()).unwrap_or_default(),
                })
                .collect(),
        }
    }
}

impl PredictionRecord {
    /// Rebuilds a report; diagnostics are not part of the file and come back zeroed.
    pub fn into_report(self) -> Result<VerdictReport> {
        let evidence = self
            .evidence
            .into_iter()
            .map(|e| {
                let citation = if e.citation_id.is_empty() {
                    None
                } else {
                    Some(e.citation_id.parse()?)
                };
                Ok(EvidenceItem {
                    question: e.question,
                    answer: e.answer,
                    answer_type: e.answer_type,
                    citation,
                    url: e.url,
                    scraped_text: e.scraped_text,
                })
            })
            .collect::<Result<_>>()?;
        Ok(VerdictReport {
            claim_id: self.claim_id,
            claim: self.claim,
            evidence,
            justification: self.justification,
            verdict: self.pred_label,
            diagnostics: Diagnostics::default(),
        })
    }
}

/// Serializes reports in the given order.
pub fn predictions_json(reports: &[VerdictReport]) -> String {
    let records: Vec<PredictionRecord> = reports.iter().map(PredictionRecord::from).collect();
    let mut out = serde_json::to_string_pretty(&records).expect("prediction records serialize");
    out.push('\n');
    out
}

pub fn write_predictions(path: impl AsRef<Path>, reports: &[VerdictReport]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(predictions_json(reports).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<VerdictReport>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<PredictionRecord> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    records
        .into_iter()
        .map(|r| r.into_report().map_err(|e| Error::malformed(path, e.to_string())))
        .collect()
}
