//! Per-claim orchestration from retrieval groups to a parsed verdict.
//!
//! Context overflows on the prediction call are retried with smaller groups.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::Serialize;

use crate::bm25::Bm25Params;
use crate::corpus::{AnswerType, ClaimRecord, DocRef, KnowledgeStore, VerdictLabel};
use crate::error::{Error, Result};
use crate::keypoints::{make_keypoints, KeyPointSet};
use crate::llm_gateway::{Gateway, GenerationSettings};
use crate::prompts::{fill, PromptTemplates, CLAIM_PLACEHOLDER, RETRIEVAL_PLACEHOLDER};
use crate::Bm25Index;

pub const GROUP_SEPARATOR: &str = "\n\n-----\n\n";
pub const MAX_EVIDENCE: usize = 4;
pub const SYNTHETIC_QUESTION: &str = "What does the retrieved evidence say about the claim?";
const SYNTHETIC_ANSWER_CHARS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub claim_top_k: usize,
    pub keypoint_top_k: usize,
    /// Claim-group size after the first context overflow.
    pub truncate_claim: usize,
    /// Key-point-group size after the first context overflow.
    pub truncate_keypoint: usize,
    pub bm25: Bm25Params<f64>,
    pub keypoint_generation: GenerationSettings,
    pub prediction_generation: GenerationSettings,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            claim_top_k: 70,
            keypoint_top_k: 12,
            truncate_claim: 55,
            truncate_keypoint: 9,
            bm25: Bm25Params::default(),
            keypoint_generation: GenerationSettings::keypoints(),
            prediction_generation: GenerationSettings::prediction(),
            workers: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.truncate_claim > self.claim_top_k {
            return fail(format!(
                "truncate_claim ({}) must not exceed claim_top_k ({})",
                self.truncate_claim, self.claim_top_k
            ));
        }
        if self.truncate_keypoint > self.keypoint_top_k {
            return fail(format!(
                "truncate_keypoint ({}) must not exceed keypoint_top_k ({})",
                self.truncate_keypoint, self.keypoint_top_k
            ));
        }
        if self.truncate_claim == 0 || self.truncate_keypoint == 0 {
            return fail("truncation sizes must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        Bm25Params::new(self.bm25.k1, self.bm25.b)?;
        for (name, g) in [
            ("key point", &self.keypoint_generation),
            ("prediction", &self.prediction_generation),
        ] {
            g.request(String::new(), String::new())
                .validate()
                .map_err(|e| Error::Config(format!("{name} generation settings: {}", e.detail)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    KeyPoint,
    Claim,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedDoc {
    pub doc: DocRef,
    pub score: f64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalGroup {
    pub query: String,
    pub kind: QueryKind,
    /// `top_k` used for this query.
    pub cap: usize,
    /// Best first.
    pub docs: Vec<RetrievedDoc>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceItem {
    pub question: String,
    pub answer: String,
    pub answer_type: AnswerType,
    /// `None` only when the store had no passage to cite.
    pub citation: Option<DocRef>,
    pub url: String,
    pub scraped_text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub n_keypoints: usize,
    pub truncated: bool,
    pub parse_fallbacks: usize,
    pub prediction_attempts: usize,
    pub keypoint_fallback: Option<String>,
    /// Set when no prediction could be obtained and a placeholder was emitted.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerdictReport {
    pub claim_id: usize,
    pub claim: String,
    pub evidence: Vec<EvidenceItem>,
    pub justification: String,
    pub verdict: VerdictLabel,
    pub diagnostics: Diagnostics,
}

/// One group per query, key points first and the claim last. A document
/// already shown in an earlier group is dropped from later ones.
pub fn run_retrieval(
    index: &Bm25Index,
    store: &KnowledgeStore,
    keypoints: &KeyPointSet,
    claim: &str,
    cfg: &PipelineConfig,
) -> Vec<RetrievalGroup> {
    let queries = keypoints.all_queries(claim);
    let last = queries.len() - 1;
    let mut seen = HashSet::new();
    queries
        .into_iter()
        .enumerate()
        .map(|(i, query)| {
            let (kind, cap) = if i == last {
                (QueryKind::Claim, cfg.claim_top_k)
            } else {
                (QueryKind::KeyPoint, cfg.keypoint_top_k)
            };
            let docs = index
                .retrieve(&query, cap)
                .into_iter()
                .filter(|hit| seen.insert(hit.doc))
                .map(|hit| RetrievedDoc {
                    doc: hit.doc,
                    score: hit.score,
                    text: store
                        .resolve(hit.doc)
                        .expect("indexed documents come from this store")
                        .1
                        .to_string(),
                })
                .collect();
            RetrievalGroup {
                query,
                kind,
                cap,
                docs,
            }
        })
        .collect()
}

/// Renders groups as `passage <i_j>` lines; groups are separated by a dashed
/// rule and empty groups are skipped.
pub fn build_unified_string(groups: &[RetrievalGroup]) -> String {
    groups
        .iter()
        .filter(|g| !g.docs.is_empty())
        .map(|g| {
            g.docs
                .iter()
                .map(|d| format!("{} <{}>", d.text, d.doc))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect::<Vec<_>>()
        .join(GROUP_SEPARATOR)
}

/// Keeps the first `claim_cap` documents of the claim group and the first
/// `keypoint_cap` of every key point group.
pub fn truncate_groups(
    groups: &[RetrievalGroup],
    claim_cap: usize,
    keypoint_cap: usize,
) -> Vec<RetrievalGroup> {
    groups
        .iter()
        .map(|g| {
            let cap = match g.kind {
                QueryKind::Claim => claim_cap,
                QueryKind::KeyPoint => keypoint_cap,
            };
            RetrievalGroup {
                docs: g.docs.iter().take(cap).cloned().collect(),
                ..g.clone()
            }
        })
        .collect()
}

/// Caps tried after successive overflows: the configured sizes, then
/// repeated halving down to one document per group.
pub fn truncation_schedule(claim_cap: usize, keypoint_cap: usize) -> Vec<(usize, usize)> {
    let mut caps = vec![(claim_cap.max(1), keypoint_cap.max(1))];
    loop {
        let (c, k) = *caps.last().expect("non-empty");
        let next = ((c / 2).max(1), (k / 2).max(1));
        if next == (c, k) {
            return caps;
        }
        caps.push(next);
    }
}

pub fn build_prediction_prompt(
    templates: &PromptTemplates,
    claim: &str,
    unified: &str,
) -> (String, String) {
    (
        templates.prediction_system.clone(),
        fill(
            &templates.prediction_user,
            &[(CLAIM_PLACEHOLDER, claim), (RETRIEVAL_PLACEHOLDER, unified)],
        ),
    )
}

/// Sends the prediction prompt, shrinking the retrieval groups after each
/// context overflow. Never fails: if no response can be obtained the report
/// carries a Not Enough Evidence placeholder and `diagnostics.failure`.
pub fn predict_with_retry(
    gateway: &Gateway,
    claim_id: usize,
    claim: &str,
    groups: &[RetrievalGroup],
    store: &KnowledgeStore,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
) -> VerdictReport {
    let mut diagnostics = Diagnostics::default();
    let schedule = truncation_schedule(cfg.truncate_claim, cfg.truncate_keypoint);
    let attempts = std::iter::once(None).chain(schedule.into_iter().map(Some));

    let mut last_error = None;
    for caps in attempts {
        let current = match caps {
            None => groups.to_vec(),
            Some((c, k)) => {
                diagnostics.truncated = true;
                truncate_groups(groups, c, k)
            }
        };
        let (system, user) = build_prediction_prompt(templates, claim, &build_unified_string(&current));
        let request = cfg.prediction_generation.request(system, user);
        diagnostics.prediction_attempts += 1;
        match gateway.complete(claim_id, &request) {
            Ok(resp) => {
                let parsed = parse_prediction(&resp.text, store, groups);
                diagnostics.parse_fallbacks = parsed.fallbacks;
                return VerdictReport {
                    claim_id,
                    claim: claim.to_string(),
                    evidence: parsed.evidence,
                    justification: parsed.justification,
                    verdict: parsed.verdict,
                    diagnostics,
                };
            }
            Err(e) if e.is_context_overflow() => {
                log::info!("claim {claim_id}: context overflow, truncating retrieval groups");
                last_error = Some(e);
            }
            Err(e) => {
                last_error = Some(e);
                break;
            }
        }
    }

    let reason = last_error.map_or_else(|| "no attempt made".to_string(), |e| e.to_string());
    log::error!("claim {claim_id}: prediction failed: {reason}");
    let cited = fallback_doc(groups, store);
    diagnostics.failure = Some(reason.clone());
    VerdictReport {
        claim_id,
        claim: claim.to_string(),
        evidence: vec![evidence_item(
            String::new(),
            String::new(),
            AnswerType::Unanswerable,
            cited,
            store,
        )],
        justification: format!("No prediction could be obtained from the model: {reason}"),
        verdict: VerdictLabel::NotEnoughEvidence,
        diagnostics,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPrediction {
    pub evidence: Vec<EvidenceItem>,
    pub justification: String,
    pub verdict: VerdictLabel,
    /// Number of fields that had to be substituted.
    pub fallbacks: usize,
}

static FIELD_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?i)[*#\s]*(Q|A|TYPE|CITE)\s*(\d+)[*\s]*:\s*(.*)$").expect("valid regex")
});
static SECTION_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?i)[*#\s]*(EVIDENCE|JUSTIFICATION|VERDICT)[*\s]*:\s*(.*)$").expect("valid regex")
});
static DOC_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+)_(\d+)").expect("valid regex"));

#[derive(Default)]
struct RawPair {
    index: usize,
    question: String,
    answer: String,
    answer_type: Option<String>,
    cite: Option<String>,
}

enum Open {
    Nothing,
    Field(usize, &'static str),
    Justification,
}

fn append(slot: &mut String, text: &str) {
    let text = text.trim();
    if text.is_empty() {
        return;
    }
    if !slot.is_empty() {
        slot.push(' ');
    }
    slot.push_str(text);
}

/// Parses the labeled-line prediction format. Missing or unusable fields are
/// replaced rather than rejected; each replacement is counted in `fallbacks`.
pub fn parse_prediction(response: &str, store: &KnowledgeStore, groups: &[RetrievalGroup]) -> ParsedPrediction {
    let mut pairs: Vec<RawPair> = Vec::new();
    let mut justification = String::new();
    let mut verdict_text: Option<String> = None;
    let mut open = Open::Nothing;

    for line in response.lines() {
        if let Some(c) = FIELD_LINE.captures(line) {
            let index: usize = c[2].parse().unwrap_or(usize::MAX);
            let slot = match pairs.iter().position(|p| p.index == index) {
                Some(i) => i,
                None => {
                    pairs.push(RawPair {
                        index,
                        ..Default::default()
                    });
                    pairs.len() - 1
                }
            };
            let value = c[3].trim().to_string();
            let pair = &mut pairs[slot];
            open = match c[1].to_ascii_uppercase().as_str() {
                "Q" => {
                    append(&mut pair.question, &value);
                    Open::Field(slot, "Q")
                }
                "A" => {
                    append(&mut pair.answer, &value);
                    Open::Field(slot, "A")
                }
                "TYPE" => {
                    pair.answer_type = Some(value);
                    Open::Nothing
                }
                _ => {
                    pair.cite = Some(value);
                    Open::Nothing
                }
            };
        } else if let Some(c) = SECTION_LINE.captures(line) {
            let value = c[2].trim();
            open = match c[1].to_ascii_uppercase().as_str() {
                "JUSTIFICATION" => {
                    append(&mut justification, value);
                    Open::Justification
                }
                "VERDICT" => {
                    if verdict_text.is_none() {
                        verdict_text = Some(value.to_string());
                    }
                    Open::Nothing
                }
                _ => Open::Nothing,
            };
        } else {
            match open {
                Open::Field(slot, "Q") => append(&mut pairs[slot].question, line),
                Open::Field(slot, _) => append(&mut pairs[slot].answer, line),
                Open::Justification => append(&mut justification, line),
                Open::Nothing => {}
            }
        }
    }

    let top = fallback_doc(groups, store);
    let mut fallbacks = 0;
    let mut evidence: Vec<EvidenceItem> = pairs
        .into_iter()
        .filter(|p| !p.question.is_empty() && !p.answer.is_empty())
        .take(MAX_EVIDENCE)
        .map(|p| {
            let answer_type = p.answer_type.as_deref().and_then(parse_answer_type).unwrap_or_else(|| {
                fallbacks += 1;
                AnswerType::Abstractive
            });
            let citation = p
                .cite
                .as_deref()
                .and_then(|c| DOC_ID.captures(c))
                .and_then(|c| Some(DocRef::new(c[1].parse().ok()?, c[2].parse().ok()?)))
                .filter(|d| store.resolve(*d).is_ok());
            let citation = citation.or_else(|| {
                fallbacks += 1;
                top
            });
            evidence_item(p.question, p.answer, answer_type, citation, store)
        })
        .collect();

    if evidence.is_empty() {
        fallbacks += 1;
        let answer = top
            .and_then(|d| store.resolve(d).ok())
            .map(|(_, text)| text.chars().take(SYNTHETIC_ANSWER_CHARS).collect())
            .unwrap_or_default();
        evidence.push(evidence_item(
            SYNTHETIC_QUESTION.to_string(),
            answer,
            AnswerType::Abstractive,
            top,
            store,
        ));
    }

    let verdict = verdict_text.as_deref().and_then(parse_verdict).unwrap_or_else(|| {
        fallbacks += 1;
        VerdictLabel::NotEnoughEvidence
    });

    ParsedPrediction {
        evidence,
        justification,
        verdict,
        fallbacks,
    }
}

fn evidence_item(
    question: String,
    answer: String,
    answer_type: AnswerType,
    citation: Option<DocRef>,
    store: &KnowledgeStore,
) -> EvidenceItem {
    let (url, scraped_text) = citation
        .and_then(|d| store.resolve(d).ok())
        .map(|(u, t)| (u.to_string(), t.to_string()))
        .unwrap_or_default();
    EvidenceItem {
        question,
        answer,
        answer_type,
        citation,
        url,
        scraped_text,
    }
}

/// Document cited when the model's own citation is unusable: the best claim
/// hit, else the first hit of any group, else the first retrievable passage.
pub fn fallback_doc(groups: &[RetrievalGroup], store: &KnowledgeStore) -> Option<DocRef> {
    groups
        .iter()
        .filter(|g| g.kind == QueryKind::Claim)
        .chain(groups.iter())
        .find_map(|g| g.docs.first().map(|d| d.doc))
        .or_else(|| store.retrievable().next().map(|(d, _)| d))
}

fn normalize(s: &str) -> String {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case- and punctuation-insensitive verdict matching.
pub fn parse_verdict(text: &str) -> Option<VerdictLabel> {
    let norm = normalize(text);
    let accepts = |key: &str| norm == key || norm.starts_with(&format!("{key} "));
    [
        (VerdictLabel::Supported, &["supported"][..]),
        (VerdictLabel::Refuted, &["refuted"][..]),
        (VerdictLabel::NotEnoughEvidence, &["not enough evidence"][..]),
        (
            VerdictLabel::ConflictingEvidenceCherryPicking,
            &["conflicting evidence", "conflicting", "cherry picking"][..],
        ),
    ]
    .into_iter()
    .find(|(_, keys)| keys.iter().any(|k| accepts(k)))
    .map(|(label, _)| label)
}

pub fn parse_answer_type(text: &str) -> Option<AnswerType> {
    let norm = normalize(text);
    let first = norm.split(' ').next()?;
    AnswerType::ALL
        .into_iter()
        .find(|t| t.as_str().eq_ignore_ascii_case(first))
}

/// Full per-claim run: key points, retrieval, prediction.
pub fn process_claim(
    gateway: &Gateway,
    claim: &ClaimRecord,
    store: &KnowledgeStore,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
) -> VerdictReport {
    let index = Bm25Index::build(store, cfg.bm25);
    let kp = make_keypoints(
        gateway,
        claim.claim_id,
        &claim.text,
        templates,
        &cfg.keypoint_generation,
    );
    let groups = run_retrieval(&index, store, &kp.keypoints, &claim.text, cfg);
    let mut report = predict_with_retry(gateway, claim.claim_id, &claim.text, &groups, store, cfg, templates);
    report.diagnostics.n_keypoints = kp.keypoints.len();
    report.diagnostics.keypoint_fallback = kp.fallback;
    report
}

/// Result of a batch run. `reports` is in claim order; when cancelled it
/// holds only the claims that finished.
#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<VerdictReport>,
    pub cancelled: bool,
}

/// Processes claims on a pool of `cfg.workers` threads. Stores are loaded
/// lazily through `load_store`; the first load error aborts the run.
pub fn run_claims<F>(
    gateway: &Gateway,
    claims: &[ClaimRecord],
    load_store: F,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
    cancel: &AtomicBool,
) -> Result<RunOutcome>
where
    F: Fn(usize) -> Result<KnowledgeStore> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<Option<VerdictReport>>> = pool.install(|| {
        claims
            .par_iter()
            .map(|claim| {
                if cancel.load(Ordering::SeqCst) {
                    return Ok(None);
                }
                let store = load_store(claim.claim_id)?;
                let report = process_claim(gateway, claim, &store, cfg, templates);
                log::info!(
                    "claim {}: {} ({} evidence, {} key points)",
                    claim.claim_id,
                    report.verdict,
                    report.evidence.len(),
                    report.diagnostics.n_keypoints
                );
                Ok(Some(report))
            })
            .collect()
    });
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        if let Some(report) = r? {
            reports.push(report);
        }
    }
    Ok(RunOutcome {
        cancelled: reports.len() < claims.len(),
        reports,
    })
}
