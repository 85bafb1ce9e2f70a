//! Evidence and verdict scoring.
//!
//! Predicted evidence strings are matched one-to-one against annotated ones
//! by maximizing the summed pairwise METEOR score; the matched total divided
//! by the number of annotated items is the evidence score. A verdict only
//! counts when the question+answer evidence score clears the gate.

pub mod hungarian;
pub mod meteor;

use serde::Serialize;

use crate::corpus::ClaimRecord;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::pipeline::VerdictReport;

pub use hungarian::{assignment_value, hungarian_max};
pub use meteor::{align, meteor, Alignment, MeteorParams};

/// Minimum question+answer evidence score for a verdict to count.
pub const EVIDENCE_GATE: f64 = 0.25;

/// Hungarian-matched METEOR total over `gold.len()`.
///
/// Each gold item is a list of acceptable variants (e.g. the same question
/// joined with each annotated answer); a pair scores its best variant.
pub fn evidence_score<T: Real, P: AsRef<str>, G: AsRef<str>>(
    pred: &[P],
    gold: &[Vec<G>],
    params: &MeteorParams<T>,
) -> Result<T> {
    if pred.is_empty() || gold.is_empty() {
        return Ok(T::zero());
    }
    let matrix = pred
        .iter()
        .map(|p| {
            gold.iter()
                .map(|variants| meteor(p.as_ref(), variants, params))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = hungarian_max(&matrix)?;
    // summed in sorted order so prediction order cannot shift the last bit
    let mut selected: Vec<T> = pairs.iter().map(|&(i, j)| matrix[i][j]).collect();
    selected.sort_by(|a, b| a.partial_cmp(b).expect("finite meteor scores"));
    let total = selected.into_iter().fold(T::zero(), |acc, x| acc + x);
    Ok(total / T::from_count(gold.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClaimScore {
    pub claim_id: usize,
    pub q_only: f64,
    pub q_plus_a: f64,
    pub label_correct: bool,
    pub gated_correct: bool,
    /// Gold label present but no gold evidence; the gate is passed vacuously.
    pub gold_evidence_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateScore {
    pub q_only: f64,
    pub q_plus_a: f64,
    pub averitec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreMetadata {
    pub f_mean: &'static str,
    pub gamma: f64,
    pub beta: f64,
    pub stemming: bool,
    pub normalization: &'static str,
    pub gate_threshold: f64,
    pub claims_scored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreReport {
    pub per_claim: Vec<ClaimScore>,
    pub aggregate: AggregateScore,
    pub metadata: ScoreMetadata,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("score report serializes");
        s.push('\n');
        s
    }
}

/// Scores reports against gold claims with the standard 0.25 gate.
pub fn score_run(
    reports: &[VerdictReport],
    gold: &[ClaimRecord],
    params: &MeteorParams<f64>,
) -> Result<ScoreReport> {
    score_run_with_gate(reports, gold, params, EVIDENCE_GATE)
}

pub fn score_run_with_gate(
    reports: &[VerdictReport],
    gold: &[ClaimRecord],
    params: &MeteorParams<f64>,
    gate: f64,
) -> Result<ScoreReport> {
    let per_claim = reports
        .iter()
        .map(|report| {
            let record = gold
                .iter()
                .find(|g| g.claim_id == report.claim_id)
                .ok_or(Error::MissingGold(report.claim_id))?;
            if record.text.trim() != report.claim.trim() {
                return Err(Error::ClaimMismatch(report.claim_id));
            }
            let annotation = record.gold.as_ref().ok_or(Error::MissingGold(report.claim_id))?;
            let label_correct = report.verdict == annotation.verdict;

            if annotation.evidence.is_empty() {
                return Ok(ClaimScore {
                    claim_id: report.claim_id,
                    q_only: 0.0,
                    q_plus_a: 0.0,
                    label_correct,
                    gated_correct: label_correct,
                    gold_evidence_empty: true,
                });
            }

            let pred_q: Vec<&str> = report.evidence.iter().map(|e| e.question.as_str()).collect();
            let pred_qa: Vec<String> = report
                .evidence
                .iter()
                .map(|e| format!("{} {}", e.question, e.answer))
                .collect();
            let gold_q: Vec<Vec<&str>> = annotation
                .evidence
                .iter()
                .map(|g| vec![g.question.as_str()])
                .collect();
            let gold_qa: Vec<Vec<String>> = annotation
                .evidence
                .iter()
                .map(|g| g.answers.iter().map(|a| format!("{} {a}", g.question)).collect())
                .collect();

            let q_only = evidence_score(&pred_q, &gold_q, params)?;
            let q_plus_a = evidence_score(&pred_qa, &gold_qa, params)?;
            Ok(ClaimScore {
                claim_id: report.claim_id,
                q_only,
                q_plus_a,
                label_correct,
                gated_correct: label_correct && q_plus_a >= gate,
                gold_evidence_empty: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mean = |f: &dyn Fn(&ClaimScore) -> f64| {
        if per_claim.is_empty() {
            0.0
        } else {
            per_claim.iter().map(f).sum::<f64>() / per_claim.len() as f64
        }
    };
    let aggregate = AggregateScore {
        q_only: mean(&|c| c.q_only),
        q_plus_a: mean(&|c| c.q_plus_a),
        averitec: mean(&|c| if c.gated_correct { 1.0 } else { 0.0 }),
    };
    Ok(ScoreReport {
        metadata: ScoreMetadata {
            f_mean: "10PR/(R+9P)",
            gamma: params.gamma,
            beta: params.beta,
            stemming: params.stemming,
            normalization: "matched METEOR sum / number of gold evidence items",
            gate_threshold: gate,
            claims_scored: per_claim.len(),
        },
        per_claim,
        aggregate,
    })
}
