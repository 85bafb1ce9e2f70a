//! Zero-shot key point construction.
//!
//! The model is asked for up to four primitive key points and for sentences
//! that fuse pairs of them. Both lists become extra retrieval queries, with
//! the claim itself appended last.

use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::llm_gateway::{Gateway, GenerationSettings};
use crate::prompts::{fill, PromptTemplates, CLAIM_PLACEHOLDER};

pub const MAX_PRIMITIVES: usize = 4;
/// Pairs drawn from four primitives.
pub const MAX_COMBINED: usize = 6;

static NUMBERED_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\d+[.)]\s*(.+)$").expect("valid regex"));

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyPointSet {
    pub primitives: Vec<String>,
    pub combined: Vec<String>,
}

impl KeyPointSet {
    /// Number of key points (`n`); retrieval runs `n + 1` queries.
    pub fn len(&self) -> usize {
        self.primitives.len() + self.combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Primitives, then combined key points, then the claim.
    pub fn all_queries(&self, claim: &str) -> Vec<String> {
        self.primitives
            .iter()
            .chain(&self.combined)
            .cloned()
            .chain(std::iter::once(claim.to_string()))
            .collect()
    }

    /// Renders the set in the response format `parse_keypoints` reads.
    pub fn render(&self) -> String {
        let mut out = String::from("PRIMITIVE:\n");
        for (i, p) in self.primitives.iter().enumerate() {
            out.push_str(&format!("{}. {p}\n", i + 1));
        }
        out.push_str("COMBINED:\n");
        for (i, c) in self.combined.iter().enumerate() {
            out.push_str(&format!("{}. {c}\n", i + 1));
        }
        out
    }
}

/// Returns `(system, user)` messages for the key point call.
pub fn build_keypoint_prompt(templates: &PromptTemplates, claim: &str) -> (String, String) {
    (
        templates.keypoints_system.clone(),
        fill(&templates.keypoints_user, &[(CLAIM_PLACEHOLDER, claim)]),
    )
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Primitive,
    Combined,
}

fn section_header(line: &str) -> Option<Section> {
    let bare = line.trim_matches(|c: char| c == '*' || c == '#' || c.is_whitespace());
    let upper = bare.to_uppercase();
    if !upper.contains(':') {
        return None;
    }
    if upper.starts_with("PRIMITIVE") {
        Some(Section::Primitive)
    } else if upper.starts_with("COMBINED") {
        Some(Section::Combined)
    } else {
        None
    }
}

/// Reads numbered lines under `PRIMITIVE:` and `COMBINED:` headers.
///
/// Keeps the first four primitives and the first six combined key points.
/// Fails when no primitive key point is found.
pub fn parse_keypoints(response: &str) -> Result<KeyPointSet> {
    let mut set = KeyPointSet::default();
    let mut section = Section::None;
    for line in response.lines() {
        let line = line.trim();
        if let Some(caps) = NUMBERED_LINE.captures(line) {
            let item = caps[1].trim();
            if item.is_empty() {
                continue;
            }
            match section {
                Section::Primitive => set.primitives.push(item.to_string()),
                Section::Combined => set.combined.push(item.to_string()),
                Section::None => {}
            }
        } else if let Some(s) = section_header(line) {
            section = s;
        }
    }
    if set.primitives.is_empty() {
        return Err(Error::KeyPointParse);
    }
    set.primitives.truncate(MAX_PRIMITIVES);
    set.combined.truncate(MAX_COMBINED);
    Ok(set)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyPointOutcome {
    pub keypoints: KeyPointSet,
    /// Why the claim fell back to claim-only retrieval, if it did.
    pub fallback: Option<String>,
}

/// Prompts the model and parses its key points. Any failure degrades to an
/// empty set so the claim is still retrieved on its own text.
pub fn make_keypoints(
    gateway: &Gateway,
    claim_id: usize,
    claim: &str,
    templates: &PromptTemplates,
    settings: &GenerationSettings,
) -> KeyPointOutcome {
    let (system, user) = build_keypoint_prompt(templates, claim);
    let request = settings.request(system, user);
    let outcome = gateway
        .complete(claim_id, &request)
        .map_err(|e| format!("key point generation failed: {e}"))
        .and_then(|resp| {
            parse_keypoints(&resp.text).map_err(|e| format!("key point parse failed: {e}"))
        });
    match outcome {
        Ok(keypoints) => KeyPointOutcome {
            keypoints,
            fallback: None,
        },
        Err(reason) => {
            log::warn!("claim {claim_id}: {reason}; retrieving with the claim only");
            KeyPointOutcome {
                keypoints: KeyPointSet::default(),
                fallback: Some(reason),
            }
        }
    }
}
