//! Prompt templates with `<claim>` / `<retrieval>` placeholders.

use std::path::Path;

use crate::error::{Error, Result};

pub const CLAIM_PLACEHOLDER: &str = "<claim>";
pub const RETRIEVAL_PLACEHOLDER: &str = "<retrieval>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplates {
    pub keypoints_system: String,
    pub keypoints_user: String,
    pub prediction_system: String,
    pub prediction_user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            keypoints_system: include_str!("../prompts/keypoints_system.txt").to_string(),
            keypoints_user: include_str!("../prompts/keypoints_user.txt").to_string(),
            prediction_system: include_str!("../prompts/prediction_system.txt").to_string(),
            prediction_user: include_str!("../prompts/prediction_user.txt").to_string(),
        }
    }
}

/// Paths of replacement template files; unset fields keep the built-in text.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptOverrides {
    pub keypoints_system: Option<std::path::PathBuf>,
    pub keypoints_user: Option<std::path::PathBuf>,
    pub prediction_system: Option<std::path::PathBuf>,
    pub prediction_user: Option<std::path::PathBuf>,
}

impl PromptTemplates {
    pub fn with_overrides(overrides: &PromptOverrides) -> Result<Self> {
        let mut t = PromptTemplates::default();
        let read = |slot: &mut String, path: &Option<std::path::PathBuf>| -> Result<()> {
            if let Some(p) = path {
                *slot = read_template(p)?;
            }
            Ok(())
        };
        read(&mut t.keypoints_system, &overrides.keypoints_system)?;
        read(&mut t.keypoints_user, &overrides.keypoints_user)?;
        read(&mut t.prediction_system, &overrides.prediction_system)?;
        read(&mut t.prediction_user, &overrides.prediction_user)?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.keypoints_user.contains(CLAIM_PLACEHOLDER) {
            return Err(Error::Config(format!(
                "key point user template lacks {CLAIM_PLACEHOLDER}"
            )));
        }
        for p in [CLAIM_PLACEHOLDER, RETRIEVAL_PLACEHOLDER] {
            if !self.prediction_user.contains(p) {
                return Err(Error::Config(format!("prediction user template lacks {p}")));
            }
        }
        Ok(())
    }
}

fn read_template(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Replaces placeholders in a single left-to-right pass, so substituted text
/// is never scanned for further placeholders.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while !rest.is_empty() {
        if rest.starts_with('<') {
            for (name, value) in values {
                if let Some(tail) = rest.strip_prefix(name) {
                    out.push_str(value);
                    rest = tail;
                    continue 'scan;
                }
            }
        }
        let first = rest.chars().next().map_or(0, char::len_utf8);
        let next = rest[first..].find('<').map_or(rest.len(), |i| i + first);
        out.push_str(&rest[..next]);
        rest = &rest[next..];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pass_substitution() {
        let t = "a <claim> b <retrieval> c <other>";
        assert_eq!(
            fill(t, &[("<claim>", "<retrieval>"), ("<retrieval>", "R")]),
            "a <retrieval> b R c <other>"
        );
        assert_eq!(fill("", &[("<claim>", "x")]), "");
        assert_eq!(fill("<<claim>>", &[("<claim>", "x")]), "<x>");
        assert_eq!(fill("ünïcode <claim>!", &[("<claim>", "é")]), "ünïcode é!");
    }

    #[test]
    fn builtin_templates_are_valid() {
        PromptTemplates::default().validate().unwrap();
    }

    #[test]
    fn overrides_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("kp.txt");
        std::fs::write(&good, "Decompose: <claim>").unwrap();
        let bad = dir.path().join("pred.txt");
        std::fs::write(&bad, "no placeholders").unwrap();

        let t = PromptTemplates::with_overrides(&PromptOverrides {
            keypoints_user: Some(good.clone()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(t.keypoints_user, "Decompose: <claim>");
        assert_eq!(t.prediction_user, PromptTemplates::default().prediction_user);

        let err = PromptTemplates::with_overrides(&PromptOverrides {
            prediction_user: Some(bad),
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let missing = PromptTemplates::with_overrides(&PromptOverrides {
            keypoints_system: Some(dir.path().join("nope.txt")),
            ..Default::default()
        });
        assert!(matches!(missing, Err(Error::Io { .. })));
    }
}
