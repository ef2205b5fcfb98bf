use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Template names with the placeholders each may use.
pub const TEMPLATES: [(&str, &[&str]); 8] = [
    ("discover_column_access", &["columns", "profile", "code"]),
    ("discover_joint_column_access", &["accessed_columns", "profile", "code"]),
    ("column_dataflow", &["column", "code_numbered"]),
    ("multi_column_dataflow", &["columns", "code_numbered"]),
    ("summarize_link", &["node", "annotated_code", "profile"]),
    (
        "gen_column_constraints",
        &["column", "assumptions", "profile", "grammar"],
    ),
    (
        "gen_multi_column_constraints",
        &["columns", "assumptions", "profile", "grammar"],
    ),
    ("proposer_instruction", &["prompts", "feedback"]),
];

const DEFAULTS: [&str; 8] = [
    include_str!("../../prompts/discover_column_access.txt"),
    include_str!("../../prompts/discover_joint_column_access.txt"),
    include_str!("../../prompts/column_dataflow.txt"),
    include_str!("../../prompts/multi_column_dataflow.txt"),
    include_str!("../../prompts/summarize_link.txt"),
    include_str!("../../prompts/gen_column_constraints.txt"),
    include_str!("../../prompts/gen_multi_column_constraints.txt"),
    include_str!("../../prompts/proposer_instruction.txt"),
];

pub fn allowed_placeholders(template: &str) -> Option<&'static [&'static str]> {
    TEMPLATES.iter().find(|(n, _)| *n == template).map(|(_, p)| *p)
}

/// One `{{name}}` occurrence: byte range and name.
fn scan(text: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = text[from..].find("{{") {
        let open = from + rel;
        let rest = &text[open + 2..];
        let name_len = rest
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if name_len > 0 && rest[name_len..].starts_with("}}") {
            let end = open + 2 + name_len + 2;
            out.push((open, end, &rest[..name_len]));
            from = end;
        } else {
            from = open + 2;
        }
    }
    out
}

pub fn placeholders(text: &str) -> BTreeSet<&str> {
    scan(text).into_iter().map(|(_, _, n)| n).collect()
}

/// Π: the named templates driving every model-backed step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub name: String,
    pub templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let templates = TEMPLATES
            .iter()
            .zip(DEFAULTS)
            .map(|((n, _), t)| (n.to_string(), t.to_string()))
            .collect();
        Self {
            name: "default".into(),
            templates,
        }
    }
}

impl PromptSet {
    pub fn get(&self, template: &str) -> Result<&str> {
        self.templates
            .get(template)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("prompt set {}: missing template {template}", self.name)))
    }

    /// Every template present, no extras, and only known placeholders.
    pub fn validate(&self) -> Result<()> {
        for name in self.templates.keys() {
            if allowed_placeholders(name).is_none() {
                return Err(Error::Config(format!(
                    "prompt set {}: unknown template {name}",
                    self.name
                )));
            }
        }
        for (name, allowed) in TEMPLATES {
            let text = self.get(name)?;
            if text.trim().is_empty() {
                return Err(Error::Config(format!(
                    "prompt set {}: template {name} is empty",
                    self.name
                )));
            }
            if let Some(bad) = placeholders(text).into_iter().find(|p| !allowed.contains(p)) {
                return Err(Error::Config(format!(
                    "prompt set {}: template {name} uses unknown placeholder {{{{{bad}}}}}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Substitute placeholders in one pass, so bound values are never
    /// rescanned. Every placeholder in the template must be bound.
    pub fn render(&self, template: &str, bindings: &[(&str, &str)]) -> Result<String> {
        let text = self.get(template)?;
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for (start, end, name) in scan(text) {
            let value = bindings
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Config(format!("template {template}: unbound placeholder {{{{{name}}}}}")))?;
            out.push_str(&text[last..start]);
            out.push_str(value);
            last = end;
        }
        out.push_str(&text[last..]);
        Ok(out)
    }

    /// Hex SHA-256 over the templates, independent of the set's name.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, text) in &self.templates {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(text.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prompt set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PromptSet = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// Writes `<dir>/<name>.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.json", self.name));
        fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_use_their_placeholders() {
        let p = PromptSet::default();
        p.validate().unwrap();
        for (name, allowed) in TEMPLATES {
            let used = placeholders(p.get(name).unwrap());
            assert_eq!(used, allowed.iter().copied().collect(), "{name}");
        }
    }

    #[test]
    fn render_is_single_pass_and_strict() {
        let mut p = PromptSet::default();
        p.templates.insert(
            "column_dataflow".into(),
            "col {{column}} in {{code_numbered}} {{x".into(),
        );
        let out = p
            .render(
                "column_dataflow",
                &[("column", "{{code_numbered}}"), ("code_numbered", "C")],
            )
            .unwrap();
        assert_eq!(out, "col {{code_numbered}} in C {{x");
        let err = p.render("column_dataflow", &[("column", "a")]).unwrap_err();
        assert!(err.to_string().contains("code_numbered"));
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let mut p = PromptSet::default();
        p.templates
            .insert("column_dataflow".into(), "{{column}} {{assumptions}}".into());
        assert!(p.validate().is_err());
        let mut q = PromptSet::default();
        q.templates.remove("summarize_link");
        assert!(q.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_templates_only() {
        let a = PromptSet::default();
        let mut b = a.clone();
        b.name = "other".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.templates.insert("column_dataflow".into(), "{{column}}".into());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(PromptSet::from_json(&a.to_json()).unwrap(), a);
    }
}
