//! Prompt templates. The built-in set is compiled in from `prompts/`; a
//! directory of `.txt` files with the same names can override any of them.

use std::collections::BTreeMap;
use std::path::Path;

use crate::llm::AgentRole;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("template {template} uses unbound placeholder {{{{{name}}}}}")]
    Unbound { template: String, name: String },
    #[error("template {template} has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("reading prompt override {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const BUILTIN: &[(&str, &str)] = &[
    ("auditor.system", include_str!("../prompts/auditor.system.txt")),
    ("auditor.user", include_str!("../prompts/auditor.user.txt")),
    ("judge.system", include_str!("../prompts/judge.system.txt")),
    ("judge.user", include_str!("../prompts/judge.user.txt")),
    ("reviewer.system", include_str!("../prompts/reviewer.system.txt")),
    ("reviewer.user", include_str!("../prompts/reviewer.user.txt")),
    ("evaluator.system", include_str!("../prompts/evaluator.system.txt")),
    ("evaluator.user", include_str!("../prompts/evaluator.user.txt")),
    ("locator.system", include_str!("../prompts/locator.system.txt")),
    ("locator.user", include_str!("../prompts/locator.user.txt")),
    ("tracer.system", include_str!("../prompts/tracer.system.txt")),
    ("tracer.user", include_str!("../prompts/tracer.user.txt")),
    ("json_reminder", include_str!("../prompts/json_reminder.txt")),
];

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Built-in templates with any `<name>.txt` found in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        let names: Vec<String> = set.templates.keys().cloned().collect();
        for name in names {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(name, text);
            }
        }
        Ok(set)
    }

    pub fn system(&self, agent: AgentRole) -> Result<String, PromptError> {
        self.render(&format!("{}.system", agent.name().to_ascii_lowercase()), &[])
    }

    pub fn user(&self, agent: AgentRole, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        self.render(&format!("{}.user", agent.name().to_ascii_lowercase()), vars)
    }

    /// Substitutes `{{name}}` placeholders. Every placeholder must be bound.
    pub fn render(&self, template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let text = self
            .templates
            .get(template)
            .ok_or_else(|| PromptError::UnknownTemplate(template.to_string()))?;
        let mut out = String::with_capacity(text.len());
        let mut rest = text.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| PromptError::Unterminated {
                template: template.to_string(),
            })?;
            let name = after[..close].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::Unbound {
                    template: template.to_string(),
                    name: name.to_string(),
                })?;
            out.push_str(value);
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_agent_has_both_templates() {
        let set = PromptSet::builtin();
        for agent in AgentRole::ALL {
            assert!(set.system(agent).is_ok(), "{agent}");
            let name = format!("{}.user", agent.name().to_ascii_lowercase());
            assert!(set.templates.contains_key(&name), "{name}");
        }
    }

    #[test]
    fn render_binds_and_rejects_unbound() {
        let set = PromptSet::builtin();
        let out = set
            .user(
                AgentRole::Evaluator,
                &[
                    ("root_cause", "RC"),
                    ("hunk_index", "0"),
                    ("file", "a.c"),
                    ("hunk", "@@"),
                    ("category", "fix"),
                    ("summary", "S"),
                ],
            )
            .unwrap();
        assert!(out.contains("RC") && out.contains("Hunk 0 of a.c"));
        assert!(matches!(
            set.user(AgentRole::Evaluator, &[]),
            Err(PromptError::Unbound { .. })
        ));
    }

    #[test]
    fn overrides_replace_builtin() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("judge.system.txt"), "be strict").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.system(AgentRole::Judge).unwrap(), "be strict");
        assert_ne!(set.system(AgentRole::Auditor).unwrap(), "be strict");
    }
}
