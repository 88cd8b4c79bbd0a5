use std::path::Path;

use serde::Deserialize;

const BUILTIN: &str = include_str!("../../prompts/v1.toml");

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct SearchPrompts {
    pub system: String,
    pub followup: String,
    pub act: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct SinglePrompt {
    pub prompt: String,
}

/// Prompt templates for every stage, loaded from a versioned TOML file.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PromptSet {
    pub version: String,
    pub doc_gathering: SearchPrompts,
    pub summarize: SearchPrompts,
    pub generate: SinglePrompt,
    pub diagnose: SearchPrompts,
    pub repair: SinglePrompt,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled prompt templates parse")
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Substitutes `{name}` placeholders.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim().to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}
