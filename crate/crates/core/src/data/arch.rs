//! Substring rules mapping raw architecture strings onto families.
//!
//! Rules are tried in file order and matched case-insensitively; the first
//! hit wins and anything unmatched falls into `Other`. The shipped table
//! lives in `data/arch_rules.csv` and can be replaced by a user file with
//! the same `pattern,category` layout.

use serde::{Deserialize, Serialize};

use super::{ArchCategory, DataError, Result};

const DEFAULT_RULES: &str = include_str!("../../data/arch_rules.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchRule {
    pub pattern: String,
    pub category: ArchCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchRules {
    rules: Vec<ArchRule>,
}

impl Default for ArchRules {
    fn default() -> Self {
        Self::from_csv(DEFAULT_RULES).expect("bundled architecture rules are valid")
    }
}

impl ArchRules {
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| DataError::RuleFile { line: 1, message: e.to_string() })?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let (Some(pi), Some(ci)) = (col("pattern"), col("category")) else {
            return Err(DataError::RuleFile {
                line: 1,
                message: "header must contain `pattern,category`".into(),
            });
        };
        let mut rules = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| DataError::RuleFile {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            let pattern = row.get(pi).unwrap_or("").to_ascii_lowercase();
            let cat_name = row.get(ci).unwrap_or("");
            if pattern.is_empty() {
                return Err(DataError::RuleFile { line, message: "empty pattern".into() });
            }
            let category = ArchCategory::from_name(cat_name).ok_or_else(|| DataError::RuleFile {
                line,
                message: format!("unknown category `{cat_name}`"),
            })?;
            rules.push(ArchRule { pattern, category });
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[ArchRule] {
        &self.rules
    }

    pub fn map(&self, architecture_raw: &str) -> ArchCategory {
        let raw = architecture_raw.to_ascii_lowercase();
        self.rules
            .iter()
            .find(|r| raw.contains(&r.pattern))
            .map_or(ArchCategory::Other, |r| r.category)
    }
}

/// Maps a raw architecture name with the bundled rule table.
pub fn map_architecture(architecture_raw: &str) -> ArchCategory {
    static RULES: std::sync::OnceLock<ArchRules> = std::sync::OnceLock::new();
    RULES.get_or_init(ArchRules::default).map(architecture_raw)
}
