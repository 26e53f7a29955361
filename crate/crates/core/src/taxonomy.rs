//! Hierarchical violation label tree: major category → sub-category → rule.
//!
//! Identifiers are lowercase snake-case slugs, kept separate from display
//! names so that label comparison does not depend on surface form.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Built-in six-major tree used by tests, the CLI default, and the synthetic corpus.
pub const FIXTURE_TAXONOMY: &str = include_str!("../fixtures/taxonomy.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("failed to read taxonomy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("taxonomy parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("taxonomy has no major categories")]
    EmptyMajors,
    #[error("major category `{0}` has no sub-categories")]
    EmptySubs(String),
    #[error("sub-category `{major}/{sub}` has no rules")]
    EmptyRules { major: String, sub: String },
    #[error("empty identifier in {0}")]
    EmptyId(String),
    #[error("duplicate major category id `{0}`")]
    DuplicateMajor(String),
    #[error("duplicate sub-category id `{sub}` in major `{major}`")]
    DuplicateSub { major: String, sub: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubCategory {
    pub id: String,
    pub name: String,
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MajorCategory {
    pub id: String,
    pub name: String,
    pub subs: Vec<SubCategory>,
}

/// A validated label tree. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelTree {
    pub majors: Vec<MajorCategory>,
}

impl LabelTree {
    /// Parses and validates taxonomy JSON.
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let tree: LabelTree = serde_json::from_str(text).map_err(|e| TaxonomyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        tree.validate()?;
        Ok(tree)
    }

    /// The built-in fixture tree.
    pub fn fixture() -> Self {
        Self::from_json(FIXTURE_TAXONOMY).expect("bundled taxonomy fixture is valid")
    }

    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if self.majors.is_empty() {
            return Err(TaxonomyError::EmptyMajors);
        }
        let mut major_ids = BTreeSet::new();
        for major in &self.majors {
            if major.id.trim().is_empty() {
                return Err(TaxonomyError::EmptyId(format!("major `{}`", major.name)));
            }
            if !major_ids.insert(major.id.as_str()) {
                return Err(TaxonomyError::DuplicateMajor(major.id.clone()));
            }
            if major.subs.is_empty() {
                return Err(TaxonomyError::EmptySubs(major.id.clone()));
            }
            let mut sub_ids = BTreeSet::new();
            for sub in &major.subs {
                if sub.id.trim().is_empty() {
                    return Err(TaxonomyError::EmptyId(format!(
                        "sub `{}` of major `{}`",
                        sub.name, major.id
                    )));
                }
                if !sub_ids.insert(sub.id.as_str()) {
                    return Err(TaxonomyError::DuplicateSub {
                        major: major.id.clone(),
                        sub: sub.id.clone(),
                    });
                }
                if sub.rules.is_empty() {
                    return Err(TaxonomyError::EmptyRules {
                        major: major.id.clone(),
                        sub: sub.id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn major(&self, major_id: &str) -> Option<&MajorCategory> {
        self.majors.iter().find(|m| m.id == major_id)
    }

    /// Resolves `(major_id, sub_id)`; `None` unless both ids exist.
    pub fn lookup(&self, major_id: &str, sub_id: &str) -> Option<&SubCategory> {
        self.major(major_id)?.subs.iter().find(|s| s.id == sub_id)
    }

    pub fn sub_count(&self) -> usize {
        self.majors.iter().map(|m| m.subs.len()).sum()
    }

    /// All `(major, sub)` pairs in file order.
    pub fn pairs(&self) -> impl Iterator<Item = (&MajorCategory, &SubCategory)> {
        self.majors
            .iter()
            .flat_map(|m| m.subs.iter().map(move |s| (m, s)))
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<LabelTree, TaxonomyError> {
    let text = std::fs::read_to_string(path)?;
    LabelTree::from_json(&text)
}
