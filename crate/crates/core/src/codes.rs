//! Code normalization and list matching shared by every code-driven module.
//!
//! All diagnosis/procedure codes are compared after normalization:
//! uppercase with dots stripped, so ICD "96.70" and "9670" match the same
//! list entry. Lists support exact codes and prefix patterns.

use serde::{Deserialize, Serialize};

/// Uppercase and strip dots. Codes are otherwise opaque strings.
pub fn normalize_code(code: &str) -> String {
    code.trim()
        .chars()
        .filter(|c| *c != '.')
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeSystem {
    Icd9,
    Icd10,
    Cpt,
    Other,
}

impl CodeSystem {
    pub fn parse(s: &str) -> CodeSystem {
        match s.trim().to_ascii_uppercase().as_str() {
            "ICD9" | "ICD-9" | "ICD9CM" | "ICD-9-CM" | "09" | "9" => CodeSystem::Icd9,
            "ICD10" | "ICD-10" | "ICD10CM" | "ICD-10-CM" | "10" => CodeSystem::Icd10,
            "CPT" | "HCPCS" => CodeSystem::Cpt,
            _ => CodeSystem::Other,
        }
    }
}

/// A named list of exact codes and prefix patterns, matched against
/// normalized codes from any system. The paper's lists mix ICD, CPT and
/// local codes, so entries are treated as opaque normalized strings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CodeList {
    #[serde(default)]
    pub codes: Vec<String>,
    #[serde(default)]
    pub prefixes: Vec<String>,
}

impl CodeList {
    pub fn new(codes: &[&str], prefixes: &[&str]) -> Self {
        CodeList {
            codes: codes.iter().map(|c| normalize_code(c)).collect(),
            prefixes: prefixes.iter().map(|c| normalize_code(c)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty() && self.prefixes.is_empty()
    }

    /// `code` must already be normalized.
    pub fn matches(&self, code: &str) -> bool {
        self.codes.iter().any(|c| c == code) || self.prefixes.iter().any(|p| code.starts_with(p.as_str()))
    }

    /// Normalize all entries in place (after loading from user config).
    pub fn normalize(&mut self) {
        for c in self.codes.iter_mut() {
            *c = normalize_code(c);
        }
        for p in self.prefixes.iter_mut() {
            *p = normalize_code(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_strips_dots_and_uppercases() {
        assert_eq!(normalize_code("96.70"), "9670");
        assert_eq!(normalize_code(" n17.9 "), "N179");
    }

    #[test]
    fn prefix_and_exact_matching() {
        let list = CodeList::new(&["99291"], &["N18"]);
        assert!(list.matches("99291"));
        assert!(list.matches("N183"));
        assert!(!list.matches("9929"));
    }

    #[test]
    fn code_system_aliases() {
        assert_eq!(CodeSystem::parse("icd-10-cm"), CodeSystem::Icd10);
        assert_eq!(CodeSystem::parse("09"), CodeSystem::Icd9);
        assert_eq!(CodeSystem::parse("local"), CodeSystem::Other);
    }
}
