//! The descriptive-feature vocabulary and its strong subset.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SfsError;

const DEFAULT_CATALOG: &str = include_str!("../../data/catalog.json");
const RESERVED: [char; 6] = [';', ':', '(', ')', '<', '>'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub values: Vec<String>,
}

/// Feature vocabulary plus the strong feature set (SFS).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub features: Vec<FeatureSpec>,
    pub sfs: Vec<String>,
}

impl FeatureCatalog {
    /// The shipped 36-feature catalog with its 11-feature SFS.
    pub fn builtin() -> Self {
        let cat: Self = serde_json::from_str(DEFAULT_CATALOG).expect("embedded catalog parses");
        cat.validate().expect("embedded catalog is valid");
        cat
    }

    pub fn from_json(text: &str) -> Result<Self, SfsError> {
        let cat: Self =
            serde_json::from_str(text).map_err(|e| SfsError::Catalog(e.to_string()))?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<Self, SfsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SfsError::Catalog(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), SfsError> {
        let mut names = BTreeSet::new();
        for f in &self.features {
            if f.name.trim().is_empty() {
                return Err(SfsError::Catalog("feature with empty name".into()));
            }
            if !names.insert(f.name.as_str()) {
                return Err(SfsError::Catalog(format!("duplicate feature '{}'", f.name)));
            }
            if f.values.is_empty() {
                return Err(SfsError::Catalog(format!("feature '{}' has no values", f.name)));
            }
            // rendered profiles use these as delimiters
            for text in std::iter::once(&f.name).chain(&f.values) {
                if text.trim().is_empty() || text.contains(RESERVED) {
                    return Err(SfsError::Catalog(format!(
                        "feature '{}': '{text}' is empty or contains one of {RESERVED:?}",
                        f.name
                    )));
                }
            }
        }
        for s in &self.sfs {
            if !names.contains(s.as_str()) {
                return Err(SfsError::Catalog(format!("sfs feature '{s}' not in catalog")));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn is_sfs(&self, name: &str) -> bool {
        self.sfs.iter().any(|s| s == name)
    }

    /// Same vocabulary with a different strong subset.
    pub fn with_sfs(&self, sfs: Vec<String>) -> Result<Self, SfsError> {
        let cat = Self {
            features: self.features.clone(),
            sfs,
        };
        cat.validate()?;
        Ok(cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_36_features_and_11_strong() {
        let cat = FeatureCatalog::builtin();
        assert_eq!(cat.features.len(), 36);
        assert_eq!(cat.sfs.len(), 11);
        assert!(cat.is_sfs("hair color"));
    }

    #[test]
    fn rejects_unknown_sfs_member() {
        let err = FeatureCatalog::from_json(
            r#"{"features":[{"name":"a","values":["x"]}],"sfs":["b"]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("'b'"));
    }

    #[test]
    fn rejects_empty_value_set() {
        assert!(FeatureCatalog::from_json(r#"{"features":[{"name":"a","values":[]}],"sfs":[]}"#)
            .is_err());
    }
}
