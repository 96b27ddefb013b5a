use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, FormatError};
use crate::UNLABELED;

/// Raw label id to training id table, stored as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMap {
    pub name: String,
    pub mapping: BTreeMap<u32, u32>,
    pub ignore_ids: Vec<u32>,
}

impl ClassMap {
    pub fn identity(name: &str, classes: u32) -> Self {
        ClassMap {
            name: name.to_string(),
            mapping: (0..classes).map(|c| (c, c)).collect(),
            ignore_ids: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if let Some(id) = self.ignore_ids.iter().find(|id| self.mapping.contains_key(id)) {
            return Err(FormatError::ClassMap(format!("raw id {id} is both mapped and ignored")));
        }
        if self.mapping.values().any(|&t| t == UNLABELED) {
            return Err(FormatError::ClassMap("training id collides with the unlabeled sentinel".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, FormatError> {
        let map: ClassMap = serde_json::from_str(s).map_err(|e| FormatError::ClassMap(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|e| {
            FormatError::Value {
                offset: e.utf8_error().valid_up_to() as u64,
                detail: "class map is not UTF-8".into(),
            }
            .in_file(path)
        })?;
        Self::from_json(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("class map serializes")
    }

    /// Training id of a raw label; ignored or unknown ids become
    /// [`UNLABELED`].
    pub fn apply(&self, raw: u32) -> u32 {
        self.mapping.get(&raw).copied().unwrap_or(UNLABELED)
    }

    pub fn num_classes(&self) -> u32 {
        self.train_ids().len() as u32
    }

    pub fn train_ids(&self) -> BTreeSet<u32> {
        self.mapping.values().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_schema_and_lookup() {
        let json = r#"{ "name": "toy", "mapping": { "10": 0, "11": 1, "40": 1 }, "ignore_ids": [0] }"#;
        let m = ClassMap::from_json(json).unwrap();
        assert_eq!(m.apply(40), 1);
        assert_eq!(m.apply(0), UNLABELED);
        assert_eq!(m.apply(99), UNLABELED);
        assert_eq!(m.num_classes(), 2);
        assert_eq!(ClassMap::from_json(&m.to_json()).unwrap(), m);
        assert!(ClassMap::from_json(r#"{ "name": "x", "mapping": { "1": 0 }, "ignore_ids": [1] }"#).is_err());
        assert!(ClassMap::from_json(r#"{ "name": "x", "mapping": {}, "ignore_ids": [], "extra": 1 }"#).is_err());
    }
}
