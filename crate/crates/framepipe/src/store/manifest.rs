//! Per-table metadata, stored as `manifest.json` in the table directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a column's bytes are laid out on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Keyframe/delta records plus a keyframe index; sequential decode.
    Frame,
    /// Length-prefixed rows plus a fixed-width index; random access.
    Blob,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    /// Fixed payload size in bytes, when every row has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub rows: usize,
    pub columns: Vec<ColumnMeta>,
}

impl Manifest {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn load(table_dir: &Path) -> Result<Manifest> {
        let path = table_dir.join("manifest.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Store(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes atomically (temp file + rename) so a crash never leaves a
    /// half-written manifest behind.
    pub fn save(&self, table_dir: &Path) -> Result<()> {
        let tmp = table_dir.join("manifest.json.tmp");
        fs::write(
            &tmp,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )?;
        fs::rename(&tmp, table_dir.join("manifest.json"))?;
        Ok(())
    }
}
