//! Category-matched repair memory.

use serde::{Deserialize, Serialize};

use super::planner::DiagnosisCategory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub category: DiagnosisCategory,
    pub repair: String,
    pub success: bool,
}

/// Append-only log of repairs and whether they worked.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryStore {
    records: Vec<MemoryRecord>,
}

impl MemoryStore {
    pub fn record(&mut self, category: DiagnosisCategory, repair: &str, success: bool) {
        self.records.push(MemoryRecord {
            category,
            repair: repair.to_string(),
            success,
        });
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Whether the last two local repairs for `category` both failed, in which
    /// case the executor escalates straight to replanning.
    pub fn discourages_local(&self, category: DiagnosisCategory) -> bool {
        let recent: Vec<_> = retrieve_memory(self, category).into_iter().take(2).collect();
        recent.len() == 2 && recent.iter().all(|r| !r.success)
    }
}

/// Records of `category`, newest first.
pub fn retrieve_memory(store: &MemoryStore, category: DiagnosisCategory) -> Vec<&MemoryRecord> {
    store.records.iter().rev().filter(|r| r.category == category).collect()
}
