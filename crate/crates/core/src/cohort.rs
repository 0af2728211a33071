//! Patient cohort JSON Lines I/O.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId, NodeType};

/// One cohort-file row, keyed by node-file string IDs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub id: String,
    pub phenotypes: Vec<String>,
    pub causal_gene: Option<String>,
}

/// A patient resolved against a loaded graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    /// Sorted, deduplicated.
    pub phenotypes: Vec<NodeId>,
    pub causal_gene: Option<NodeId>,
    /// Phenotype keys that did not name a node of the graph.
    pub unresolved: Vec<String>,
}

impl PatientRecord {
    pub fn resolve(entry: &PatientEntry, g: &KnowledgeGraph) -> Self {
        let mut phenotypes = Vec::with_capacity(entry.phenotypes.len());
        let mut unresolved = Vec::new();
        for key in &entry.phenotypes {
            match g.node_by_key(key) {
                Some(v) => phenotypes.push(v),
                None => unresolved.push(key.clone()),
            }
        }
        if !unresolved.is_empty() {
            log::warn!(
                "patient {}: unknown phenotype IDs {:?}",
                entry.id,
                unresolved
            );
        }
        phenotypes.sort_unstable();
        phenotypes.dedup();
        let causal_gene = entry.causal_gene.as_deref().and_then(|key| {
            let found = g
                .node_by_key(key)
                .filter(|&v| g.node_type(v) == NodeType::Gene);
            if found.is_none() {
                log::warn!("patient {}: causal gene `{key}` is not a gene node", entry.id);
            }
            found
        });
        Self {
            patient_id: entry.id.clone(),
            phenotypes,
            causal_gene,
            unresolved,
        }
    }
}

pub fn resolve_cohort(entries: &[PatientEntry], g: &KnowledgeGraph) -> Vec<PatientRecord> {
    entries.iter().map(|e| PatientRecord::resolve(e, g)).collect()
}

/// Reads any JSON Lines file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Json {
            file: name.clone(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

pub fn render_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(render_jsonl(rows)?.as_bytes())?;
    Ok(())
}

pub fn read_cohort(path: &Path) -> Result<Vec<PatientEntry>> {
    read_jsonl(path)
}
