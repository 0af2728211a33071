//! Score-thresholded patient-graph extraction and boost fusion of
//! externally computed gene scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Ranking;
use crate::graph::{KnowledgeGraph, NodeId, NodeType};
use crate::model::ScoreBundle;
use crate::sampler::SampledSubgraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// m
    pub hops: usize,
    /// k₁: arcs kept per node on expansion hops.
    pub k_edges: usize,
    /// k₂: genes kept per node on the final hop.
    pub k_genes: usize,
    /// τ_edge is this percentile of the patient's arc scores.
    pub edge_percentile: f64,
    /// τ_gene
    pub gene_score_threshold: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            k_edges: 5,
            k_genes: 2,
            edge_percentile: 80.0,
            gene_score_threshold: 0.5,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 || self.k_edges == 0 || self.k_genes == 0 {
            return Err(Error::Config("hops, k_edges and k_genes must be ≥ 1".into()));
        }
        if !(self.edge_percentile > 0.0 && self.edge_percentile < 100.0) {
            return Err(Error::Config("edge_percentile must lie in (0, 100)".into()));
        }
        if !self.gene_score_threshold.is_finite() {
            return Err(Error::Config("gene_score_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Extracted node set `S` with its hop frontiers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatientGraph {
    pub nodes: BTreeSet<NodeId>,
    /// `F₀` (active phenotypes) through `F_m`.
    pub frontier_by_hop: Vec<BTreeSet<NodeId>>,
    /// Genes admitted by the final, gene-only hop.
    pub selected_genes: BTreeSet<NodeId>,
    /// Every gene-typed member of `S`, including genes reached on earlier hops.
    pub genes: BTreeSet<NodeId>,
}

/// Linear-interpolated percentile (`rank = p/100 · (n − 1)`).
pub fn compute_edge_threshold(scores: &[f64], percentile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Config("cannot take a percentile of no scores".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = percentile.clamp(0.0, 100.0) / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Runs the extraction with τ_edge taken from the configured percentile.
pub fn extract_patient_graph(
    sg: &SampledSubgraph,
    scores: &ScoreBundle,
    cfg: &ExtractionConfig,
) -> Result<PatientGraph> {
    cfg.validate()?;
    let tau_edge = if scores.edge_scores.is_empty() {
        f64::INFINITY
    } else {
        compute_edge_threshold(&scores.edge_scores, cfg.edge_percentile)?
    };
    extract_with_threshold(sg, &scores.edge_scores, &scores.gene_scores, tau_edge, cfg)
}

/// Top-`k` arc indices by score, ties by ascending destination global ID.
fn top_k(sg: &SampledSubgraph, edge_scores: &[f64], mut picked: Vec<usize>, k: usize) -> Vec<usize> {
    picked.sort_by(|&a, &b| {
        edge_scores[b]
            .total_cmp(&edge_scores[a])
            .then(sg.global(sg.local_arcs[a].dst).cmp(&sg.global(sg.local_arcs[b].dst)))
    });
    picked.truncate(k);
    picked
}

/// Extraction with an explicit edge threshold. `edge_scores` is per local
/// arc; `gene_scores` is aligned with `sg.gene_locals`.
pub fn extract_with_threshold(
    sg: &SampledSubgraph,
    edge_scores: &[f64],
    gene_scores: &[f64],
    tau_edge: f64,
    cfg: &ExtractionConfig,
) -> Result<PatientGraph> {
    if edge_scores.len() != sg.arc_count() || gene_scores.len() != sg.gene_locals.len() {
        return Err(Error::Config(format!(
            "score vectors ({} arcs, {} genes) do not match the subgraph ({} arcs, {} genes)",
            edge_scores.len(),
            gene_scores.len(),
            sg.arc_count(),
            sg.gene_locals.len()
        )));
    }
    let mut gene_score_of = vec![None; sg.node_count()];
    for (j, &g) in sg.gene_locals.iter().enumerate() {
        gene_score_of[g] = Some(gene_scores[j]);
    }

    // Frontiers hold local indices; local order equals global order.
    let start: BTreeSet<usize> = sg.phenotype_locals.iter().copied().collect();
    let mut collected = start.clone();
    let mut frontiers = vec![start];
    for _ in 1..cfg.hops {
        let mut next = BTreeSet::new();
        for &v in frontiers.last().expect("nonempty") {
            let picked: Vec<usize> = sg
                .out_arcs(v)
                .filter(|&a| edge_scores[a] >= tau_edge)
                .collect();
            for a in top_k(sg, edge_scores, picked, cfg.k_edges) {
                next.insert(sg.local_arcs[a].dst);
            }
        }
        collected.extend(&next);
        frontiers.push(next);
    }
    let mut last = BTreeSet::new();
    for &w in frontiers.last().expect("nonempty") {
        let picked: Vec<usize> = sg
            .out_arcs(w)
            .filter(|&a| {
                let g = sg.local_arcs[a].dst;
                edge_scores[a] >= tau_edge
                    && gene_score_of[g].is_some_and(|s| s >= cfg.gene_score_threshold)
            })
            .collect();
        for a in top_k(sg, edge_scores, picked, cfg.k_genes) {
            last.insert(sg.local_arcs[a].dst);
        }
    }
    collected.extend(&last);
    frontiers.push(last);

    let to_global = |set: &BTreeSet<usize>| -> BTreeSet<NodeId> { set.iter().map(|&l| sg.global(l)).collect() };
    let genes = collected
        .iter()
        .filter(|&&l| sg.node_type(l) == NodeType::Gene)
        .map(|&l| sg.global(l))
        .collect();
    Ok(PatientGraph {
        nodes: to_global(&collected),
        selected_genes: to_global(frontiers.last().expect("nonempty")),
        frontier_by_hop: frontiers.iter().map(to_global).collect(),
        genes,
    })
}

/// `(x − min)/(max − min)`; a constant map becomes all 0.5.
pub fn min_max_normalize<K: Ord + Clone>(raw: &BTreeMap<K, f64>) -> BTreeMap<K, f64> {
    let min = raw.values().copied().fold(f64::INFINITY, f64::min);
    let max = raw.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    raw.iter()
        .map(|(k, &v)| {
            let n = if range > 0.0 { (v - min) / range } else { 0.5 };
            (k.clone(), n)
        })
        .collect()
}

/// Result of boosting external scores by patient-graph membership.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRanking {
    pub ranking: Ranking,
    /// Genes of the patient graph that had no external score (scored as 0).
    pub missing_from_external: Vec<NodeId>,
}

/// `score(g) = s̃_g + δ·1{g ∈ S}` over the union of externally scored genes
/// and the genes of `S`.
pub fn fuse_scores(
    external: &BTreeMap<NodeId, f64>,
    patient_graph: &PatientGraph,
    delta: f64,
) -> FusedRanking {
    let mut combined: BTreeMap<NodeId, f64> = external.clone();
    let mut missing = Vec::new();
    // Unscored genes of S join only when boosted, so δ = 0 is the identity.
    if delta != 0.0 {
        for &g in &patient_graph.genes {
            combined.entry(g).or_insert_with(|| {
                missing.push(g);
                0.0
            });
        }
    }
    if !missing.is_empty() {
        log::info!("{} extracted genes lack an external score", missing.len());
    }
    for (g, s) in combined.iter_mut() {
        if patient_graph.genes.contains(g) {
            *s += delta;
        }
    }
    FusedRanking {
        ranking: Ranking::new(combined),
        missing_from_external: missing,
    }
}

/// JSON form of one extracted patient graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientGraphRecord {
    pub id: String,
    pub nodes: Vec<String>,
    pub genes: Vec<String>,
    #[serde(default)]
    pub selected_genes: Vec<String>,
}

impl PatientGraphRecord {
    pub fn from_graph(id: &str, pg: &PatientGraph, g: &KnowledgeGraph) -> Self {
        let keys = |s: &BTreeSet<NodeId>| s.iter().map(|&v| g.node_key(v).to_string()).collect();
        Self {
            id: id.to_string(),
            nodes: keys(&pg.nodes),
            genes: keys(&pg.genes),
            selected_genes: keys(&pg.selected_genes),
        }
    }

    /// Inverse of [`from_graph`](Self::from_graph); frontiers are not stored.
    pub fn to_graph(&self, g: &KnowledgeGraph) -> Result<PatientGraph> {
        let resolve = |keys: &[String]| -> Result<BTreeSet<NodeId>> {
            keys.iter()
                .map(|k| {
                    g.node_by_key(k)
                        .ok_or_else(|| Error::Config(format!("patient graph {}: unknown node `{k}`", self.id)))
                })
                .collect()
        };
        Ok(PatientGraph {
            nodes: resolve(&self.nodes)?,
            frontier_by_hop: Vec::new(),
            selected_genes: resolve(&self.selected_genes)?,
            genes: resolve(&self.genes)?,
        })
    }
}
