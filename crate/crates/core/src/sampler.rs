//! Phenotype-centred m-hop subgraph sampling and weak edge supervision.

use std::collections::VecDeque;
use std::ops::Range;

use rand::Rng;

use crate::error::{Result, SamplerError};
use crate::graph::{ArcId, KnowledgeGraph, NodeId, NodeType};

const UNREACHED: usize = usize::MAX;

/// Directed arc between two local node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalArc {
    pub src: usize,
    pub dst: usize,
    pub arc: ArcId,
}

/// Induced subgraph on every node within `m` hops of the active phenotypes.
///
/// Local indices follow ascending global ID; `local_arcs` is sorted by
/// `(src, dst)`, so the arcs leaving one local node are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSubgraph {
    pub local_nodes: Vec<NodeId>,
    pub local_arcs: Vec<LocalArc>,
    pub phenotype_locals: Vec<usize>,
    pub gene_locals: Vec<usize>,
    pub hop_of_node: Vec<usize>,
    /// Requested phenotypes that were out of range or not phenotype-typed.
    pub skipped_phenotypes: Vec<NodeId>,
    node_types: Vec<NodeType>,
    arc_offsets: Vec<usize>,
}

impl SampledSubgraph {
    pub fn node_count(&self) -> usize {
        self.local_nodes.len()
    }

    pub fn arc_count(&self) -> usize {
        self.local_arcs.len()
    }

    pub fn global(&self, local: usize) -> NodeId {
        self.local_nodes[local]
    }

    pub fn local_index(&self, v: NodeId) -> Option<usize> {
        self.local_nodes.binary_search(&v).ok()
    }

    pub fn node_type(&self, local: usize) -> NodeType {
        self.node_types[local]
    }

    /// Range of `local_arcs` leaving `local`.
    pub fn out_arcs(&self, local: usize) -> Range<usize> {
        self.arc_offsets[local]..self.arc_offsets[local + 1]
    }

    pub fn find_local_arc(&self, src: usize, dst: usize) -> Option<usize> {
        let r = self.out_arcs(src);
        self.local_arcs[r.clone()]
            .binary_search_by_key(&dst, |a| a.dst)
            .ok()
            .map(|i| r.start + i)
    }

    pub fn arc_sources(&self) -> Vec<usize> {
        self.local_arcs.iter().map(|a| a.src).collect()
    }

    pub fn arc_targets(&self) -> Vec<usize> {
        self.local_arcs.iter().map(|a| a.dst).collect()
    }

    /// Hop distances from `source` over the subgraph's own arcs.
    fn bfs_from(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![UNREACHED; self.node_count()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for a in &self.local_arcs[self.out_arcs(u)] {
                if dist[a.dst] == UNREACHED {
                    dist[a.dst] = dist[u] + 1;
                    queue.push_back(a.dst);
                }
            }
        }
        dist
    }
}

/// Multi-source BFS from all valid phenotypes jointly, truncated at `hops`.
pub fn sample_phenotype_subgraph(
    g: &KnowledgeGraph,
    phenotypes: &[NodeId],
    hops: usize,
) -> Result<SampledSubgraph> {
    if hops == 0 {
        return Err(SamplerError::ZeroHops.into());
    }
    let mut active = Vec::with_capacity(phenotypes.len());
    let mut skipped = Vec::new();
    for &p in phenotypes {
        if g.contains(p) && g.node_type(p) == NodeType::Phenotype {
            active.push(p);
        } else {
            skipped.push(p);
        }
    }
    if !skipped.is_empty() {
        log::warn!("skipping non-phenotype inputs {skipped:?}");
    }
    active.sort_unstable();
    active.dedup();
    if active.is_empty() {
        return Err(SamplerError::NoValidPhenotypes(phenotypes.len()).into());
    }

    let mut dist = vec![UNREACHED; g.node_count()];
    let mut queue = VecDeque::new();
    let mut reached = Vec::new();
    for &p in &active {
        dist[p.0] = 0;
        queue.push_back(p);
        reached.push(p);
    }
    while let Some(u) = queue.pop_front() {
        if dist[u.0] == hops {
            continue;
        }
        for (_, v) in g.neighbor_iter(u) {
            if dist[v.0] == UNREACHED {
                dist[v.0] = dist[u.0] + 1;
                queue.push_back(v);
                reached.push(v);
            }
        }
    }
    reached.sort_unstable();

    let mut local_of = vec![UNREACHED; g.node_count()];
    for (i, &v) in reached.iter().enumerate() {
        local_of[v.0] = i;
    }
    let mut local_arcs = Vec::new();
    let mut arc_offsets = Vec::with_capacity(reached.len() + 1);
    arc_offsets.push(0);
    for (i, &u) in reached.iter().enumerate() {
        for (a, v) in g.neighbor_iter(u) {
            let j = local_of[v.0];
            if j != UNREACHED {
                local_arcs.push(LocalArc { src: i, dst: j, arc: a });
            }
        }
        arc_offsets.push(local_arcs.len());
    }
    let node_types: Vec<NodeType> = reached.iter().map(|&v| g.node_type(v)).collect();
    let phenotype_locals = active.iter().map(|p| local_of[p.0]).collect();
    let gene_locals = (0..reached.len())
        .filter(|&i| node_types[i] == NodeType::Gene)
        .collect();
    let hop_of_node = reached.iter().map(|v| dist[v.0]).collect();
    Ok(SampledSubgraph {
        local_nodes: reached,
        local_arcs,
        phenotype_locals,
        gene_locals,
        hop_of_node,
        skipped_phenotypes: skipped,
        node_types,
        arc_offsets,
    })
}

/// Gene-typed local nodes, ascending global ID.
pub fn candidate_genes(sg: &SampledSubgraph) -> Vec<usize> {
    sg.gene_locals.clone()
}

/// Positive and negative local arc indices for the margin loss.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SupervisionLabels {
    /// Sorted ascending.
    pub positive_arcs: Vec<usize>,
    /// Sorted ascending; disjoint from `positive_arcs`.
    pub negative_arcs: Vec<usize>,
    /// False when the causal gene is not a node of the subgraph.
    pub causal_in_subgraph: bool,
}

/// Labels every arc on a shortest phenotype→causal-gene path as positive
/// (both directions of the underlying edge) and draws `ratio`× as many
/// negatives uniformly, without replacement, from the remaining arcs.
pub fn label_supervision_edges<R: Rng + ?Sized>(
    sg: &SampledSubgraph,
    causal_gene: NodeId,
    ratio: usize,
    rng: &mut R,
) -> SupervisionLabels {
    let Some(target) = sg.local_index(causal_gene) else {
        log::debug!("causal gene {causal_gene:?} outside the sampled subgraph");
        return SupervisionLabels::default();
    };
    let from_target = sg.bfs_from(target);
    let mut positive = vec![false; sg.arc_count()];
    for &p in &sg.phenotype_locals {
        let from_p = sg.bfs_from(p);
        let d = from_p[target];
        if d == UNREACHED || d == 0 {
            continue;
        }
        for (idx, a) in sg.local_arcs.iter().enumerate() {
            let (du, dv) = (from_p[a.src], from_target[a.dst]);
            if du != UNREACHED && dv != UNREACHED && du + 1 + dv == d {
                positive[idx] = true;
                if let Some(back) = sg.find_local_arc(a.dst, a.src) {
                    positive[back] = true;
                }
            }
        }
    }
    let positive_arcs: Vec<usize> = (0..sg.arc_count()).filter(|&i| positive[i]).collect();
    let remaining: Vec<usize> = (0..sg.arc_count()).filter(|&i| !positive[i]).collect();
    let wanted = (ratio * positive_arcs.len()).min(remaining.len());
    let mut negative_arcs: Vec<usize> = rand::seq::index::sample(rng, remaining.len(), wanted)
        .into_iter()
        .map(|i| remaining[i])
        .collect();
    negative_arcs.sort_unstable();
    SupervisionLabels {
        positive_arcs,
        negative_arcs,
        causal_in_subgraph: true,
    }
}
