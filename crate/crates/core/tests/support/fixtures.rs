#![allow(dead_code)]

use phenograph_core::sampler::{sample_phenotype_subgraph, SampledSubgraph};
use phenograph_core::{ExtractionConfig, KnowledgeGraph, ModelConfig, NodeId, NodeType};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{random_graph, ExtractionInstance};

/// Small but complete model configuration.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 6,
        hidden_dim: 8,
        out_dim: 5,
        heads: 2,
        layers: 2,
        attn_proj_dim: 3,
        edge_hidden: 7,
        penalty_weight: 0.5,
        leaky_slope: 0.2,
    }
}

pub struct Toy {
    pub graph: KnowledgeGraph,
    pub subgraph: SampledSubgraph,
    pub phenotypes: Vec<NodeId>,
    /// A gene of the subgraph away from the phenotypes.
    pub causal: NodeId,
}

/// Random 2-hop patient subgraph with at most `max_nodes` nodes and at
/// least two candidate genes.
pub fn toy_subgraph(seed: u64, max_nodes: usize) -> Toy {
    for attempt in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + attempt);
        let g = random_graph(&mut rng, 60, 0.05, [0.3, 0.35, 0.1, 0.25]);
        let mut phenos: Vec<NodeId> = g.nodes_of_type(NodeType::Phenotype).collect();
        phenos.shuffle(&mut rng);
        phenos.truncate(2);
        if phenos.is_empty() {
            continue;
        }
        let Ok(sg) = sample_phenotype_subgraph(&g, &phenos, 2) else { continue };
        if sg.node_count() > max_nodes || sg.gene_locals.len() < 2 || sg.arc_count() < 4 {
            continue;
        }
        let far: Vec<usize> = sg.gene_locals.iter().copied().filter(|&l| sg.hop_of_node[l] == 2).collect();
        let Some(&c) = far.first().or(sg.gene_locals.first()) else { continue };
        return Toy {
            causal: sg.global(c),
            graph: g,
            subgraph: sg,
            phenotypes: phenos,
        };
    }
    panic!("no toy subgraph found for seed {seed}");
}

pub struct ExtractionCase {
    pub sg: SampledSubgraph,
    pub edge: Vec<f64>,
    pub gene: Vec<f64>,
}

/// Scores quantised to tenths so ties occur and exercise tie-breaking.
pub fn extraction_case(seed: u64) -> Option<ExtractionCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(10..50);
    let p = rng.gen_range(0.05..0.2);
    let g = random_graph(&mut rng, n, p, [0.3, 0.35, 0.1, 0.25]);
    let mut phenos: Vec<NodeId> = g.nodes_of_type(NodeType::Phenotype).collect();
    if phenos.is_empty() {
        return None;
    }
    phenos.shuffle(&mut rng);
    phenos.truncate(rng.gen_range(1..4));
    let sg = sample_phenotype_subgraph(&g, &phenos, 3).ok()?;
    if sg.arc_count() == 0 {
        return None;
    }
    let edge = (0..sg.arc_count()).map(|_| (rng.gen_range(-10..=10) as f64) / 10.0).collect();
    let gene = (0..sg.gene_locals.len()).map(|_| (rng.gen_range(0..=10) as f64) / 10.0).collect();
    Some(ExtractionCase { sg, edge, gene })
}

/// The same instance as plain lists for the reference extraction.
pub fn reference_instance(c: &ExtractionCase, tau_edge: f64, cfg: &ExtractionConfig) -> ExtractionInstance {
    ExtractionInstance {
        phenotypes: c.sg.phenotype_locals.iter().map(|&l| c.sg.global(l)).collect(),
        arcs: c
            .sg
            .local_arcs
            .iter()
            .zip(&c.edge)
            .map(|(a, &s)| (c.sg.global(a.src), c.sg.global(a.dst), s))
            .collect(),
        gene_scores: c.sg.gene_locals.iter().zip(&c.gene).map(|(&l, &s)| (c.sg.global(l), s)).collect(),
        tau_edge,
        tau_gene: cfg.gene_score_threshold,
        k1: cfg.k_edges,
        k2: cfg.k_genes,
        m: cfg.hops,
    }
}

pub type Cohort = Vec<(Vec<(NodeId, f64)>, Option<NodeId>)>;

/// Random scored cohorts with ties, unlabeled patients and absent truths.
pub fn random_cohort(seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(0..40);
    (0..n)
        .map(|_| {
            let genes = rng.gen_range(0..30);
            let mut ids: Vec<usize> = (0..100).collect();
            ids.shuffle(&mut rng);
            let scores: Vec<(NodeId, f64)> = ids[..genes]
                .iter()
                .map(|&g| (NodeId(g), rng.gen_range(0..8) as f64 / 4.0))
                .collect();
            let truth = match rng.gen_range(0..10) {
                0 => None,
                1 => Some(NodeId(200)),
                _ if genes > 0 => Some(scores[rng.gen_range(0..genes)].0),
                _ => None,
            };
            (scores, truth)
        })
        .collect()
}
