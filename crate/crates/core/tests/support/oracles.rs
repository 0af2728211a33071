//! Deliberately naive reference implementations used as test oracles.
//! Nothing here calls the library's algorithms; only its data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use phenograph_core::graph::{EdgeRecord, NodeRecord};
use phenograph_core::{ArcId, KnowledgeGraph, NodeId, NodeType};
use rand::Rng;

/// Random undirected graph; node types drawn with the given weights
/// (phenotype, gene, disease, other).
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p_edge: f64, weights: [f64; 4]) -> KnowledgeGraph {
    let total: f64 = weights.iter().sum();
    let types = [NodeType::Phenotype, NodeType::Gene, NodeType::Disease, NodeType::Other];
    let nodes: Vec<NodeRecord> = (0..n)
        .map(|i| {
            let mut u = rng.gen::<f64>() * total;
            let mut t = NodeType::Other;
            for (w, ty) in weights.iter().zip(types) {
                if u < *w {
                    t = ty;
                    break;
                }
                u -= w;
            }
            NodeRecord {
                key: format!("n{i}"),
                node_type: t,
                name: format!("node {i}"),
            }
        })
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p_edge) {
                edges.push((
                    edges.len() + 1,
                    EdgeRecord {
                        src: format!("n{u}"),
                        relation: "r".into(),
                        dst: format!("n{v}"),
                    },
                ));
            }
        }
    }
    KnowledgeGraph::from_records(nodes, &edges, "random").expect("valid random graph")
}

/// Hop distance from the nearest source, by repeated relaxation over the
/// full arc list, truncated at `hops`.
pub fn bfs_oracle(g: &KnowledgeGraph, sources: &[NodeId], hops: usize) -> BTreeMap<NodeId, usize> {
    let mut dist: BTreeMap<NodeId, usize> = sources.iter().map(|&s| (s, 0)).collect();
    for round in 1..=hops {
        let mut found = Vec::new();
        for a in 0..g.arc_count() {
            let (u, v) = g.arc_endpoints(ArcId(a));
            if dist.get(&u) == Some(&(round - 1)) && !dist.contains_key(&v) {
                found.push(v);
            }
        }
        for v in found {
            dist.entry(v).or_insert(round);
        }
    }
    dist
}

/// Inputs of the reference extraction, as plain lists.
#[derive(Debug, Clone)]
pub struct ExtractionInstance {
    pub phenotypes: Vec<NodeId>,
    /// (from, to, score) for every directed arc.
    pub arcs: Vec<(NodeId, NodeId, f64)>,
    /// Candidate genes and their scores.
    pub gene_scores: BTreeMap<NodeId, f64>,
    pub tau_edge: f64,
    pub tau_gene: f64,
    pub k1: usize,
    pub k2: usize,
    pub m: usize,
}

fn keep_top(mut edges: Vec<(NodeId, f64)>, k: usize) -> Vec<NodeId> {
    // Highest score first; equal scores by smaller target ID.
    edges.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    edges.into_iter().take(k).map(|(u, _)| u).collect()
}

/// Patient-graph extraction written directly from the pseudocode:
/// returns (S, final frontier).
pub fn reference_extract(x: &ExtractionInstance) -> (BTreeSet<NodeId>, BTreeSet<NodeId>) {
    let mut s: BTreeSet<NodeId> = x.phenotypes.iter().copied().collect();
    let mut frontier: BTreeSet<NodeId> = s.clone();
    for _h in 1..x.m {
        let mut next = BTreeSet::new();
        for &v in &frontier {
            let mut selected = Vec::new();
            for &(a, b, score) in &x.arcs {
                if a == v && score >= x.tau_edge {
                    selected.push((b, score));
                }
            }
            for u in keep_top(selected, x.k1) {
                next.insert(u);
            }
        }
        s.extend(next.iter().copied());
        frontier = next;
    }
    let mut last = BTreeSet::new();
    for &w in &frontier {
        let mut selected = Vec::new();
        for &(a, b, score) in &x.arcs {
            if a != w {
                continue;
            }
            if let Some(&gs) = x.gene_scores.get(&b) {
                if score >= x.tau_edge && gs >= x.tau_gene {
                    selected.push((b, score));
                }
            }
        }
        for g in keep_top(selected, x.k2) {
            last.insert(g);
        }
    }
    s.extend(last.iter().copied());
    (s, last)
}

/// Percentile by sorting and interpolating between neighbouring order statistics.
pub fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p / 100.0 * (v.len() as f64 - 1.0);
    let i = pos.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[i] + (pos - i as f64) * (v[i + 1] - v[i])
}

/// 1-based rank of `truth`: one plus the genes scored higher, or equal with a smaller ID.
pub fn rank_oracle(scores: &[(NodeId, f64)], truth: NodeId) -> Option<usize> {
    let &(_, st) = scores.iter().find(|(g, _)| *g == truth)?;
    let mut rank = 1;
    for &(g, s) in scores {
        if g != truth && (s > st || (s == st && g < truth)) {
            rank += 1;
        }
    }
    Some(rank)
}

pub fn hits_oracle(cohort: &[(Vec<(NodeId, f64)>, Option<NodeId>)], k: usize) -> f64 {
    let mut hits = 0usize;
    for (scores, truth) in cohort {
        if let Some(t) = truth {
            if let Some(r) = rank_oracle(scores, *t) {
                if r <= k {
                    hits += 1;
                }
            }
        }
    }
    if cohort.is_empty() {
        0.0
    } else {
        100.0 * hits as f64 / cohort.len() as f64
    }
}

pub fn mrr_oracle(cohort: &[(Vec<(NodeId, f64)>, Option<NodeId>)]) -> f64 {
    let mut total = 0.0;
    for (scores, truth) in cohort {
        let rr = match truth.and_then(|t| rank_oracle(scores, t)) {
            Some(r) => 1.0 / r as f64,
            None => 0.0,
        };
        total += rr;
    }
    if cohort.is_empty() {
        0.0
    } else {
        100.0 * total / cohort.len() as f64
    }
}

pub fn inclusion_oracle(graphs: &[BTreeSet<NodeId>], truths: &[Option<NodeId>]) -> f64 {
    let mut hits = 0usize;
    for i in 0..graphs.len() {
        if let Some(t) = truths[i] {
            if graphs[i].contains(&t) {
                hits += 1;
            }
        }
    }
    if graphs.is_empty() {
        0.0
    } else {
        100.0 * hits as f64 / graphs.len() as f64
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Margin + regularizer loss summed term by term over the full pair set.
pub fn subgraph_loss_oracle(
    e: &[f64],
    pos: &[usize],
    neg: &[usize],
    gamma: f64,
    l1: f64,
    l2: f64,
    lsp: f64,
    theta: f64,
) -> f64 {
    let mut margin = 0.0;
    let mut pairs = 0;
    for &p in pos {
        for &n in neg {
            margin += relu(gamma - (e[p] - e[n]));
            pairs += 1;
        }
    }
    let margin = if pairs > 0 { margin / pairs as f64 } else { 0.0 };
    if e.is_empty() {
        return margin;
    }
    let a: f64 = e.iter().map(|x| x.abs()).sum();
    let b: f64 = e.iter().map(|x| x * x).sum();
    let sp: f64 = e.iter().map(|&x| relu(sigmoid(x) - theta)).sum::<f64>() / e.len() as f64;
    margin + l1 * a + l2 * b + lsp * sp
}

/// `(1/α)log(1+exp(−α(s_true−t))) + (1/β)log(1+Σ_HN exp(β(s−t)))`, in plain
/// floating point (only valid for moderate arguments).
pub fn gene_loss_oracle(s: &[f64], truth: Option<usize>, alpha: f64, beta: f64, t: f64) -> f64 {
    let mut out = 0.0;
    let hard: Vec<usize> = match truth {
        Some(i) => {
            out += (1.0 + (-alpha * (s[i] - t)).exp()).ln() / alpha;
            (0..s.len()).filter(|&j| j != i && s[j] > t).collect()
        }
        None => (0..s.len()).collect(),
    };
    if !hard.is_empty() {
        let sum: f64 = hard.iter().map(|&j| (beta * (s[j] - t)).exp()).sum();
        out += (1.0 + sum).ln() / beta;
    }
    out
}
