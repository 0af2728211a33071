//! Gene rankings and Hit@k / MRR / inclusion-rate metrics (all in percent).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::extract::PatientGraph;
use crate::graph::NodeId;
use crate::model::ScoreBundle;
use crate::sampler::SampledSubgraph;

/// Genes in descending score order; equal scores by ascending node ID.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    order: Vec<(NodeId, f64)>,
    rank_of: HashMap<NodeId, usize>,
}

fn by_score_then_id(a: &(NodeId, f64), b: &(NodeId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl Ranking {
    pub fn new(scores: impl IntoIterator<Item = (NodeId, f64)>) -> Self {
        let mut order: Vec<(NodeId, f64)> = scores.into_iter().collect();
        order.sort_by(by_score_then_id);
        order.dedup_by_key(|(g, _)| *g);
        let rank_of = order
            .iter()
            .enumerate()
            .map(|(i, (g, _))| (*g, i + 1))
            .collect();
        Self { order, rank_of }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn genes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.order.iter().map(|(g, _)| *g)
    }

    pub fn entries(&self) -> &[(NodeId, f64)] {
        &self.order
    }

    /// 1-based rank.
    pub fn rank_of(&self, gene: NodeId) -> Option<usize> {
        self.rank_of.get(&gene).copied()
    }

    /// Rank with the gene placed last among the genes sharing its score.
    pub fn worst_case_rank_of(&self, gene: NodeId) -> Option<usize> {
        let r = self.rank_of(gene)?;
        let score = self.order[r - 1].1;
        let mut last = r;
        while last < self.order.len() && self.order[last].1 == score {
            last += 1;
        }
        Some(last)
    }
}

pub fn rank_genes(scores: &BTreeMap<NodeId, f64>) -> Ranking {
    Ranking::new(scores.iter().map(|(g, s)| (*g, *s)))
}

/// Ranks the candidate genes of `sg` by their model scores.
pub fn rank_subgraph(sg: &SampledSubgraph, bundle: &ScoreBundle) -> Ranking {
    Ranking::new(
        sg.gene_locals
            .iter()
            .zip(&bundle.gene_scores)
            .map(|(&l, &s)| (sg.global(l), s)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TiePolicy {
    /// Ties resolved by ascending node ID.
    #[default]
    ById,
    /// The truth ranks last within its tie group.
    WorstCase,
}

fn truth_rank(r: &Ranking, truth: Option<NodeId>, ties: TiePolicy) -> Option<usize> {
    let t = truth?;
    match ties {
        TiePolicy::ById => r.rank_of(t),
        TiePolicy::WorstCase => r.worst_case_rank_of(t),
    }
}

fn percent(hits: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits / n as f64
    }
}

/// Absent truths (or unlabeled patients) count as misses.
pub fn hits_at_k(rankings: &[Ranking], truths: &[Option<NodeId>], k: usize) -> f64 {
    hits_at_k_with(rankings, truths, k, TiePolicy::ById)
}

pub fn hits_at_k_with(
    rankings: &[Ranking],
    truths: &[Option<NodeId>],
    k: usize,
    ties: TiePolicy,
) -> f64 {
    assert_eq!(rankings.len(), truths.len(), "rankings and truths must align");
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(r, t)| truth_rank(r, **t, ties).is_some_and(|rank| rank <= k))
        .count();
    percent(hits as f64, rankings.len())
}

pub fn mrr(rankings: &[Ranking], truths: &[Option<NodeId>]) -> f64 {
    mrr_with(rankings, truths, TiePolicy::ById)
}

pub fn mrr_with(rankings: &[Ranking], truths: &[Option<NodeId>], ties: TiePolicy) -> f64 {
    assert_eq!(rankings.len(), truths.len(), "rankings and truths must align");
    let total: f64 = rankings
        .iter()
        .zip(truths)
        .map(|(r, t)| truth_rank(r, *t, ties).map_or(0.0, |rank| 1.0 / rank as f64))
        .sum();
    percent(total, rankings.len())
}

/// Share of patients whose truth is a node of their extracted graph.
pub fn inclusion_rate(graphs: &[PatientGraph], truths: &[Option<NodeId>]) -> f64 {
    assert_eq!(graphs.len(), truths.len(), "graphs and truths must align");
    let hits = graphs
        .iter()
        .zip(truths)
        .filter(|(g, t)| t.is_some_and(|t| g.nodes.contains(&t)))
        .count();
    percent(hits as f64, graphs.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hits_at: BTreeMap<usize, f64>,
    /// Absent when only patient graphs were evaluated.
    pub mrr: Option<f64>,
    pub inclusion_rate: Option<f64>,
    pub n_patients: usize,
}

impl MetricReport {
    pub fn compute(
        rankings: &[Ranking],
        truths: &[Option<NodeId>],
        ks: &[usize],
        ties: TiePolicy,
    ) -> Self {
        Self {
            hits_at: ks
                .iter()
                .map(|&k| (k, hits_at_k_with(rankings, truths, k, ties)))
                .collect(),
            mrr: Some(mrr_with(rankings, truths, ties)),
            inclusion_rate: None,
            n_patients: rankings.len(),
        }
    }

    /// Inclusion rate alone, for extracted graphs without rankings.
    pub fn inclusion_only(graphs: &[PatientGraph], truths: &[Option<NodeId>]) -> Self {
        Self {
            hits_at: BTreeMap::new(),
            mrr: None,
            inclusion_rate: Some(inclusion_rate(graphs, truths)),
            n_patients: graphs.len(),
        }
    }

    pub fn with_inclusion(mut self, graphs: &[PatientGraph], truths: &[Option<NodeId>]) -> Self {
        self.inclusion_rate = Some(inclusion_rate(graphs, truths));
        self
    }

    /// Plain-text table, one decimal per value.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{:>8}", "metric", "value");
        for (k, v) in &self.hits_at {
            let _ = writeln!(out, "{:<16}{:>8.1}", format!("Hit@{k}"), v);
        }
        if let Some(m) = self.mrr {
            let _ = writeln!(out, "{:<16}{:>8.1}", "MRR", m);
        }
        if let Some(inc) = self.inclusion_rate {
            let _ = writeln!(out, "{:<16}{:>8.1}", "Inclusion", inc);
        }
        let _ = writeln!(out, "{:<16}{:>8}", "patients", self.n_patients);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(pairs: &[(usize, f64)]) -> Ranking {
        Ranking::new(pairs.iter().map(|&(g, s)| (NodeId(g), s)))
    }

    #[test]
    fn sorts_descending_with_id_ties() {
        let r = ranking(&[(1, 0.9), (2, 0.1)]);
        assert_eq!(r.genes().collect::<Vec<_>>(), vec![NodeId(1), NodeId(2)]);
        let r = ranking(&[(7, 0.5), (3, 0.5), (5, 0.5)]);
        assert_eq!(r.genes().map(|g| g.0).collect::<Vec<_>>(), vec![3, 5, 7]);
        assert_eq!(r.worst_case_rank_of(NodeId(3)), Some(3));
        assert_eq!(r.rank_of(NodeId(3)), Some(1));
    }

    #[test]
    fn perfect_and_absent_truths() {
        let rs = vec![ranking(&[(1, 1.0), (2, 0.0)]), ranking(&[(4, 2.0)])];
        let hit = vec![Some(NodeId(1)), Some(NodeId(4))];
        for k in [1, 5, 10] {
            assert_eq!(hits_at_k(&rs, &hit, k), 100.0);
        }
        assert_eq!(mrr(&rs, &hit), 100.0);
        let miss = vec![Some(NodeId(9)), None];
        assert_eq!(hits_at_k(&rs, &miss, 10), 0.0);
        assert_eq!(mrr(&rs, &miss), 0.0);
    }

    #[test]
    fn reciprocal_rank_four() {
        let r = ranking(&[(1, 4.0), (2, 3.0), (3, 2.0), (4, 1.0)]);
        assert_eq!(mrr(&[r], &[Some(NodeId(4))]), 25.0);
    }

    #[test]
    fn table_uses_one_decimal() {
        let r = ranking(&[(1, 1.0), (2, 0.5), (3, 0.1)]);
        let rep = MetricReport::compute(&[r], &[Some(NodeId(2))], &[1, 5], TiePolicy::ById);
        let t = rep.to_table();
        let rows: Vec<Vec<&str>> = t.lines().map(|l| l.split_whitespace().collect()).collect();
        assert!(rows.contains(&vec!["Hit@1", "0.0"]), "{t}");
        assert!(rows.contains(&vec!["MRR", "50.0"]), "{t}");
    }
}
