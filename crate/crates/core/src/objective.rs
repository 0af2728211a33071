//! Subgraph margin loss, hard-negative gene loss and their combination.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::error::{Error, Result};
use crate::sampler::SupervisionLabels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// γ
    pub margin: f64,
    /// λ₁ on ‖e‖₁
    pub l1_weight: f64,
    /// λ₂ on ‖e‖₂²
    pub l2_weight: f64,
    /// λ_sp
    pub sparsity_weight: f64,
    /// θ_sp
    pub sparsity_threshold: f64,
    /// α
    pub gene_alpha: f64,
    /// β
    pub gene_beta: f64,
    /// t
    pub gene_threshold: f64,
    pub gene_weight: f64,
    /// Caps the positive×negative pair count with a strided subset.
    pub max_margin_pairs: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            l1_weight: 0.15,
            l2_weight: 0.15,
            sparsity_weight: 0.25,
            sparsity_threshold: 0.5,
            gene_alpha: 2.0,
            gene_beta: 40.0,
            gene_threshold: 0.5,
            gene_weight: 1.0,
            max_margin_pairs: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.margin > 0.0
            && self.gene_alpha > 0.0
            && self.gene_beta > 0.0
            && self.sparsity_threshold > 0.0
            && self.sparsity_threshold < 1.0
            && self.l1_weight >= 0.0
            && self.l2_weight >= 0.0
            && self.sparsity_weight >= 0.0
            && self.gene_weight >= 0.0
            && self.max_margin_pairs != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_sub: f64,
    pub loss_gene: f64,
    pub loss_total: f64,
    pub hard_negative_count: usize,
}

/// Handle to the subgraph loss plus bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct SubgraphLoss {
    pub value: Var,
    /// Number of (positive, negative) pairs in the margin term; 0 flags an
    /// empty side, leaving only the regularizers.
    pub pairs: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneLoss {
    pub value: Var,
    pub hard_negatives: usize,
}

fn margin_pairs(labels: &SupervisionLabels, cap: Option<usize>) -> (Vec<usize>, Vec<usize>) {
    let (pos, neg) = (&labels.positive_arcs, &labels.negative_arcs);
    let total = pos.len() * neg.len();
    let stride = match cap {
        Some(c) if total > c => total.div_ceil(c),
        _ => 1,
    };
    let mut left = Vec::with_capacity(total / stride + 1);
    let mut right = Vec::with_capacity(total / stride + 1);
    for flat in (0..total).step_by(stride) {
        left.push(pos[flat / neg.len()]);
        right.push(neg[flat % neg.len()]);
    }
    (left, right)
}

/// `mean_{E₊×E₋} relu(γ − (e₊ − e₋)) + λ₁‖e‖₁ + λ₂‖e‖₂² + λ_sp·mean relu(σ(e) − θ_sp)`.
pub fn subgraph_loss(
    tape: &mut Tape,
    edge_scores: Var,
    labels: &SupervisionLabels,
    cfg: &LossConfig,
) -> Result<SubgraphLoss> {
    let arcs = tape.value(edge_scores).len();
    let (left, right) = margin_pairs(labels, cfg.max_margin_pairs);
    let mut terms = Vec::with_capacity(4);
    if !left.is_empty() {
        let pos = tape.gather_rows(edge_scores, &left)?;
        let neg = tape.gather_rows(edge_scores, &right)?;
        let gap = tape.sub(pos, neg)?;
        let flipped = tape.scale(gap, -1.0)?;
        let shifted = tape.add_scalar(flipped, cfg.margin)?;
        let hinge = tape.relu(shifted)?;
        terms.push(tape.mean(hinge)?);
    }
    if arcs > 0 {
        let abs = tape.abs(edge_scores)?;
        let l1 = tape.sum(abs)?;
        terms.push(tape.scale(l1, cfg.l1_weight)?);
        let l2 = tape.dot(edge_scores, edge_scores)?;
        terms.push(tape.scale(l2, cfg.l2_weight)?);
        let squashed = tape.sigmoid(edge_scores)?;
        let over = tape.add_scalar(squashed, -cfg.sparsity_threshold)?;
        let excess = tape.relu(over)?;
        let sp = tape.mean(excess)?;
        terms.push(tape.scale(sp, cfg.sparsity_weight)?);
    }
    Ok(SubgraphLoss {
        value: sum_terms(tape, &terms)?,
        pairs: left.len(),
    })
}

/// Softplus pull on the causal gene plus a soft-max push on hard negatives.
/// Without a causal gene, every candidate is treated as a hard negative.
pub fn gene_loss(
    tape: &mut Tape,
    gene_scores: Var,
    true_gene: Option<usize>,
    cfg: &LossConfig,
) -> Result<GeneLoss> {
    let scores = tape.value(gene_scores).data().to_vec();
    if scores.is_empty() {
        return Err(TensorError::Empty("gene_loss").into());
    }
    let t = cfg.gene_threshold;
    let mut terms = Vec::with_capacity(2);
    let hard: Vec<usize> = match true_gene {
        Some(truth) => {
            if truth >= scores.len() {
                return Err(TensorError::OutOfRange {
                    op: "gene_loss",
                    index: truth,
                    bound: scores.len(),
                }
                .into());
            }
            let s_true = tape.gather_rows(gene_scores, &[truth])?;
            let centered = tape.add_scalar(s_true, -t)?;
            let z = tape.scale(centered, -cfg.gene_alpha)?;
            let soft = tape.log1p_sum_exp(z)?;
            terms.push(tape.scale(soft, 1.0 / cfg.gene_alpha)?);
            (0..scores.len())
                .filter(|&n| n != truth && scores[n] > t)
                .collect()
        }
        None => (0..scores.len()).collect(),
    };
    if !hard.is_empty() {
        let s = tape.gather_rows(gene_scores, &hard)?;
        let centered = tape.add_scalar(s, -t)?;
        let z = tape.scale(centered, cfg.gene_beta)?;
        let soft = tape.log1p_sum_exp(z)?;
        terms.push(tape.scale(soft, 1.0 / cfg.gene_beta)?);
    }
    Ok(GeneLoss {
        value: sum_terms(tape, &terms)?,
        hard_negatives: hard.len(),
    })
}

/// `loss_sub + w_gene · loss_gene` on the tape.
pub fn combine(tape: &mut Tape, sub: Var, gene: Option<Var>, cfg: &LossConfig) -> Result<Var> {
    match gene {
        Some(g) => {
            let weighted = tape.scale(g, cfg.gene_weight)?;
            Ok(tape.add(sub, weighted)?)
        }
        None => Ok(sub),
    }
}

/// Builds the report for already-evaluated loss terms.
pub fn total_loss(
    loss_sub: f64,
    loss_gene: f64,
    hard_negative_count: usize,
    cfg: &LossConfig,
) -> Result<LossReport> {
    if !loss_sub.is_finite() || !loss_gene.is_finite() {
        return Err(TensorError::NonFinite(format!(
            "loss terms sub={loss_sub} gene={loss_gene}"
        ))
        .into());
    }
    Ok(LossReport {
        loss_sub,
        loss_gene,
        loss_total: loss_sub + cfg.gene_weight * loss_gene,
        hard_negative_count,
    })
}

fn sum_terms(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(tape.constant(Tensor::scalar(0.0))?);
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}
