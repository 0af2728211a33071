//! Optimization loop: per-patient forward/backward, clipped Adam, step
//! learning-rate schedule, validation tracking and checkpoints.

pub mod adam;
pub mod checkpoint;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{BestSnapshot, Checkpoint};

use crate::autodiff::{Gradients, Tape, Var};
use crate::cohort::PatientRecord;
use crate::error::{Error, Result, TrainError};
use crate::eval::{mrr, rank_subgraph};
use crate::graph::{KnowledgeGraph, NodeId};
use crate::model::{forward, score_subgraph, ModelConfig, ModelParams, ParamVars};
use crate::objective::{combine, gene_loss, subgraph_loss, LossConfig, LossReport};
use crate::rng::{stream_rng, Stream};
use crate::sampler::{label_supervision_edges, sample_phenotype_subgraph, SampledSubgraph, SupervisionLabels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    /// Multiplier applied every `lr_step` epochs.
    pub lr_factor: f64,
    pub epochs: usize,
    /// Patients whose gradients are averaged per optimizer step.
    pub accumulate: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    /// Negatives drawn per positive arc.
    pub negative_ratio: usize,
    pub hops: usize,
    /// Share of the cohort held out for best-epoch selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            lr_step: 10,
            lr_factor: 0.5,
            epochs: 30,
            accumulate: 1,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 5.0,
            negative_ratio: 5,
            hops: 2,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let problem = if self.epochs == 0 {
            Some("epochs must be at least 1")
        } else if !(self.learning_rate > 0.0) {
            Some("learning_rate must be positive")
        } else if self.lr_step == 0 {
            Some("lr_step must be at least 1")
        } else if !(self.lr_factor > 0.0) {
            Some("lr_factor must be positive")
        } else if self.accumulate == 0 {
            Some("accumulate must be at least 1")
        } else if self.hops == 0 {
            Some("hops must be at least 1")
        } else if !(0.0..1.0).contains(&self.val_fraction) {
            Some("val_fraction must lie in [0, 1)")
        } else if !(self.grad_clip_norm > 0.0) {
            Some("grad_clip_norm must be positive")
        } else {
            None
        };
        match problem {
            Some(p) => Err(TrainError::Config(p.into()).into()),
            None => Ok(()),
        }
    }

    pub fn adam(&self, epoch: usize) -> AdamConfig {
        AdamConfig {
            learning_rate: lr_at(self, epoch),
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            clip_norm: Some(self.grad_clip_norm),
        }
    }
}

/// `lr₀ · η^⌊epoch / lr_step⌋`
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.learning_rate * cfg.lr_factor.powi((epoch / cfg.lr_step) as i32)
}

/// Mean training losses of one epoch. `mean.hard_negative_count` is the
/// epoch total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean: LossReport,
    pub val_mrr: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<EpochReport>,
}

/// Loss handles for one patient.
#[derive(Debug, Clone, Copy)]
pub struct PatientLoss {
    pub total: Var,
    pub sub: Var,
    pub gene: Option<Var>,
    pub hard_negatives: usize,
}

/// Index of the causal gene within `sg.gene_locals`, if it was sampled.
pub fn truth_position(sg: &SampledSubgraph, causal: Option<NodeId>) -> Option<usize> {
    let local = sg.local_index(causal?)?;
    sg.gene_locals.binary_search(&local).ok()
}

/// Builds the total loss of one patient on `tape`.
pub fn patient_objective(
    tape: &mut Tape,
    pv: &ParamVars,
    mcfg: &ModelConfig,
    lcfg: &LossConfig,
    sg: &SampledSubgraph,
    labels: &SupervisionLabels,
    truth: Option<usize>,
) -> Result<PatientLoss> {
    let fv = forward(tape, pv, mcfg, sg)?;
    let sub = subgraph_loss(tape, fv.edge_scores, labels, lcfg)?.value;
    let (gene, hard_negatives) = if sg.gene_locals.is_empty() {
        (None, 0)
    } else {
        let gl = gene_loss(tape, fv.gene_scores, truth, lcfg)?;
        (Some(gl.value), gl.hard_negatives)
    };
    let total = combine(tape, sub, gene, lcfg)?;
    Ok(PatientLoss {
        total,
        sub,
        gene,
        hard_negatives,
    })
}

/// Samples every patient's subgraph once.
pub fn prepare_subgraphs(
    g: &KnowledgeGraph,
    cohort: &[PatientRecord],
    hops: usize,
) -> Result<Vec<SampledSubgraph>> {
    cohort
        .iter()
        .map(|p| {
            sample_phenotype_subgraph(g, &p.phenotypes, hops).map_err(|e| {
                Error::Train(TrainError::Patient {
                    patient: p.patient_id.clone(),
                    reason: e.to_string(),
                })
            })
        })
        .collect()
}

/// Deterministic train/validation split of `0..n`; both halves sorted.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64 * fraction).floor() as usize).min(n.saturating_sub(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::ValidationSplit, &[]));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

pub fn train(
    g: &KnowledgeGraph,
    cohort: &[PatientRecord],
    mcfg: &ModelConfig,
    lcfg: &LossConfig,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    Trainer::new(g, cohort, mcfg, lcfg, tcfg)?.run(None, &mut |_| {})
}

/// Training state shared across epochs: cached subgraphs and the split.
pub struct Trainer<'a> {
    cohort: &'a [PatientRecord],
    node_count: usize,
    mcfg: ModelConfig,
    lcfg: LossConfig,
    tcfg: TrainConfig,
    subgraphs: Vec<SampledSubgraph>,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        g: &KnowledgeGraph,
        cohort: &'a [PatientRecord],
        mcfg: &ModelConfig,
        lcfg: &LossConfig,
        tcfg: &TrainConfig,
    ) -> Result<Self> {
        mcfg.validate()?;
        lcfg.validate()?;
        tcfg.validate()?;
        if cohort.is_empty() {
            return Err(TrainError::EmptyCohort.into());
        }
        let subgraphs = prepare_subgraphs(g, cohort, tcfg.hops)?;
        let (train_idx, val_idx) = split_validation(cohort.len(), tcfg.val_fraction, tcfg.seed);
        Ok(Self {
            cohort,
            node_count: g.node_count(),
            mcfg: mcfg.clone(),
            lcfg: lcfg.clone(),
            tcfg: tcfg.clone(),
            subgraphs,
            train_idx,
            val_idx,
        })
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn validation_indices(&self) -> &[usize] {
        &self.val_idx
    }

    pub fn subgraphs(&self) -> &[SampledSubgraph] {
        &self.subgraphs
    }

    fn initial_checkpoint(&self) -> Result<Checkpoint> {
        let mut rng = stream_rng(self.tcfg.seed, Stream::Init, &[]);
        let params = ModelParams::init(&self.mcfg, self.node_count, &mut rng)?;
        Ok(Checkpoint {
            adam: AdamState::new(params.tensors()),
            params,
            epoch: 0,
            seed: self.tcfg.seed,
            trace: Vec::new(),
            best: None,
        })
    }

    fn check_resume(&self, c: &Checkpoint) -> Result<()> {
        c.ensure_config(&self.mcfg)?;
        if c.seed != self.tcfg.seed {
            return Err(TrainError::ResumeMismatch(format!(
                "seed {} differs from checkpoint seed {}",
                self.tcfg.seed, c.seed
            ))
            .into());
        }
        if c.params.node_count() != self.node_count {
            return Err(TrainError::ResumeMismatch(format!(
                "graph has {} nodes, checkpoint {}",
                self.node_count,
                c.params.node_count()
            ))
            .into());
        }
        Ok(())
    }

    /// Trains from `resume` (or a fresh seeded init) up to `tcfg.epochs`,
    /// calling `on_epoch` after each epoch.
    pub fn run(
        &self,
        resume: Option<Checkpoint>,
        on_epoch: &mut dyn FnMut(&EpochReport),
    ) -> Result<TrainOutcome> {
        let mut ckpt = match resume {
            Some(c) => {
                self.check_resume(&c)?;
                c
            }
            None => self.initial_checkpoint()?,
        };
        while ckpt.epoch < self.tcfg.epochs {
            let report = self.epoch(&mut ckpt)?;
            log::info!(
                "epoch {} lr {:.3e} loss {:.5} (sub {:.5}, gene {:.5}) val_mrr {:?}",
                report.epoch,
                report.learning_rate,
                report.mean.loss_total,
                report.mean.loss_sub,
                report.mean.loss_gene,
                report.val_mrr
            );
            if let Some(m) = report.val_mrr {
                if ckpt.best.as_ref().map_or(true, |b| m > b.val_mrr) {
                    ckpt.best = Some(BestSnapshot {
                        epoch: report.epoch,
                        val_mrr: m,
                        params: ckpt.params.clone(),
                    });
                }
            }
            on_epoch(&report);
            ckpt.trace.push(report);
            ckpt.epoch += 1;
        }
        Ok(TrainOutcome {
            trace: ckpt.trace.clone(),
            checkpoint: ckpt,
        })
    }

    fn epoch(&self, ckpt: &mut Checkpoint) -> Result<EpochReport> {
        let epoch = ckpt.epoch;
        let seed = self.tcfg.seed;
        let adam = self.tcfg.adam(epoch);
        let mut order = self.train_idx.clone();
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));

        let (mut sub_sum, mut gene_sum, mut total_sum, mut hard) = (0.0, 0.0, 0.0, 0usize);
        let mut steps = 0;
        for group in order.chunks(self.tcfg.accumulate) {
            let mut grads = Gradients::default();
            for &i in group {
                let record = &self.cohort[i];
                let sg = &self.subgraphs[i];
                let labels = match record.causal_gene {
                    Some(c) => {
                        let mut rng = stream_rng(seed, Stream::Negatives, &[epoch as u64, i as u64]);
                        label_supervision_edges(sg, c, self.tcfg.negative_ratio, &mut rng)
                    }
                    None => SupervisionLabels::default(),
                };
                let truth = truth_position(sg, record.causal_gene);
                let mut tape = Tape::new();
                let pv = ParamVars::register(&mut tape, &ckpt.params)?;
                let loss = patient_objective(&mut tape, &pv, &self.mcfg, &self.lcfg, sg, &labels, truth)?;
                let total = tape.value(loss.total).item()?;
                if !total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        patient: record.patient_id.clone(),
                        epoch,
                    }
                    .into());
                }
                sub_sum += tape.value(loss.sub).item()?;
                gene_sum += match loss.gene {
                    Some(v) => tape.value(v).item()?,
                    None => 0.0,
                };
                total_sum += total;
                hard += loss.hard_negatives;
                grads.accumulate(&tape.backward(loss.total)?);
            }
            grads.scale(1.0 / group.len() as f64);
            adam_step(ckpt.params.tensors_mut(), &mut grads, &mut ckpt.adam, &adam);
            steps += 1;
        }
        let n = order.len().max(1) as f64;
        Ok(EpochReport {
            epoch,
            learning_rate: adam.learning_rate,
            mean: LossReport {
                loss_sub: sub_sum / n,
                loss_gene: gene_sum / n,
                loss_total: total_sum / n,
                hard_negative_count: hard,
            },
            val_mrr: self.validation_mrr(&ckpt.params)?,
            steps,
        })
    }

    fn validation_mrr(&self, params: &ModelParams) -> Result<Option<f64>> {
        if self.val_idx.is_empty() {
            return Ok(None);
        }
        let mut rankings = Vec::with_capacity(self.val_idx.len());
        let mut truths = Vec::with_capacity(self.val_idx.len());
        for &i in &self.val_idx {
            let sg = &self.subgraphs[i];
            rankings.push(rank_subgraph(sg, &score_subgraph(params, sg)?));
            truths.push(self.cohort[i].causal_gene);
        }
        Ok(Some(mrr(&rankings, &truths)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_step() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 1e-4);
        assert_eq!(lr_at(&cfg, 9), 1e-4);
        assert_eq!(lr_at(&cfg, 10), 5e-5);
        assert_eq!(lr_at(&cfg, 25), 2.5e-5);
    }

    #[test]
    fn rejects_zero_epochs() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn validation_split_is_disjoint_and_seeded() {
        let (t, v) = split_validation(50, 0.1, 3);
        assert_eq!(v.len(), 5);
        assert_eq!(t.len(), 45);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_validation(50, 0.1, 3), (t, v));
        assert_eq!(split_validation(1, 0.5, 0).1.len(), 0);
    }
}
