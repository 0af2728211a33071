mod support;

use phenograph_core::autodiff::{grad_check, Tape, Tensor, TensorError};
use phenograph_core::model::{score_subgraph, ParamVars};
use phenograph_core::sampler::label_supervision_edges;
use phenograph_core::trainer::{patient_objective, truth_position};
use phenograph_core::{LossConfig, ModelConfig, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::dense_model::dense_forward;
use support::fixtures::{tiny_model, toy_subgraph};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn assert_matches_dense(cfg: &ModelConfig, seed: u64, max_nodes: usize) {
    let toy = toy_subgraph(seed, max_nodes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(cfg, toy.graph.node_count(), &mut rng).unwrap();
    let got = score_subgraph(&params, &toy.subgraph).unwrap();
    let want = dense_forward(&params, &toy.subgraph);
    let flat: Vec<f64> = want.embeddings.concat();
    assert!(max_abs_diff(got.node_embeddings_final.data(), &flat) < 1e-10);
    assert!(max_abs_diff(got.attention_records.data(), &want.attention.concat()) < 1e-10);
    assert!(max_abs_diff(&got.patient_vec, &want.patient) < 1e-10);
    assert!(max_abs_diff(&got.edge_scores, &want.edge_scores) < 1e-10);
    assert!(max_abs_diff(&got.gene_scores, &want.gene_scores) < 1e-10);
}

#[test]
fn forward_matches_dense_oracle_tiny() {
    for seed in 0..5 {
        assert_matches_dense(&tiny_model(), seed, 30);
    }
}

#[test]
fn forward_matches_dense_oracle_default_dims() {
    assert_matches_dense(&ModelConfig::default(), 11, 40);
}

#[test]
fn attention_rows_sum_to_one_per_target() {
    let toy = toy_subgraph(3, 30);
    let cfg = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ModelParams::init(&cfg, toy.graph.node_count(), &mut rng).unwrap();
    let dense = dense_forward(&params, &toy.subgraph);
    // Self-loops carry the remaining mass, so real-arc mass per target is ≤ 1.
    let n = toy.subgraph.node_count();
    let cols = cfg.layers * cfg.heads;
    let mut mass = vec![vec![0.0; cols]; n];
    for (k, a) in toy.subgraph.local_arcs.iter().enumerate() {
        for c in 0..cols {
            mass[a.dst][c] += dense.attention[k][c];
        }
    }
    assert!(mass.iter().flatten().all(|&m| m > 0.0 && m < 1.0 + 1e-12));
}

/// Full objective gradient against finite differences on every parameter
/// coordinate.
#[test]
fn objective_gradient_matches_finite_differences() {
    let toy = toy_subgraph(5, 30);
    let cfg = tiny_model();
    let lcfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = ModelParams::init(&cfg, toy.graph.node_count(), &mut rng).unwrap();
    let labels = label_supervision_edges(&toy.subgraph, toy.causal, 5, &mut rng);
    assert!(!labels.positive_arcs.is_empty());
    let truth = truth_position(&toy.subgraph, Some(toy.causal));

    let eval = |ts: &[Tensor]| -> Result<(f64, Vec<Tensor>), TensorError> {
        let mut tape = Tape::new();
        let pv = ParamVars::register_tensors(&mut tape, &cfg, ts).map_err(|e| TensorError::NonFinite(e.to_string()))?;
        let loss = patient_objective(&mut tape, &pv, &cfg, &lcfg, &toy.subgraph, &labels, truth)
            .map_err(|e| TensorError::NonFinite(e.to_string()))?;
        let g = tape.backward(loss.total)?;
        let grads = ts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                g.get(phenograph_core::autodiff::ParamId(i))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros_like(t))
            })
            .collect();
        Ok((tape.value(loss.total).item()?, grads))
    };
    let (_, analytic) = eval(params.tensors()).unwrap();
    let report = grad_check(
        |ts| eval(ts).map(|r| r.0),
        params.tensors(),
        &analytic,
        1e-6,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(report.max_relative_error <= 1e-4, "{report:?}");
    assert_eq!(report.checked, params.scalar_count());
}
