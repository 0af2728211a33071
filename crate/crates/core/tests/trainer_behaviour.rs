mod support;

use phenograph_core::autodiff::{Gradients, ParamId, Tensor};
use phenograph_core::cohort::resolve_cohort;
use phenograph_core::synth::{generate_cohort, generate_kg};
use phenograph_core::trainer::{adam_step, clip_global_norm, AdamConfig, AdamState, Checkpoint, Trainer};
use phenograph_core::{KnowledgeGraph, LossConfig, PatientRecord, SynthConfig, TrainConfig};
use proptest::prelude::*;
use support::fixtures::tiny_model;

fn small_world(n_patients: usize) -> (KnowledgeGraph, Vec<PatientRecord>) {
    let cfg = SynthConfig {
        n_diseases: 5,
        genes_per_disease: 2,
        phenos_per_disease: 5,
        n_background_nodes: 60,
        background_edge_prob: 0.03,
        phenotypes_per_patient: 3,
        n_patients,
        test_fraction: 0.2,
        seed: 3,
        ..SynthConfig::default()
    };
    let kg = generate_kg(&cfg).unwrap();
    let c = generate_cohort(&cfg, &kg).unwrap();
    let g = kg.graph().unwrap();
    let records = resolve_cohort(&c.train, &g);
    (g, records)
}

fn tcfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 1e-2,
        lr_step: 2,
        val_fraction: 0.25,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn run(g: &KnowledgeGraph, c: &[PatientRecord], t: &TrainConfig, resume: Option<Checkpoint>) -> Checkpoint {
    Trainer::new(g, c, &tiny_model(), &LossConfig::default(), t)
        .unwrap()
        .run(resume, &mut |_| {})
        .unwrap()
        .checkpoint
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let (g, c) = small_world(20);
    let a = run(&g, &c, &tcfg(3), None).to_bytes();
    let b = run(&g, &c, &tcfg(3), None).to_bytes();
    assert_eq!(a, b);
    let other = run(&g, &c, &TrainConfig { seed: 12, ..tcfg(3) }, None).to_bytes();
    assert_ne!(a, other);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (g, c) = small_world(20);
    let full = run(&g, &c, &tcfg(4), None);
    let partial = run(&g, &c, &tcfg(2), None);
    let restored = Checkpoint::from_bytes(&partial.to_bytes()).unwrap();
    let resumed = run(&g, &c, &tcfg(4), Some(restored));
    assert_eq!(full.to_bytes(), resumed.to_bytes());
    assert_eq!(resumed.trace.len(), 4);
}

#[test]
fn resume_rejects_a_different_seed() {
    let (g, c) = small_world(10);
    let ck = run(&g, &c, &tcfg(1), None);
    let t = TrainConfig { seed: 99, ..tcfg(2) };
    let trainer = Trainer::new(&g, &c, &tiny_model(), &LossConfig::default(), &t).unwrap();
    assert!(trainer.run(Some(ck), &mut |_| {}).is_err());
}

#[test]
fn one_patient_one_epoch_is_one_step() {
    let (g, c) = small_world(10);
    let out = Trainer::new(&g, &c[..1], &tiny_model(), &LossConfig::default(), &tcfg(1))
        .unwrap()
        .run(None, &mut |_| {})
        .unwrap();
    assert_eq!(out.trace.len(), 1);
    assert_eq!(out.trace[0].steps, 1);
    assert_eq!(out.trace[0].val_mrr, None);
    assert_eq!(out.checkpoint.adam.step, 1);
    assert!(out.checkpoint.best.is_none());
}

#[test]
fn accumulation_groups_patients_into_steps() {
    let (g, c) = small_world(20);
    let t = TrainConfig { accumulate: 3, ..tcfg(1) };
    let trainer = Trainer::new(&g, &c, &tiny_model(), &LossConfig::default(), &t).unwrap();
    let n = trainer.train_indices().len();
    let out = trainer.run(None, &mut |_| {}).unwrap();
    assert_eq!(out.trace[0].steps, n.div_ceil(3));
}

#[test]
fn schedule_and_best_snapshot_are_recorded() {
    let (g, c) = small_world(20);
    let ck = run(&g, &c, &tcfg(4), None);
    let lrs: Vec<f64> = ck.trace.iter().map(|r| r.learning_rate).collect();
    assert_eq!(lrs, vec![1e-2, 1e-2, 5e-3, 5e-3]);
    let best = ck.best.as_ref().unwrap();
    let top = ck.trace.iter().filter_map(|r| r.val_mrr).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.val_mrr, top);
    // The earliest epoch reaching the maximum is kept.
    let first = ck.trace.iter().position(|r| r.val_mrr == Some(top)).unwrap();
    assert_eq!(best.epoch, first);
}

#[test]
fn non_finite_loss_names_the_patient() {
    let (g, c) = small_world(10);
    let mut ck = run(&g, &c, &tcfg(1), None);
    for t in ck.params.tensors_mut() {
        t.data_mut().fill(f64::NAN);
    }
    let trainer = Trainer::new(&g, &c, &tiny_model(), &LossConfig::default(), &tcfg(2)).unwrap();
    let err = trainer.run(Some(ck), &mut |_| {}).unwrap_err().to_string();
    assert!(c.iter().any(|p| err.contains(&p.patient_id)), "{err}");
}

#[test]
fn checkpoint_survives_disk_and_detects_damage() {
    let (g, c) = small_world(10);
    let ck = run(&g, &c, &tcfg(2), None);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes(), ck.to_bytes());
    assert_eq!(back, ck);

    let bytes = ck.to_bytes();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(Checkpoint::from_bytes(&flipped).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    assert!(Checkpoint::from_bytes(&[]).is_err());
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let a = [1.0, 4.0, 0.25];
    let f = |x: &[f64]| -> f64 { x.iter().zip(a).map(|(x, a)| a * x * x).sum() };
    let mut params = vec![Tensor::row(vec![10.0, -8.0, 6.0])];
    let mut state = AdamState::new(&params);
    let cfg = AdamConfig { learning_rate: 0.05, clip_norm: None, ..AdamConfig::default() };
    let mut losses = vec![f(params[0].data())];
    for _ in 0..100 {
        let grad: Vec<f64> = params[0].data().iter().zip(a).map(|(x, a)| 2.0 * a * x).collect();
        let mut g = Gradients::default();
        g.insert(ParamId(0), Tensor::row(grad));
        adam_step(&mut params, &mut g, &mut state, &cfg);
        losses.push(f(params[0].data()));
    }
    assert!(losses[5..].windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    assert!(losses[100] < 0.5 * losses[0]);
    assert_eq!(state.step, 100);
}

proptest! {
    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        v in prop::collection::vec(-100.0f64..100.0, 1..20),
        w in prop::collection::vec(-100.0f64..100.0, 1..20),
        max in 0.01f64..50.0,
    ) {
        let mut g = Gradients::default();
        g.insert(ParamId(0), Tensor::row(v.clone()));
        g.insert(ParamId(1), Tensor::row(w.clone()));
        let before = v.iter().chain(&w).map(|x| x * x).sum::<f64>().sqrt();
        let reported = clip_global_norm(&mut g, max);
        prop_assert!((reported - before).abs() <= 1e-9 * (1.0 + before));
        let after = g.global_norm();
        prop_assert!(after <= max * (1.0 + 1e-12) || after <= before);
        if before <= max {
            prop_assert_eq!(g.get(ParamId(0)).unwrap().data(), &v[..]);
        } else {
            prop_assert!((after - max).abs() <= 1e-9 * max);
            let scale = max / before;
            for (x, y) in g.get(ParamId(1)).unwrap().data().iter().zip(&w) {
                prop_assert!((x - y * scale).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
    }
}
