//! Shared fixtures for the benchmarks.

use phenograph_core::cohort::resolve_cohort;
use phenograph_core::synth::{generate_cohort, generate_kg};
use phenograph_core::{KnowledgeGraph, PatientRecord, SynthConfig};

/// Default-sized synthetic graph and its training cohort.
pub fn fixture(seed: u64) -> (KnowledgeGraph, Vec<PatientRecord>) {
    let cfg = SynthConfig {
        n_patients: 50,
        seed,
        ..SynthConfig::default()
    };
    let kg = generate_kg(&cfg).expect("valid synth config");
    let graph = kg.graph().expect("generated graph loads");
    let cohort = generate_cohort(&cfg, &kg).expect("cohort");
    let records = resolve_cohort(&cohort.train, &graph);
    (graph, records)
}
