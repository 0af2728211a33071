use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use phenograph_core::cohort::{read_cohort, read_jsonl, resolve_cohort, write_jsonl};
use phenograph_core::eval::rank_subgraph;
use phenograph_core::extract::{extract_patient_graph, fuse_scores, min_max_normalize, PatientGraphRecord};
use phenograph_core::graph::{export_dot, SubgraphExport};
use phenograph_core::model::score_subgraph;
use phenograph_core::sampler::sample_phenotype_subgraph;
use phenograph_core::synth::{self, write_dataset};
use phenograph_core::trainer::Trainer;
use phenograph_core::{
    Checkpoint, EpochReport, ExtractionConfig, KnowledgeGraph, LossConfig, MetricReport, ModelConfig,
    ModelParams, NodeId, NodeType, PatientGraph, PatientRecord, Ranking, SynthConfig, TiePolicy, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{keys_of, resolved, Settings};
use crate::manifest::{manifest_path_for, ManifestBuilder};
use crate::parallel::par_map;
use crate::{Command, ConfigArgs, GraphArgs, ScoringArgs, Ties, Usage};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const BEST_CHECKPOINT_FILE: &str = "best.ckpt";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const RUN_MANIFEST_FILE: &str = "run.manifest.json";

/// One line of `predict` output, also the external-score input of `fuse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub ranking: Vec<ScoredGene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredGene {
    pub gene: String,
    pub score: f64,
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { cfg, out } => synth_cmd(&cfg, &out),
        Command::Ingest {
            graph,
            cohort,
            check,
            manifest,
        } => ingest_cmd(&graph, &cohort, check, manifest.as_deref()),
        Command::Train {
            graph,
            cfg,
            cohort,
            out,
            resume,
            epochs,
        } => train_cmd(&graph, &cfg, &cohort, &out, resume.as_deref(), epochs),
        Command::Predict { scoring, cfg, out } => predict_cmd(&scoring, &cfg, &out),
        Command::Extract {
            scoring,
            cfg,
            out,
            dot_dir,
        } => extract_cmd(&scoring, &cfg, &out, dot_dir.as_deref()),
        Command::Evaluate {
            graph,
            truth,
            predictions,
            patient_graphs,
            ks,
            ties,
            out,
            seed,
            jobs,
        } => evaluate_cmd(
            &graph,
            &truth,
            predictions.as_deref(),
            patient_graphs.as_deref(),
            &ks,
            ties,
            &out,
            seed.unwrap_or(0),
            jobs,
        ),
        Command::Fuse {
            graph,
            scores,
            patient_graphs,
            delta,
            truth,
            ks,
            out,
            seed,
        } => fuse_cmd(
            &graph,
            &scores,
            &patient_graphs,
            delta,
            truth.as_deref(),
            &ks,
            &out,
            seed.unwrap_or(0),
        ),
    }
}

fn usage<T>(r: phenograph_core::Result<T>) -> Result<T> {
    r.map_err(|e| Usage(e.to_string()).into())
}

/// Every key some command understands; one file can drive a whole pipeline.
fn known_keys() -> [BTreeSet<String>; 5] {
    [
        keys_of::<SynthConfig>(),
        keys_of::<ModelConfig>(),
        keys_of::<LossConfig>(),
        keys_of::<TrainConfig>(),
        keys_of::<ExtractionConfig>(),
    ]
}

fn load_settings(cfg: &ConfigArgs) -> Result<Settings> {
    let mut s = Settings::load(cfg.config.as_deref(), &cfg.set)?;
    s.set_if("seed", cfg.seed);
    s.check_known(&known_keys())?;
    Ok(s)
}

fn load_graph(args: &GraphArgs) -> Result<KnowledgeGraph> {
    KnowledgeGraph::load(&args.nodes, &args.edges)
        .with_context(|| format!("loading graph {} / {}", args.nodes.display(), args.edges.display()))
}

fn load_patients(g: &KnowledgeGraph, path: &Path) -> Result<Vec<PatientRecord>> {
    let entries = read_cohort(path).with_context(|| format!("reading cohort {}", path.display()))?;
    let records = resolve_cohort(&entries, g);
    for r in &records {
        if !r.unresolved.is_empty() {
            log::warn!("patient {}: unknown phenotype keys {:?}", r.patient_id, r.unresolved);
        }
    }
    Ok(records)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
        }
        _ => Ok(()),
    }
}

fn synth_cmd(cfg: &ConfigArgs, out: &Path) -> Result<()> {
    let s = load_settings(cfg)?;
    let scfg: SynthConfig = s.section("synth")?;
    usage(scfg.validate())?;
    let m = write_dataset(&scfg, out)?;
    let mut run = ManifestBuilder::new("synth", scfg.seed);
    run.config(resolved(&[&scfg]));
    for name in m.files.keys().map(String::as_str).chain([synth::MANIFEST_FILE]) {
        run.output(&out.join(name));
    }
    run.finish(&out.join(RUN_MANIFEST_FILE))?;
    println!("wrote synthetic dataset to {}", out.display());
    Ok(())
}

fn ingest_cmd(graph: &GraphArgs, cohorts: &[PathBuf], check: bool, manifest: Option<&Path>) -> Result<()> {
    let g = load_graph(graph)?;
    println!("nodes {} (undirected edges {})", g.node_count(), g.arc_count() / 2);
    for t in [NodeType::Phenotype, NodeType::Gene, NodeType::Disease, NodeType::Other] {
        println!("  {t:<10} {}", g.nodes_of_type(t).count());
    }
    let mut problems = Vec::new();
    for path in cohorts {
        let entries = read_cohort(path).with_context(|| format!("reading cohort {}", path.display()))?;
        let records = resolve_cohort(&entries, &g);
        let mut unresolved = 0;
        let mut bad_genes = 0;
        let mut empty = 0;
        for (e, r) in entries.iter().zip(&records) {
            unresolved += r.unresolved.len();
            if e.causal_gene.is_some() && r.causal_gene.is_none() {
                bad_genes += 1;
                problems.push(format!("patient {}: causal gene does not name a gene node", e.id));
            }
            let valid = r
                .phenotypes
                .iter()
                .filter(|&&p| g.node_type(p) == NodeType::Phenotype)
                .count();
            if valid == 0 {
                empty += 1;
                problems.push(format!("patient {}: no valid phenotypes", e.id));
            }
            if !r.unresolved.is_empty() {
                problems.push(format!("patient {}: unknown phenotypes {:?}", e.id, r.unresolved));
            }
        }
        println!(
            "{}: {} patients, {} unresolved phenotype keys, {} unresolved causal genes, {} without phenotypes",
            path.display(),
            records.len(),
            unresolved,
            bad_genes,
            empty
        );
    }
    if let Some(path) = manifest {
        let mut run = ManifestBuilder::new("ingest", 0);
        run.input(&graph.nodes).input(&graph.edges);
        for c in cohorts {
            run.input(c);
        }
        run.finish(path)?;
    }
    if check && !problems.is_empty() {
        for p in problems.iter().take(20) {
            eprintln!("{p}");
        }
        bail!("{} validation problems", problems.len());
    }
    Ok(())
}

fn trace_csv(trace: &[EpochReport]) -> String {
    let mut out = String::from("epoch,learning_rate,loss_sub,loss_gene,loss_total,hard_negatives,val_mrr\n");
    for r in trace {
        let val = r.val_mrr.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.learning_rate,
            r.mean.loss_sub,
            r.mean.loss_gene,
            r.mean.loss_total,
            r.mean.hard_negative_count,
            val
        );
    }
    out
}

fn train_cmd(
    graph: &GraphArgs,
    cfg: &ConfigArgs,
    cohort: &Path,
    out: &Path,
    resume: Option<&Path>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut s = load_settings(cfg)?;
    s.set_if("epochs", epochs);
    let mcfg: ModelConfig = s.section("model")?;
    let lcfg: LossConfig = s.section("loss")?;
    let tcfg: TrainConfig = s.section("train")?;
    usage(mcfg.validate())?;
    usage(lcfg.validate())?;
    usage(tcfg.validate())?;

    let g = load_graph(graph)?;
    let patients = load_patients(&g, cohort)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let start = resume
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let trainer = Trainer::new(&g, &patients, &mcfg, &lcfg, &tcfg)?;
    let outcome = trainer.run(start, &mut |r| {
        let val = r.val_mrr.map(|v| format!(" val_mrr {v:.2}")).unwrap_or_default();
        println!(
            "epoch {:>3} lr {:.3e} loss {:.6} sub {:.6} gene {:.6}{val}",
            r.epoch, r.learning_rate, r.mean.loss_total, r.mean.loss_sub, r.mean.loss_gene
        );
    })?;

    let ckpt_path = out.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ckpt_path)?;
    let trace_path = out.join(TRACE_FILE);
    write_file(&trace_path, &trace_csv(&outcome.trace))?;
    let mut run = ManifestBuilder::new("train", tcfg.seed);
    run.config(resolved(&[
        &serde_json::to_value(&mcfg)?,
        &serde_json::to_value(&lcfg)?,
        &serde_json::to_value(&tcfg)?,
    ]));
    run.input(&graph.nodes).input(&graph.edges).input(cohort);
    if let Some(p) = resume {
        run.input(p);
    }
    run.output(&ckpt_path).output(&trace_path);
    if let Some(best) = &outcome.checkpoint.best {
        let best_ckpt = Checkpoint {
            params: best.params.clone(),
            ..outcome.checkpoint.clone()
        };
        let best_path = out.join(BEST_CHECKPOINT_FILE);
        best_ckpt.save(&best_path)?;
        run.output(&best_path);
        println!("best validation MRR {:.2} at epoch {}", best.val_mrr, best.epoch);
    }
    run.finish(&out.join(RUN_MANIFEST_FILE))?;
    Ok(())
}

struct Scoring {
    graph: KnowledgeGraph,
    params: ModelParams,
    patients: Vec<PatientRecord>,
}

fn load_scoring(args: &ScoringArgs) -> Result<Scoring> {
    let graph = load_graph(&args.graph)?;
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let params = if args.final_params {
        ckpt.params
    } else {
        ckpt.best_params().clone()
    };
    if params.node_count() != graph.node_count() {
        bail!(
            "checkpoint embeds {} nodes but the graph has {}",
            params.node_count(),
            graph.node_count()
        );
    }
    let patients = load_patients(&graph, &args.patients)?;
    Ok(Scoring {
        graph,
        params,
        patients,
    })
}

fn has_phenotypes(g: &KnowledgeGraph, p: &PatientRecord) -> bool {
    p.phenotypes.iter().any(|&v| g.node_type(v) == NodeType::Phenotype)
}

fn predict_one(sc: &Scoring, p: &PatientRecord, hops: usize) -> Result<PredictionRow> {
    let empty = PredictionRow {
        id: p.patient_id.clone(),
        ranking: Vec::new(),
    };
    if !has_phenotypes(&sc.graph, p) {
        log::warn!("patient {}: no valid phenotypes, empty ranking", p.patient_id);
        return Ok(empty);
    }
    let sg = sample_phenotype_subgraph(&sc.graph, &p.phenotypes, hops)?;
    if sg.gene_locals.is_empty() {
        log::warn!("patient {}: no candidate genes, empty ranking", p.patient_id);
        return Ok(empty);
    }
    let bundle = score_subgraph(&sc.params, &sg)?;
    let ranking = rank_subgraph(&sg, &bundle)
        .entries()
        .iter()
        .map(|&(g, score)| ScoredGene {
            gene: sc.graph.node_key(g).to_string(),
            score,
        })
        .collect();
    Ok(PredictionRow {
        id: p.patient_id.clone(),
        ranking,
    })
}

fn predict_cmd(args: &ScoringArgs, cfg: &ConfigArgs, out: &Path) -> Result<()> {
    let s = load_settings(cfg)?;
    let tcfg: TrainConfig = s.section("train")?;
    if tcfg.hops == 0 {
        return Err(Usage("hops must be at least 1".into()).into());
    }
    let sc = load_scoring(args)?;
    let rows = par_map(&sc.patients, args.jobs, |p| predict_one(&sc, p, tcfg.hops))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    ensure_parent(out)?;
    write_jsonl(out, &rows)?;
    let mut run = ManifestBuilder::new("predict", tcfg.seed);
    run.config(serde_json::json!({ "hops": tcfg.hops, "final_params": args.final_params }));
    run.input(&args.graph.nodes)
        .input(&args.graph.edges)
        .input(&args.checkpoint)
        .input(&args.patients)
        .output(out);
    run.finish(&manifest_path_for(out))?;
    println!("wrote {} rankings to {}", rows.len(), out.display());
    Ok(())
}

fn extract_one(
    sc: &Scoring,
    p: &PatientRecord,
    hops: usize,
    ecfg: &ExtractionConfig,
) -> Result<(PatientGraphRecord, PatientGraph)> {
    let pg = if has_phenotypes(&sc.graph, p) {
        let sg = sample_phenotype_subgraph(&sc.graph, &p.phenotypes, hops)?;
        let bundle = score_subgraph(&sc.params, &sg)?;
        extract_patient_graph(&sg, &bundle, ecfg)?
    } else {
        log::warn!("patient {}: no valid phenotypes, empty patient graph", p.patient_id);
        PatientGraph::default()
    };
    Ok((PatientGraphRecord::from_graph(&p.patient_id, &pg, &sc.graph), pg))
}

fn dot_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.dot")
}

fn extract_cmd(args: &ScoringArgs, cfg: &ConfigArgs, out: &Path, dot_dir: Option<&Path>) -> Result<()> {
    let s = load_settings(cfg)?;
    let tcfg: TrainConfig = s.section("train")?;
    let ecfg: ExtractionConfig = s.section("extraction")?;
    usage(ecfg.validate())?;
    let sc = load_scoring(args)?;
    let results = par_map(&sc.patients, args.jobs, |p| extract_one(&sc, p, tcfg.hops, &ecfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    ensure_parent(out)?;
    let rows: Vec<&PatientGraphRecord> = results.iter().map(|(r, _)| r).collect();
    write_jsonl(out, &rows)?;
    let mut run = ManifestBuilder::new("extract", tcfg.seed);
    run.config(resolved(&[&serde_json::to_value(&ecfg)?, &serde_json::json!({ "sampler_hops": tcfg.hops })]));
    run.input(&args.graph.nodes)
        .input(&args.graph.edges)
        .input(&args.checkpoint)
        .input(&args.patients)
        .output(out);
    if let Some(dir) = dot_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (rec, pg) in &results {
            let mut export = SubgraphExport::induced(&sc.graph, pg.nodes.iter().copied());
            for &g in &pg.selected_genes {
                export.node_annotations.insert(g, "selected".into());
            }
            let path = dir.join(dot_file_name(&rec.id));
            export_dot(&sc.graph, &export, &path)?;
            run.output(&path);
        }
    }
    run.finish(&manifest_path_for(out))?;
    println!("wrote {} patient graphs to {}", rows.len(), out.display());
    Ok(())
}

fn ranking_from_row(g: &KnowledgeGraph, row: &PredictionRow) -> Result<Ranking> {
    let scored = row
        .ranking
        .iter()
        .map(|s| {
            g.node_by_key(&s.gene)
                .map(|v| (v, s.score))
                .ok_or_else(|| anyhow!("patient {}: unknown gene `{}`", row.id, s.gene))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ranking::new(scored))
}

fn index_by_id<T>(rows: Vec<T>, id: impl Fn(&T) -> &str, what: &str) -> Result<HashMap<String, T>> {
    let mut out = HashMap::with_capacity(rows.len());
    for r in rows {
        let key = id(&r).to_string();
        if out.contains_key(&key) {
            bail!("duplicate patient `{key}` in {what}");
        }
        out.insert(key, r);
    }
    Ok(out)
}

fn truth_cohort(g: &KnowledgeGraph, path: &Path) -> Result<Vec<(String, Option<NodeId>)>> {
    Ok(load_patients(g, path)?
        .into_iter()
        .map(|r| (r.patient_id, r.causal_gene))
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    graph: &GraphArgs,
    truth: &Path,
    predictions: Option<&Path>,
    patient_graphs: Option<&Path>,
    ks: &[usize],
    ties: Ties,
    out: &Path,
    seed: u64,
    jobs: usize,
) -> Result<()> {
    if predictions.is_none() && patient_graphs.is_none() {
        return Err(Usage("evaluate needs --predictions and/or --patient-graphs".into()).into());
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(Usage("--ks values must be positive".into()).into());
    }
    let g = load_graph(graph)?;
    let truths = truth_cohort(&g, truth)?;
    let truth_ids: Vec<Option<NodeId>> = truths.iter().map(|(_, t)| *t).collect();
    let policy = match ties {
        Ties::ById => TiePolicy::ById,
        Ties::WorstCase => TiePolicy::WorstCase,
    };
    let mut run = ManifestBuilder::new("evaluate", seed);
    run.input(&graph.nodes).input(&graph.edges).input(truth);

    let mut report = None;
    if let Some(path) = predictions {
        let rows = index_by_id(read_jsonl::<PredictionRow>(path)?, |r| &r.id, "predictions")?;
        let ordered = truths
            .iter()
            .map(|(id, _)| rows.get(id).ok_or_else(|| anyhow!("patient `{id}` missing from predictions")))
            .collect::<Result<Vec<_>>>()?;
        let rankings = par_map(&ordered, jobs, |r| ranking_from_row(&g, r))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        report = Some(MetricReport::compute(&rankings, &truth_ids, ks, policy));
        run.input(path);
    }
    if let Some(path) = patient_graphs {
        let rows = index_by_id(read_jsonl::<PatientGraphRecord>(path)?, |r| &r.id, "patient graphs")?;
        let graphs = truths
            .iter()
            .map(|(id, _)| {
                rows.get(id)
                    .ok_or_else(|| anyhow!("patient `{id}` missing from patient graphs"))
                    .and_then(|r| Ok(r.to_graph(&g)?))
            })
            .collect::<Result<Vec<_>>>()?;
        report = Some(match report {
            Some(r) => r.with_inclusion(&graphs, &truth_ids),
            None => MetricReport::inclusion_only(&graphs, &truth_ids),
        });
        run.input(path);
    }
    let report = report.expect("at least one input");
    ensure_parent(out)?;
    write_file(out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    run.config(serde_json::json!({ "ks": ks, "ties": format!("{policy:?}") }));
    run.output(out).finish(&manifest_path_for(out))?;
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Serialize)]
struct FuseReport {
    delta: f64,
    base: MetricReport,
    fused: MetricReport,
}

#[allow(clippy::too_many_arguments)]
fn fuse_cmd(
    graph: &GraphArgs,
    scores: &Path,
    patient_graphs: &Path,
    delta: f64,
    truth: Option<&Path>,
    ks: &[usize],
    out: &Path,
    seed: u64,
) -> Result<()> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Usage(format!("--delta must be a finite non-negative number, got {delta}")).into());
    }
    let g = load_graph(graph)?;
    let external = index_by_id(read_jsonl::<PredictionRow>(scores)?, |r| &r.id, "external scores")?;
    let graphs = read_jsonl::<PatientGraphRecord>(patient_graphs)?;
    let mut fused_rows = Vec::with_capacity(graphs.len());
    let mut base = Vec::with_capacity(graphs.len());
    let mut fused = Vec::with_capacity(graphs.len());
    for rec in &graphs {
        let row = external
            .get(&rec.id)
            .ok_or_else(|| anyhow!("patient `{}` missing from external scores {}", rec.id, scores.display()))?;
        let raw: BTreeMap<NodeId, f64> = ranking_from_row(&g, row)?.entries().iter().copied().collect();
        let pg = rec.to_graph(&g)?;
        let f = fuse_scores(&min_max_normalize(&raw), &pg, delta);
        fused_rows.push(PredictionRow {
            id: rec.id.clone(),
            ranking: f
                .ranking
                .entries()
                .iter()
                .map(|&(v, score)| ScoredGene {
                    gene: g.node_key(v).to_string(),
                    score,
                })
                .collect(),
        });
        base.push(Ranking::new(raw));
        fused.push(f.ranking);
    }
    ensure_parent(out)?;
    write_jsonl(out, &fused_rows)?;
    let mut run = ManifestBuilder::new("fuse", seed);
    run.config(serde_json::json!({ "delta": delta, "ks": ks }));
    run.input(&graph.nodes).input(&graph.edges).input(scores).input(patient_graphs).output(out);
    if let Some(truth) = truth {
        let truths = index_by_id(truth_cohort(&g, truth)?, |(id, _)| id, "truth cohort")?;
        let ids = graphs
            .iter()
            .map(|r| {
                truths
                    .get(&r.id)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| anyhow!("patient `{}` missing from truth cohort", r.id))
            })
            .collect::<Result<Vec<_>>>()?;
        let report = FuseReport {
            delta,
            base: MetricReport::compute(&base, &ids, ks, TiePolicy::ById),
            fused: MetricReport::compute(&fused, &ids, ks, TiePolicy::ById),
        };
        let mut report_path = out.as_os_str().to_os_string();
        report_path.push(".report.json");
        let report_path = PathBuf::from(report_path);
        write_file(&report_path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        run.input(truth).output(&report_path);
        println!("base\n{}", report.base.to_table());
        println!("fused (delta {delta})\n{}", report.fused.to_table());
    }
    run.finish(&manifest_path_for(out))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_names_are_sanitized() {
        assert_eq!(dot_file_name("p/01 x"), "p_01_x.dot");
    }

    #[test]
    fn trace_has_header_and_rows() {
        let r = EpochReport {
            epoch: 0,
            learning_rate: 1e-4,
            mean: phenograph_core::LossReport {
                loss_sub: 1.0,
                loss_gene: 0.5,
                loss_total: 1.5,
                hard_negative_count: 3,
            },
            val_mrr: None,
            steps: 2,
        };
        let csv = trace_csv(&[r.clone(), EpochReport { epoch: 1, ..r }]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,0.0001,1,0.5,1.5,3,"));
    }
}
