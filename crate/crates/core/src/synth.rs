//! Synthetic knowledge graphs and patient cohorts with a planted
//! phenotype–disease–gene signal.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{render_jsonl, PatientEntry};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::graph::{render_edge_file, render_node_file, EdgeRecord, KnowledgeGraph, NodeRecord, NodeType};
use crate::rng::{stream_rng, Stream};

pub const NODE_FILE: &str = "graph.nodes.tsv";
pub const EDGE_FILE: &str = "graph.edges.tsv";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Mixed,
    DisjointGenes,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mixed" => Ok(Self::Mixed),
            "disjoint_genes" => Ok(Self::DisjointGenes),
            other => Err(format!("unknown split mode `{other}` (mixed | disjoint_genes)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_diseases: usize,
    pub genes_per_disease: usize,
    pub phenos_per_disease: usize,
    pub n_background_nodes: usize,
    pub background_edge_prob: f64,
    /// Background node type shares; the remainder is `other`.
    pub background_gene_fraction: f64,
    pub background_phenotype_fraction: f64,
    pub phenotype_noise_rate: f64,
    /// Adds noise phenotypes instead of replacing true ones.
    pub additive_noise: bool,
    pub phenotypes_per_patient: usize,
    pub n_patients: usize,
    pub test_fraction: f64,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_diseases: 40,
            genes_per_disease: 3,
            phenos_per_disease: 8,
            n_background_nodes: 1520,
            background_edge_prob: 0.0025,
            background_gene_fraction: 0.3,
            background_phenotype_fraction: 0.4,
            phenotype_noise_rate: 0.2,
            additive_noise: false,
            phenotypes_per_patient: 5,
            n_patients: 500,
            test_fraction: 0.2,
            split_mode: SplitMode::Mixed,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |x: f64| (0.0..=1.0).contains(&x);
        let ok = self.n_diseases > 0
            && self.genes_per_disease > 0
            && self.phenos_per_disease > 0
            && self.phenotypes_per_patient > 0
            && self.n_patients > 0
            && rate(self.background_edge_prob)
            && rate(self.phenotype_noise_rate)
            && rate(self.background_gene_fraction)
            && rate(self.background_phenotype_fraction)
            && self.background_gene_fraction + self.background_phenotype_fraction <= 1.0
            && self.test_fraction > 0.0
            && self.test_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synth configuration {self:?}")))
        }
    }
}

/// A disease with its planted genes and phenotypes (node indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedDisease {
    pub disease: usize,
    pub genes: Vec<usize>,
    pub phenotypes: Vec<usize>,
}

/// Generated graph in file-record form plus its planted structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthKg {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    pub diseases: Vec<PlantedDisease>,
    /// Every phenotype node, planted or background.
    pub phenotypes: Vec<usize>,
}

impl SynthKg {
    pub fn graph(&self) -> Result<KnowledgeGraph> {
        let numbered: Vec<(usize, EdgeRecord)> = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (i + 2, e.clone()))
            .collect();
        KnowledgeGraph::from_records(self.nodes.clone(), &numbered, EDGE_FILE)
    }

    pub fn node_file(&self) -> String {
        render_node_file(&self.nodes)
    }

    pub fn edge_file(&self) -> String {
        render_edge_file(&self.edges)
    }
}

struct Builder {
    nodes: Vec<NodeRecord>,
    counters: BTreeMap<&'static str, usize>,
}

impl Builder {
    fn add(&mut self, node_type: NodeType) -> usize {
        let prefix = match node_type {
            NodeType::Phenotype => "P",
            NodeType::Gene => "G",
            NodeType::Disease => "D",
            NodeType::Other => "X",
        };
        let c = self.counters.entry(prefix).or_insert(0);
        *c += 1;
        self.nodes.push(NodeRecord {
            key: format!("{prefix}{:05}", *c),
            node_type,
            name: format!("{node_type} {}", *c),
        });
        self.nodes.len() - 1
    }
}

pub fn generate_kg(cfg: &SynthConfig) -> Result<SynthKg> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Synth, &[0]);
    let mut b = Builder {
        nodes: Vec::new(),
        counters: BTreeMap::new(),
    };
    let mut diseases = Vec::with_capacity(cfg.n_diseases);
    let mut links: Vec<(usize, &str, usize)> = Vec::new();
    for _ in 0..cfg.n_diseases {
        let disease = b.add(NodeType::Disease);
        let genes: Vec<usize> = (0..cfg.genes_per_disease).map(|_| b.add(NodeType::Gene)).collect();
        let phenotypes: Vec<usize> = (0..cfg.phenos_per_disease)
            .map(|_| b.add(NodeType::Phenotype))
            .collect();
        links.extend(genes.iter().map(|&g| (disease, "disease_gene", g)));
        links.extend(phenotypes.iter().map(|&p| (disease, "disease_phenotype", p)));
        diseases.push(PlantedDisease {
            disease,
            genes,
            phenotypes,
        });
    }
    for _ in 0..cfg.n_background_nodes {
        let u: f64 = rng.gen();
        let t = if u < cfg.background_gene_fraction {
            NodeType::Gene
        } else if u < cfg.background_gene_fraction + cfg.background_phenotype_fraction {
            NodeType::Phenotype
        } else {
            NodeType::Other
        };
        b.add(t);
    }
    let n = b.nodes.len();
    let planted: HashSet<(usize, usize)> = links.iter().map(|&(u, _, v)| (u.min(v), u.max(v))).collect();
    if cfg.background_edge_prob > 0.0 {
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(cfg.background_edge_prob) && !planted.contains(&(u, v)) {
                    links.push((u, "background", v));
                }
            }
        }
    }
    let edges = links
        .into_iter()
        .map(|(u, rel, v)| EdgeRecord {
            src: b.nodes[u].key.clone(),
            relation: rel.to_string(),
            dst: b.nodes[v].key.clone(),
        })
        .collect();
    let phenotypes = (0..n)
        .filter(|&i| b.nodes[i].node_type == NodeType::Phenotype)
        .collect();
    Ok(SynthKg {
        nodes: b.nodes,
        edges,
        diseases,
        phenotypes,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthCohort {
    pub train: Vec<PatientEntry>,
    pub test: Vec<PatientEntry>,
    /// True phenotypes drawn, before noise.
    pub drawn_phenotypes: usize,
    /// Drawn phenotypes replaced (or, with additive noise, added) by noise.
    pub noise_phenotypes: usize,
}

struct PatientFactory<'a> {
    cfg: &'a SynthConfig,
    kg: &'a SynthKg,
    drawn: usize,
    noisy: usize,
}

impl PatientFactory<'_> {
    fn make(&mut self, id: String, disease: usize, gene: usize, rng: &mut ChaCha8Rng) -> PatientEntry {
        let d = &self.kg.diseases[disease];
        let want = self.cfg.phenotypes_per_patient;
        if want > d.phenotypes.len() {
            log::warn!(
                "disease {} has {} phenotypes, fewer than the {} requested; using all",
                self.kg.nodes[d.disease].key,
                d.phenotypes.len(),
                want
            );
        }
        let take = want.min(d.phenotypes.len());
        let own: HashSet<usize> = d.phenotypes.iter().copied().collect();
        let mut chosen: Vec<usize> = sample(rng, d.phenotypes.len(), take)
            .into_iter()
            .map(|i| d.phenotypes[i])
            .collect();
        self.drawn += take;
        let mut used: HashSet<usize> = chosen.iter().copied().collect();
        let foreign = |rng: &mut ChaCha8Rng, used: &HashSet<usize>| -> Option<usize> {
            // Rejection sampling; the foreign pool dwarfs one disease's phenotypes.
            for _ in 0..64 {
                let p = *self.kg.phenotypes.choose(rng)?;
                if !own.contains(&p) && !used.contains(&p) {
                    return Some(p);
                }
            }
            None
        };
        let mut extra = Vec::new();
        let mut replaced = vec![false; chosen.len()];
        for i in 0..chosen.len() {
            if !rng.gen_bool(self.cfg.phenotype_noise_rate) {
                continue;
            }
            let Some(p) = foreign(rng, &used) else { continue };
            used.insert(p);
            if self.cfg.additive_noise {
                extra.push(p);
            } else {
                replaced[i] = true;
                chosen[i] = p;
            }
        }
        if !self.cfg.additive_noise && !replaced.is_empty() && replaced.iter().all(|&r| r) {
            // Keep one true phenotype so the causal gene stays within two hops.
            let slot = rng.gen_range(0..chosen.len());
            let avail: Vec<usize> = d.phenotypes.iter().copied().filter(|p| !used.contains(p)).collect();
            chosen[slot] = *avail.choose(rng).unwrap_or(&d.phenotypes[0]);
            replaced[slot] = false;
        }
        self.noisy += replaced.iter().filter(|&&r| r).count() + extra.len();
        chosen.extend(extra);
        chosen.sort_unstable();
        chosen.dedup();
        PatientEntry {
            id,
            phenotypes: chosen.iter().map(|&p| self.kg.nodes[p].key.clone()).collect(),
            causal_gene: Some(self.kg.nodes[gene].key.clone()),
        }
    }
}

pub fn generate_cohort(cfg: &SynthConfig, kg: &SynthKg) -> Result<SynthCohort> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Synth, &[1]);
    let n_test = ((cfg.n_patients as f64 * cfg.test_fraction).round() as usize).clamp(1, cfg.n_patients);
    let mut f = PatientFactory {
        cfg,
        kg,
        drawn: 0,
        noisy: 0,
    };
    let (train, test) = match cfg.split_mode {
        SplitMode::Mixed => {
            let mut all: Vec<PatientEntry> = (0..cfg.n_patients)
                .map(|i| {
                    let d = rng.gen_range(0..kg.diseases.len());
                    let g = *kg.diseases[d].genes.choose(&mut rng).expect("diseases have genes");
                    f.make(format!("patient{i:05}"), d, g, &mut rng)
                })
                .collect();
            all.shuffle(&mut rng);
            let train = all.split_off(n_test);
            (train, all)
        }
        SplitMode::DisjointGenes => {
            let pairs: Vec<(usize, usize)> = kg
                .diseases
                .iter()
                .enumerate()
                .flat_map(|(d, pd)| pd.genes.iter().map(move |&g| (d, g)))
                .collect();
            if pairs.len() < 2 {
                return Err(Error::Config("disjoint_genes split needs at least two disease genes".into()));
            }
            let n_held = ((pairs.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, pairs.len() - 1);
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rng);
            let (held, kept) = shuffled.split_at(n_held);
            let mut draw = |pool: &[(usize, usize)], count: usize, offset: usize, rng: &mut ChaCha8Rng| {
                (0..count)
                    .map(|i| {
                        let (d, g) = *pool.choose(rng).expect("nonempty pool");
                        f.make(format!("patient{:05}", offset + i), d, g, rng)
                    })
                    .collect::<Vec<_>>()
            };
            let test = draw(held, n_test, 0, &mut rng);
            let train = draw(kept, cfg.n_patients - n_test, n_test, &mut rng);
            (train, test)
        }
    };
    Ok(SynthCohort {
        train,
        test,
        drawn_phenotypes: f.drawn,
        noise_phenotypes: f.noisy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub seed: u64,
    pub config_sha256: String,
    /// File name → SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

/// Generates graph and cohort and writes them, plus a manifest, into `dir`.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<SynthManifest> {
    let kg = generate_kg(cfg)?;
    let cohort = generate_cohort(cfg, &kg)?;
    fs::create_dir_all(dir)?;
    let outputs = [
        (NODE_FILE, kg.node_file()),
        (EDGE_FILE, kg.edge_file()),
        (TRAIN_FILE, render_jsonl(&cohort.train)?),
        (TEST_FILE, render_jsonl(&cohort.test)?),
    ];
    let mut files = BTreeMap::new();
    for (name, body) in outputs {
        fs::write(dir.join(name), &body)?;
        files.insert(name.to_string(), sha256_hex(body.as_bytes()));
    }
    let config_json = serde_json::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let manifest = SynthManifest {
        config: cfg.clone(),
        seed: cfg.seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        files,
    };
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), body + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynthConfig {
        SynthConfig {
            n_diseases: 1,
            genes_per_disease: 1,
            phenos_per_disease: 2,
            n_background_nodes: 0,
            background_edge_prob: 0.0,
            phenotype_noise_rate: 0.0,
            phenotypes_per_patient: 2,
            n_patients: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn planted_skeleton() {
        let kg = generate_kg(&tiny()).unwrap();
        assert_eq!(kg.nodes.len(), 4);
        assert_eq!(kg.edges.len(), 3);
        let g = kg.graph().unwrap();
        assert_eq!(g.arc_count(), 6);
    }

    #[test]
    fn noiseless_patients_get_all_phenotypes() {
        let cfg = tiny();
        let kg = generate_kg(&cfg).unwrap();
        let c = generate_cohort(&cfg, &kg).unwrap();
        assert_eq!(c.train.len() + c.test.len(), 5);
        for p in c.train.iter().chain(&c.test) {
            assert_eq!(p.phenotypes, vec!["P00001".to_string(), "P00002".to_string()]);
            assert_eq!(p.causal_gene.as_deref(), Some("G00001"));
        }
    }

    #[test]
    fn regeneration_is_identical() {
        let cfg = SynthConfig {
            n_background_nodes: 200,
            n_patients: 40,
            ..SynthConfig::default()
        };
        let a = generate_kg(&cfg).unwrap();
        let b = generate_kg(&cfg).unwrap();
        assert_eq!(a.edge_file(), b.edge_file());
        assert_eq!(
            generate_cohort(&cfg, &a).unwrap(),
            generate_cohort(&cfg, &b).unwrap()
        );
    }

    #[test]
    fn split_mode_parses() {
        assert_eq!("disjoint_genes".parse::<SplitMode>().unwrap(), SplitMode::DisjointGenes);
        assert!("random".parse::<SplitMode>().is_err());
    }
}
