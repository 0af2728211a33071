//! Attention encoder, patient pooling, edge scorer and gene scorer.
//!
//! All four stages are recorded on one [`Tape`] so the joint loss can be
//! differentiated end to end. Layer `l` of the encoder computes, per head
//! `k`, GATv2 attention over `{i} ∪ N(i)`:
//!
//! ```text
//! e_ij = a_kᵀ LeakyReLU(W_dst h_i + W_src h_j)      α = softmax_j(e_ij)
//! h_i' = W_proj ( ‖_k ELU( Σ_j α_ij W_src h_j ) )
//! ```
//!
//! Self-loops take part in the softmax but are not reported as attention
//! records; only real arcs are scored downstream.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Tensor, Var};
use crate::error::{ModelError, Result};
use crate::sampler::SampledSubgraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub attn_proj_dim: usize,
    /// Hidden width of the edge-scoring perceptron.
    pub edge_hidden: usize,
    /// λ of the gene-score penalty.
    pub penalty_weight: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            hidden_dim: 128,
            out_dim: 64,
            heads: 4,
            layers: 3,
            attn_proj_dim: 16,
            edge_hidden: 64,
            penalty_weight: 0.5,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()).into());
        if self.embed_dim == 0
            || self.hidden_dim == 0
            || self.out_dim == 0
            || self.heads == 0
            || self.attn_proj_dim == 0
            || self.edge_hidden == 0
        {
            return fail("all dimensions must be positive");
        }
        if self.layers == 0 {
            return fail("at least one attention layer is required");
        }
        if self.hidden_dim % self.heads != 0 {
            return fail("hidden_dim must be divisible by heads");
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return fail("penalty_weight must be finite and nonnegative");
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return fail("leaky_slope must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let input = if layer == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        };
        let output = if layer + 1 == self.layers {
            self.out_dim
        } else {
            self.hidden_dim
        };
        (input, output)
    }

    /// Width of the edge feature `[Proj(A); p; |h_s − h_t|; h_s ⊙ h_t]`.
    pub fn edge_feature_dim(&self) -> usize {
        self.attn_proj_dim + 3 * self.out_dim
    }

    /// `(name, shape)` of every parameter tensor, in storage order.
    pub fn param_layout(&self, node_count: usize) -> Vec<(String, [usize; 2])> {
        let mut out = vec![("node_embeddings".to_string(), [node_count, self.embed_dim])];
        for l in 0..self.layers {
            let (input, output) = self.layer_dims(l);
            out.push((format!("gat{l}.w_src"), [input, self.hidden_dim]));
            out.push((format!("gat{l}.w_dst"), [input, self.hidden_dim]));
            out.push((format!("gat{l}.attn"), [self.heads, self.head_dim()]));
            out.push((format!("gat{l}.w_proj"), [self.hidden_dim, output]));
        }
        out.push(("query".to_string(), [self.out_dim, 1]));
        out.push((
            "attn_proj".to_string(),
            [self.layers * self.heads, self.attn_proj_dim],
        ));
        out.push((
            "edge_mlp.w1".to_string(),
            [self.edge_feature_dim(), self.edge_hidden],
        ));
        out.push(("edge_mlp.b1".to_string(), [1, self.edge_hidden]));
        out.push(("edge_mlp.w2".to_string(), [self.edge_hidden, 1]));
        out.push(("edge_mlp.b2".to_string(), [1, 1]));
        out
    }
}

const EMBEDDINGS: usize = 0;
const PER_LAYER: usize = 4;

/// Every learnable tensor of the model, in [`ModelConfig::param_layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights and embeddings, zero biases, `q ~ N(0, 0.1)`.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, node_count: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if node_count == 0 {
            return Err(ModelError::Config("node_count must be positive".into()).into());
        }
        let layout = config.param_layout(node_count);
        let query = Normal::new(0.0, 0.1).expect("valid normal");
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, [rows, cols]) in layout {
            let data: Vec<f64> = if name == "query" {
                (0..rows * cols).map(|_| query.sample(rng)).collect()
            } else if name.ends_with(".b1") || name.ends_with(".b2") {
                vec![0.0; rows * cols]
            } else {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                let dist = Uniform::new(-a, a);
                (0..rows * cols).map(|_| dist.sample(rng)).collect()
            };
            tensors.push(Tensor::matrix(rows, cols, data)?);
            names.push(name);
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let node_count = named
            .first()
            .and_then(|(_, t)| t.shape().first().copied())
            .ok_or_else(|| ModelError::ParamShape("no tensors".into()))?;
        let layout = config.param_layout(node_count);
        if layout.len() != named.len() {
            return Err(ModelError::ParamShape(format!(
                "expected {} tensors, got {}",
                layout.len(),
                named.len()
            ))
            .into());
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for ((want, shape), (name, t)) in layout.into_iter().zip(named) {
            if want != name || t.shape() != shape {
                return Err(ModelError::ParamShape(format!(
                    "expected {want} {shape:?}, got {name} {:?}",
                    t.shape()
                ))
                .into());
            }
            if !t.is_finite() {
                return Err(ModelError::ParamShape(format!("{name} has non-finite values")).into());
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn node_count(&self) -> usize {
        self.tensors[EMBEDDINGS].shape()[0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Same configuration and names, different values.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        let named = self.names.iter().cloned().zip(tensors).collect();
        Self::from_named(&self.config, named)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Parameter leaves registered on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
    layers: usize,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Result<Self> {
        Self::register_tensors(tape, params.config(), params.tensors())
    }

    pub fn register_tensors(tape: &mut Tape, config: &ModelConfig, tensors: &[Tensor]) -> Result<Self> {
        let vars = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(ParamId(i), t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            vars,
            layers: config.layers,
        })
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    fn embeddings(&self) -> Var {
        self.vars[EMBEDDINGS]
    }

    fn layer(&self, l: usize) -> [Var; PER_LAYER] {
        let base = 1 + l * PER_LAYER;
        [
            self.vars[base],
            self.vars[base + 1],
            self.vars[base + 2],
            self.vars[base + 3],
        ]
    }

    fn tail(&self, offset: usize) -> Var {
        self.vars[1 + self.layers * PER_LAYER + offset]
    }

    pub fn query(&self) -> Var {
        self.tail(0)
    }

    fn attn_proj(&self) -> Var {
        self.tail(1)
    }

    fn mlp(&self) -> [Var; 4] {
        [self.tail(2), self.tail(3), self.tail(4), self.tail(5)]
    }
}

/// Tape handles for one forward pass over a subgraph.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `n × out_dim`
    pub embeddings: Var,
    /// `arcs × (layers·heads)`
    pub attention: Var,
    /// `1 × out_dim`
    pub patient: Var,
    /// `arcs × 1`, raw perceptron outputs.
    pub edge_scores: Var,
    /// `genes × 1`, aligned with `gene_locals`.
    pub gene_scores: Var,
}

/// Materialized forward outputs for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBundle {
    pub node_embeddings_final: Tensor,
    pub attention_records: Tensor,
    pub patient_vec: Vec<f64>,
    /// Per local arc.
    pub edge_scores: Vec<f64>,
    /// Per entry of `gene_locals`.
    pub gene_scores: Vec<f64>,
}

impl ScoreBundle {
    pub fn from_tape(tape: &Tape, vars: &ForwardVars) -> Self {
        Self {
            node_embeddings_final: tape.value(vars.embeddings).clone(),
            attention_records: tape.value(vars.attention).clone(),
            patient_vec: tape.value(vars.patient).data().to_vec(),
            edge_scores: tape.value(vars.edge_scores).data().to_vec(),
            gene_scores: tape.value(vars.gene_scores).data().to_vec(),
        }
    }
}

/// Runs the attention stack; returns final embeddings and per-arc attention
/// records (`arcs × layers·heads`, layer-major).
pub fn gat_forward(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    sg: &SampledSubgraph,
) -> Result<(Var, Var)> {
    let n = sg.node_count();
    if n == 0 {
        return Err(ModelError::EmptySubgraph.into());
    }
    let arcs = sg.arc_count();
    let mut src = sg.arc_sources();
    let mut dst = sg.arc_targets();
    src.extend(0..n);
    dst.extend(0..n);
    let real: Vec<usize> = (0..arcs).collect();

    let locals: Vec<usize> = sg.local_nodes.iter().map(|v| v.0).collect();
    let mut h = tape.gather_rows(pv.embeddings(), &locals)?;
    let mut records = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let [w_src, w_dst, attn, w_proj] = pv.layer(l);
        let xs = tape.matmul(h, w_src)?;
        let xd = tape.matmul(h, w_dst)?;
        let zs = tape.gather_rows(xs, &src)?;
        let zd = tape.gather_rows(xd, &dst)?;
        let pre = tape.add(zs, zd)?;
        let act = tape.leaky_relu(pre, config.leaky_slope)?;
        let logits = tape.head_dot(act, attn)?;
        let alpha = tape.segment_softmax(logits, &dst, n)?;
        let messages = tape.head_scale(zs, alpha)?;
        let agg = tape.segment_sum(messages, &dst, n)?;
        let heads = tape.elu(agg)?;
        h = tape.matmul(heads, w_proj)?;
        records.push(tape.gather_rows(alpha, &real)?);
    }
    let attention = tape.concat_cols(&records)?;
    Ok((h, attention))
}

/// Scaled dot-product pooling of the phenotype embeddings → `1 × d`.
pub fn patient_representation(
    tape: &mut Tape,
    embeddings: Var,
    phenotype_locals: &[usize],
    query: Var,
) -> Result<Var> {
    if phenotype_locals.is_empty() {
        return Err(ModelError::NoPhenotypes.into());
    }
    let (_, d) = tape.value(embeddings).dims2()?;
    let hp = tape.gather_rows(embeddings, phenotype_locals)?;
    let logits = tape.matmul(hp, query)?;
    let scaled = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
    let one_segment = vec![0; phenotype_locals.len()];
    let weights = tape.segment_softmax(scaled, &one_segment, 1)?;
    let weighted = tape.mul_col(hp, weights)?;
    Ok(tape.segment_sum(weighted, &one_segment, 1)?)
}

/// Raw per-arc scores `φ([Proj(A); p; |h_s − h_t|; h_s ⊙ h_t])` → `arcs × 1`.
pub fn score_edges(
    tape: &mut Tape,
    embeddings: Var,
    attention: Var,
    patient: Var,
    pv: &ParamVars,
    sg: &SampledSubgraph,
) -> Result<Var> {
    let arcs = sg.arc_count();
    let projected = tape.matmul(attention, pv.attn_proj())?;
    let p_rows = tape.gather_rows(patient, &vec![0; arcs])?;
    let hs = tape.gather_rows(embeddings, &sg.arc_sources())?;
    let ht = tape.gather_rows(embeddings, &sg.arc_targets())?;
    let diff = tape.abs_diff(hs, ht)?;
    let prod = tape.mul(hs, ht)?;
    let features = tape.concat_cols(&[projected, p_rows, diff, prod])?;
    let [w1, b1, w2, b2] = pv.mlp();
    let z1 = tape.matmul(features, w1)?;
    let z1 = tape.add_row(z1, b1)?;
    let hidden = tape.relu(z1)?;
    let z2 = tape.matmul(hidden, w2)?;
    Ok(tape.add_row(z2, b2)?)
}

/// `cos(p, h_g) − λ·(1 − clamp(mean σ(s_edge(u,g)), 0, 1))` per candidate gene.
pub fn score_genes(
    tape: &mut Tape,
    patient: Var,
    embeddings: Var,
    edge_scores: Var,
    gene_locals: &[usize],
    penalty_weight: f64,
    sg: &SampledSubgraph,
) -> Result<Var> {
    let genes = gene_locals.len();
    let hg = tape.gather_rows(embeddings, gene_locals)?;
    let pg = tape.gather_rows(patient, &vec![0; genes])?;
    let dot = tape.row_dot(pg, hg)?;
    let pn = tape.row_norm(pg)?;
    let gn = tape.row_norm(hg)?;
    let norms = tape.mul(pn, gn)?;
    let denom = tape.clamp(norms, 1e-12, f64::INFINITY)?;
    let cosine = tape.div(dot, denom)?;

    let mut slot = vec![usize::MAX; sg.node_count()];
    for (j, &g) in gene_locals.iter().enumerate() {
        slot[g] = j;
    }
    let mut incoming = Vec::new();
    let mut segment = Vec::new();
    let mut seen = vec![false; genes];
    for (idx, a) in sg.local_arcs.iter().enumerate() {
        let j = slot[a.dst];
        if j != usize::MAX {
            incoming.push(idx);
            segment.push(j);
            seen[j] = true;
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(ModelError::IsolatedGene(sg.global(gene_locals[j])).into());
    }
    let squashed = tape.sigmoid(edge_scores)?;
    let picked = tape.gather_rows(squashed, &incoming)?;
    let support = tape.segment_mean(picked, &segment, genes)?;
    let clamped = tape.clamp(support, 0.0, 1.0)?;
    let bonus = tape.scale(clamped, penalty_weight)?;
    let raised = tape.add(cosine, bonus)?;
    Ok(tape.add_scalar(raised, -penalty_weight)?)
}

/// Full forward pass over one patient subgraph.
pub fn forward(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    sg: &SampledSubgraph,
) -> Result<ForwardVars> {
    let (embeddings, attention) = gat_forward(tape, pv, config, sg)?;
    let patient = patient_representation(tape, embeddings, &sg.phenotype_locals, pv.query())?;
    let edge_scores = score_edges(tape, embeddings, attention, patient, pv, sg)?;
    let gene_scores = score_genes(
        tape,
        patient,
        embeddings,
        edge_scores,
        &sg.gene_locals,
        config.penalty_weight,
        sg,
    )?;
    Ok(ForwardVars {
        embeddings,
        attention,
        patient,
        edge_scores,
        gene_scores,
    })
}

/// Inference-only convenience wrapper around [`forward`].
pub fn score_subgraph(params: &ModelParams, sg: &SampledSubgraph) -> Result<ScoreBundle> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params)?;
    let vars = forward(&mut tape, &pv, params.config(), sg)?;
    Ok(ScoreBundle::from_tape(&tape, &vars))
}
