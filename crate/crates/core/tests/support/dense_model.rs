//! The attention model evaluated with dense matrices and explicit loops,
//! straight from the formulas.
#![allow(dead_code)]

use phenograph_core::sampler::SampledSubgraph;
use phenograph_core::{ModelParams, Tensor};

pub type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> Mat {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub struct DenseOutputs {
    pub embeddings: Mat,
    /// Per real arc, `layers·heads` coefficients (layer-major).
    pub attention: Mat,
    pub patient: Vec<f64>,
    pub edge_scores: Vec<f64>,
    pub gene_scores: Vec<f64>,
}

pub fn dense_forward(params: &ModelParams, sg: &SampledSubgraph) -> DenseOutputs {
    let cfg = params.config().clone();
    let n = sg.node_count();
    let heads = cfg.heads;
    let hd = cfg.hidden_dim / heads;
    let get = |name: &str| mat(params.get(name).unwrap());

    // adjacency[i][j]: arc j → i exists (self-loops added).
    let mut adjacency = vec![vec![false; n]; n];
    for a in &sg.local_arcs {
        adjacency[a.dst][a.src] = true;
    }
    for i in 0..n {
        adjacency[i][i] = true;
    }

    let emb = get("node_embeddings");
    let mut h: Mat = sg.local_nodes.iter().map(|v| emb[v.0].clone()).collect();
    let mut attention = vec![Vec::new(); sg.arc_count()];
    for l in 0..cfg.layers {
        let xs = matmul(&h, &get(&format!("gat{l}.w_src")));
        let xd = matmul(&h, &get(&format!("gat{l}.w_dst")));
        let a = get(&format!("gat{l}.attn"));
        // alpha[head][i][j]
        let mut alpha = vec![vec![vec![0.0; n]; n]; heads];
        let mut concat = vec![vec![0.0; cfg.hidden_dim]; n];
        for hh in 0..heads {
            for i in 0..n {
                let nbrs: Vec<usize> = (0..n).filter(|&j| adjacency[i][j]).collect();
                let logits: Vec<f64> = nbrs
                    .iter()
                    .map(|&j| {
                        (0..hd)
                            .map(|c| a[hh][c] * leaky(xs[j][hh * hd + c] + xd[i][hh * hd + c], cfg.leaky_slope))
                            .sum()
                    })
                    .collect();
                let w = softmax(&logits);
                for (t, &j) in nbrs.iter().enumerate() {
                    alpha[hh][i][j] = w[t];
                }
                for c in 0..hd {
                    let mut acc = 0.0;
                    for (t, &j) in nbrs.iter().enumerate() {
                        acc += w[t] * xs[j][hh * hd + c];
                    }
                    concat[i][hh * hd + c] = elu(acc);
                }
            }
        }
        for (k, arc) in sg.local_arcs.iter().enumerate() {
            for hh in 0..heads {
                attention[k].push(alpha[hh][arc.dst][arc.src]);
            }
        }
        h = matmul(&concat, &get(&format!("gat{l}.w_proj")));
    }

    let d = cfg.out_dim;
    let q = get("query");
    let logits: Vec<f64> = sg
        .phenotype_locals
        .iter()
        .map(|&p| (0..d).map(|c| h[p][c] * q[c][0]).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let w = softmax(&logits);
    let mut patient = vec![0.0; d];
    for (t, &p) in sg.phenotype_locals.iter().enumerate() {
        for c in 0..d {
            patient[c] += w[t] * h[p][c];
        }
    }

    let proj = get("attn_proj");
    let (w1, b1, w2, b2) = (get("edge_mlp.w1"), get("edge_mlp.b1"), get("edge_mlp.w2"), get("edge_mlp.b2"));
    let edge_scores: Vec<f64> = sg
        .local_arcs
        .iter()
        .enumerate()
        .map(|(k, arc)| {
            let mut f = Vec::new();
            for c in 0..cfg.attn_proj_dim {
                f.push((0..attention[k].len()).map(|r| attention[k][r] * proj[r][c]).sum());
            }
            f.extend(&patient);
            let (hs, ht) = (&h[arc.src], &h[arc.dst]);
            f.extend((0..d).map(|c| (hs[c] - ht[c]).abs()));
            f.extend((0..d).map(|c| hs[c] * ht[c]));
            let hidden: Vec<f64> = (0..cfg.edge_hidden)
                .map(|j| (b1[0][j] + (0..f.len()).map(|i| f[i] * w1[i][j]).sum::<f64>()).max(0.0))
                .collect();
            b2[0][0] + (0..cfg.edge_hidden).map(|j| hidden[j] * w2[j][0]).sum::<f64>()
        })
        .collect();

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let gene_scores = sg
        .gene_locals
        .iter()
        .map(|&g| {
            let dot: f64 = (0..d).map(|c| patient[c] * h[g][c]).sum();
            let cos = dot / (norm(&patient) * norm(&h[g])).max(1e-12);
            let incoming: Vec<f64> = sg
                .local_arcs
                .iter()
                .enumerate()
                .filter(|(_, a)| a.dst == g)
                .map(|(k, _)| sigmoid(edge_scores[k]))
                .collect();
            let support = (incoming.iter().sum::<f64>() / incoming.len() as f64).clamp(0.0, 1.0);
            cos - cfg.penalty_weight * (1.0 - support)
        })
        .collect();

    DenseOutputs {
        embeddings: h,
        attention,
        patient,
        edge_scores,
        gene_scores,
    }
}
