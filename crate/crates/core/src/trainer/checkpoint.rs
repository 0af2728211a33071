//! Binary checkpoint container.
//!
//! Layout (little-endian): `b"RNCK"`, `u32` version, then entries of
//! `u32 name_len | name (UTF-8) | u32 rank | rank × u64 dims | f64 data`,
//! and finally a CRC-32 of every preceding byte.

use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::EpochReport;
use crate::autodiff::Tensor;
use crate::error::{CheckpointError, Error, GraphError, Result, TrainError};
use crate::model::{ModelConfig, ModelParams};
use crate::objective::LossReport;

pub const MAGIC: &[u8; 4] = b"RNCK";
pub const VERSION: u32 = 1;

const TRACE_COLS: usize = 8;

/// Parameters of the epoch with the best validation MRR.
#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_mrr: f64,
    pub params: ModelParams,
}

/// Everything needed to score with, or resume, a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub trace: Vec<EpochReport>,
    pub best: Option<BestSnapshot>,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        self.params.config()
    }

    /// Best-validation parameters when tracked, final ones otherwise.
    pub fn best_params(&self) -> &ModelParams {
        self.best.as_ref().map_or(&self.params, |b| &b.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries: Vec<(String, Tensor)> = Vec::new();
        entries.push(("meta/model_config".into(), vector(config_to_vec(self.model_config()))));
        entries.push(("meta/epoch".into(), vector(vec![self.epoch as f64])));
        entries.push(("meta/seed".into(), vector(vec![f64::from_bits(self.seed)])));
        entries.push(("meta/adam_step".into(), vector(vec![self.adam.step as f64])));
        for (i, (name, t)) in self.params.named().enumerate() {
            entries.push((format!("param/{name}"), t.clone()));
            entries.push((format!("adam_m/{name}"), self.adam.m[i].clone()));
            entries.push((format!("adam_v/{name}"), self.adam.v[i].clone()));
        }
        let mut trace = Vec::with_capacity(self.trace.len() * TRACE_COLS);
        for r in &self.trace {
            trace.extend([
                r.epoch as f64,
                r.learning_rate,
                r.mean.loss_sub,
                r.mean.loss_gene,
                r.mean.loss_total,
                r.mean.hard_negative_count as f64,
                r.val_mrr.unwrap_or(f64::NAN),
                r.steps as f64,
            ]);
        }
        entries.push((
            "trace/epochs".into(),
            Tensor::new(vec![self.trace.len(), TRACE_COLS], trace).expect("trace shape"),
        ));
        if let Some(best) = &self.best {
            entries.push(("best/meta".into(), vector(vec![best.epoch as f64, best.val_mrr])));
            for (name, t) in best.params.named() {
                entries.push((format!("best/{name}"), t.clone()));
            }
        }
        encode_entries(&entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = decode_entries(bytes)?;
        let find = |name: &str| -> Result<&Tensor> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()).into())
        };
        let config = config_from_vec(find("meta/model_config")?.data())?;
        let scalar = |name: &str| -> Result<f64> {
            let t = find(name)?;
            t.data().first().copied().ok_or_else(|| bad(name, "empty"))
        };
        let epoch = scalar("meta/epoch")? as usize;
        let seed = scalar("meta/seed")?.to_bits();
        let step = scalar("meta/adam_step")? as u64;

        let collect = |prefix: &str| -> Vec<(String, Tensor)> {
            entries
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
                .filter(|(n, _)| n != "meta")
                .collect()
        };
        let params = ModelParams::from_named(&config, collect("param/"))?;
        let moments = |prefix: &str| -> Result<Vec<Tensor>> {
            params
                .named()
                .map(|(name, p)| {
                    let key = format!("{prefix}{name}");
                    let t = find(&key)?;
                    if t.shape() != p.shape() {
                        return Err(bad(&key, "shape differs from parameter"));
                    }
                    Ok(t.clone())
                })
                .collect()
        };
        let adam = AdamState {
            m: moments("adam_m/")?,
            v: moments("adam_v/")?,
            step,
        };
        let trace_t = find("trace/epochs")?;
        if trace_t.rank() != 2 || trace_t.shape()[1] != TRACE_COLS {
            return Err(bad("trace/epochs", "expected 8 columns"));
        }
        let trace = trace_t
            .data()
            .chunks(TRACE_COLS)
            .map(|c| EpochReport {
                epoch: c[0] as usize,
                learning_rate: c[1],
                mean: LossReport {
                    loss_sub: c[2],
                    loss_gene: c[3],
                    loss_total: c[4],
                    hard_negative_count: c[5] as usize,
                },
                val_mrr: (!c[6].is_nan()).then_some(c[6]),
                steps: c[7] as usize,
            })
            .collect();
        let best = match find("best/meta") {
            Ok(meta) if meta.len() == 2 => Some(BestSnapshot {
                epoch: meta.data()[0] as usize,
                val_mrr: meta.data()[1],
                params: ModelParams::from_named(&config, collect("best/"))?,
            }),
            Ok(_) => return Err(bad("best/meta", "expected 2 values")),
            Err(_) => None,
        };
        Ok(Self {
            params,
            adam,
            epoch,
            seed,
            trace,
            best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| {
            Error::Graph(GraphError::Unwritable {
                path: path.display().to_string(),
                source,
            })
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Fails unless `config` matches the stored model configuration.
    pub fn ensure_config(&self, config: &ModelConfig) -> Result<()> {
        if self.model_config() != config {
            return Err(TrainError::ResumeMismatch(format!(
                "model configuration {:?} differs from checkpoint {:?}",
                config,
                self.model_config()
            ))
            .into());
        }
        Ok(())
    }
}

fn bad(name: &str, reason: &str) -> Error {
    CheckpointError::BadEntry {
        name: name.to_string(),
        reason: reason.to_string(),
    }
    .into()
}

fn vector(values: Vec<f64>) -> Tensor {
    Tensor::new(vec![values.len()], values).expect("vector shape")
}

fn config_to_vec(c: &ModelConfig) -> Vec<f64> {
    vec![
        c.embed_dim as f64,
        c.hidden_dim as f64,
        c.out_dim as f64,
        c.heads as f64,
        c.layers as f64,
        c.attn_proj_dim as f64,
        c.edge_hidden as f64,
        c.penalty_weight,
        c.leaky_slope,
    ]
}

fn config_from_vec(v: &[f64]) -> Result<ModelConfig> {
    if v.len() != 9 {
        return Err(bad("meta/model_config", "expected 9 values"));
    }
    Ok(ModelConfig {
        embed_dim: v[0] as usize,
        hidden_dim: v[1] as usize,
        out_dim: v[2] as usize,
        heads: v[3] as usize,
        layers: v[4] as usize,
        attn_proj_dim: v[5] as usize,
        edge_hidden: v[6] as usize,
        penalty_weight: v[7],
        leaky_slope: v[8],
    })
}

pub fn encode_entries(entries: &[(String, Tensor)]) -> Vec<u8> {
    let payload: usize = entries.iter().map(|(n, t)| 8 + n.len() + 8 * (t.rank() + t.len())).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated(self.bytes.len()).into());
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated(bytes.len()).into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        }
        .into());
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed }.into());
    }
    let mut r = Reader {
        bytes: &bytes[..body_end],
        pos: 8,
    };
    let mut entries = Vec::new();
    while r.pos < body_end {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| bad("?", "name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(&name, "dimension overflow"))?;
        let raw = r.take(count.checked_mul(8).ok_or_else(|| bad(&name, "dimension overflow"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(&name, &e.to_string()))?;
        entries.push((name, t));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Vec<(String, Tensor)> {
        vec![
            ("a".into(), Tensor::matrix(2, 3, (0..6).map(f64::from).collect()).unwrap()),
            ("b/c".into(), vector(vec![f64::from_bits(u64::MAX - 3), -0.0])),
            ("empty".into(), Tensor::new(vec![0, 4], vec![]).unwrap()),
        ]
    }

    #[test]
    fn entries_round_trip_bitwise() {
        let bytes = encode_entries(&table());
        let back = decode_entries(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for ((n1, t1), (n2, t2)) in table().iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = encode_entries(&table());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            decode_entries(&bytes),
            Err(Error::Checkpoint(CheckpointError::Checksum { .. }))
        ));
    }

    #[test]
    fn detects_version_and_magic() {
        let mut bytes = encode_entries(&table());
        bytes[4] = 9;
        assert!(matches!(
            decode_entries(&bytes),
            Err(Error::Checkpoint(CheckpointError::Version { found: 9, .. }))
        ));
        assert!(matches!(
            decode_entries(b"NOPE...."),
            Err(Error::Checkpoint(CheckpointError::BadMagic))
        ));
    }

    #[test]
    fn detects_truncation() {
        let bytes = encode_entries(&table());
        // Re-seal a truncated body so only the length check can catch it.
        let mut cut = bytes[..bytes.len() - 20].to_vec();
        let crc = crc32fast::hash(&cut);
        cut.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_entries(&cut),
            Err(Error::Checkpoint(CheckpointError::Truncated(_)))
        ));
    }
}
