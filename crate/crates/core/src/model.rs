//! The full network: trajectory descriptors followed by the scorer, plus
//! checkpoint persistence.
//!
//! Checkpoint layout: `b"VICK"`, `u32` version (1), `u64` header length,
//! the JSON header (config, seed, epoch, array table), then every array as
//! little-endian `f64` in the order of the table, which is sorted by name.
//! Batch-norm running statistics are stored as `<name>.mean` / `<name>.var`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VinetError};
use crate::msm::{Scorer, ScorerConfig};
use crate::seed::child_rng;
use crate::tensor::{BatchNormMode, Graph, ParamStore, Tensor, Var};
use crate::vtdm::{Vtdm, VtdmConfig};

const CHECKPOINT_MAGIC: &[u8; 4] = b"VICK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vtdm: VtdmConfig,
    pub scorer: ScorerConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.scorer.validate()?;
        if self.scorer.input_channels != self.vtdm.joints {
            return Err(VinetError::Config(format!(
                "scorer expects {} channels but descriptors have {} joints",
                self.scorer.input_channels, self.vtdm.joints
            )));
        }
        Ok(())
    }

    pub fn max_score(&self) -> usize {
        self.scorer.num_classes - 1
    }
}

#[derive(Clone, Debug)]
pub struct ViNet {
    pub config: ModelConfig,
    pub seed: u64,
    pub store: ParamStore,
    pub vtdm: Vtdm,
    pub scorer: Scorer,
}

impl ViNet {
    /// Deterministic construction: the same config and seed give identical
    /// parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let vtdm = Vtdm::new(&mut store, config.vtdm.clone(), &mut child_rng(seed, &[1]))?;
        let scorer = Scorer::new(&mut store, config.scorer.clone(), &mut child_rng(seed, &[2]))?;
        Ok(ViNet { config, seed, store, vtdm, scorer })
    }

    /// `clips: [B, J, T, H, W]` -> logits `[B, S+1]`.
    pub fn forward(&mut self, g: &mut Graph, clips: Tensor, mode: BatchNormMode) -> Result<Var> {
        let shape = clips.shape().to_vec();
        let v = &self.config.vtdm;
        if shape.len() != 5 || shape[1..] != [v.joints, v.clip_len, v.height, v.width] {
            return Err(VinetError::contract(
                "forward",
                format!("expected [B, {}, {}, {}, {}], got {shape:?}", v.joints, v.clip_len, v.height, v.width),
            ));
        }
        let x = g.input(clips.reshape(&[shape[0] * v.joints, v.clip_len, v.height, v.width])?);
        let descriptors = self.vtdm.forward(g, &mut self.store, x, mode)?;
        self.scorer.forward(g, &mut self.store, descriptors.stacked, mode)
    }

    /// Logits of each clip, without recording gradients.
    pub fn predict(&mut self, clips: Tensor) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::no_grad();
        let logits = self.forward(&mut g, clips, BatchNormMode::Eval)?;
        let k = self.config.scorer.num_classes;
        Ok(g.value(logits).data().chunks(k).map(<[f64]>::to_vec).collect())
    }

    /// Every parameter and running statistic, sorted by name.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut arrays: Vec<_> =
            self.store.iter().map(|p| (p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec())).collect();
        for (name, stats) in self.store.named_stats() {
            arrays.push((format!("{name}.mean"), vec![stats.channels()], stats.mean.clone()));
            arrays.push((format!("{name}.var"), vec![stats.channels()], stats.var.clone()));
        }
        arrays.sort_by(|a, b| a.0.cmp(&b.0));
        arrays
    }

    pub fn save(&self, path: &Path, epoch: usize) -> Result<()> {
        let arrays = self.named_arrays();
        let header = CheckpointHeader {
            config: self.config.clone(),
            seed: self.seed,
            epoch,
            arrays: arrays.iter().map(|(n, s, _)| ArrayEntry { name: n.clone(), shape: s.clone() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let file = File::create(path).map_err(|e| VinetError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| VinetError::io(path, e));
        write(CHECKPOINT_MAGIC)?;
        write(&CHECKPOINT_VERSION.to_le_bytes())?;
        write(&(json.len() as u64).to_le_bytes())?;
        write(&json)?;
        for (_, _, data) in &arrays {
            for v in data {
                write(&v.to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| VinetError::io(path, e))
    }

    /// Rebuilds the model from its stored config and seed, then overwrites
    /// every array. Returns the model and the stored epoch.
    pub fn load(path: &Path) -> Result<(Self, usize)> {
        let file = File::open(path).map_err(|e| VinetError::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut offset = 0u64;
        let mut read = |buf: &mut [u8], what: &str, offset: &mut u64| {
            r.read_exact(buf).map_err(|_| VinetError::Format { offset: *offset, msg: format!("truncated {what}") })?;
            *offset += buf.len() as u64;
            Ok::<_, VinetError>(())
        };
        let mut magic = [0u8; 4];
        read(&mut magic, "magic", &mut offset)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(VinetError::Format { offset: 0, msg: format!("bad checkpoint magic {magic:?}") });
        }
        let mut b4 = [0u8; 4];
        read(&mut b4, "version", &mut offset)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(VinetError::Format { offset: 4, msg: format!("unsupported checkpoint version {version}") });
        }
        let mut b8 = [0u8; 8];
        read(&mut b8, "header length", &mut offset)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        read(&mut json, "header", &mut offset)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)
            .map_err(|e| VinetError::Format { offset: 16, msg: format!("bad header: {e}") })?;

        let mut model = ViNet::build(header.config, header.seed)?;
        let expected: Vec<(String, Vec<usize>)> = model.named_arrays().into_iter().map(|(n, s, _)| (n, s)).collect();
        let stored: Vec<(String, Vec<usize>)> =
            header.arrays.iter().map(|a| (a.name.clone(), a.shape.clone())).collect();
        if expected != stored {
            return Err(VinetError::Format { offset: 16, msg: "array table does not match the model config".into() });
        }
        for entry in &header.arrays {
            let n: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            read(&mut bytes, &entry.name, &mut offset)?;
            let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            model.set_array(&entry.name, values)?;
        }
        Ok((model, header.epoch))
    }

    fn set_array(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if let Some(id) = self.store.id(name) {
            let shape = self.store.get(id).value.shape().to_vec();
            self.store.get_mut(id).value = Tensor::new(shape, values)?;
            return Ok(());
        }
        for (stat_name, stats) in self.store.named_stats_mut() {
            if name == format!("{stat_name}.mean") {
                stats.mean = values;
                return Ok(());
            }
            if name == format!("{stat_name}.var") {
                stats.var = values;
                return Ok(());
            }
        }
        Err(VinetError::Format { offset: 0, msg: format!("unknown array {name}") })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    seed: u64,
    epoch: usize,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}
