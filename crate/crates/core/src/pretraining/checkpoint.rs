//! Versioned binary checkpoint: magic, a JSON header, then little-endian `f64`
//! tensor data (parameters, then optimizer first and second moments, in
//! header order).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::finetune::HeadSpec;
use crate::model::Model;
use crate::params::ParamStore;
use crate::vocab::Vocab;

use super::optim::AdamW;
use super::trainer::Trainer;

pub const CHECKPOINT_FORMAT: &str = "mgdoc-ckpt/1";
const MAGIC: &[u8; 8] = b"MGDOCKPT";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    model_config: ModelConfig,
    train_config: TrainConfig,
    step: usize,
    total_steps: usize,
    n_docs: usize,
    vocab: Vocab,
    tensors: Vec<TensorMeta>,
    adam_t: u64,
    /// Tensors that carry optimizer moments (a subset of `tensors`).
    moments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head: Option<HeadSpec>,
}

/// Everything needed to resume or reuse a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub step: usize,
    pub total_steps: usize,
    pub n_docs: usize,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub optimizer: AdamW,
    /// Task head whose tensors are among `params`, after fine-tuning.
    pub head: Option<HeadSpec>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            model_config: t.model.config.clone(),
            train_config: t.cfg.clone(),
            step: t.step,
            total_steps: t.total_steps,
            n_docs: t.n_docs,
            vocab: t.model.vocab.clone(),
            params: t.model.params.clone(),
            optimizer: t.opt.clone(),
            head: None,
        }
    }

    /// Weights of a model outside pre-training (after fine-tuning); the
    /// optimizer state is empty.
    pub fn from_model(model: &Model, train_config: TrainConfig, head: Option<HeadSpec>) -> Self {
        let optimizer = AdamW::new(
            train_config.beta1,
            train_config.beta2,
            train_config.adam_eps,
            train_config.weight_decay,
        );
        Self {
            model_config: model.config.clone(),
            train_config,
            step: 0,
            total_steps: 0,
            n_docs: 0,
            vocab: model.vocab.clone(),
            params: model.params.clone(),
            optimizer,
            head,
        }
    }

    /// Rebuilds the trainer at the saved step.
    pub fn into_trainer(self) -> Result<Trainer> {
        let model = self.into_model_keep_opt()?;
        let (model, opt, cfg, step, total, n_docs) = model;
        let mut t = Trainer::new(model, cfg, n_docs)?;
        t.opt = opt;
        t.step = step;
        t.total_steps = total;
        Ok(t)
    }

    #[allow(clippy::type_complexity)]
    fn into_model_keep_opt(self) -> Result<(Model, AdamW, TrainConfig, usize, usize, usize)> {
        let mut model = Model::new(self.model_config.clone(), self.vocab.clone(), 0)?;
        apply_params(&self.params, &mut model.params, true)?;
        Ok((
            model,
            self.optimizer,
            self.train_config,
            self.step,
            self.total_steps,
            self.n_docs,
        ))
    }

    /// A model built from the saved configuration and weights.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.model_config.clone(), self.vocab.clone(), 0)?;
        apply_params(&self.params, &mut model.params, true)?;
        Ok(model)
    }

    /// Copies the saved weights into an existing model, failing on the first
    /// tensor whose shape disagrees. Extra tensors on either side (task heads)
    /// are carried over.
    pub fn restore_into(&self, model: &mut Model) -> Result<()> {
        apply_params(&self.params, &mut model.params, false)?;
        model.vocab = self.vocab.clone();
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .params
            .iter()
            .map(|(n, a)| TensorMeta {
                name: n.clone(),
                rows: a.nrows(),
                cols: a.ncols(),
            })
            .collect();
        let moments: Vec<String> = self
            .optimizer
            .m
            .keys()
            .filter(|k| self.params.contains(k))
            .cloned()
            .collect();
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            step: self.step,
            total_steps: self.total_steps,
            n_docs: self.n_docs,
            vocab: self.vocab.clone(),
            tensors,
            adam_t: self.optimizer.t,
            moments: moments.clone(),
            head: self.head.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_u64::<LittleEndian>(json.len() as u64).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for (_, a) in self.params.iter() {
            write_tensor(&mut w, a).map_err(io)?;
        }
        for name in &moments {
            write_tensor(&mut w, &self.optimizer.m[name]).map_err(io)?;
            write_tensor(&mut w, &self.optimizer.v[name]).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
        }
        let len = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(io)?;
        let raw: serde_json::Value = serde_json::from_slice(&json)?;
        let found = raw.get("format").and_then(|v| v.as_str()).unwrap_or("<missing>");
        if found != CHECKPOINT_FORMAT {
            return Err(Error::Version {
                expected: CHECKPOINT_FORMAT.into(),
                found: found.into(),
            });
        }
        let mut header: Header = serde_json::from_value(raw)?;
        header.vocab.rebuild_index();
        let mut params = ParamStore::new();
        for t in &header.tensors {
            params.insert(t.name.clone(), read_tensor(&mut r, t.rows, t.cols).map_err(io)?);
        }
        let mut optimizer = AdamW::new(
            header.train_config.beta1,
            header.train_config.beta2,
            header.train_config.adam_eps,
            header.train_config.weight_decay,
        );
        optimizer.t = header.adam_t;
        for name in &header.moments {
            let shape = params
                .get(name)
                .map(|a| a.dim())
                .ok_or_else(|| Error::Checkpoint(format!("moment for unknown tensor `{name}`")))?;
            optimizer
                .m
                .insert(name.clone(), read_tensor(&mut r, shape.0, shape.1).map_err(io)?);
            optimizer
                .v
                .insert(name.clone(), read_tensor(&mut r, shape.0, shape.1).map_err(io)?);
        }
        Ok(Self {
            model_config: header.model_config,
            train_config: header.train_config,
            step: header.step,
            total_steps: header.total_steps,
            n_docs: header.n_docs,
            vocab: header.vocab,
            params,
            optimizer,
            head: header.head,
        })
    }
}

/// Copies `src` into `dst`. With `strict`, every tensor of `dst` must exist in
/// `src`.
fn apply_params(src: &ParamStore, dst: &mut ParamStore, strict: bool) -> Result<()> {
    for (name, value) in src.iter() {
        if let Some(existing) = dst.get(name) {
            if existing.dim() != value.dim() {
                return Err(Error::Shape {
                    name: name.clone(),
                    expected: existing.dim(),
                    found: value.dim(),
                });
            }
        }
    }
    if strict {
        if let Some(missing) = dst.names().find(|n| !src.contains(n)) {
            return Err(Error::Checkpoint(format!("tensor `{missing}` missing from checkpoint")));
        }
    }
    for (name, value) in src.iter() {
        dst.insert(name.clone(), value.clone());
    }
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, a: &Array2<f64>) -> std::io::Result<()> {
    for v in a.iter() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, rows: usize, cols: usize) -> std::io::Result<Array2<f64>> {
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("tensor shape"))
}
