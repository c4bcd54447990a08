//! Classification head on max-pooled processor features. The base model is
//! only read, never updated.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use chrono::NaiveDate;
use ivos_core::Task;
use ivos_metrics::{average_precision, ScoredInstance};
use ivos_tensor::{he_normal, Adam, GradBuffer, Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::model::TrainedModel;
use crate::train::warmup_cosine;
use crate::ModelError;

pub const HIDDEN: [usize; 2] = [256, 128];
pub const HEAD_LEARNING_RATES: [f64; 4] = [5e-5, 1e-4, 5e-4, 1e-3];
pub const HEAD_DROPOUTS: [f64; 3] = [0.0, 0.1, 0.5];
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epoch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup_epochs: usize,
}

impl HeadConfig {
    /// Schedule settings shared with the base model.
    pub fn from_base(base: &ModelConfig, learning_rate: f64, dropout: f64) -> Self {
        HeadConfig {
            learning_rate,
            dropout,
            batch_size: base.batch_size,
            epoch_size: base.epoch_size,
            max_epochs: base.max_epochs,
            patience: base.patience,
            warmup_epochs: base.warmup_epochs,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("head learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epoch_size == 0 || self.max_epochs == 0 {
            return Err(ModelError::Config("head batch, epoch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate by dropout grid, learning rate varying fastest.
pub fn head_search_space(base: &ModelConfig) -> Vec<HeadConfig> {
    HEAD_DROPOUTS
        .iter()
        .flat_map(|&d| HEAD_LEARNING_RATES.iter().map(move |&lr| HeadConfig::from_base(base, lr, d)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadEpoch {
    pub epoch: usize,
    pub train_bce: f64,
    pub val_ap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadLog {
    pub epochs: Vec<HeadEpoch>,
    pub best_epoch: usize,
    pub best_val_ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

/// MLP `D -> 256 -> 128 -> 1` with ReLU and dropout after each hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead {
    pub config: HeadConfig,
    pub input_dim: usize,
    pub params: ParamStore,
    pub log: HeadLog,
    layers: [Dense; 3],
}

/// Pooled features of one task with its label and ranking key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledEmbedding {
    pub encounter_id: String,
    pub day: NaiveDate,
    pub embedding: Vec<f64>,
    pub label: bool,
}

#[derive(Serialize, Deserialize)]
struct HeadSidecar {
    format_version: u32,
    config: HeadConfig,
    input_dim: usize,
    log: HeadLog,
}

pub const HEAD_PARAMS_FILE: &str = "head_params.json";
pub const HEAD_SIDECAR_FILE: &str = "head.json";

fn bind(store: &ParamStore) -> Result<[Dense; 3], ModelError> {
    let get = |n: String| store.id(&n).ok_or_else(|| ModelError::Config(format!("head checkpoint lacks {n}")));
    let layer = |i: usize| -> Result<Dense, ModelError> {
        Ok(Dense {
            w: get(format!("cls{i}.w"))?,
            b: get(format!("cls{i}.b"))?,
        })
    };
    Ok([layer(0)?, layer(1)?, layer(2)?])
}

impl ClassificationHead {
    pub fn init(input_dim: usize, config: HeadConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dims = [input_dim, HIDDEN[0], HIDDEN[1], 1];
        for i in 0..3 {
            store.add(format!("cls{i}.w"), he_normal(&[dims[i], dims[i + 1]], dims[i], &mut rng))?;
            store.add(format!("cls{i}.b"), Tensor::zeros(&[dims[i + 1]]))?;
        }
        Ok(ClassificationHead {
            layers: bind(&store)?,
            config,
            input_dim,
            params: store,
            log: HeadLog::default(),
        })
    }

    /// Logits `[B]` for a `[B, D]` batch. `dropout_rng` enables dropout.
    fn logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(store, layer.w);
            let b = g.param(store, layer.b);
            let z = g.matmul(h, w)?;
            h = g.add_row_bias(z, b)?;
            if i < 2 {
                h = g.relu(h);
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    h = dropout(g, h, self.config.dropout, rng)?;
                }
            }
        }
        let rows = g.shape(h)[0];
        Ok(g.reshape(h, vec![rows])?)
    }

    fn batch_input(&self, g: &mut Graph, rows: &[&[f64]]) -> Result<Var, ModelError> {
        let mut data = Vec::with_capacity(rows.len() * self.input_dim);
        for r in rows {
            if r.len() != self.input_dim {
                return Err(ModelError::Config(format!(
                    "embedding has {} features, head expects {}",
                    r.len(),
                    self.input_dim
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(g.constant(Tensor::new(vec![rows.len(), self.input_dim], data)?))
    }

    /// Probabilities for pooled embeddings, inference mode. Saturated
    /// sigmoids are kept inside the open unit interval.
    pub fn predict_embeddings(&self, rows: &[&[f64]]) -> Result<Vec<f64>, ModelError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = self.batch_input(&mut g, rows)?;
        let z = self.logits(&mut g, &self.params, x, None)?;
        let p = g.sigmoid(z);
        Ok(g.value(p).data().iter().map(|p| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)).collect())
    }

    /// Switch-readiness probability for one task through the frozen base.
    pub fn predict_task(&self, base: &TrainedModel, task: &Task) -> Result<f64, ModelError> {
        let (_, emb) = base.predict_with_embedding(&task.context, task.tau_hours)?;
        Ok(self.predict_embeddings(&[&emb])?[0])
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        self.params
            .save_json(BufWriter::new(File::create(dir.join(HEAD_PARAMS_FILE))?))?;
        let sidecar = HeadSidecar {
            format_version: 1,
            config: self.config.clone(),
            input_dim: self.input_dim,
            log: self.log.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(HEAD_SIDECAR_FILE))?), &sidecar)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let sidecar: HeadSidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(HEAD_SIDECAR_FILE))?))?;
        if sidecar.format_version != 1 {
            return Err(ModelError::Config(format!(
                "unsupported head sidecar version {}",
                sidecar.format_version
            )));
        }
        let params = ParamStore::load_json(BufReader::new(File::open(dir.join(HEAD_PARAMS_FILE))?))?;
        Ok(ClassificationHead {
            layers: bind(&params)?,
            config: sidecar.config,
            input_dim: sidecar.input_dim,
            params,
            log: sidecar.log,
        })
    }
}

/// Inverted dropout: surviving units are scaled by `1 / (1 - rate)`.
fn dropout(g: &mut Graph, h: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var, ModelError> {
    if rate == 0.0 {
        return Ok(h);
    }
    let shape = g.shape(h).to_vec();
    let keep = 1.0 / (1.0 - rate);
    let n = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = g.constant(Tensor::new(shape, mask)?);
    Ok(g.mul(h, m)?)
}

/// Pooled processor features for every labelled task with usable context.
pub fn embed_tasks(base: &TrainedModel, tasks: &[Task]) -> Result<Vec<LabelledEmbedding>, ModelError> {
    let out: Vec<Option<LabelledEmbedding>> = tasks
        .par_iter()
        .map(|t| {
            let Some(label) = t.label else {
                return Ok(None);
            };
            match base.predict_with_embedding(&t.context, t.tau_hours) {
                Ok((_, embedding)) => Ok(Some(LabelledEmbedding {
                    encounter_id: t.encounter_id.clone(),
                    day: t.day_key,
                    embedding,
                    label,
                })),
                Err(ModelError::EmptyContext) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(out.into_iter().flatten().collect())
}

fn both_classes(xs: &[LabelledEmbedding]) -> bool {
    xs.iter().any(|x| x.label) && xs.iter().any(|x| !x.label)
}

fn validation_ap(head: &ClassificationHead, store: &ParamStore, val: &[LabelledEmbedding]) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let rows: Vec<&[f64]> = val.iter().map(|v| v.embedding.as_slice()).collect();
    let x = head.batch_input(&mut g, &rows)?;
    let z = head.logits(&mut g, store, x, None)?;
    let p = g.sigmoid(z);
    let scored: Vec<ScoredInstance> = val
        .iter()
        .zip(g.value(p).data())
        .map(|(v, &p)| ScoredInstance::new(v.encounter_id.clone(), v.day, p, v.label))
        .collect();
    average_precision(&scored).map_err(|_| ModelError::SingleClass)
}

/// Trains one head by minibatch BCE with Adam on precomputed embeddings,
/// keeping the parameters with the best validation average precision.
pub fn train_head_on_embeddings(
    train: &[LabelledEmbedding],
    val: &[LabelledEmbedding],
    cfg: &HeadConfig,
    seed: u64,
) -> Result<ClassificationHead, ModelError> {
    if !both_classes(train) || !val.iter().any(|v| v.label) {
        return Err(ModelError::SingleClass);
    }
    let dim = train[0].embedding.len();
    let mut head = ClassificationHead::init(dim, cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4ead_5eed);
    let mut store = head.params.clone();
    let mut adam = Adam::new(&store);
    let mut best = store.clone();
    let mut log = HeadLog {
        best_val_ap: f64::NEG_INFINITY,
        ..HeadLog::default()
    };
    let steps = cfg.epoch_size.div_ceil(cfg.batch_size);
    for epoch in 0..cfg.max_epochs {
        let mut epoch_loss = 0.0;
        for step in 0..steps {
            let size = cfg.batch_size.min(cfg.epoch_size - step * cfg.batch_size);
            let picks: Vec<&LabelledEmbedding> = (0..size).map(|_| &train[rng.random_range(0..train.len())]).collect();
            let mut g = Graph::new();
            let rows: Vec<&[f64]> = picks.iter().map(|e| e.embedding.as_slice()).collect();
            let x = head.batch_input(&mut g, &rows)?;
            let z = head.logits(&mut g, &store, x, Some(&mut rng))?;
            let y = g.constant(Tensor::vector(picks.iter().map(|e| f64::from(u8::from(e.label))).collect()));
            // BCE with logits: softplus(z) - y z.
            let sp = g.softplus(z);
            let yz = g.mul(y, z)?;
            let terms = g.sub(sp, yz)?;
            let loss = g.mean(terms);
            let value = g.value(loss).item();
            let mut grads = GradBuffer::new(&store);
            grads.accumulate(&g.backward(loss)?);
            if !value.is_finite() || !grads.all_finite() {
                return Err(ModelError::Diverged { epoch, step, loss: value });
            }
            let lr = warmup_cosine(
                cfg.learning_rate,
                cfg.warmup_epochs,
                cfg.max_epochs,
                epoch as f64 + (step + 1) as f64 / steps as f64,
            );
            adam.step(&mut store, &grads, lr);
            epoch_loss += value * size as f64;
        }
        let val_ap = validation_ap(&head, &store, val)?;
        log.epochs.push(HeadEpoch {
            epoch,
            train_bce: epoch_loss / cfg.epoch_size as f64,
            val_ap,
        });
        if val_ap > log.best_val_ap {
            log.best_val_ap = val_ap;
            log.best_epoch = epoch;
            best = store.clone();
        } else if epoch - log.best_epoch >= cfg.patience {
            break;
        }
    }
    head.params = best;
    head.log = log;
    Ok(head)
}

/// Embeds the tasks once through the frozen base, then trains every head
/// configuration and keeps the best validation average precision; the
/// earliest configuration wins ties.
pub fn train_cls_head(
    base: &TrainedModel,
    tasks: &[Task],
    val_tasks: &[Task],
    space: &[HeadConfig],
    seed: u64,
) -> Result<ClassificationHead, ModelError> {
    if space.is_empty() {
        return Err(ModelError::Config("empty head search space".into()));
    }
    let train = embed_tasks(base, tasks)?;
    let val = embed_tasks(base, val_tasks)?;
    if !both_classes(&train) {
        return Err(ModelError::SingleClass);
    }
    let mut best: Option<ClassificationHead> = None;
    for cfg in space {
        let head = train_head_on_embeddings(&train, &val, cfg, seed)?;
        log::info!(
            "head: lr {:.0e} dropout {} -> val AP {:.4} (epoch {})",
            cfg.learning_rate,
            cfg.dropout,
            head.log.best_val_ap,
            head.log.best_epoch
        );
        if best.as_ref().is_none_or(|b| head.log.best_val_ap > b.log.best_val_ap) {
            best = Some(head);
        }
    }
    Ok(best.expect("non-empty space"))
}
