//! UNet processor, Gaussian decoder and the trained-model container.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ivos_core::{Measurement, PerVital, PredictiveDistribution, Task, VitalKind};
use ivos_tensor::{he_normal, Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, ModelConfig};
use crate::encoder::{encode_on, Standardizer};
use crate::ModelError;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

/// Parameter handles of the UNet and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    stem: Layer,
    down: Vec<Layer>,
    bottleneck: Layer,
    up: Vec<Layer>,
    head: Layer,
}

fn conv_layer(
    store: &mut ParamStore,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Layer, ModelError> {
    let w = store.add(format!("{name}.w"), he_normal(&[c_out, c_in, k], c_in * k, rng))?;
    let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]))?;
    Ok(Layer { w, b })
}

fn find_layer(store: &ParamStore, name: &str) -> Result<Layer, ModelError> {
    let get = |suffix: &str| {
        store
            .id(&format!("{name}.{suffix}"))
            .ok_or_else(|| ModelError::Config(format!("checkpoint lacks parameter {name}.{suffix}")))
    };
    Ok(Layer {
        w: get("w")?,
        b: get("b")?,
    })
}

impl Network {
    /// Fresh He-initialised weights; the decoder projection starts at zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<(Network, ParamStore), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, k, c2) = (cfg.channels, cfg.kernel_size, 2 * VitalKind::COUNT);
        let stem = conv_layer(&mut store, "stem", d, c2, k, &mut rng)?;
        let down = (0..cfg.n_unet_blocks)
            .map(|i| conv_layer(&mut store, &format!("down{i}"), d, d, k, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let bottleneck = conv_layer(&mut store, "bottleneck", d, d, k, &mut rng)?;
        let up = (0..cfg.n_unet_blocks)
            .map(|i| conv_layer(&mut store, &format!("up{i}"), d, 2 * d, k, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let head = Layer {
            w: store.add("head.w", Tensor::zeros(&[c2, d, 1]))?,
            b: store.add("head.b", Tensor::zeros(&[c2]))?,
        };
        Ok((
            Network {
                stem,
                down,
                bottleneck,
                up,
                head,
            },
            store,
        ))
    }

    pub fn bind(cfg: &ModelConfig, store: &ParamStore) -> Result<Network, ModelError> {
        Ok(Network {
            stem: find_layer(store, "stem")?,
            down: (0..cfg.n_unet_blocks)
                .map(|i| find_layer(store, &format!("down{i}")))
                .collect::<Result<_, _>>()?,
            bottleneck: find_layer(store, "bottleneck")?,
            up: (0..cfg.n_unet_blocks)
                .map(|i| find_layer(store, &format!("up{i}")))
                .collect::<Result<_, _>>()?,
            head: find_layer(store, "head")?,
        })
    }

    fn conv(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        layer: Layer,
        x: Var,
        stride: usize,
        relu: bool,
    ) -> Result<Var, ModelError> {
        let w = g.param(store, layer.w);
        let b = g.param(store, layer.b);
        let pad = g.shape(w)[2] / 2;
        let y = g.conv1d(x, w, stride, pad)?;
        let y = g.add_channel_bias(y, b)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    /// Returns the processor features `R` (`[D, total_nodes]`) and the raw
    /// decoder output (`[2C, total_nodes]`).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<(Var, Var), ModelError> {
        let mut h = self.conv(g, store, self.stem, input, 1, true)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for &layer in &self.down {
            skips.push(h);
            h = self.conv(g, store, layer, h, 2, true)?;
        }
        h = self.conv(g, store, self.bottleneck, h, 1, true)?;
        for &layer in self.up.iter() {
            let skip = skips.pop().expect("one skip per block");
            let u = g.upsample2(h)?;
            let cat = g.concat(&[u, skip], 0)?;
            h = self.conv(g, store, layer, cat, 1, true)?;
        }
        let out = self.conv(g, store, self.head, h, 1, false)?;
        Ok((h, out))
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Processor features over the padded grid.
    pub features: Var,
    /// Standardized means over the window, `[C, window_nodes]`.
    pub mu: Var,
    /// Standardized standard deviations over the window.
    pub sigma: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub standardization: PerVital<Standardizer>,
    pub log: TrainingLog,
    network: Network,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    config: ModelConfig,
    standardization: PerVital<Standardizer>,
    log: TrainingLog,
}

pub const PARAMS_FILE: &str = "params.json";
pub const SIDECAR_FILE: &str = "model.json";

impl TrainedModel {
    pub fn new(
        config: ModelConfig,
        standardization: PerVital<Standardizer>,
        seed: u64,
    ) -> Result<TrainedModel, ModelError> {
        config.validate()?;
        for (kind, s) in standardization.iter() {
            if !(s.std > 0.0 && s.std.is_finite() && s.mean.is_finite()) {
                return Err(ModelError::Config(format!("standardization for {kind} is degenerate")));
            }
        }
        let (network, params) = Network::init(&config, seed)?;
        Ok(TrainedModel {
            config,
            params,
            standardization,
            log: TrainingLog::default(),
            network,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.config.grid()
    }

    /// Builds encoder, UNet and decoder on `g` for the given context.
    pub fn build(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        context: &[Measurement],
        tau: f64,
    ) -> Result<ForwardVars, ModelError> {
        let grid = self.grid();
        let enc = encode_on(context, tau, &grid, self.config.rbf_lengthscale_hours, &self.standardization)?;
        let input = g.constant(enc.values);
        let (features, out) = self.network.forward(g, store, input)?;
        let c = VitalKind::COUNT;
        let lo = grid.pad_left;
        let hi = lo + grid.window_nodes;
        let mu_full = g.slice(out, 0, 0, c)?;
        let mu = g.slice(mu_full, 1, lo, hi)?;
        let raw_full = g.slice(out, 0, c, 2 * c)?;
        let raw = g.slice(raw_full, 1, lo, hi)?;
        let sp = g.softplus(raw);
        let sigma = g.add_scalar(sp, self.config.min_sigma);
        Ok(ForwardVars { features, mu, sigma })
    }

    /// Sum of standardized per-target NLL terms and the number of targets.
    /// Targets outside `[tau, tau + forecast]` are ignored.
    pub fn nll_terms(
        &self,
        g: &mut Graph,
        fv: &ForwardVars,
        tau: f64,
        targets: &[Measurement],
    ) -> Result<Option<(Var, usize)>, ModelError> {
        let grid = self.grid();
        let mut queries = Vec::with_capacity(targets.len());
        let mut xs = Vec::with_capacity(targets.len());
        for m in targets {
            if m.t_hours < tau || m.t_hours > tau + self.config.forecast_hours {
                continue;
            }
            let pos = grid.position(tau, m.t_hours).clamp(0.0, (grid.window_nodes - 1) as f64);
            queries.push((m.kind.index(), pos));
            xs.push(self.standardization[m.kind].forward(m.value));
        }
        if queries.is_empty() {
            return Ok(None);
        }
        let n = xs.len();
        let mu = g.linear_interp(fv.mu, &queries)?;
        let sigma = g.linear_interp(fv.sigma, &queries)?;
        let x = g.constant(Tensor::vector(xs));
        let d = g.sub(x, mu)?;
        let z = g.div(d, sigma)?;
        let z2 = g.square(z);
        let half = g.scale(z2, 0.5);
        let log_sigma = g.ln(sigma);
        let terms = g.add(half, log_sigma)?;
        let terms = g.add_scalar(terms, HALF_LN_2PI);
        Ok(Some((g.sum(terms), n)))
    }

    /// Mean standardized NLL of one task as a graph node.
    pub fn task_loss(&self, g: &mut Graph, store: &ParamStore, task: &Task) -> Result<Option<Var>, ModelError> {
        let fv = self.build(g, store, &task.context, task.tau_hours)?;
        Ok(self
            .nll_terms(g, &fv, task.tau_hours, &task.targets)?
            .map(|(sum, n)| g.scale(sum, 1.0 / n as f64)))
    }

    fn distribution_from(&self, g: &Graph, fv: &ForwardVars, tau: f64) -> PredictiveDistribution {
        let grid = self.grid();
        let gl = grid.window_nodes;
        let mut mu = g.value(fv.mu).data().to_vec();
        let mut sigma = g.value(fv.sigma).data().to_vec();
        for kind in VitalKind::ALL {
            let s = self.standardization[kind];
            let r = kind.index() * gl..(kind.index() + 1) * gl;
            mu[r.clone()].iter_mut().for_each(|v| *v = s.inverse(*v));
            sigma[r].iter_mut().for_each(|v| *v *= s.std);
        }
        PredictiveDistribution {
            tau,
            grid_times: grid.window_times(tau),
            mu,
            sigma,
        }
    }

    /// Predictive marginals in native units over the task window.
    pub fn predict(&self, context: &[Measurement], tau: f64) -> Result<PredictiveDistribution, ModelError> {
        let mut g = Graph::new();
        let fv = self.build(&mut g, &self.params, context, tau)?;
        Ok(self.distribution_from(&g, &fv, tau))
    }

    /// Prediction plus the max-pooled processor features used by the
    /// classification head.
    pub fn predict_with_embedding(
        &self,
        context: &[Measurement],
        tau: f64,
    ) -> Result<(PredictiveDistribution, Vec<f64>), ModelError> {
        let mut g = Graph::new();
        let fv = self.build(&mut g, &self.params, context, tau)?;
        let pooled = g.global_max(fv.features)?;
        let emb = g.value(pooled).data().to_vec();
        Ok((self.distribution_from(&g, &fv, tau), emb))
    }

    pub fn forward(&self, task: &Task) -> Result<PredictiveDistribution, ModelError> {
        self.predict(&task.context, task.tau_hours)
    }

    /// Mean standardized NLL of `targets` under `dist`.
    pub fn nll(&self, dist: &PredictiveDistribution, targets: &[Measurement]) -> Result<f64, ModelError> {
        let (sum, n) = self.nll_sum(dist, targets)?;
        if n == 0 {
            return Err(ModelError::NoTargets);
        }
        Ok(sum / n as f64)
    }

    /// Summed standardized NLL and target count.
    pub fn nll_sum(&self, dist: &PredictiveDistribution, targets: &[Measurement]) -> Result<(f64, usize), ModelError> {
        nll_sum_with(dist, targets, &self.standardization)
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        self.params.save_json(BufWriter::new(File::create(dir.join(PARAMS_FILE))?))?;
        let sidecar = Sidecar {
            format_version: 1,
            config: self.config.clone(),
            standardization: self.standardization,
            log: self.log.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(SIDECAR_FILE))?), &sidecar)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TrainedModel, ModelError> {
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(SIDECAR_FILE))?))?;
        if sidecar.format_version != 1 {
            return Err(ModelError::Config(format!(
                "unsupported model sidecar version {}",
                sidecar.format_version
            )));
        }
        let params = ParamStore::load_json(BufReader::new(File::open(dir.join(PARAMS_FILE))?))?;
        let network = Network::bind(&sidecar.config, &params)?;
        Ok(TrainedModel {
            config: sidecar.config,
            params,
            standardization: sidecar.standardization,
            log: sidecar.log,
            network,
        })
    }
}

/// Summed NLL in standardized units: `z = (x - mu) / sigma` with both
/// sides divided by the variable's scale.
pub fn nll_sum_with(
    dist: &PredictiveDistribution,
    targets: &[Measurement],
    standardization: &PerVital<Standardizer>,
) -> Result<(f64, usize), ModelError> {
    let mut sum = 0.0;
    for m in targets {
        let (mu, sigma) = dist.at(m.kind, m.t_hours)?;
        let s = standardization[m.kind];
        let sig = sigma / s.std;
        let z = (m.value - mu) / sigma;
        sum += HALF_LN_2PI + sig.ln() + 0.5 * z * z;
    }
    Ok((sum, targets.len()))
}
