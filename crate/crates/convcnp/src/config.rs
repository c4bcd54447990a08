use serde::{Deserialize, Serialize};

use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Stride-2 blocks on each side of the bottleneck.
    pub n_unet_blocks: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub rbf_lengthscale_hours: f64,
    pub internal_grid_points_per_hour: f64,
    pub lookback_hours: f64,
    pub forecast_hours: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epoch_size: usize,
    pub val_epoch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup_epochs: usize,
    /// Floor on the predictive standard deviation, standardized units.
    pub min_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::full()
    }
}

impl ModelConfig {
    /// Full-size training schedule.
    pub fn full() -> Self {
        ModelConfig {
            n_unet_blocks: 4,
            channels: 64,
            kernel_size: 5,
            rbf_lengthscale_hours: 1.0,
            internal_grid_points_per_hour: 2.0,
            lookback_hours: 48.0,
            forecast_hours: 12.0,
            learning_rate: 5e-4,
            batch_size: 512,
            epoch_size: 16384,
            val_epoch_size: 4096,
            max_epochs: 500,
            patience: 250,
            warmup_epochs: 50,
            min_sigma: 0.01,
        }
    }

    /// Single-machine schedule used for the end-to-end experiment. Warmup
    /// and patience keep their proportions of the full schedule.
    pub fn desk() -> Self {
        ModelConfig {
            batch_size: 64,
            epoch_size: 1024,
            val_epoch_size: 256,
            max_epochs: 120,
            patience: 60,
            warmup_epochs: 12,
            ..ModelConfig::full()
        }
    }

    /// Seconds-scale model for tests.
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 8,
            batch_size: 8,
            epoch_size: 32,
            val_epoch_size: 16,
            max_epochs: 2,
            patience: 2,
            warmup_epochs: 0,
            learning_rate: 1e-3,
            ..ModelConfig::full()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    /// Channel and learning-rate grid for model selection.
    pub fn search_space(&self) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for channels in [64, 128, 256, 512] {
            for learning_rate in [1e-5, 5e-5, 1e-4, 5e-4, 1e-3] {
                out.push(ModelConfig {
                    channels,
                    learning_rate,
                    ..self.clone()
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.channels == 0 || self.batch_size == 0 || self.epoch_size == 0 || self.max_epochs == 0 {
            return bad("channels, batch_size, epoch_size and max_epochs must be positive");
        }
        if self.kernel_size % 2 == 0 {
            return bad("kernel_size must be odd");
        }
        if !(self.rbf_lengthscale_hours > 0.0 && self.internal_grid_points_per_hour > 0.0) {
            return bad("lengthscale and grid density must be positive");
        }
        if !(self.min_sigma > 0.0 && self.learning_rate > 0.0) {
            return bad("min_sigma and learning_rate must be positive");
        }
        if self.warmup_epochs >= self.max_epochs && self.warmup_epochs > 0 {
            return bad("warmup_epochs must be below max_epochs");
        }
        let span = (self.lookback_hours + self.forecast_hours) * self.internal_grid_points_per_hour;
        if (span - span.round()).abs() > 1e-9 {
            return bad("window length must be a whole number of grid spacings");
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self)
    }
}

/// The internal grid, anchored to the prediction time.
///
/// The window `[tau - lookback, tau + forecast]` holds `window_nodes` nodes;
/// it is padded on both sides to `total_nodes`, a multiple of
/// `2^n_unet_blocks`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub spacing: f64,
    pub lookback: f64,
    pub window_nodes: usize,
    pub total_nodes: usize,
    pub pad_left: usize,
}

impl GridSpec {
    pub fn new(cfg: &ModelConfig) -> Self {
        let spacing = 1.0 / cfg.internal_grid_points_per_hour;
        let window_nodes =
            ((cfg.lookback_hours + cfg.forecast_hours) * cfg.internal_grid_points_per_hour).round() as usize + 1;
        let unit = 1usize << cfg.n_unet_blocks;
        let total_nodes = window_nodes.div_ceil(unit) * unit;
        GridSpec {
            spacing,
            lookback: cfg.lookback_hours,
            window_nodes,
            total_nodes,
            pad_left: (total_nodes - window_nodes) / 2,
        }
    }

    /// Time of padded node `j`.
    pub fn node_time(&self, tau: f64, j: usize) -> f64 {
        tau - self.lookback + (j as f64 - self.pad_left as f64) * self.spacing
    }

    /// Times of the unpadded window nodes.
    pub fn window_times(&self, tau: f64) -> Vec<f64> {
        (0..self.window_nodes)
            .map(|j| self.node_time(tau, j + self.pad_left))
            .collect()
    }

    /// Fractional position of `t` in window-node units.
    pub fn position(&self, tau: f64, t: f64) -> f64 {
        (t - (tau - self.lookback)) / self.spacing
    }
}
