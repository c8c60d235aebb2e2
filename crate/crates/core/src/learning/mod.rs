//! Online learning of the model error `Δ(x)`.

pub mod belief;
pub mod blr;
pub mod dataset;
pub mod gp;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use belief::{ErrorModel, GaussianBelief, ModelSlot, Prediction, SigmaBounds};
pub use blr::{BlrModel, FeatureMap, RffConfig};
pub use dataset::{make_sample, model_error_target, Dataset, InputFeatures, Sample};
pub use gp::{GpHyper, GpModel, InputScaler};
pub use trainer::{Trainer, TrainerProgress};

use crate::error::Result;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    None,
    Gp,
    Blr,
    /// Publishes the injected disturbance itself; for perfect-model runs.
    Oracle,
}

impl LearnerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LearnerKind::None => "none",
            LearnerKind::Gp => "gp",
            LearnerKind::Blr => "blr",
            LearnerKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(LearnerKind::None),
            "gp" => Some(LearnerKind::Gp),
            "blr" => Some(LearnerKind::Blr),
            "oracle" => Some(LearnerKind::Oracle),
            _ => None,
        }
    }

    /// Default sliding-window length.
    pub fn default_window(&self) -> usize {
        match self {
            LearnerKind::Blr => 5000,
            _ => 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub features: InputFeatures,
    pub gp: GpHyper,
    pub blr: RffConfig,
    /// Dataset capacity; `None` picks the learner default.
    pub window: Option<usize>,
    /// New samples between retrains.
    pub retrain_every: usize,
    /// Seconds of data collection before the first retrain.
    pub warmup: f64,
    /// Control steps between submitting a job and installing its result.
    pub publish_lag_steps: usize,
    pub sigma0: f64,
    pub sigma_bounds: SigmaBounds,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::None,
            features: InputFeatures::default(),
            gp: GpHyper::default(),
            blr: RffConfig::default(),
            window: None,
            retrain_every: 40,
            warmup: 10.0,
            publish_lag_steps: 5,
            sigma0: 1.0,
            sigma_bounds: SigmaBounds::default(),
        }
    }
}

impl LearnerConfig {
    pub fn window(&self) -> usize {
        self.window.unwrap_or_else(|| self.kind.default_window())
    }
}

/// Fits the configured learner on a frozen dataset copy.
pub fn fit_model<T: Real>(config: &LearnerConfig, samples: &[Sample<T>]) -> Result<ErrorModel<T>> {
    match config.kind {
        LearnerKind::None => Ok(ErrorModel::Prior),
        LearnerKind::Gp => Ok(ErrorModel::Gp(GpModel::fit(samples, config.gp)?)),
        LearnerKind::Blr => Ok(ErrorModel::Blr(BlrModel::fit(samples, config.blr)?)),
        LearnerKind::Oracle => Ok(ErrorModel::Oracle),
    }
}
