//! Run configuration: a sectioned key-value file (TOML) covering training,
//! model layout, dataset paths and the output directory. Unknown keys are
//! rejected; the fully resolved config is echoed into the output directory
//! so a run can always be reproduced from its artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{binarize, idx_load, synthetic_digits, BinarizeMode, Dataset};
use crate::error::{Error, Result};
use crate::models::{LatentLayout, MiTarget};
use crate::objectives::{ObjectiveConfig, ObjectiveVariant};
use crate::training::{ModelSpec, TauDecay, TrainConfig};

/// Environment variable holding the default dataset directory.
pub const DATA_DIR_ENV: &str = "MIVAE_DATA_DIR";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out_dir: PathBuf::from("mivae_run"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// IDX image file; resolved against `data_dir` when relative.
    pub images: Option<PathBuf>,
    /// IDX label file.
    pub labels: Option<PathBuf>,
    /// Directory for relative dataset paths; overrides MIVAE_DATA_DIR.
    pub data_dir: Option<PathBuf>,
    /// Sample count for the built-in synthetic digit dataset, used when no
    /// image file is given.
    pub synthetic: usize,
    /// none | threshold | stochastic
    pub binarize: String,
    pub threshold: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            images: None,
            labels: None,
            data_dir: None,
            synthetic: 8000,
            binarize: "threshold".into(),
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub gaussian_dim: usize,
    pub categorical_k: usize,
    pub hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    /// none | categorical | gauss:i,j,...
    pub mi_target: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            gaussian_dim: 16,
            categorical_k: 10,
            hidden: vec![512, 256],
            q_hidden: vec![256],
            mi_target: "categorical".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    /// elbo | beta | capacity
    pub variant: String,
    pub beta: f64,
    pub gamma: f64,
    pub capacity: f64,
    pub lambda: f64,
    pub mc_samples: usize,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            variant: "elbo".into(),
            beta: 1.0,
            gamma: 0.0,
            capacity: 0.0,
            lambda: 0.0,
            mc_samples: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_vae: f64,
    pub lr_q: f64,
    pub q_steps: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    /// constant | exponential
    pub tau_decay: String,
    pub eval_every: usize,
    pub grad_clip: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 30,
            batch_size: 128,
            lr_vae: 1e-3,
            lr_q: 1e-3,
            q_steps: 1,
            tau_start: 0.67,
            tau_end: 0.67,
            tau_decay: "constant".into(),
            eval_every: 10,
            grad_clip: 5.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved config into the output directory.
    pub fn echo_resolved(&self) -> Result<()> {
        std::fs::create_dir_all(&self.run.out_dir)
            .map_err(|e| Error::io(self.run.out_dir.clone(), e))?;
        let path = self.run.out_dir.join("config.resolved");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_mi_target(&self) -> Result<Option<MiTarget>> {
        parse_mi_target(&self.model.mi_target)
    }

    pub fn layout(&self) -> Result<LatentLayout> {
        let layout = LatentLayout {
            gaussian_dim: self.model.gaussian_dim,
            categorical_k: self.model.categorical_k,
            mi_target: self.parse_mi_target()?,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn objective_config(&self) -> Result<ObjectiveConfig> {
        let variant = match self.objective.variant.as_str() {
            "elbo" => ObjectiveVariant::Elbo,
            "beta" => ObjectiveVariant::Beta,
            "capacity" => ObjectiveVariant::Capacity,
            other => {
                return Err(Error::config(format!(
                    "unknown objective variant '{other}' (expected elbo|beta|capacity)"
                )))
            }
        };
        let cfg = ObjectiveConfig {
            variant,
            beta: self.objective.beta,
            gamma: self.objective.gamma,
            capacity: self.objective.capacity,
            lambda: self.objective.lambda,
            mc_samples: self.objective.mc_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let tau_decay = match self.train.tau_decay.as_str() {
            "constant" => TauDecay::Constant,
            "exponential" => TauDecay::Exponential,
            other => {
                return Err(Error::config(format!(
                    "unknown tau decay '{other}' (expected constant|exponential)"
                )))
            }
        };
        let cfg = TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.run.seed,
            model: ModelSpec {
                hidden: self.model.hidden.clone(),
                q_hidden: self.model.q_hidden.clone(),
                layout: self.layout()?,
            },
            objective: self.objective_config()?,
            lr_vae: self.train.lr_vae,
            lr_q: self.train.lr_q,
            q_steps_per_batch: self.train.q_steps,
            tau_start: self.train.tau_start,
            tau_end: self.train.tau_end,
            tau_decay,
            eval_every: self.train.eval_every,
            grad_clip: self.train.grad_clip,
            out_dir: Some(self.run.out_dir.clone()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn binarize_mode(&self) -> Result<BinarizeMode> {
        Ok(match self.data.binarize.as_str() {
            "none" => BinarizeMode::None,
            "threshold" => BinarizeMode::Threshold(self.data.threshold),
            "stochastic" => BinarizeMode::Stochastic(self.run.seed),
            other => {
                return Err(Error::config(format!(
                    "unknown binarize mode '{other}' (expected none|threshold|stochastic)"
                )))
            }
        })
    }

    fn resolve_data_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        let base = self
            .data
            .data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));
        match base {
            Some(dir) => dir.join(p),
            None => p.to_path_buf(),
        }
    }

    /// Loads the configured dataset: IDX files when given, the seeded
    /// synthetic digit set otherwise. Binarization is applied here.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let ds = match &self.data.images {
            Some(images) => {
                let images = self.resolve_data_path(images);
                let labels = self.data.labels.as_ref().map(|l| self.resolve_data_path(l));
                idx_load(&images, labels.as_deref())?
            }
            None => synthetic_digits(self.data.synthetic, self.run.seed),
        };
        Ok(binarize(&ds, self.binarize_mode()?))
    }
}

/// Parses an MI target spec: "none", "categorical", or "gauss:i,j,...".
pub fn parse_mi_target(text: &str) -> Result<Option<MiTarget>> {
    let t = text.trim();
    if t.is_empty() || t == "none" {
        return Ok(None);
    }
    if t == "categorical" {
        return Ok(Some(MiTarget::Categorical));
    }
    if let Some(list) = t.strip_prefix("gauss:") {
        let idx: std::result::Result<Vec<usize>, _> =
            list.split(',').map(|s| s.trim().parse::<usize>()).collect();
        let idx = idx.map_err(|e| Error::config(format!("bad gauss index list '{list}': {e}")))?;
        if idx.is_empty() {
            return Err(Error::config("empty gauss index list"));
        }
        return Ok(Some(MiTarget::GaussianSubvector(idx)));
    }
    Err(Error::config(format!(
        "unknown mi_target '{t}' (expected none|categorical|gauss:i,j,...)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("[train]\nbogus_key = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(RunConfig::from_toml("[nonsense]\nx = 1\n").is_err());
    }

    #[test]
    fn mi_target_parsing() {
        assert_eq!(parse_mi_target("none").unwrap(), None);
        assert_eq!(
            parse_mi_target("categorical").unwrap(),
            Some(MiTarget::Categorical)
        );
        assert_eq!(
            parse_mi_target("gauss:0, 2,5").unwrap(),
            Some(MiTarget::GaussianSubvector(vec![0, 2, 5]))
        );
        assert!(parse_mi_target("gauss:").is_err());
        assert!(parse_mi_target("whatever").is_err());
    }

    #[test]
    fn sections_compose_into_train_config() {
        let text = r#"
[run]
seed = 7
out_dir = "/tmp/x"

[model]
gaussian_dim = 4
categorical_k = 3
hidden = [16]
q_hidden = [8]
mi_target = "categorical"

[objective]
variant = "beta"
beta = 2.0
lambda = 1.5

[train]
epochs = 2
batch_size = 16
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.seed, 7);
        assert_eq!(tc.epochs, 2);
        assert_eq!(tc.model.layout.categorical_k, 3);
        assert_eq!(tc.objective.beta, 2.0);
        assert_eq!(tc.objective.lambda, 1.5);
    }

    #[test]
    fn synthetic_dataset_loads_and_binarizes() {
        let mut cfg = RunConfig::default();
        cfg.data.synthetic = 32;
        let ds = cfg.load_dataset().unwrap();
        assert_eq!(ds.len(), 32);
        assert!(ds.image(0).iter().all(|&p| p == 0.0 || p == 1.0));
    }
}
