use std::fs;
use std::path::{Path, PathBuf};

use rkn_core::neural::{Activation, NetworkSpec};
use rkn_core::rkn::feature_dim;
use rkn_core::statespace::{noise_from_heterogeneity, BimodalNoiseSpec, DatasetConfig, SplitSizes};
use rkn_core::training::TrainingConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const STATE_DIM: usize = 2;
const MEASUREMENT_DIM: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub dataset: DatasetSection,
    pub init: InitSection,
    pub rkn: RknSection,
    pub training: TrainingSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dt: f64,
    pub sigma_v_sq: f64,
}

/// Either `nu_db` with `sigma1_ratio`, or both explicit mode variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub horizon: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RknSection {
    pub squared_features: bool,
    pub init_seed: u64,
    pub activation: Activation,
    pub gain_fc_in: Vec<usize>,
    pub gain_gru: Vec<usize>,
    pub gain_fc_out: Vec<usize>,
    pub chol_fc_in: Vec<usize>,
    pub chol_gru: Vec<usize>,
    pub chol_fc_out: Vec<usize>,
}

/// Training hyperparameters. `patience = 0` and `clip_norm = 0` disable
/// early stopping and clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub seed: u64,
    pub patience: usize,
    pub clip_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let (gain, chol) = default_network_sizes();
        let training = TrainingConfig::default();
        Self {
            model: ModelSection {
                dt: 1.0,
                sigma_v_sq: 1e-4,
            },
            noise: NoiseSection {
                p: 0.6,
                nu_db: Some(40.0),
                sigma1_ratio: Some(1.5625),
                sigma1_sq: None,
                sigma2_sq: None,
            },
            dataset: DatasetSection {
                train: 1000,
                val: 100,
                test: 1000,
                horizon: 150,
                master_seed: 0,
            },
            init: InitSection {
                mean: vec![0.0, 1.0],
                cov: vec![vec![1.0, 0.0], vec![0.0, 0.01]],
            },
            rkn: RknSection {
                squared_features: true,
                init_seed: 0,
                activation: gain.activation,
                gain_fc_in: gain.fc_in,
                gain_gru: gain.gru_layers,
                gain_fc_out: gain.fc_out,
                chol_fc_in: chol.fc_in,
                chol_gru: chol.gru_layers,
                chol_fc_out: chol.fc_out,
            },
            training: TrainingSection {
                learning_rate: training.learning_rate,
                epochs: training.epochs,
                batch_size: training.batch_size,
                l2_lambda: training.l2_lambda,
                seed: training.seed,
                patience: training.patience.unwrap_or(0),
                clip_norm: training.clip_norm.unwrap_or(0.0),
            },
            paths: PathsSection {
                dataset: "data".into(),
                checkpoint: "rkn.ckpt".into(),
                history: "history.csv".into(),
                out: "out".into(),
            },
        }
    }
}

fn default_network_sizes() -> (NetworkSpec, NetworkSpec) {
    rkn_core::rkn::RknModel::default_specs(STATE_DIM, MEASUREMENT_DIM)
}

impl ExperimentConfig {
    /// Reads `path` (or the defaults when `None`), applies `section.key=value`
    /// overrides in order, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::try_from(Self::default()).expect("default config serializes"),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: String| Err(CliError::Config(format!("{field}: {why}")));
        if !(self.model.dt > 0.0 && self.model.dt.is_finite()) {
            return bad(
                "model.dt",
                format!("must be positive, got {}", self.model.dt),
            );
        }
        if !(self.model.sigma_v_sq >= 0.0 && self.model.sigma_v_sq.is_finite()) {
            return bad(
                "model.sigma_v_sq",
                format!("must be non-negative, got {}", self.model.sigma_v_sq),
            );
        }
        if !(self.noise.p > 0.0 && self.noise.p < 1.0) {
            return bad(
                "noise.p",
                format!("must lie in (0, 1), got {}", self.noise.p),
            );
        }
        self.noise_spec()?;
        for (field, v) in [
            ("dataset.train", self.dataset.train),
            ("dataset.val", self.dataset.val),
            ("dataset.test", self.dataset.test),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        if self.dataset.horizon == 0 {
            return bad("dataset.horizon", "must be at least 1".into());
        }
        if self.init.mean.len() != STATE_DIM {
            return bad(
                "init.mean",
                format!("needs {STATE_DIM} entries, got {}", self.init.mean.len()),
            );
        }
        if self.init.cov.len() != STATE_DIM || self.init.cov.iter().any(|r| r.len() != STATE_DIM) {
            return bad("init.cov", format!("must be {STATE_DIM}×{STATE_DIM}"));
        }
        let c = &self.init.cov;
        if (c[0][1] - c[1][0]).abs() > 1e-12 * (c[0][0].abs() + c[1][1].abs()) {
            return bad("init.cov", "must be symmetric".into());
        }
        if c[0][0] < 0.0 || c[1][1] < 0.0 || c[0][0] * c[1][1] - c[0][1] * c[1][0] < -1e-12 {
            return bad("init.cov", "must be positive semi-definite".into());
        }
        let sizes = [
            ("rkn.gain_fc_in", &self.rkn.gain_fc_in),
            ("rkn.gain_gru", &self.rkn.gain_gru),
            ("rkn.gain_fc_out", &self.rkn.gain_fc_out),
            ("rkn.chol_fc_in", &self.rkn.chol_fc_in),
            ("rkn.chol_gru", &self.rkn.chol_gru),
            ("rkn.chol_fc_out", &self.rkn.chol_fc_out),
        ];
        for (field, layers) in sizes {
            if layers.contains(&0) {
                return bad(field, "layer sizes must be positive".into());
            }
        }
        self.training_config()
            .validate()
            .map_err(|e| CliError::Config(strip_prefix(&e.to_string())))?;
        if !(self.training.clip_norm >= 0.0) {
            return bad(
                "training.clip_norm",
                "must be non-negative (0 disables clipping)".into(),
            );
        }
        Ok(())
    }

    pub fn noise_spec(&self) -> Result<BimodalNoiseSpec, CliError> {
        let n = &self.noise;
        let spec = match (n.nu_db, n.sigma1_ratio, n.sigma1_sq, n.sigma2_sq) {
            (Some(nu), Some(ratio), None, None) => {
                noise_from_heterogeneity(nu, self.model.sigma_v_sq, n.p, ratio)
            }
            (None, None, Some(s1), Some(s2)) => BimodalNoiseSpec::new(n.p, s1, s2),
            _ => {
                return Err(CliError::Config(
                    "noise: set either nu_db and sigma1_ratio, or sigma1_sq and sigma2_sq".into(),
                ))
            }
        };
        spec.map_err(|e| CliError::Config(format!("noise: {}", strip_prefix(&e.to_string()))))
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig, CliError> {
        Ok(DatasetConfig {
            dt: self.model.dt,
            sigma_v_sq: self.model.sigma_v_sq,
            noise: self.noise_spec()?,
            init_mean: self.init.mean.clone(),
            init_cov: self.init.cov.clone(),
            sizes: SplitSizes {
                train: self.dataset.train,
                val: self.dataset.val,
                test: self.dataset.test,
            },
            horizon: self.dataset.horizon,
            master_seed: self.dataset.master_seed,
        })
    }

    pub fn network_specs(&self) -> (NetworkSpec, NetworkSpec) {
        let d = feature_dim(STATE_DIM, MEASUREMENT_DIM);
        let r = &self.rkn;
        let gain = NetworkSpec {
            input_dim: d,
            fc_in: r.gain_fc_in.clone(),
            gru_layers: r.gain_gru.clone(),
            fc_out: r.gain_fc_out.clone(),
            output_dim: STATE_DIM * MEASUREMENT_DIM,
            activation: r.activation,
        };
        let chol = NetworkSpec {
            input_dim: d,
            fc_in: r.chol_fc_in.clone(),
            gru_layers: r.chol_gru.clone(),
            fc_out: r.chol_fc_out.clone(),
            output_dim: STATE_DIM * (STATE_DIM + 1) / 2,
            activation: r.activation,
        };
        (gain, chol)
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            l2_lambda: t.l2_lambda,
            seed: t.seed,
            patience: (t.patience > 0).then_some(t.patience),
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
        }
    }
}

pub fn nu_db_of(noise: &BimodalNoiseSpec, sigma_v_sq: f64) -> f64 {
    10.0 * (noise.sigma_w_sq / sigma_v_sq).log10()
}

fn strip_prefix(msg: &str) -> String {
    msg.strip_prefix("invalid parameter: ")
        .unwrap_or(msg)
        .to_string()
}

/// Applies one `section.key=value` override. The value is read as a TOML
/// value, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Usage(format!(
            "override `{spec}` is not of the form section.key=value"
        ))
    })?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| CliError::Usage(format!("override key `{path}` must be section.key")))?;
    let defaults =
        toml::Table::try_from(ExperimentConfig::default()).expect("default config serializes");
    let known_section = defaults.get(section).and_then(toml::Value::as_table);
    let Some(known) = known_section else {
        return Err(CliError::Usage(format!(
            "unknown config section `{section}`"
        )));
    };
    let optional_noise =
        section == "noise" && ["sigma1_sq", "sigma2_sq", "nu_db", "sigma1_ratio"].contains(&key);
    if !known.contains_key(key) && !optional_noise {
        return Err(CliError::Usage(format!(
            "unknown config key `{section}.{key}`"
        )));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let target = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("`{section}` is not a section")))?;
    // Switching between the two noise parameterizations drops the other pair.
    if section == "noise" {
        match key {
            "sigma1_sq" | "sigma2_sq" => {
                target.remove("nu_db");
                target.remove("sigma1_ratio");
            }
            "nu_db" | "sigma1_ratio" => {
                target.remove("sigma1_sq");
                target.remove("sigma2_sq");
            }
            _ => {}
        }
    }
    target.insert(key.to_string(), value);
    Ok(())
}
