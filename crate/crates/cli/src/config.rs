use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tmlab_core::evaluation::DatasetName;
use tmlab_core::training::TrainMode;
use tmlab_core::{ModelConfig, ModelKind, SamplerSpec, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetName,
    /// Training points.
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SlicedWasserstein,
    EnergyDistance,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SlicedWasserstein => "sliced_wasserstein",
            Metric::EnergyDistance => "energy_distance",
        }
    }
}

fn default_projections() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    /// Chains drawn by `sample` unless `--n` overrides it.
    pub samples: usize,
    /// Fresh reference points drawn from the dataset for `eval`.
    pub heldout: usize,
    #[serde(default = "default_projections")]
    pub projections: usize,
}

/// A grid over the stochastic sampler's `(c, tau)`; one output file per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub scale: Vec<f64>,
    pub frequency: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

fn invalid(path: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("`{path}`: {err}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            invalid(&path, e.inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.dataset.size == 0 {
            return Err(invalid("dataset.size", "must be >= 1"));
        }
        self.model.validate().map_err(|e| invalid("model", e))?;
        if self.model.dim() != 2 {
            return Err(invalid(
                "model",
                format!("datasets are 2-D but tokens * channels = {}", self.model.dim()),
            ));
        }
        let classes = self.model.backbone.cond_classes;
        if classes != 0 && classes != self.dataset.name.classes() {
            return Err(invalid(
                "model.backbone.cond_classes",
                format!("must be 0 or {} for this dataset, got {classes}", self.dataset.name.classes()),
            ));
        }
        self.train.validate().map_err(|e| invalid("train", e))?;
        let dtm = matches!(self.model.kind, ModelKind::Dtm { .. });
        if dtm != (self.train.mode == TrainMode::Dtm) {
            return Err(invalid("train.mode", "does not match model.kind.type"));
        }
        self.sampler.validate().map_err(|e| invalid("sampler", e))?;
        if dtm != self.sampler.mode.is_dtm() {
            return Err(invalid("sampler.mode", "does not match model.kind.type"));
        }
        if let Some(sweep) = &self.sweep {
            if !self.sampler.mode.is_stochastic() {
                return Err(invalid("sweep", "needs a stochastic sampler mode"));
            }
            if sweep.scale.is_empty() || sweep.frequency.is_empty() {
                return Err(invalid("sweep", "scale and frequency must be non-empty"));
            }
            for (i, &c) in sweep.scale.iter().enumerate() {
                if !(0.0..=1.0).contains(&c) {
                    return Err(invalid(&format!("sweep.scale[{i}]"), format!("must lie in [0, 1], got {c}")));
                }
            }
            for (i, &tau) in sweep.frequency.iter().enumerate() {
                if tau == 0 || tau > self.sampler.steps {
                    return Err(invalid(
                        &format!("sweep.frequency[{i}]"),
                        format!("must lie in [1, {}], got {tau}", self.sampler.steps),
                    ));
                }
            }
        }
        if self.eval.metrics.is_empty() {
            return Err(invalid("eval.metrics", "must name at least one metric"));
        }
        for (name, v) in [
            ("eval.samples", self.eval.samples),
            ("eval.heldout", self.eval.heldout),
            ("eval.projections", self.eval.projections),
        ] {
            if v == 0 {
                return Err(invalid(name, "must be >= 1"));
            }
        }
        Ok(())
    }

    /// Sampler specs to run: the configured one, or one per sweep cell with
    /// a file stem naming the cell.
    pub fn sampler_cells(&self) -> Vec<(String, SamplerSpec)> {
        match &self.sweep {
            None => vec![("samples".into(), self.sampler.clone())],
            Some(sweep) => sweep
                .scale
                .iter()
                .flat_map(|&c| {
                    sweep.frequency.iter().map(move |&tau| {
                        (format!("samples_c{c}_tau{tau}"), self.sampler.clone().with_stochastic(c, tau))
                    })
                })
                .collect(),
        }
    }
}
