//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use cac_core::attack::{AttackConfig, AttackMode};
use cac_core::detector::{Architecture, TrainConfig};
use cac_core::env::{EnvDistribution, ViewpointRegime};
use cac_core::evaluation::{BrightnessChoice, EvalRegime};
use cac_core::mesh::Mesh;
use cac_core::optim::AdamConfig;
use cac_core::scenes::{ClassCatalog, SceneLayout};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_ENV: &str = "CAC_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream.
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub env: EnvDistribution,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_detectors() -> Vec<DetectorSpec> {
    vec![DetectorSpec::named("A"), DetectorSpec::named("B")]
}

/// Optional replacement of the built-in vehicle mesh.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub obj: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train_count: usize,
    pub test_count: usize,
    pub image_size: usize,
    pub layout: SceneLayout,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            train_count: 4000,
            test_count: 200,
            image_size: 128,
            layout: SceneLayout::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub name: String,
    /// Built-in architecture: `A` or `B`.
    pub arch: String,
    #[serde(default)]
    pub train: TrainConfig,
}

impl DetectorSpec {
    pub fn named(arch: &str) -> Self {
        Self {
            name: arch.into(),
            arch: arch.into(),
            train: TrainConfig {
                steps: 20_000,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Class name of the attacked object.
    pub object_class: String,
    pub target_class: String,
    pub top_n: usize,
    pub iterations: usize,
    pub env_samples: usize,
    pub step_size: f64,
    pub mode: AttackMode,
    pub checkpoint_every: usize,
    /// Starting texture; the original paint when absent.
    pub initial_texture: Option<PathBuf>,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            object_class: "car".into(),
            target_class: "person".into(),
            top_n: a.top_n,
            iterations: a.iterations,
            env_samples: a.env_samples,
            step_size: a.optimizer.step_size,
            mode: a.mode,
            checkpoint_every: a.checkpoint_every,
            initial_texture: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub views: usize,
    pub brightness: BrightnessChoice,
    pub restricted_alpha_deg: f64,
    pub distance_bins: Option<Vec<f64>>,
    /// Class names counted as correct; the object's class when empty.
    pub true_classes: Vec<String>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            views: 200,
            brightness: BrightnessChoice::Any,
            restricted_alpha_deg: 120.0,
            distance_bins: Some(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            true_classes: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates `path`; relative paths inside are resolved
    /// against its directory and [`OUTPUT_ENV`] overrides `output_dir`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.into(), source: e })?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
            let field = e.span().map(|s| text[s].lines().next().unwrap_or_default().trim().to_string()).unwrap_or_default();
            CliError::config(field, e.message())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Some(dir) = std::env::var_os(OUTPUT_ENV) {
            cfg.output_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::config("", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.mesh.obj);
        fix(&mut self.mesh.sidecar);
        fix(&mut self.attack.initial_texture);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let exists = |field: &str, p: &Option<PathBuf>| match p {
            Some(p) if !p.exists() => Err(CliError::config(field, format!("{} does not exist", p.display()))),
            _ => Ok(()),
        };
        exists("mesh.obj", &self.mesh.obj)?;
        exists("mesh.sidecar", &self.mesh.sidecar)?;
        exists("attack.initial_texture", &self.attack.initial_texture)?;
        if self.mesh.obj.is_some() != self.mesh.sidecar.is_some() {
            return Err(CliError::config("mesh.sidecar", "obj and sidecar must be given together"));
        }
        if self.dataset.train_count == 0 || self.dataset.test_count == 0 {
            return Err(CliError::config("dataset.train_count", "dataset counts must be at least 1"));
        }
        if self.detectors.is_empty() {
            return Err(CliError::config("detectors", "declare at least one detector"));
        }
        for (i, d) in self.detectors.iter().enumerate() {
            if Architecture::by_name(&d.arch, 1).is_none() {
                return Err(CliError::config(format!("detectors[{i}].arch"), format!("unknown architecture `{}` (expected A or B)", d.arch)));
            }
            if self.detectors[..i].iter().any(|o| o.name == d.name) {
                return Err(CliError::config(format!("detectors[{i}].name"), format!("duplicate detector name `{}`", d.name)));
            }
        }
        self.env.validate().map_err(|m| CliError::config("env", m))?;
        if self.evaluation.views == 0 {
            return Err(CliError::config("evaluation.views", "must be at least 1"));
        }
        Ok(())
    }

    pub fn catalog(&self) -> Result<ClassCatalog> {
        match (&self.mesh.obj, &self.mesh.sidecar) {
            (Some(obj), Some(side)) => Ok(ClassCatalog::with_vehicle(Mesh::load(obj, side).map_err(|e| CliError::config("mesh.obj", e.to_string()))?)),
            _ => Ok(ClassCatalog::standard()),
        }
    }

    pub fn detector(&self, name: Option<&str>) -> Result<&DetectorSpec> {
        match name {
            None => Ok(&self.detectors[0]),
            Some(n) => self.detectors.iter().find(|d| d.name == n).ok_or_else(|| {
                let known: Vec<&str> = self.detectors.iter().map(|d| d.name.as_str()).collect();
                CliError::config("--model", format!("unknown detector `{n}`; declared: {}", known.join(", ")))
            }),
        }
    }

    pub fn attack_config(&self, catalog: &ClassCatalog) -> Result<AttackConfig> {
        let a = &self.attack;
        let cfg = AttackConfig {
            target_class: class_id(catalog, &a.target_class, "attack.target_class")?,
            true_class: class_id(catalog, &a.object_class, "attack.object_class")?,
            top_n: a.top_n,
            iterations: a.iterations,
            env_samples: a.env_samples,
            optimizer: AdamConfig {
                step_size: a.step_size,
                ..Default::default()
            },
            mode: a.mode,
            checkpoint_every: a.checkpoint_every,
        };
        cfg.validate(catalog.len()).map_err(|e| CliError::config("attack", e.to_string()))?;
        Ok(cfg)
    }

    pub fn regime(&self, catalog: &ClassCatalog, viewpoint: ViewpointRegime, brightness: BrightnessChoice, views: usize) -> Result<EvalRegime> {
        let e = &self.evaluation;
        let true_classes = if e.true_classes.is_empty() {
            vec![class_id(catalog, &self.attack.object_class, "attack.object_class")?]
        } else {
            e.true_classes.iter().map(|n| class_id(catalog, n, "evaluation.true_classes")).collect::<Result<_>>()?
        };
        let regime = EvalRegime {
            viewpoint,
            brightness,
            views,
            true_classes,
            distance_bins: e.distance_bins.clone(),
        };
        regime.validate().map_err(|e| CliError::config("evaluation", e.to_string()))?;
        Ok(regime)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.output_dir.join("models")
    }

    pub fn checkpoint_path(&self, detector: &str) -> PathBuf {
        self.models_dir().join(format!("{detector}.cacdet"))
    }
}

/// Class id for `name`; background is not a valid object class here.
pub fn class_id(catalog: &ClassCatalog, name: &str, field: &str) -> Result<usize> {
    catalog.id_of(name).ok_or_else(|| CliError::config(field, format!("unknown class `{name}`; catalog: {}", catalog.names().join(", "))))
}
