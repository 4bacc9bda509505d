//! Experiment configuration: presets, TOML overrides and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use metalqr::zoo::{GradientSource, RunOptions};
use metalqr::{MetaConfig, SmoothingParams};
use serde::{Deserialize, Serialize};

use crate::taskgen::{TaskGenSpec, MAX_ATTEMPTS, PD_MARGIN};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Rollout-based meta-gradient estimates.
    Zeroth,
    /// Exact meta-gradients from the models.
    Exact,
}

impl Mode {
    pub fn source(self) -> GradientSource {
        match self {
            Mode::Zeroth => GradientSource::ZerothOrder,
            Mode::Exact => GradientSource::ExactOracle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum Preset {
    #[serde(rename = "fig1-d1")]
    #[value(name = "fig1-d1")]
    Fig1D1,
    #[serde(rename = "fig1-d2")]
    #[value(name = "fig1-d2")]
    Fig1D2,
    #[serde(rename = "fig1-d20")]
    #[value(name = "fig1-d20")]
    Fig1D20,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    Generate(TaskGenSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    /// Exact-model MAML-stability check on every iterate.
    pub stability: bool,
    /// `||estimate - exact||_F` per iteration.
    pub exact_error: bool,
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub tasks: TaskSource,
    pub meta: MetaConfig,
    pub mode: Mode,
    pub checks: Checks,
    pub outputs: PathBuf,
}

impl ExperimentSpec {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let (d, k, meta) = match preset {
            Preset::Fig1D1 => (1, 1, MetaConfig::fig1_small(seed)),
            Preset::Fig1D2 => (2, 2, MetaConfig::fig1_small(seed)),
            Preset::Fig1D20 => (20, 10, MetaConfig::fig1_large(seed)),
        };
        Self {
            preset,
            tasks: TaskSource::Generate(TaskGenSpec::new(d, k, 5, seed)),
            meta,
            mode: Mode::Zeroth,
            checks: Checks {
                stability: true,
                exact_error: false,
            },
            outputs: PathBuf::from("out"),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            source: self.mode.source(),
            check_stability: self.checks.stability,
            report_exact_error: self.checks.exact_error,
        }
    }

    /// Sets every seed in the experiment.
    pub fn reseed(&mut self, seed: u64) {
        self.meta.seed = seed;
        if let TaskSource::Generate(g) = &mut self.tasks {
            g.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.meta
            .validate()
            .map_err(|e| CliError::Input(format!("meta: {e}")))?;
        match &self.tasks {
            TaskSource::Generate(g) => g.validate().map_err(|e| CliError::Input(e.to_string())),
            TaskSource::File(p) if !p.is_file() => Err(CliError::Input(format!(
                "tasks_file: {} does not exist",
                p.display()
            ))),
            TaskSource::File(_) => Ok(()),
        }
    }

    /// Applies a parsed config file on top of `self`; the file's preset, if
    /// any, replaces the base first.
    pub fn apply(mut self, file: ConfigFile, base_dir: &Path) -> Result<Self, CliError> {
        if let Some(p) = file.preset {
            let outputs = self.outputs.clone();
            self = Self::preset(p, self.meta.seed);
            self.outputs = outputs;
        }
        if let Some(m) = file.mode {
            self.mode = m;
        }
        if let Some(out) = file.outputs {
            self.outputs = base_dir.join(out);
        }
        match (file.tasks_file, file.taskgen) {
            (Some(_), Some(_)) => {
                return Err(CliError::Input("tasks_file: cannot be combined with [taskgen]".into()));
            }
            (Some(path), None) => self.tasks = TaskSource::File(base_dir.join(path)),
            (None, Some(patch)) => {
                let mut g = match self.tasks {
                    TaskSource::Generate(g) => g,
                    TaskSource::File(_) => TaskGenSpec::new(2, 2, 5, self.meta.seed),
                };
                patch.apply(&mut g);
                self.tasks = TaskSource::Generate(g);
            }
            (None, None) => {}
        }
        if let Some(patch) = file.meta {
            patch.apply(&mut self.meta);
        }
        if let Some(c) = file.checks {
            self.checks.stability = c.stability.unwrap_or(self.checks.stability);
            self.checks.exact_error = c.exact_error.unwrap_or(self.checks.exact_error);
        }
        Ok(self)
    }

    /// Manifest text: every setting that affects the numerics, in the config
    /// file format, so it can be fed back through `--config`.
    pub fn manifest(&self) -> String {
        let (tasks_file, taskgen) = match &self.tasks {
            TaskSource::File(p) => (
                Some(fs::canonicalize(p).unwrap_or_else(|_| p.clone())),
                None,
            ),
            TaskSource::Generate(g) => (None, Some(TaskGenPatch::full(g))),
        };
        let file = ConfigFile {
            preset: Some(self.preset),
            mode: Some(self.mode),
            outputs: None,
            tasks_file,
            taskgen,
            meta: Some(MetaPatch::full(&self.meta)),
            checks: Some(ChecksPatch {
                stability: Some(self.checks.stability),
                exact_error: Some(self.checks.exact_error),
            }),
            manifest: Some(ManifestInfo {
                version: env!("CARGO_PKG_VERSION").to_string(),
                initial_policy: "zeros".to_string(),
                pd_margin: PD_MARGIN,
                max_generation_attempts: MAX_ATTEMPTS,
                sigma0: "identity".to_string(),
                task_batch_sampling: "with replacement".to_string(),
            }),
        };
        toml::to_string(&file).expect("manifest serializes")
    }
}

/// Provenance block written into manifests; ignored when loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub version: String,
    pub initial_policy: String,
    pub pd_margin: f64,
    pub max_generation_attempts: u64,
    pub sigma0: String,
    pub task_batch_sampling: String,
}

/// On-disk config: every field optional, applied over a preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tasks_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taskgen: Option<TaskGenPatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<MetaPatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<ChecksPatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksPatch {
    pub stability: Option<bool>,
    pub exact_error: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskGenPatch {
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub num_tasks: Option<usize>,
    pub center_entry_low: Option<f64>,
    pub center_entry_high: Option<f64>,
    pub perturbation_std: Option<f64>,
    pub spectral_target: Option<f64>,
    pub seed: Option<u64>,
}

impl TaskGenPatch {
    fn full(g: &TaskGenSpec) -> Self {
        Self {
            d: Some(g.d),
            k: Some(g.k),
            num_tasks: Some(g.num_tasks),
            center_entry_low: Some(g.center_entry_low),
            center_entry_high: Some(g.center_entry_high),
            perturbation_std: Some(g.perturbation_std),
            spectral_target: Some(g.spectral_target),
            seed: Some(g.seed),
        }
    }

    fn apply(self, g: &mut TaskGenSpec) {
        g.d = self.d.unwrap_or(g.d);
        g.k = self.k.unwrap_or(g.k);
        g.num_tasks = self.num_tasks.unwrap_or(g.num_tasks);
        g.center_entry_low = self.center_entry_low.unwrap_or(g.center_entry_low);
        g.center_entry_high = self.center_entry_high.unwrap_or(g.center_entry_high);
        g.perturbation_std = self.perturbation_std.unwrap_or(g.perturbation_std);
        g.spectral_target = self.spectral_target.unwrap_or(g.spectral_target);
        g.seed = self.seed.unwrap_or(g.seed);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaPatch {
    pub adaptation_rate: Option<f64>,
    pub learning_rate: Option<f64>,
    pub radius: Option<f64>,
    pub num_perturbations: Option<usize>,
    pub horizon: Option<usize>,
    pub inner_perturbations: Option<usize>,
    pub task_batch_size: Option<usize>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
}

impl MetaPatch {
    fn full(m: &MetaConfig) -> Self {
        Self {
            adaptation_rate: Some(m.adaptation_rate),
            learning_rate: Some(m.learning_rate),
            radius: Some(m.smoothing.radius),
            num_perturbations: Some(m.smoothing.num_perturbations),
            horizon: Some(m.smoothing.horizon),
            inner_perturbations: m.inner_perturbations,
            task_batch_size: Some(m.task_batch_size),
            max_iterations: Some(m.max_iterations),
            tolerance: Some(m.tolerance),
            seed: Some(m.seed),
        }
    }

    fn apply(self, m: &mut MetaConfig) {
        m.adaptation_rate = self.adaptation_rate.unwrap_or(m.adaptation_rate);
        m.learning_rate = self.learning_rate.unwrap_or(m.learning_rate);
        m.smoothing = SmoothingParams {
            radius: self.radius.unwrap_or(m.smoothing.radius),
            num_perturbations: self.num_perturbations.unwrap_or(m.smoothing.num_perturbations),
            horizon: self.horizon.unwrap_or(m.smoothing.horizon),
        };
        if self.inner_perturbations.is_some() {
            m.inner_perturbations = self.inner_perturbations;
        }
        m.task_batch_size = self.task_batch_size.unwrap_or(m.task_batch_size);
        m.max_iterations = self.max_iterations.unwrap_or(m.max_iterations);
        m.tolerance = self.tolerance.unwrap_or(m.tolerance);
        m.seed = self.seed.unwrap_or(m.seed);
    }
}

/// Command-line overrides, applied after the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
}

/// Preset (flag, then file, then `fig1-d2`), config file, then flags.
pub fn resolve(o: &Overrides) -> Result<ExperimentSpec, CliError> {
    let file = o.config.as_deref().map(ConfigFile::load).transpose()?;
    let base_preset = o
        .preset
        .or(file.as_ref().and_then(|f| f.preset))
        .unwrap_or(Preset::Fig1D2);
    let mut spec = ExperimentSpec::preset(base_preset, 0);
    if let Some(mut file) = file {
        if o.preset.is_some() {
            file.preset = None;
        }
        let base_dir = o
            .config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        spec = spec.apply(file, &base_dir)?;
    }
    if let Some(seed) = o.seed {
        spec.reseed(seed);
    }
    if let Some(mode) = o.mode {
        spec.mode = mode;
    }
    if let Some(out) = &o.out {
        spec.outputs = out.clone();
    }
    spec.validate()?;
    Ok(spec)
}
