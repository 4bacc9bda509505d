//! Experiment execution and output files.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use metalqr::diag::{diagnose, DiagnosticsReport};
use metalqr::zoo::{run_meta_optimization_with, IterationRecord, LearningTrace, RolloutCost};
use metalqr::{PolicyGain, TaskSet};

use crate::config::{ExperimentSpec, TaskSource};
use crate::format::{load_tasks, save_tasks};
use crate::taskgen::generate_tasks;
use crate::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const TASKS_FILE: &str = "tasks.toml";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub struct RunSummary {
    pub tasks: TaskSet,
    pub trace: LearningTrace,
    pub initial: DiagnosticsReport,
    pub last: DiagnosticsReport,
}

/// Shortest decimal that parses back to the same bits.
fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn load_or_generate(spec: &ExperimentSpec) -> Result<TaskSet, CliError> {
    match &spec.tasks {
        TaskSource::File(p) => load_tasks(p),
        TaskSource::Generate(g) => generate_tasks(g, spec.meta.adaptation_rate).map_err(CliError::Run),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

struct TraceWriter {
    trace: csv::Writer<File>,
    timing: csv::Writer<File>,
    trace_path: PathBuf,
    failure: Option<CliError>,
}

impl TraceWriter {
    fn create(dir: &Path, tasks: usize, gain_shape: (usize, usize)) -> Result<Self, CliError> {
        let open = |name: &str| {
            let path = dir.join(name);
            csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e.into()))
        };
        let mut trace = open(TRACE_FILE)?;
        let mut timing = open(TIMING_FILE)?;
        let mut header = vec!["iteration".to_string(), "ratio".into(), "meta_grad_norm".into()];
        header.extend((0..tasks).map(|i| format!("gap_{i}")));
        header.extend(["maml_stabilizing", "meta_objective", "exact_error"].map(String::from));
        for r in 0..gain_shape.0 {
            header.extend((0..gain_shape.1).map(|c| format!("k_{r}_{c}")));
        }
        let trace_path = dir.join(TRACE_FILE);
        trace.write_record(&header).map_err(|e| CliError::io(&trace_path, e.into()))?;
        timing
            .write_record(["iteration", "wall_secs"])
            .map_err(|e| CliError::io(&dir.join(TIMING_FILE), e.into()))?;
        Ok(Self {
            trace,
            timing,
            trace_path,
            failure: None,
        })
    }

    fn write(&mut self, rec: &IterationRecord) {
        if self.failure.is_some() {
            return;
        }
        let mut row = vec![rec.iteration.to_string(), num(rec.ratio), num(rec.meta_gradient_norm)];
        row.extend(rec.gaps.iter().copied().map(num));
        row.push(rec.maml_stabilizing.map(|b| b.to_string()).unwrap_or_default());
        row.push(opt(rec.meta_objective));
        row.push(opt(rec.exact_error));
        row.extend(metalqr::linalg::row_major(rec.policy.matrix()).into_iter().map(num));
        let result = self
            .trace
            .write_record(&row)
            .and_then(|_| self.trace.flush().map_err(Into::into))
            .and_then(|_| self.timing.write_record([rec.iteration.to_string(), num(rec.wall_seconds)]))
            .and_then(|_| self.timing.flush().map_err(Into::into));
        if let Err(e) = result {
            self.failure = Some(CliError::io(&self.trace_path, e.into()));
        }
    }
}

pub fn write_diagnostics(path: &Path, reports: &[(&str, &DiagnosticsReport)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let mut rows = vec![vec![
        "policy".to_string(),
        "task".into(),
        "stable".into(),
        "maml_stabilizing".into(),
        "sublevel_margin".into(),
        "lambda_initial".into(),
        "lambda_noise".into(),
        "graddom_satisfied".into(),
        "trust_radius".into(),
    ]];
    for (label, report) in reports {
        for (i, t) in report.tasks.iter().enumerate() {
            rows.push(vec![
                label.to_string(),
                i.to_string(),
                t.stable.to_string(),
                t.maml_stabilizing.to_string(),
                num(t.sublevel_margin),
                num(t.domination.lambda_initial),
                num(t.domination.lambda_noise),
                t.graddom_satisfied.to_string(),
                opt(report.trust_radius),
            ]);
        }
    }
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Loads or generates the tasks, runs the optimization from `K0 = 0` and
/// writes `tasks.toml`, `manifest.toml`, `trace.csv`, `timing.csv` and
/// `diagnostics.csv` into the output directory. Trace rows are flushed as
/// they are produced, so a failed run leaves its partial trace behind.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunSummary, CliError> {
    spec.validate()?;
    let tasks = load_or_generate(spec)?;
    let dir = &spec.outputs;
    create_dir(dir)?;
    save_tasks(&tasks, &dir.join(TASKS_FILE))?;
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, spec.manifest()).map_err(|e| CliError::io(&manifest, e))?;

    let k0 = PolicyGain::zeros(tasks.control_dim(), tasks.state_dim());
    let eta = spec.meta.adaptation_rate;
    let initial = diagnose(&tasks, &k0, &k0, eta, 1.0).map_err(CliError::Run)?;

    let mut writer = TraceWriter::create(dir, tasks.len(), (tasks.control_dim(), tasks.state_dim()))?;
    let result = run_meta_optimization_with(&tasks, &k0, &spec.meta, spec.run_options(), &RolloutCost, |rec| {
        writer.write(rec)
    });
    if let Some(e) = writer.failure.take() {
        return Err(e);
    }
    let trace = result.map_err(CliError::Run)?;

    let last_k = &trace.records.last().expect("at least one record").policy;
    let last = diagnose(&tasks, last_k, &k0, eta, 1.0).map_err(CliError::Run)?;
    write_diagnostics(&dir.join(DIAGNOSTICS_FILE), &[("initial", &initial), ("final", &last)])?;
    Ok(RunSummary {
        tasks,
        trace,
        initial,
        last,
    })
}
