//! TOML records for matrices and task sets.
//!
//! Floats are written in shortest round-trip decimal form, so a saved task set
//! loads back bit for bit.

use std::fs;
use std::path::Path;

use metalqr::linalg::{matrix_from_row_major, row_major};
use metalqr::{LqrTask, Matrix, TaskSet};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Dense matrix with explicit shape and row-major entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            entries: row_major(m),
        }
    }

    pub fn to_matrix(&self, context: &str) -> Result<Matrix, CliError> {
        matrix_from_row_major(self.rows, self.cols, &self.entries)
            .map_err(|e| CliError::Input(format!("{context}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub weight: f64,
    pub a: MatrixRecord,
    pub b: MatrixRecord,
    pub q: MatrixRecord,
    pub r: MatrixRecord,
    pub psi: MatrixRecord,
    pub sigma0: MatrixRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub state_dim: usize,
    pub control_dim: usize,
    #[serde(rename = "task")]
    pub tasks: Vec<TaskRecord>,
}

impl TaskFile {
    pub fn from_set(set: &TaskSet) -> Self {
        Self {
            state_dim: set.state_dim(),
            control_dim: set.control_dim(),
            tasks: set
                .iter()
                .map(|(t, w)| TaskRecord {
                    weight: w,
                    a: MatrixRecord::from_matrix(t.a()),
                    b: MatrixRecord::from_matrix(t.b()),
                    q: MatrixRecord::from_matrix(t.q()),
                    r: MatrixRecord::from_matrix(t.r()),
                    psi: MatrixRecord::from_matrix(t.psi()),
                    sigma0: MatrixRecord::from_matrix(t.sigma0()),
                })
                .collect(),
        }
    }

    pub fn to_set(&self) -> Result<TaskSet, CliError> {
        let mut tasks = Vec::with_capacity(self.tasks.len());
        let mut weights = Vec::with_capacity(self.tasks.len());
        for (i, rec) in self.tasks.iter().enumerate() {
            let m = |field: &str, r: &MatrixRecord| r.to_matrix(&format!("task[{i}].{field}"));
            let task = LqrTask::new(
                m("a", &rec.a)?,
                m("b", &rec.b)?,
                m("q", &rec.q)?,
                m("r", &rec.r)?,
                m("psi", &rec.psi)?,
                m("sigma0", &rec.sigma0)?,
            )
            .map_err(|e| CliError::Input(format!("task[{i}]: {e}")))?;
            if task.state_dim() != self.state_dim || task.control_dim() != self.control_dim {
                return Err(CliError::Input(format!(
                    "task[{i}]: dimensions ({}, {}) differ from the declared ({}, {})",
                    task.state_dim(),
                    task.control_dim(),
                    self.state_dim,
                    self.control_dim
                )));
            }
            tasks.push(task);
            weights.push(rec.weight);
        }
        TaskSet::weighted(tasks, weights).map_err(|e| CliError::Input(format!("task set: {e}")))
    }
}

pub fn tasks_to_toml(set: &TaskSet) -> String {
    toml::to_string(&TaskFile::from_set(set)).expect("task records serialize")
}

pub fn tasks_from_toml(text: &str) -> Result<TaskSet, CliError> {
    let file: TaskFile = toml::from_str(text).map_err(|e| CliError::Input(format!("task file: {e}")))?;
    file.to_set()
}

pub fn save_tasks(set: &TaskSet, path: &Path) -> Result<(), CliError> {
    fs::write(path, tasks_to_toml(set)).map_err(|e| CliError::io(path, e))
}

pub fn load_tasks(path: &Path) -> Result<TaskSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    tasks_from_toml(&text).map_err(|e| match e {
        CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awkward_floats_round_trip() {
        let a = Matrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.0f64.sqrt() / 7.0, 1e-300]);
        let set = TaskSet::uniform(vec![LqrTask::new(
            a * 0.9,
            Matrix::from_row_slice(2, 1, &[std::f64::consts::PI, -0.0]),
            Matrix::identity(2, 2) * 1e-7,
            Matrix::identity(1, 1) * 123456.789,
            Matrix::identity(2, 2),
            Matrix::zeros(2, 2),
        )
        .unwrap()])
        .unwrap();
        let back = tasks_from_toml(&tasks_to_toml(&set)).unwrap();
        assert_eq!(back, set);
        assert_eq!(tasks_to_toml(&back), tasks_to_toml(&set));
    }

    #[test]
    fn non_pd_r_is_an_input_error() {
        let set = TaskSet::uniform(vec![LqrTask::scalar(0.5, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()]).unwrap();
        let text = tasks_to_toml(&set).replacen("[task.r]\nrows = 1\ncols = 1\nentries = [1.0]", "[task.r]\nrows = 1\ncols = 1\nentries = [-1.0]", 1);
        assert_ne!(text, tasks_to_toml(&set));
        let err = tasks_from_toml(&text).unwrap_err();
        assert!(matches!(err, CliError::Input(ref m) if m.contains("task[0]")), "{err}");
    }
}
