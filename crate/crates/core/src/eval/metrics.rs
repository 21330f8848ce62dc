use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::graph::{Action, Subtask};

/// Column of the confusion table used for predictions that failed entirely.
pub const FAILURE_COLUMN: usize = Action::COUNT;

/// A planner's answer for one stage; `None` when it produced nothing usable.
pub type Prediction = Option<Subtask>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub act_acc: f64,
    pub obj_acc: f64,
    pub sub_acc: f64,
    /// Only known when predictions can be grouped into tasks.
    pub task_acc: Option<f64>,
    pub stages: usize,
    pub act_correct: usize,
    pub obj_correct: usize,
    pub sub_correct: usize,
    pub failures: usize,
    pub tasks: usize,
    pub task_correct: usize,
    /// Rows: ground-truth action. Columns: predicted action, then failures.
    pub confusion: [[usize; Action::COUNT + 1]; Action::COUNT],
}

fn frac(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl MetricsReport {
    pub fn with_tasks(mut self, tasks: usize, task_correct: usize) -> Self {
        self.tasks = tasks;
        self.task_correct = task_correct;
        self.task_acc = Some(frac(task_correct, tasks));
        self
    }

    /// `task_acc <= sub_acc <= min(act_acc, obj_acc)`.
    pub fn is_consistent(&self) -> bool {
        let tol = 1e-12;
        let sub_ok = self.sub_acc <= self.act_acc.min(self.obj_acc) + tol;
        let task_ok = self.task_acc.is_none_or(|t| t <= self.sub_acc + tol);
        sub_ok && task_ok
    }
}

/// Action, object and joint accuracy of `predictions` against `ground_truth`.
pub fn subtask_metrics(predictions: &[Prediction], ground_truth: &[Subtask]) -> Result<MetricsReport, EvalError> {
    if predictions.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            ground_truth: ground_truth.len(),
        });
    }
    let mut confusion = [[0usize; Action::COUNT + 1]; Action::COUNT];
    let (mut act, mut obj, mut sub, mut failures) = (0, 0, 0, 0);
    for (p, g) in predictions.iter().zip(ground_truth) {
        let row = &mut confusion[g.action.index()];
        match p {
            Some(p) => {
                row[p.action.index()] += 1;
                let a = p.action == g.action;
                let o = p.object_id == g.object_id;
                act += a as usize;
                obj += o as usize;
                sub += (a && o) as usize;
            }
            None => {
                row[FAILURE_COLUMN] += 1;
                failures += 1;
            }
        }
    }
    let n = ground_truth.len();
    Ok(MetricsReport {
        act_acc: frac(act, n),
        obj_acc: frac(obj, n),
        sub_acc: frac(sub, n),
        task_acc: None,
        stages: n,
        act_correct: act,
        obj_correct: obj,
        sub_correct: sub,
        failures,
        tasks: 0,
        task_correct: 0,
        confusion,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "act_acc  {:.4} ({}/{})", self.act_acc, self.act_correct, self.stages)?;
        writeln!(f, "obj_acc  {:.4} ({}/{})", self.obj_acc, self.obj_correct, self.stages)?;
        writeln!(f, "sub_acc  {:.4} ({}/{})", self.sub_acc, self.sub_correct, self.stages)?;
        match self.task_acc {
            Some(t) => writeln!(f, "task_acc {:.4} ({}/{})", t, self.task_correct, self.tasks)?,
            None => writeln!(f, "task_acc n/a")?,
        }
        writeln!(f, "failures {}", self.failures)
    }
}
