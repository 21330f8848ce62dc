use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{subtask_metrics, MetricsReport};
use super::planner::{Planner, Query};
use super::EvalError;
use crate::graph::{apply_subtask, Action, Subtask, Trace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Every stage sees the stored ground-truth graphs; a task succeeds when
    /// every stage is predicted correctly.
    #[default]
    TeacherForced,
    /// Subtask metrics as in teacher forcing; a task succeeds when running
    /// the planner on its own predictions ends in `finish` with the
    /// ground-truth final scene.
    ClosedLoop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub task_id: u64,
    pub stage: usize,
    pub expected: Subtask,
    pub predicted: Option<Subtask>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub mode: EvalMode,
    pub report: MetricsReport,
    pub records: Vec<StageRecord>,
}

fn stage_records(planner: &dyn Planner, tr: &Trace) -> Vec<StageRecord> {
    tr.stages
        .iter()
        .zip(&tr.subtasks)
        .enumerate()
        .map(|(i, (st, &expected))| {
            let q = Query {
                task_id: tr.task_id,
                stage: i,
                instruction: &tr.instruction,
                robot: &st.robot,
                scene: &st.scene,
            };
            let (predicted, error) = match planner.plan(&q) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e)),
            };
            StageRecord {
                task_id: tr.task_id,
                stage: i,
                expected,
                predicted,
                error,
            }
        })
        .collect()
}

/// Scores `planner` on every stage of every trace. Tasks run in parallel;
/// records come back in trace order.
pub fn evaluate(planner: &dyn Planner, traces: &[Trace], mode: EvalMode) -> Result<EvalOutcome, EvalError> {
    let per_task: Vec<(Vec<StageRecord>, bool)> = traces
        .par_iter()
        .map(|tr| {
            let recs = stage_records(planner, tr);
            let ok = match mode {
                EvalMode::TeacherForced => recs.iter().all(|r| r.predicted == Some(r.expected)),
                EvalMode::ClosedLoop => simulate(planner, tr, None).goal_reached,
            };
            (recs, ok)
        })
        .collect();
    let task_correct = per_task.iter().filter(|t| t.1).count();
    let records: Vec<StageRecord> = per_task.into_iter().flat_map(|t| t.0).collect();
    let preds: Vec<Option<Subtask>> = records.iter().map(|r| r.predicted).collect();
    let gt: Vec<Subtask> = records.iter().map(|r| r.expected).collect();
    let report = subtask_metrics(&preds, &gt)?.with_tasks(traces.len(), task_correct);
    Ok(EvalOutcome { mode, report, records })
}

/// Teacher-forced task accuracy.
pub fn task_accuracy(planner: &dyn Planner, traces: &[Trace]) -> f64 {
    evaluate(planner, traces, EvalMode::TeacherForced)
        .map(|o| o.report.task_acc.unwrap_or(0.0))
        .unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub step: usize,
    pub prediction: Option<Subtask>,
    pub applied: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub task_id: u64,
    pub cap: usize,
    pub steps: Vec<SimStep>,
    /// The planner answered `finish` before the cap.
    pub finished: bool,
    /// Finished with the same final scene as the ground truth.
    pub goal_reached: bool,
}

impl SimulationLog {
    pub fn cap_hit(&self) -> bool {
        !self.finished
    }
}

/// Default step cap for a trace of `len` subtasks.
pub fn step_cap(len: usize) -> usize {
    2 * len + 2
}

/// Runs the planner from the task's initial graphs, applying every feasible
/// prediction, until it answers `finish` or the cap is reached.
pub fn simulate(planner: &dyn Planner, tr: &Trace, cap: Option<usize>) -> SimulationLog {
    let cap = cap.unwrap_or_else(|| step_cap(tr.len()));
    let (mut s, mut r) = (tr.scene_0.clone(), tr.robot_0.clone());
    let mut steps = Vec::new();
    let mut finished = false;
    for step in 0..cap {
        let q = Query {
            task_id: tr.task_id,
            stage: step,
            instruction: &tr.instruction,
            robot: &r,
            scene: &s,
        };
        match planner.plan(&q) {
            Ok(sub) if sub.action == Action::Finish => {
                steps.push(SimStep {
                    step,
                    prediction: Some(sub),
                    applied: true,
                    note: None,
                });
                finished = true;
                break;
            }
            Ok(sub) => {
                let (applied, note) = match apply_subtask(&s, &r, sub) {
                    Ok((s2, r2)) => {
                        s = s2;
                        r = r2;
                        (true, None)
                    }
                    Err(e) => (false, Some(e.to_string())),
                };
                steps.push(SimStep {
                    step,
                    prediction: Some(sub),
                    applied,
                    note,
                });
            }
            Err(e) => steps.push(SimStep {
                step,
                prediction: None,
                applied: false,
                note: Some(e),
            }),
        }
    }
    let goal = tr.stages.last().map(|st| &st.scene).unwrap_or(&tr.scene_0);
    SimulationLog {
        task_id: tr.task_id,
        cap,
        goal_reached: finished && &s == goal,
        finished,
        steps,
    }
}
