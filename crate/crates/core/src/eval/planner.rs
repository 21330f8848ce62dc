use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::TextEncoder;
use crate::graph::{Action, NodeId, RobotGraph, SceneGraph, Subtask, Trace};
use crate::network::{forward, predict, Checkpoint, CheckpointError, ModelConfig, ModelParams};

/// What a planner sees at one step.
#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    pub task_id: u64,
    pub stage: usize,
    pub instruction: &'a str,
    pub robot: &'a RobotGraph,
    pub scene: &'a SceneGraph,
}

/// Maps the current state to the next subtask; failures are reported as text
/// and scored as wrong answers.
pub trait Planner: Sync {
    fn plan(&self, q: &Query<'_>) -> Result<Subtask, String>;
}

/// The trained network.
pub struct GridPlanner {
    pub params: ModelParams<f64>,
    pub cfg: ModelConfig,
    pub encoder: Arc<dyn TextEncoder>,
}

impl GridPlanner {
    pub fn from_checkpoint(ck: &Checkpoint, encoder: Arc<dyn TextEncoder>) -> Result<Self, CheckpointError> {
        ck.ensure_encoder(&encoder.digest())?;
        Ok(Self {
            params: ck.params.clone(),
            cfg: ck.model.clone(),
            encoder,
        })
    }
}

impl Planner for GridPlanner {
    fn plan(&self, q: &Query<'_>) -> Result<Subtask, String> {
        forward(q.instruction, q.robot, q.scene, &self.params, &self.cfg, self.encoder.as_ref())
            .map(|out| predict(&out))
            .map_err(|e| e.to_string())
    }
}

/// Answers from the stored ground truth of each task.
pub struct OraclePlanner {
    answers: HashMap<(u64, usize), Subtask>,
}

impl OraclePlanner {
    pub fn new(traces: &[Trace]) -> Self {
        let answers = traces
            .iter()
            .flat_map(|t| t.subtasks.iter().enumerate().map(|(i, s)| ((t.task_id, i), *s)))
            .collect();
        Self { answers }
    }
}

impl Planner for OraclePlanner {
    fn plan(&self, q: &Query<'_>) -> Result<Subtask, String> {
        self.answers
            .get(&(q.task_id, q.stage))
            .copied()
            .ok_or_else(|| format!("no ground truth for task {} stage {}", q.task_id, q.stage))
    }
}

/// How the target object relates to the current state, as far as that can
/// be told without reading the instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectRole {
    /// The scene root.
    Floor,
    /// The object in the gripper.
    Grasped,
    /// Anything else.
    Other,
}

impl ObjectRole {
    pub fn of(id: NodeId, r: &RobotGraph, s: &SceneGraph) -> Self {
        if s.roots().first() == Some(&id) {
            ObjectRole::Floor
        } else if r.grasped() == Some(id) {
            ObjectRole::Grasped
        } else {
            ObjectRole::Other
        }
    }

    /// The concrete node the role points to in this state, if any.
    pub fn resolve(self, r: &RobotGraph, s: &SceneGraph) -> Option<NodeId> {
        match self {
            ObjectRole::Floor => s.roots().first().copied(),
            ObjectRole::Grasped => r.grasped(),
            ObjectRole::Other => None,
        }
    }
}

/// Constant predictor: one action and one object role for every stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityBaseline {
    pub action: Action,
    pub role: ObjectRole,
}

fn argmax<K: Copy + Ord>(counts: &HashMap<K, usize>) -> Option<K> {
    // Highest count; ties go to the smallest key so the fit is deterministic.
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| *k)
}

impl MajorityBaseline {
    /// Most frequent action and, separately, most frequent object role among
    /// the roles that name a node.
    pub fn fit(traces: &[Trace]) -> Self {
        let mut actions = HashMap::new();
        let mut roles = HashMap::new();
        for (st, sub) in traces.iter().flat_map(|t| t.stages.iter().zip(&t.subtasks)) {
            *actions.entry(sub.action).or_insert(0) += 1;
            let role = ObjectRole::of(sub.object_id, &st.robot, &st.scene);
            if role != ObjectRole::Other {
                *roles.entry(role).or_insert(0) += 1;
            }
        }
        Self {
            action: argmax(&actions).unwrap_or(Action::Finish),
            role: argmax(&roles).unwrap_or(ObjectRole::Floor),
        }
    }

    /// Most frequent (action, role) pair among roles that name a node.
    pub fn fit_joint(traces: &[Trace]) -> Self {
        let mut pairs = HashMap::new();
        for (st, sub) in traces.iter().flat_map(|t| t.stages.iter().zip(&t.subtasks)) {
            let role = ObjectRole::of(sub.object_id, &st.robot, &st.scene);
            if role != ObjectRole::Other {
                *pairs.entry((sub.action, role)).or_insert(0) += 1;
            }
        }
        let (action, role) = argmax(&pairs).unwrap_or((Action::Finish, ObjectRole::Floor));
        Self { action, role }
    }
}

impl Planner for MajorityBaseline {
    fn plan(&self, q: &Query<'_>) -> Result<Subtask, String> {
        let id = self
            .role
            .resolve(q.robot, q.scene)
            .or_else(|| ObjectRole::Floor.resolve(q.robot, q.scene))
            .ok_or("empty scene")?;
        Ok(Subtask::new(self.action, id))
    }
}
