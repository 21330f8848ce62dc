use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::graph::{
    apply_subtask, Action, Articulation, GraphError, NodeId, RobotGraph, SceneGraph, Stage, Subtask, Trace,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTemplate {
    Relocate,
    FetchFromContainer,
    StowIntoContainer,
    GoAndOpen,
    GoAndClose,
}

impl TaskTemplate {
    pub const ALL: [TaskTemplate; 5] = [
        TaskTemplate::Relocate,
        TaskTemplate::FetchFromContainer,
        TaskTemplate::StowIntoContainer,
        TaskTemplate::GoAndOpen,
        TaskTemplate::GoAndClose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskTemplate::Relocate => "relocate",
            TaskTemplate::FetchFromContainer => "fetch_from_container",
            TaskTemplate::StowIntoContainer => "stow_into_container",
            TaskTemplate::GoAndOpen => "go_and_open",
            TaskTemplate::GoAndClose => "go_and_close",
        }
    }

    /// Per-task counts of (move, pick, place_to, open, close).
    fn profile(self) -> [f64; 5] {
        match self {
            TaskTemplate::Relocate => [2.0, 1.0, 1.0, 0.0, 0.0],
            TaskTemplate::FetchFromContainer => [1.0, 1.0, 0.0, 1.0, 1.0],
            TaskTemplate::StowIntoContainer => [2.0, 1.0, 1.0, 1.0, 1.0],
            TaskTemplate::GoAndOpen => [1.0, 0.0, 0.0, 1.0, 0.0],
            TaskTemplate::GoAndClose => [1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn needs_containers(self) -> bool {
        self != TaskTemplate::Relocate
    }
}

/// Sampling weights over templates, in [`TaskTemplate::ALL`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateWeights(pub [f64; 5]);

impl Default for TemplateWeights {
    fn default() -> Self {
        fit_template_mix()
    }
}

impl TemplateWeights {
    pub fn get(&self, t: TaskTemplate) -> f64 {
        self.0[t as usize]
    }

    /// Expected (move, pick, place_to, open, close) per task.
    pub fn expected_profile(&self) -> [f64; 5] {
        let mut out = [0.0; 5];
        for t in TaskTemplate::ALL {
            for (o, p) in out.iter_mut().zip(t.profile()) {
                *o += self.get(t) * p;
            }
        }
        out
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TaskTemplate {
        let total: f64 = self.0.iter().sum();
        let mut x = rng.random_range(0.0..total);
        for t in TaskTemplate::ALL {
            x -= self.get(t);
            if x < 0.0 {
                return t;
            }
        }
        *TaskTemplate::ALL.iter().rev().find(|t| self.get(**t) > 0.0).expect("positive weight")
    }
}

/// Subtask counts of the reference 70-object corpus.
pub const REFERENCE_COUNTS: [(Action, u64); 8] = [
    (Action::Move, 18347),
    (Action::Pick, 11811),
    (Action::PlaceTo, 17924),
    (Action::RevoluteOpen, 3456),
    (Action::RevoluteClose, 3456),
    (Action::LongitudinalOpen, 3503),
    (Action::LongitudinalClose, 3503),
    (Action::Finish, 19981),
];

const FIT_FLOOR: f64 = 0.05;
const FIT_RATIO_PENALTY: f64 = 100.0;

/// Euclidean projection onto `{x >= 0, sum x = total}`.
fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - total) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Template weights fit to the reference per-task action marginals.
///
/// No template mix reproduces the reference exactly (it has more placements
/// than picks), so this minimizes the squared marginal error plus a penalty
/// pulling the move:pick ratio to the reference, with every weight kept at
/// or above 0.05. Projected gradient descent, fully deterministic.
pub fn fit_template_mix() -> TemplateWeights {
    let tasks = REFERENCE_COUNTS[7].1 as f64;
    let c = |i: usize| REFERENCE_COUNTS[i].1 as f64 / tasks;
    let target = [c(0), c(1), c(2), c(3) + c(5), c(4) + c(6)];
    let ratio = c(0) / c(1);
    let profiles: Vec<[f64; 5]> = TaskTemplate::ALL.iter().map(|t| t.profile()).collect();
    let k = profiles.len();
    let free = 1.0 - FIT_FLOOR * k as f64;
    let mut w = vec![1.0 / k as f64; k];
    for _ in 0..20_000 {
        let mut m = [0.0; 5];
        for (wi, p) in w.iter().zip(&profiles) {
            for f in 0..5 {
                m[f] += wi * p[f];
            }
        }
        let r = m[0] / m[1];
        let mut grad = vec![0.0; k];
        for (j, p) in profiles.iter().enumerate() {
            for f in 0..5 {
                grad[j] += 2.0 * (m[f] - target[f]) * p[f];
            }
            let dr = (p[0] * m[1] - m[0] * p[1]) / (m[1] * m[1]);
            grad[j] += 2.0 * FIT_RATIO_PENALTY * (r - ratio) * dr;
        }
        let shifted: Vec<f64> = w
            .iter()
            .zip(&grad)
            .map(|(wi, g)| wi - 1e-3 * g - FIT_FLOOR)
            .collect();
        w = project_simplex(&shifted, free).into_iter().map(|x| x + FIT_FLOOR).collect();
    }
    TemplateWeights([w[0], w[1], w[2], w[3], w[4]])
}

/// Objects named by a task's instruction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Slots {
    pub object: Option<NodeId>,
    pub source: Option<NodeId>,
    pub target: Option<NodeId>,
    pub container: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub template: TaskTemplate,
    pub slots: Slots,
    pub subtasks: Vec<Subtask>,
}

fn open_action(kind: Articulation) -> Action {
    Action::toggle(kind, true).expect("articulated")
}

fn close_action(kind: Articulation) -> Action {
    Action::toggle(kind, false).expect("articulated")
}

/// Builds a feasible subtask sequence for `template` in `(s, r)`.
pub fn sample_task(
    s: &SceneGraph,
    r: &RobotGraph,
    template: TaskTemplate,
    rng: &mut impl Rng,
) -> Result<Task, DatasetError> {
    let unsat = |reason: &str| DatasetError::SlotUnsatisfiable {
        template,
        reason: reason.to_string(),
    };
    if r.grasped().is_some() {
        return Err(unsat("the gripper must start empty"));
    }
    let nodes = &s.graph().nodes;
    let is_surface = |id: NodeId| {
        s.graph()
            .node(id)
            .is_some_and(|n| n.has_surface() && n.articulation() == Articulation::None && s.depth(id) == 2)
    };
    let containers = |open: bool| -> Vec<NodeId> {
        nodes
            .iter()
            .filter(|n| n.articulation() != Articulation::None && n.is_open() == Some(open))
            .map(|n| n.id)
            .collect()
    };
    let items_on_surfaces: Vec<NodeId> = nodes
        .iter()
        .filter(|n| n.is_pickable() && s.parent(n.id).is_some_and(is_surface))
        .map(|n| n.id)
        .collect();
    let kind_of = |id: NodeId| s.graph().node(id).expect("node").articulation();

    let (slots, subtasks) = match template {
        TaskTemplate::Relocate => {
            let &obj = items_on_surfaces.choose(rng).ok_or_else(|| unsat("no item on a surface"))?;
            let src = s.parent(obj).expect("parent");
            let dsts: Vec<NodeId> = nodes.iter().map(|n| n.id).filter(|&id| id != src && is_surface(id)).collect();
            let &dst = dsts.choose(rng).ok_or_else(|| unsat("no second surface"))?;
            (
                Slots {
                    object: Some(obj),
                    source: Some(src),
                    target: Some(dst),
                    container: None,
                },
                vec![
                    Subtask::new(Action::Move, src),
                    Subtask::new(Action::Pick, obj),
                    Subtask::new(Action::Move, dst),
                    Subtask::new(Action::PlaceTo, dst),
                    Subtask::finish(),
                ],
            )
        }
        TaskTemplate::FetchFromContainer => {
            let filled: Vec<NodeId> = containers(false)
                .into_iter()
                .filter(|&c| s.children(c).any(|i| s.graph().node(i).is_some_and(|n| n.is_pickable())))
                .collect();
            let &c = filled.choose(rng).ok_or_else(|| unsat("no closed container holds an item"))?;
            let inside: Vec<NodeId> = s.children(c).collect();
            let &obj = inside.choose(rng).expect("non-empty");
            let kind = kind_of(c);
            (
                Slots {
                    object: Some(obj),
                    container: Some(c),
                    ..Default::default()
                },
                vec![
                    Subtask::new(Action::Move, c),
                    Subtask::new(open_action(kind), c),
                    Subtask::new(Action::Pick, obj),
                    Subtask::new(close_action(kind), c),
                    Subtask::finish(),
                ],
            )
        }
        TaskTemplate::StowIntoContainer => {
            let &obj = items_on_surfaces.choose(rng).ok_or_else(|| unsat("no item on a surface"))?;
            let src = s.parent(obj).expect("parent");
            let &c = containers(false).choose(rng).ok_or_else(|| unsat("no closed container"))?;
            let kind = kind_of(c);
            (
                Slots {
                    object: Some(obj),
                    source: Some(src),
                    container: Some(c),
                    ..Default::default()
                },
                vec![
                    Subtask::new(Action::Move, src),
                    Subtask::new(Action::Pick, obj),
                    Subtask::new(Action::Move, c),
                    Subtask::new(open_action(kind), c),
                    Subtask::new(Action::PlaceTo, c),
                    Subtask::new(close_action(kind), c),
                    Subtask::finish(),
                ],
            )
        }
        TaskTemplate::GoAndOpen | TaskTemplate::GoAndClose => {
            let want_open = template == TaskTemplate::GoAndClose;
            let &c = containers(want_open)
                .choose(rng)
                .ok_or_else(|| unsat(if want_open { "no open container" } else { "no closed container" }))?;
            let kind = kind_of(c);
            let act = if want_open { close_action(kind) } else { open_action(kind) };
            (
                Slots {
                    container: Some(c),
                    ..Default::default()
                },
                vec![Subtask::new(Action::Move, c), Subtask::new(act, c), Subtask::finish()],
            )
        }
    };
    Ok(Task {
        template,
        slots,
        subtasks,
    })
}

/// Applies `subtasks` in order, recording the graphs seen before each one.
pub fn roll_trace(
    task_id: u64,
    instruction: impl Into<String>,
    s0: &SceneGraph,
    r0: &RobotGraph,
    subtasks: &[Subtask],
) -> Result<Trace, GraphError> {
    let mut stages = Vec::with_capacity(subtasks.len());
    let (mut s, mut r) = (s0.clone(), r0.clone());
    for &st in subtasks {
        stages.push(Stage {
            scene: s.clone(),
            robot: r.clone(),
        });
        let (ns, nr) = apply_subtask(&s, &r, st)?;
        s = ns;
        r = nr;
    }
    Ok(Trace {
        task_id,
        instruction: instruction.into(),
        scene_0: s0.clone(),
        robot_0: r0.clone(),
        subtasks: subtasks.to_vec(),
        stages,
    })
}
