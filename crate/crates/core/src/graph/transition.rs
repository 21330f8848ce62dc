use std::collections::BTreeSet;

use super::types::*;
use super::validate::{validate_pair, ValidationReport};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    InvalidGraph(ValidationReport),
    #[error("{action} precondition violated: {reason}")]
    PreconditionViolated { action: Action, reason: String },
}

fn violated(action: Action, reason: impl Into<String>) -> GraphError {
    GraphError::PreconditionViolated {
        action,
        reason: reason.into(),
    }
}

/// An object inside a closed articulated container cannot be reached.
fn enclosed_by_closed(s: &SceneGraph, id: NodeId) -> Option<NodeId> {
    let e = s.parent_edge(id)?;
    if e.relation != Relation::In {
        return None;
    }
    let parent = s.graph().node(e.dst)?;
    (parent.is_open() == Some(false)).then_some(parent.id)
}

/// Relation a placed object takes with its new parent.
pub fn placement_relation(target: &Node) -> Relation {
    if target.articulation() == Articulation::None {
        Relation::On
    } else {
        Relation::In
    }
}

/// Nodes the robot is near after moving to `target`: the target, whatever it
/// holds, and everything sharing its parent.
pub fn near_set(s: &SceneGraph, target: NodeId) -> BTreeSet<NodeId> {
    let mut near: BTreeSet<NodeId> = BTreeSet::new();
    near.insert(target);
    near.extend(s.children(target));
    if let Some(parent) = s.parent(target) {
        near.extend(s.children(parent));
    }
    near
}

/// Checks the per-action preconditions of `subtask` in `(s, r)`.
pub fn check_preconditions(s: &SceneGraph, r: &RobotGraph, subtask: Subtask) -> Result<(), GraphError> {
    let action = subtask.action;
    if action == Action::Finish {
        return Ok(());
    }
    let target = s
        .graph()
        .node(subtask.object_id)
        .ok_or_else(|| violated(action, format!("no scene node {}", subtask.object_id)))?;
    let held = r.grasped();

    match action {
        Action::Move => {
            if held == Some(target.id) {
                return Err(violated(action, "target is in the gripper"));
            }
            if s.parent(target.id).is_none() {
                return Err(violated(action, "cannot move to the root of the scene"));
            }
        }
        Action::Pick => {
            if !r.is_near(target.id) {
                return Err(violated(action, "robot is not near the target"));
            }
            if held.is_some() {
                return Err(violated(action, "gripper is not empty"));
            }
            if !target.is_pickable() || target.articulation() != Articulation::None {
                return Err(violated(action, "target is not pickable"));
            }
            if let Some(c) = enclosed_by_closed(s, target.id) {
                return Err(violated(action, format!("container {c} is closed")));
            }
        }
        Action::PlaceTo => {
            if held.is_none() {
                return Err(violated(action, "nothing is grasped"));
            }
            if !r.is_near(target.id) {
                return Err(violated(action, "robot is not near the target"));
            }
            if !target.has_surface() {
                return Err(violated(action, "target has no surface"));
            }
            if target.is_open() == Some(false) {
                return Err(violated(action, "target is closed"));
            }
        }
        Action::RevoluteOpen
        | Action::RevoluteClose
        | Action::LongitudinalOpen
        | Action::LongitudinalClose => {
            let (kind, goal_open) = action.articulation_goal().expect("open/close action");
            if !r.is_near(target.id) {
                return Err(violated(action, "robot is not near the target"));
            }
            if target.articulation() != kind {
                return Err(violated(
                    action,
                    format!("target articulation is {}", target.articulation().as_str()),
                ));
            }
            if target.is_open() == Some(goal_open) {
                let state = if goal_open { "already open" } else { "already closed" };
                return Err(violated(action, state));
            }
        }
        Action::Finish => unreachable!(),
    }
    Ok(())
}

/// Every subtask whose preconditions hold. `finish` is listed once, naming
/// the robot.
pub fn feasible_subtasks(s: &SceneGraph, r: &RobotGraph) -> Result<BTreeSet<Subtask>, GraphError> {
    let report = validate_pair(s, r);
    if !report.is_ok() {
        return Err(GraphError::InvalidGraph(report));
    }
    let mut out = BTreeSet::new();
    for node in &s.graph().nodes {
        for action in Action::ALL.iter().copied().filter(|&a| a != Action::Finish) {
            let st = Subtask::new(action, node.id);
            if check_preconditions(s, r, st).is_ok() {
                out.insert(st);
            }
        }
    }
    out.insert(Subtask::finish());
    Ok(out)
}

fn mirror(s: &SceneGraph, id: NodeId) -> Node {
    s.graph().node(id).expect("mirrored node exists").clone()
}

/// Robot graph for a robot holding `held` and near every node in `near`.
fn robot_graph(s: &SceneGraph, robot: &Node, held: Option<NodeId>, near: &BTreeSet<NodeId>) -> RobotGraph {
    let mut nodes = vec![robot.clone()];
    let mut edges = Vec::new();
    if let Some(h) = held {
        nodes.push(mirror(s, h));
        edges.push(Edge::new(h, ROBOT_ID, Relation::GraspedBy));
    }
    for &n in near.iter().filter(|&&n| Some(n) != held) {
        nodes.push(mirror(s, n));
        edges.push(Edge::new(ROBOT_ID, n, Relation::Near));
    }
    RobotGraph::new(nodes, edges)
}

/// Executes `subtask`, returning the next-stage graphs. The inputs are left
/// untouched.
pub fn apply_subtask(
    s: &SceneGraph,
    r: &RobotGraph,
    subtask: Subtask,
) -> Result<(SceneGraph, RobotGraph), GraphError> {
    check_preconditions(s, r, subtask)?;
    let robot = r
        .graph()
        .node(ROBOT_ID)
        .cloned()
        .unwrap_or_else(|| Node::new(ROBOT_ID, "robot"));
    let target = subtask.object_id;
    let held = r.grasped();
    let near: BTreeSet<NodeId> = r.near().collect();

    match subtask.action {
        Action::Finish => Ok((s.clone(), r.clone())),
        Action::Move => {
            let near = near_set(s, target);
            Ok((s.clone(), robot_graph(s, &robot, held, &near)))
        }
        Action::Pick => {
            let mut scene = s.clone();
            scene.0.remove_edges(|e| e.src == target && e.relation.is_parent_link());
            let mut near = near;
            near.remove(&target);
            let robot_graph = robot_graph(&scene, &robot, Some(target), &near);
            Ok((scene, robot_graph))
        }
        Action::PlaceTo => {
            let held = held.expect("checked: something is grasped");
            let mut scene = s.clone();
            let relation = placement_relation(s.graph().node(target).expect("checked"));
            scene.0.add_edge(Edge::new(held, target, relation));
            let mut near = near;
            near.insert(held);
            let robot_graph = robot_graph(&scene, &robot, None, &near);
            Ok((scene, robot_graph))
        }
        action => {
            let (_, goal_open) = action.articulation_goal().expect("open/close action");
            let state = if goal_open { STATE_OPEN } else { STATE_CLOSED };
            let mut scene = s.clone();
            scene
                .0
                .node_mut(target)
                .expect("checked")
                .attributes
                .insert(ATTR_STATE.to_string(), state.to_string());
            let robot_graph = robot_graph(&scene, &robot, held, &near);
            Ok((scene, robot_graph))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate::validate_pair;

    /// floor 0; dining room 1; dining table 2 (surface); teacup 3 on the table;
    /// door 4 (revolute, closed) in the room.
    fn five_node_scene() -> SceneGraph {
        SceneGraph::new(
            vec![
                Node::new(0, "floor"),
                Node::new(1, "dining room"),
                Node::new(2, "dining table")
                    .with_attr(ATTR_COLOR, "black")
                    .with_attr(ATTR_SURFACE, "true"),
                Node::new(3, "teacup")
                    .with_attr(ATTR_COLOR, "white")
                    .with_attr(ATTR_PICKABLE, "true"),
                Node::new(4, "door")
                    .with_attr(ATTR_ARTICULATION, "revolute")
                    .with_attr(ATTR_STATE, STATE_CLOSED),
            ],
            vec![
                Edge::new(1, 0, Relation::On),
                Edge::new(2, 1, Relation::In),
                Edge::new(3, 2, Relation::On),
                Edge::new(4, 1, Relation::In),
            ],
        )
    }

    #[test]
    fn idle_robot_can_only_move_or_finish() {
        let s = five_node_scene();
        let r = RobotGraph::initial();
        let f = feasible_subtasks(&s, &r).unwrap();
        let expected: BTreeSet<Subtask> = [
            Subtask::new(Action::Move, 1),
            Subtask::new(Action::Move, 2),
            Subtask::new(Action::Move, 3),
            Subtask::new(Action::Move, 4),
            Subtask::finish(),
        ]
        .into_iter()
        .collect();
        assert_eq!(f, expected);
    }

    #[test]
    fn near_teacup_allows_pick() {
        let s = five_node_scene();
        let (s, r) = apply_subtask(&s, &RobotGraph::initial(), Subtask::new(Action::Move, 2)).unwrap();
        // Near the table: the table, its teacup, and the door sharing the room.
        assert_eq!(r.near().collect::<Vec<_>>(), vec![2, 3, 4]);
        let f = feasible_subtasks(&s, &r).unwrap();
        assert!(f.contains(&Subtask::new(Action::Pick, 3)));
        assert!(f.contains(&Subtask::new(Action::RevoluteOpen, 4)));
        assert!(!f.contains(&Subtask::new(Action::RevoluteClose, 4)));
        assert!(!f.contains(&Subtask::new(Action::PlaceTo, 2)));
    }

    #[test]
    fn holding_teacup_near_table_allows_place() {
        let s = five_node_scene();
        let r = RobotGraph::initial();
        let (s, r) = apply_subtask(&s, &r, Subtask::new(Action::Move, 2)).unwrap();
        let (s, r) = apply_subtask(&s, &r, Subtask::new(Action::Pick, 3)).unwrap();
        assert!(validate_pair(&s, &r).is_ok());
        let f = feasible_subtasks(&s, &r).unwrap();
        assert!(f.contains(&Subtask::new(Action::PlaceTo, 2)));
        assert!(!f.iter().any(|st| st.action == Action::Pick));
    }

    #[test]
    fn pick_moves_parent_edge_into_gripper() {
        let s = five_node_scene();
        let (s1, r1) = apply_subtask(&s, &RobotGraph::initial(), Subtask::new(Action::Move, 2)).unwrap();
        let (s2, r2) = apply_subtask(&s1, &r1, Subtask::new(Action::Pick, 3)).unwrap();
        assert!(s1.graph().edges.contains(&Edge::new(3, 2, Relation::On)));
        assert!(!s2.graph().edges.contains(&Edge::new(3, 2, Relation::On)));
        assert!(r2.graph().edges.contains(&Edge::new(3, ROBOT_ID, Relation::GraspedBy)));
        assert_eq!(r2.grasped(), Some(3));
        // inputs untouched
        assert!(s1.graph().edges.contains(&Edge::new(3, 2, Relation::On)));
        assert_eq!(r1.grasped(), None);

        let (s3, _) = apply_subtask(&s2, &r2, Subtask::new(Action::PlaceTo, 2)).unwrap();
        assert_eq!(s3.graph().edges, s.graph().edges);
    }

    #[test]
    fn finish_is_identity() {
        let s = five_node_scene();
        let r = RobotGraph::initial();
        let (s2, r2) = apply_subtask(&s, &r, Subtask::new(Action::Finish, 3)).unwrap();
        assert_eq!((s2, r2), (s, r));
    }

    #[test]
    fn opening_twice_is_rejected() {
        let s = five_node_scene();
        let (s, r) = apply_subtask(&s, &RobotGraph::initial(), Subtask::new(Action::Move, 4)).unwrap();
        let (s, r) = apply_subtask(&s, &r, Subtask::new(Action::RevoluteOpen, 4)).unwrap();
        assert_eq!(s.graph().node(4).unwrap().is_open(), Some(true));
        assert_eq!(r.graph().node(4).unwrap().is_open(), Some(true));
        let err = apply_subtask(&s, &r, Subtask::new(Action::RevoluteOpen, 4)).unwrap_err();
        match err {
            GraphError::PreconditionViolated { action, reason } => {
                assert_eq!(action, Action::RevoluteOpen);
                assert!(reason.contains("already open"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = apply_subtask(&s, &r, Subtask::new(Action::LongitudinalClose, 4)).unwrap_err();
        assert!(matches!(err, GraphError::PreconditionViolated { .. }));
    }

    #[test]
    fn closed_container_blocks_pick() {
        let s = SceneGraph::new(
            vec![
                Node::new(0, "floor"),
                Node::new(1, "kitchen"),
                Node::new(2, "drawer")
                    .with_attr(ATTR_ARTICULATION, "longitudinal")
                    .with_attr(ATTR_STATE, STATE_CLOSED)
                    .with_attr(ATTR_SURFACE, "true"),
                Node::new(3, "spoon").with_attr(ATTR_PICKABLE, "true"),
            ],
            vec![
                Edge::new(1, 0, Relation::On),
                Edge::new(2, 1, Relation::In),
                Edge::new(3, 2, Relation::In),
            ],
        );
        let (s, r) = apply_subtask(&s, &RobotGraph::initial(), Subtask::new(Action::Move, 2)).unwrap();
        assert!(apply_subtask(&s, &r, Subtask::new(Action::Pick, 3)).is_err());
        let (s, r) = apply_subtask(&s, &r, Subtask::new(Action::LongitudinalOpen, 2)).unwrap();
        let (s, r) = apply_subtask(&s, &r, Subtask::new(Action::Pick, 3)).unwrap();
        let (s, r) = apply_subtask(&s, &r, Subtask::new(Action::LongitudinalClose, 2)).unwrap();
        // closed again: nothing can go back in
        assert!(apply_subtask(&s, &r, Subtask::new(Action::PlaceTo, 2)).is_err());
    }

    #[test]
    fn unknown_target_is_a_precondition_error() {
        let s = five_node_scene();
        let err = apply_subtask(&s, &RobotGraph::initial(), Subtask::new(Action::Move, 99)).unwrap_err();
        assert!(matches!(err, GraphError::PreconditionViolated { action: Action::Move, .. }));
    }
}
