use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::types::*;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(NodeId),
    DanglingEdge(Edge),
    SelfLoop(Edge),
    ArticulationState(NodeId),
    BadRelation(Edge),
    MultipleParents(NodeId),
    Cycle(NodeId),
    NoRoot,
    MultipleRoots(Vec<NodeId>),
    MissingRobot,
    RobotNotFirst,
    MultipleGrasps,
    NotMirrored(NodeId),
    MirrorMismatch(NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate id {id}"),
            Violation::DanglingEdge(e) => {
                write!(f, "dangling edge {}->{} ({:?})", e.src, e.dst, e.relation)
            }
            Violation::SelfLoop(e) => write!(f, "self loop on node {}", e.src),
            Violation::ArticulationState(id) => write!(
                f,
                "node {id}: articulation state must be present iff articulation kind is not none"
            ),
            Violation::BadRelation(e) => write!(
                f,
                "relation {:?} not allowed here ({}->{})",
                e.relation, e.src, e.dst
            ),
            Violation::MultipleParents(id) => write!(f, "node {id} has more than one parent edge"),
            Violation::Cycle(id) => write!(f, "parent chain through node {id} forms a cycle"),
            Violation::NoRoot => f.write_str("no root node"),
            Violation::MultipleRoots(ids) => write!(f, "more than one root: {ids:?}"),
            Violation::MissingRobot => f.write_str("robot graph lacks a robot node with id 0"),
            Violation::RobotNotFirst => f.write_str("robot node must carry id 0 and category robot"),
            Violation::MultipleGrasps => f.write_str("more than one grasped_by edge"),
            Violation::NotMirrored(id) => write!(f, "robot graph node {id} has no scene counterpart"),
            Violation::MirrorMismatch(id) => {
                write!(f, "robot graph node {id} disagrees with its scene counterpart")
            }
        }
    }
}

/// Every invariant violation found in a graph. Empty means well-formed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages().join("; "))
    }
}

fn check_common(g: &Graph, out: &mut Vec<Violation>) -> BTreeSet<NodeId> {
    let mut ids = BTreeSet::new();
    for n in &g.nodes {
        if !ids.insert(n.id) {
            out.push(Violation::DuplicateId(n.id));
        }
        let articulated = n.articulation() != Articulation::None;
        if articulated != n.is_open().is_some() {
            out.push(Violation::ArticulationState(n.id));
        }
    }
    for e in &g.edges {
        if e.src == e.dst {
            out.push(Violation::SelfLoop(*e));
        }
        if !ids.contains(&e.src) || !ids.contains(&e.dst) {
            out.push(Violation::DanglingEdge(*e));
        }
    }
    ids
}

pub fn validate_scene(s: &SceneGraph) -> ValidationReport {
    let g = s.graph();
    let mut out = Vec::new();
    let ids = check_common(g, &mut out);

    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for e in &g.edges {
        if !e.relation.is_parent_link() {
            out.push(Violation::BadRelation(*e));
            continue;
        }
        if parent.insert(e.src, e.dst).is_some() {
            out.push(Violation::MultipleParents(e.src));
        }
    }

    if !ids.is_empty() && ids.iter().all(|id| parent.contains_key(id)) {
        out.push(Violation::NoRoot);
    }

    // Walk each parent chain; revisiting a node means a cycle.
    let mut reported = BTreeSet::new();
    for &start in &ids {
        let mut seen = BTreeSet::new();
        let mut cur = start;
        while let Some(&p) = parent.get(&cur) {
            if !seen.insert(cur) {
                if reported.insert(cur) {
                    out.push(Violation::Cycle(cur));
                }
                break;
            }
            cur = p;
        }
    }

    ValidationReport { violations: out }
}

pub fn validate_robot(r: &RobotGraph) -> ValidationReport {
    let g = r.graph();
    let mut out = Vec::new();
    check_common(g, &mut out);

    let robots: Vec<&Node> = g.nodes.iter().filter(|n| n.category == "robot").collect();
    match g.node(ROBOT_ID) {
        None => out.push(Violation::MissingRobot),
        Some(n) if n.category != "robot" => out.push(Violation::RobotNotFirst),
        Some(_) => {}
    }
    if robots.len() > 1 {
        out.push(Violation::RobotNotFirst);
    }

    let mut grasps = 0;
    for e in &g.edges {
        match e.relation {
            Relation::GraspedBy if e.dst == ROBOT_ID => grasps += 1,
            Relation::Near if e.src == ROBOT_ID => {}
            _ => out.push(Violation::BadRelation(*e)),
        }
    }
    if grasps > 1 {
        out.push(Violation::MultipleGrasps);
    }
    ValidationReport { violations: out }
}

/// Checks both graphs plus the relations between them: every non-robot
/// robot-graph node mirrors a scene node with the same category and
/// attributes, and the scene has a single root apart from the held object
/// (which loses its parent edge while grasped).
pub fn validate_pair(s: &SceneGraph, r: &RobotGraph) -> ValidationReport {
    let mut report = validate_scene(s);
    report.violations.extend(validate_robot(r).violations);
    let held = r.grasped();
    let roots: Vec<NodeId> = s.roots().into_iter().filter(|&id| Some(id) != held).collect();
    if roots.len() > 1 {
        report.violations.push(Violation::MultipleRoots(roots));
    }
    for n in r.graph().nodes.iter().filter(|n| n.id != ROBOT_ID) {
        match s.graph().node(n.id) {
            None => report.violations.push(Violation::NotMirrored(n.id)),
            Some(sn) if sn.category != n.category || sn.attributes != n.attributes => {
                report.violations.push(Violation::MirrorMismatch(n.id))
            }
            Some(_) => {}
        }
    }
    report
}

/// Scene or robot graph, for the entry points that accept either.
pub enum GraphRef<'a> {
    Scene(&'a SceneGraph),
    Robot(&'a RobotGraph),
}

pub fn validate_graph(g: GraphRef<'_>) -> ValidationReport {
    match g {
        GraphRef::Scene(s) => validate_scene(s),
        GraphRef::Robot(r) => validate_robot(r),
    }
}
