use super::transition::GraphError;
use super::types::*;
use super::validate::{validate_robot, validate_scene};

/// Attribute keys that describe structure rather than appearance; they never
/// show up in sentences.
const STRUCTURAL_KEYS: [&str; 3] = [ATTR_ARTICULATION, ATTR_PICKABLE, ATTR_SURFACE];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    Scene,
    Robot,
}

/// Appearance words and category, without the id: `"open white fridge"`.
pub fn node_description(node: &Node) -> String {
    let mut words: Vec<&str> = Vec::new();
    if let Some(state) = node.attr(ATTR_STATE) {
        words.push(state);
    }
    if let Some(color) = node.attr(ATTR_COLOR) {
        words.push(color);
    }
    for (k, v) in &node.attributes {
        if k != ATTR_STATE && k != ATTR_COLOR && !STRUCTURAL_KEYS.contains(&k.as_str()) {
            words.push(v);
        }
    }
    words.push(&node.category);
    words.join(" ")
}

/// `"purple display shelves 3"`.
pub fn node_sentence(node: &Node) -> String {
    format!("{} {}", node_description(node), node.id)
}

fn short_name(g: &Graph, id: NodeId) -> String {
    match g.node(id) {
        Some(n) => format!("{} {}", n.category, id),
        None => format!("node {id}"),
    }
}

/// `"pen 2 is grasped by robot 0"`.
pub fn edge_sentence(g: &Graph, edge: &Edge) -> String {
    format!(
        "{} {} {}",
        short_name(g, edge.src),
        edge.relation.phrase(),
        short_name(g, edge.dst)
    )
}

fn sentences(g: &Graph) -> (Vec<String>, Vec<String>) {
    let mut nodes: Vec<&Node> = g.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    let mut edges = g.edges.clone();
    edges.sort();
    (
        nodes.into_iter().map(node_sentence).collect(),
        edges.iter().map(|e| edge_sentence(g, e)).collect(),
    )
}

pub fn scene_to_text(s: &SceneGraph) -> Result<(Vec<String>, Vec<String>), GraphError> {
    let report = validate_scene(s);
    if !report.is_ok() {
        return Err(GraphError::InvalidGraph(report));
    }
    Ok(sentences(s.graph()))
}

pub fn robot_to_text(r: &RobotGraph) -> Result<(Vec<String>, Vec<String>), GraphError> {
    let report = validate_robot(r);
    if !report.is_ok() {
        return Err(GraphError::InvalidGraph(report));
    }
    Ok(sentences(r.graph()))
}

/// Node sentences and edge sentences, ordered by node id and by edge key.
pub fn graph_to_text(g: &Graph, kind: GraphKind) -> Result<(Vec<String>, Vec<String>), GraphError> {
    match kind {
        GraphKind::Scene => scene_to_text(&SceneGraph(g.clone())),
        GraphKind::Robot => robot_to_text(&RobotGraph(g.clone())),
    }
}
