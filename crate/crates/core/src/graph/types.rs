use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub type NodeId = usize;

/// Id of the robot node inside every robot graph. Non-robot nodes of a robot
/// graph reuse the id of the scene node they mirror.
pub const ROBOT_ID: NodeId = 0;

pub const ATTR_COLOR: &str = "color";
pub const ATTR_STATE: &str = "state";
pub const ATTR_ARTICULATION: &str = "articulation";
pub const ATTR_PICKABLE: &str = "pickable";
pub const ATTR_SURFACE: &str = "surface";

pub const STATE_OPEN: &str = "open";
pub const STATE_CLOSED: &str = "closed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub category: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub position: Option<[f64; 3]>,
}

impl Node {
    pub fn new(id: NodeId, category: impl Into<String>) -> Self {
        Self {
            id,
            category: category.into(),
            attributes: BTreeMap::new(),
            position: None,
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<String>) -> Self {
        self.attributes.insert(key.to_string(), value.into());
        self
    }

    pub fn with_position(mut self, position: [f64; 3]) -> Self {
        self.position = Some(position);
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    fn flag(&self, key: &str) -> bool {
        self.attr(key) == Some("true")
    }

    pub fn is_pickable(&self) -> bool {
        self.flag(ATTR_PICKABLE)
    }

    pub fn has_surface(&self) -> bool {
        self.flag(ATTR_SURFACE)
    }

    pub fn articulation(&self) -> Articulation {
        match self.attr(ATTR_ARTICULATION) {
            Some("revolute") => Articulation::Revolute,
            Some("longitudinal") => Articulation::Longitudinal,
            _ => Articulation::None,
        }
    }

    /// `Some(true)` when open, `Some(false)` when closed, `None` when not articulated.
    pub fn is_open(&self) -> Option<bool> {
        match self.attr(ATTR_STATE) {
            Some(STATE_OPEN) => Some(true),
            Some(STATE_CLOSED) => Some(false),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Articulation {
    None,
    Revolute,
    Longitudinal,
}

impl Articulation {
    pub fn as_str(self) -> &'static str {
        match self {
            Articulation::None => "none",
            Articulation::Revolute => "revolute",
            Articulation::Longitudinal => "longitudinal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    On,
    In,
    GraspedBy,
    Near,
}

impl Relation {
    pub fn is_parent_link(self) -> bool {
        matches!(self, Relation::On | Relation::In)
    }

    pub fn phrase(self) -> &'static str {
        match self {
            Relation::On => "is on",
            Relation::In => "is in",
            Relation::GraspedBy => "is grasped by",
            Relation::Near => "is near",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: Relation,
}

impl Edge {
    pub fn new(src: NodeId, dst: NodeId, relation: Relation) -> Self {
        Self { src, dst, relation }
    }
}

/// Nodes and edges shared by scene and robot graphs.
///
/// Constructors keep nodes sorted by id and edges sorted by `(src, dst,
/// relation)`, so two graphs describing the same world compare equal no matter
/// the insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl Graph {
    pub fn new(mut nodes: Vec<Node>, mut edges: Vec<Edge>) -> Self {
        nodes.sort_by_key(|n| n.id);
        edges.sort();
        Self { nodes, edges }
    }

    pub fn normalize(&mut self) {
        self.nodes.sort_by_key(|n| n.id);
        self.edges.sort();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(move |i| &mut self.nodes[i])
    }

    /// Position of `id` in the id-sorted node list.
    pub fn ordinal(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.ordinal(id).is_some()
    }

    pub fn add_edge(&mut self, edge: Edge) {
        if let Err(pos) = self.edges.binary_search(&edge) {
            self.edges.insert(pos, edge);
        }
    }

    pub fn remove_edges(&mut self, pred: impl Fn(&Edge) -> bool) {
        self.edges.retain(|e| !pred(e));
    }

    /// Edges as `(src ordinal, dst ordinal)` pairs for the network.
    pub fn ordinal_edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .filter_map(|e| Some((self.ordinal(e.src)?, self.ordinal(e.dst)?)))
            .collect()
    }
}

/// Three-layer world model: floor, rooms, then objects. Parent links are
/// `on`/`in` edges pointing from child to parent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneGraph(pub Graph);

impl SceneGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Self {
        Self(Graph::new(nodes, edges))
    }

    pub fn graph(&self) -> &Graph {
        &self.0
    }

    pub fn parent_edge(&self, id: NodeId) -> Option<&Edge> {
        self.0
            .edges
            .iter()
            .find(|e| e.src == id && e.relation.is_parent_link())
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent_edge(id).map(|e| e.dst)
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.0
            .edges
            .iter()
            .filter(move |e| e.dst == id && e.relation.is_parent_link())
            .map(|e| e.src)
    }

    pub fn roots(&self) -> Vec<NodeId> {
        self.0
            .nodes
            .iter()
            .filter(|n| self.parent_edge(n.id).is_none())
            .map(|n| n.id)
            .collect()
    }

    /// Depth below the root: floor 0, rooms 1, furniture 2, small objects 3.
    pub fn depth(&self, id: NodeId) -> usize {
        let mut depth = 0;
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            depth += 1;
            cur = p;
            if depth > self.0.nodes.len() {
                break;
            }
        }
        depth
    }
}

/// The robot's own view: the robot node (id 0) plus mirrors of the scene nodes
/// it is near or holding.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RobotGraph(pub Graph);

impl RobotGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Self {
        Self(Graph::new(nodes, edges))
    }

    /// Empty gripper, near nothing.
    pub fn initial() -> Self {
        Self::new(vec![Node::new(ROBOT_ID, "robot")], Vec::new())
    }

    pub fn graph(&self) -> &Graph {
        &self.0
    }

    pub fn grasped(&self) -> Option<NodeId> {
        self.0
            .edges
            .iter()
            .find(|e| e.relation == Relation::GraspedBy && e.dst == ROBOT_ID)
            .map(|e| e.src)
    }

    pub fn near(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0
            .edges
            .iter()
            .filter(|e| e.relation == Relation::Near && e.src == ROBOT_ID)
            .map(|e| e.dst)
    }

    pub fn is_near(&self, id: NodeId) -> bool {
        self.near().any(|n| n == id)
    }

    /// Scene ids mirrored by this graph; the identity map except for the robot.
    pub fn scene_ids(&self) -> BTreeMap<NodeId, NodeId> {
        self.0
            .nodes
            .iter()
            .filter(|n| n.id != ROBOT_ID)
            .map(|n| (n.id, n.id))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Move,
    Pick,
    PlaceTo,
    RevoluteOpen,
    RevoluteClose,
    LongitudinalOpen,
    LongitudinalClose,
    Finish,
}

impl Action {
    pub const COUNT: usize = 8;

    pub const ALL: [Action; Action::COUNT] = [
        Action::Move,
        Action::Pick,
        Action::PlaceTo,
        Action::RevoluteOpen,
        Action::RevoluteClose,
        Action::LongitudinalOpen,
        Action::LongitudinalClose,
        Action::Finish,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Identifier form used in files: `place_to`, `revolute_open`, ...
    pub fn name(self) -> &'static str {
        match self {
            Action::Move => "move",
            Action::Pick => "pick",
            Action::PlaceTo => "place_to",
            Action::RevoluteOpen => "revolute_open",
            Action::RevoluteClose => "revolute_close",
            Action::LongitudinalOpen => "longitudinal_open",
            Action::LongitudinalClose => "longitudinal_close",
            Action::Finish => "finish",
        }
    }

    /// Spoken form used in prompts: `place to`, `revolute open`, ...
    pub fn words(self) -> &'static str {
        match self {
            Action::Move => "move",
            Action::Pick => "pick",
            Action::PlaceTo => "place to",
            Action::RevoluteOpen => "revolute open",
            Action::RevoluteClose => "revolute close",
            Action::LongitudinalOpen => "longitudinal open",
            Action::LongitudinalClose => "longitudinal close",
            Action::Finish => "finish",
        }
    }

    /// The articulation family and goal state of an open/close action.
    pub fn articulation_goal(self) -> Option<(Articulation, bool)> {
        match self {
            Action::RevoluteOpen => Some((Articulation::Revolute, true)),
            Action::RevoluteClose => Some((Articulation::Revolute, false)),
            Action::LongitudinalOpen => Some((Articulation::Longitudinal, true)),
            Action::LongitudinalClose => Some((Articulation::Longitudinal, false)),
            _ => None,
        }
    }

    pub fn toggle(kind: Articulation, open: bool) -> Option<Action> {
        match (kind, open) {
            (Articulation::Revolute, true) => Some(Action::RevoluteOpen),
            (Articulation::Revolute, false) => Some(Action::RevoluteClose),
            (Articulation::Longitudinal, true) => Some(Action::LongitudinalOpen),
            (Articulation::Longitudinal, false) => Some(Action::LongitudinalClose),
            (Articulation::None, _) => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown action '{0}'")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name() == key)
            .ok_or_else(|| UnknownAction(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subtask {
    pub action: Action,
    pub object_id: NodeId,
}

impl Subtask {
    pub fn new(action: Action, object_id: NodeId) -> Self {
        Self { action, object_id }
    }

    /// `finish` names the robot itself.
    pub fn finish() -> Self {
        Self::new(Action::Finish, ROBOT_ID)
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.action, self.object_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_cardinality_and_index_round_trip() {
        assert_eq!(Action::ALL.len(), 8);
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
            assert_eq!(a.name().parse::<Action>().unwrap(), *a);
            assert_eq!(a.words().parse::<Action>().unwrap(), *a);
        }
        assert!("fly".parse::<Action>().is_err());
    }

    #[test]
    fn graph_constructor_sorts() {
        let g = Graph::new(
            vec![Node::new(2, "b"), Node::new(0, "a")],
            vec![Edge::new(2, 0, Relation::On), Edge::new(0, 2, Relation::Near)],
        );
        assert_eq!(g.nodes[0].id, 0);
        assert_eq!(g.edges[0].src, 0);
        assert_eq!(g.ordinal(2), Some(1));
        assert_eq!(g.ordinal_edges(), vec![(0, 1), (1, 0)]);
    }
}
