use std::fmt::Write as _;

use crate::graph::{
    edge_sentence, node_description, node_sentence, Action, Edge, Graph, Node, NodeId, Relation, RobotGraph,
    SceneGraph, Subtask, ATTR_COLOR, ATTR_PICKABLE, ATTR_SURFACE,
};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseFailure {
    #[error("empty response")]
    Empty,
    #[error("no line ends with an object id")]
    NoAnswerLine,
    #[error("unknown action in {0:?}")]
    UnknownAction(String),
    #[error("object id {0} is not in the scene")]
    UnknownId(NodeId),
}

fn node_list(g: &Graph) -> String {
    let mut nodes: Vec<&Node> = g.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    nodes.into_iter().map(node_sentence).collect::<Vec<_>>().join(", ")
}

fn edge_list(g: &Graph) -> String {
    let mut edges = g.edges.clone();
    edges.sort();
    if edges.is_empty() {
        return "none".into();
    }
    edges.iter().map(|e| edge_sentence(g, e)).collect::<Vec<_>>().join(", ")
}

fn state_block(out: &mut String, indent: &str, instruction: &str, r: &RobotGraph, s: &SceneGraph) {
    let _ = writeln!(
        out,
        "{indent}#Scene: Objects in the scene with their ids: {}. Relations between scene objects: {}.",
        node_list(&s.0),
        edge_list(&s.0)
    );
    let _ = writeln!(
        out,
        "{indent}#Robot: Objects around the robot with their ids: {}. Relations around the robot: {}.",
        node_list(&r.0),
        edge_list(&r.0)
    );
    let _ = writeln!(out, "{indent}#Instruction: {instruction}");
}

/// `"move purple display shelves 3"`: the answer line the parser expects.
pub fn format_subtask(sub: Subtask, s: &SceneGraph) -> String {
    match s.0.node(sub.object_id) {
        Some(n) => format!("{} {}", sub.action.words(), node_sentence(n)),
        None => format!("{} object {}", sub.action.words(), sub.object_id),
    }
}

struct Shot {
    instruction: &'static str,
    robot: RobotGraph,
    think: &'static str,
    answer: Subtask,
}

fn example_scene() -> SceneGraph {
    SceneGraph::new(
        vec![
            Node::new(0, "floor"),
            Node::new(1, "dining room"),
            Node::new(2, "dining table")
                .with_attr(ATTR_COLOR, "black")
                .with_attr(ATTR_SURFACE, "true"),
            Node::new(3, "display shelves")
                .with_attr(ATTR_COLOR, "purple")
                .with_attr(ATTR_SURFACE, "true"),
            Node::new(4, "pen")
                .with_attr(ATTR_COLOR, "brown")
                .with_attr(ATTR_PICKABLE, "true"),
        ],
        vec![
            Edge::new(1, 0, Relation::On),
            Edge::new(2, 1, Relation::In),
            Edge::new(3, 1, Relation::In),
        ],
    )
}

fn shots(s: &SceneGraph) -> Vec<Shot> {
    let node = |id: NodeId| s.0.node(id).cloned().expect("example node");
    let holding = RobotGraph::new(
        vec![Node::new(0, "robot"), node(4)],
        vec![Edge::new(4, 0, Relation::GraspedBy)],
    );
    let mut near_shelves = holding.clone();
    near_shelves.0 = Graph::new(
        vec![Node::new(0, "robot"), node(2), node(3), node(4)],
        vec![
            Edge::new(0, 2, Relation::Near),
            Edge::new(0, 3, Relation::Near),
            Edge::new(4, 0, Relation::GraspedBy),
        ],
    );
    vec![
        Shot {
            instruction: "Put the pen on the purple display shelves.",
            robot: holding,
            think: "The robot already holds the pen but is not near the purple display shelves, so it has to go there first.",
            answer: Subtask::new(Action::Move, 3),
        },
        Shot {
            instruction: "Put the pen on the purple display shelves.",
            robot: near_shelves,
            think: "The robot holds the pen and is next to the purple display shelves, so it can put the pen down there.",
            answer: Subtask::new(Action::PlaceTo, 3),
        },
    ]
}

/// Full planner prompt: role, output format, current scene and robot state,
/// instruction, task, then `n_shots` worked examples.
pub fn build_prompt(instruction: &str, r: &RobotGraph, s: &SceneGraph, n_shots: usize) -> String {
    let mut out = String::new();
    out.push_str(
        "#Role: You plan for a mobile manipulation robot. Split the instruction into single subtasks the robot can execute one at a time.\n",
    );
    let actions: Vec<String> = Action::ALL.iter().map(|a| format!("'{}'", a.words())).collect();
    let _ = writeln!(
        out,
        "#Output Restriction: Answer with a final line of the form <action> <object name> <object id>. <action> is one of [{}]. Object names and ids must come from the #Scene section. Use 'finish' with object 0 once the instruction is complete.",
        actions.join(", ")
    );
    out.push_str(
        "#Actions: move: drive to an object. pick: grasp an object near the robot. place to: put the held object on or into a target near the robot. revolute open / revolute close: open or close a hinged door. longitudinal open / longitudinal close: pull out or push in a sliding part. finish: nothing is left to do.\n",
    );
    state_block(&mut out, "", instruction, r, s);
    out.push_str("#Task: Give the next subtask the robot should perform in the current scene and robot state. Explain your reasoning, then give the answer line.\n");
    if n_shots > 0 {
        let scene = example_scene();
        let shots = shots(&scene);
        for (i, shot) in shots.iter().cycle().take(n_shots).enumerate() {
            let _ = writeln!(out, "#Example{}:", i + 1);
            out.push_str("  input:\n");
            state_block(&mut out, "    ", shot.instruction, &shot.robot, &scene);
            out.push_str("  output:\n");
            let _ = writeln!(
                out,
                "    #Think: {} So output: {}",
                shot.think,
                format_subtask(shot.answer, &scene)
            );
        }
    }
    out
}

fn trim_token(tok: &str) -> &str {
    tok.trim_matches(|c: char| !c.is_alphanumeric() && c != '_')
}

/// Action at the start of `tokens` and how many tokens it spans.
fn match_action(tokens: &[String]) -> Option<(Action, usize)> {
    for a in Action::ALL {
        let words: Vec<&str> = a.words().split(' ').collect();
        if tokens.len() >= words.len() && tokens.iter().zip(&words).all(|(t, w)| t == w) {
            return Some((a, words.len()));
        }
        if tokens.first().map(String::as_str) == Some(a.name()) {
            return Some((a, 1));
        }
    }
    None
}

fn parse_line(line: &str, s: &SceneGraph) -> Option<Result<Subtask, ParseFailure>> {
    let lower = line.to_lowercase();
    let body = match lower.rfind("output:") {
        Some(i) => &lower[i + "output:".len()..],
        None => &lower[..],
    };
    let tokens: Vec<String> = body
        .split_whitespace()
        .map(trim_token)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    let id: NodeId = tokens.last()?.parse().ok()?;
    let head = &tokens[..tokens.len() - 1];
    let found = (0..head.len()).find_map(|i| match_action(&head[i..]));
    let Some((action, _)) = found else {
        return Some(Err(ParseFailure::UnknownAction(
            head.first().cloned().unwrap_or_default(),
        )));
    };
    if s.0.node(id).is_none() {
        return Some(Err(ParseFailure::UnknownId(id)));
    }
    Some(Ok(Subtask::new(action, id)))
}

/// Reads the subtask from the last line of `text` that ends with an integer
/// object id. The id must name a node of `s`.
pub fn parse_planner_response(text: &str, s: &SceneGraph) -> Result<Subtask, ParseFailure> {
    if text.trim().is_empty() {
        return Err(ParseFailure::Empty);
    }
    text.lines()
        .rev()
        .find_map(|line| parse_line(line, s))
        .unwrap_or(Err(ParseFailure::NoAnswerLine))
}

/// Object words of the answer line, for logging.
pub fn describe(s: &SceneGraph, id: NodeId) -> String {
    s.0.node(id).map(node_description).unwrap_or_else(|| format!("object {id}"))
}
