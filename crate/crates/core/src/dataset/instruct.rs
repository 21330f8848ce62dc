use rand::Rng;

use super::tasks::{Task, TaskTemplate};
use crate::graph::{NodeId, SceneGraph, ATTR_COLOR};

const RELOCATE: &[&str] = &[
    "Please help me take {obj} from {src} to {dst}.",
    "Move {obj} from {src} to {dst}.",
    "Could you bring {obj} on {src} over to {dst}?",
    "Take {obj} off {src} and put it on {dst}.",
    "I need {obj} moved from {src} to {dst}.",
    "Put {obj} that is on {src} onto {dst}, please.",
    "Carry {obj} from {src} and place it on {dst}.",
    "Pick up {obj} from {src} and set it down on {dst}.",
    "Relocate {obj} to {dst}; it is currently on {src}.",
];

const FETCH: &[&str] = &[
    "Please get {obj} out of {box}.",
    "Take {obj} out of {box} for me.",
    "Could you fetch {obj} from inside {box}?",
    "Open {box}, grab {obj}, and close it again.",
    "I need {obj} that is in {box}.",
    "Retrieve {obj} from {box}, please.",
    "Grab {obj} from {box} and shut {box} afterwards.",
    "Fetch {obj} stored in {box}.",
];

const STOW: &[&str] = &[
    "Please put {obj} from {src} into {box}.",
    "Store {obj} in {box}; it is on {src}.",
    "Could you stow {obj} from {src} inside {box}?",
    "Take {obj} off {src}, put it in {box}, and close {box}.",
    "Put away {obj} into {box}, please.",
    "Move {obj} on {src} into {box} and shut it.",
    "I want {obj} kept in {box}; grab it from {src}.",
    "Pack {obj} from {src} into {box}.",
];

const OPEN: &[&str] = &[
    "Please open {box}.",
    "Open {box}.",
    "Could you open {box} for me?",
    "Go to {box} and open it.",
    "I need {box} opened.",
    "Head over to {box} and open it up.",
    "Can you get {box} open?",
    "Make sure {box} is open.",
];

const CLOSE: &[&str] = &[
    "Please close {box}.",
    "Close {box}.",
    "Could you shut {box} for me?",
    "Go to {box} and close it.",
    "I need {box} closed.",
    "Head over to {box} and shut it.",
    "Can you get {box} closed?",
    "Make sure {box} is closed.",
];

pub fn frames(template: TaskTemplate) -> &'static [&'static str] {
    match template {
        TaskTemplate::Relocate => RELOCATE,
        TaskTemplate::FetchFromContainer => FETCH,
        TaskTemplate::StowIntoContainer => STOW,
        TaskTemplate::GoAndOpen => OPEN,
        TaskTemplate::GoAndClose => CLOSE,
    }
}

/// "the teacup" when the category is unique in the scene, otherwise
/// "the white teacup".
pub fn referring_expression(s: &SceneGraph, id: NodeId) -> String {
    let Some(node) = s.graph().node(id) else {
        return "the object".into();
    };
    let same = s.graph().nodes.iter().filter(|n| n.category == node.category).count();
    match node.attr(ATTR_COLOR) {
        Some(color) if same > 1 => format!("the {color} {}", node.category),
        _ => format!("the {}", node.category),
    }
}

/// Fills frame `index` of the task's template.
pub fn render_frame(task: &Task, s: &SceneGraph, index: usize) -> String {
    let frame = frames(task.template)[index];
    let mut out = frame.to_string();
    for (key, id) in [
        ("{obj}", task.slots.object),
        ("{src}", task.slots.source),
        ("{dst}", task.slots.target),
        ("{box}", task.slots.container),
    ] {
        if let Some(id) = id {
            out = out.replace(key, &referring_expression(s, id));
        }
    }
    out
}

/// Natural-language instruction naming the task's objects by appearance and
/// category, with a randomly chosen phrasing.
pub fn synthesize_instruction(task: &Task, s: &SceneGraph, rng: &mut impl Rng) -> String {
    let index = rng.random_range(0..frames(task.template).len());
    render_frame(task, s, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tasks::Slots;
    use crate::graph::{Edge, Node, Relation};

    #[test]
    fn first_relocate_frame_renders_plainly() {
        let s = SceneGraph::new(
            vec![
                Node::new(0, "floor"),
                Node::new(1, "kitchen"),
                Node::new(2, "dining table").with_attr(ATTR_COLOR, "brown"),
                Node::new(3, "kitchen table").with_attr(ATTR_COLOR, "white"),
                Node::new(4, "teacup").with_attr(ATTR_COLOR, "blue"),
            ],
            vec![
                Edge::new(1, 0, Relation::On),
                Edge::new(2, 1, Relation::In),
                Edge::new(3, 1, Relation::In),
                Edge::new(4, 2, Relation::On),
            ],
        );
        let task = Task {
            template: TaskTemplate::Relocate,
            slots: Slots {
                object: Some(4),
                source: Some(2),
                target: Some(3),
                container: None,
            },
            subtasks: Vec::new(),
        };
        assert_eq!(
            render_frame(&task, &s, 0),
            "Please help me take the teacup from the dining table to the kitchen table."
        );
    }

    #[test]
    fn duplicate_categories_get_colors() {
        let s = SceneGraph::new(
            vec![
                Node::new(0, "floor"),
                Node::new(1, "cup").with_attr(ATTR_COLOR, "red"),
                Node::new(2, "cup").with_attr(ATTR_COLOR, "blue"),
            ],
            vec![Edge::new(1, 0, Relation::On), Edge::new(2, 0, Relation::On)],
        );
        assert_eq!(referring_expression(&s, 2), "the blue cup");
    }
}
