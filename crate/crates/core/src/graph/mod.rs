//! Scene and robot graphs, the eight-action state machine that updates them,
//! sentence rendering, and the line-delimited trace format.

mod text;
mod trace;
mod transition;
mod types;
mod validate;

pub use text::{
    edge_sentence, graph_to_text, node_description, node_sentence, robot_to_text, scene_to_text,
    GraphKind,
};
pub use trace::{
    deserialize_trace, read_traces, serialize_trace, verify_replay, write_traces, DatasetIoError,
    ParseError, ReplayError, Stage, Trace,
};
pub use transition::{
    apply_subtask, check_preconditions, feasible_subtasks, near_set, placement_relation, GraphError,
};
pub use types::*;
pub use validate::{
    validate_graph, validate_pair, validate_robot, validate_scene, GraphRef, ValidationReport,
    Violation,
};
