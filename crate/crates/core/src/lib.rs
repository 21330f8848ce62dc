//! GRID: a graph-based planner that reads an instruction, a robot graph and a
//! scene graph and predicts the next `<action>-<object id>` subtask.

pub mod dataset;
pub mod encoder;
pub mod eval;
pub mod graph;
pub mod network;
pub mod tensor;
pub mod training;
