use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::transition::{apply_subtask, GraphError};
use super::types::*;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub scene: SceneGraph,
    pub robot: RobotGraph,
}

/// One instruction task: the initial graphs, the ground-truth subtasks, and
/// the graphs observed before each subtask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub task_id: u64,
    pub instruction: String,
    pub scene_0: SceneGraph,
    pub robot_0: RobotGraph,
    pub subtasks: Vec<Subtask>,
    pub stages: Vec<Stage>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}, field `{path}`: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub path: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub fn serialize_trace(trace: &Trace) -> String {
    serde_json::to_string(trace).expect("trace serialization cannot fail")
}

/// Parses one dataset line. `line_no` is 1-based and only used for error
/// locations.
pub fn deserialize_trace(line: &str, line_no: usize) -> Result<Trace, ParseError> {
    let mut de = serde_json::Deserializer::from_str(line);
    let parsed: Result<Trace, _> = serde_path_to_error::deserialize(&mut de);
    let trace = parsed.map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        ParseError {
            line: line_no,
            column: inner.column(),
            path,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|inner| ParseError {
        line: line_no,
        column: inner.column(),
        path: ".".to_string(),
        message: inner.to_string(),
    })?;
    Ok(trace)
}

pub fn write_traces(path: &Path, traces: &[Trace]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in traces {
        out.write_all(serialize_trace(t).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_traces(path: &Path) -> Result<Vec<Trace>, DatasetIoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut traces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        traces.push(deserialize_trace(&line, i + 1)?);
    }
    Ok(traces)
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("task {task_id}: {stages} stages for {subtasks} subtasks")]
    LengthMismatch {
        task_id: u64,
        stages: usize,
        subtasks: usize,
    },
    #[error("task {task_id}: stage 0 differs from the initial graphs")]
    InitialMismatch { task_id: u64 },
    #[error("task {task_id}: subtask {step} failed: {source}")]
    Transition {
        task_id: u64,
        step: usize,
        source: GraphError,
    },
    #[error("task {task_id}: replayed stage {stage} differs from the stored one")]
    StageMismatch { task_id: u64, stage: usize },
    #[error("task {task_id}: last subtask is not finish")]
    MissingFinish { task_id: u64 },
}

/// Re-applies the stored subtasks from the stage-0 graphs and checks that
/// every stored stage is reproduced exactly.
pub fn verify_replay(trace: &Trace) -> Result<(), ReplayError> {
    let task_id = trace.task_id;
    if trace.stages.len() != trace.subtasks.len() {
        return Err(ReplayError::LengthMismatch {
            task_id,
            stages: trace.stages.len(),
            subtasks: trace.subtasks.len(),
        });
    }
    if trace.subtasks.last().map(|s| s.action) != Some(Action::Finish) {
        return Err(ReplayError::MissingFinish { task_id });
    }
    let first = &trace.stages[0];
    if first.scene != trace.scene_0 || first.robot != trace.robot_0 {
        return Err(ReplayError::InitialMismatch { task_id });
    }
    let mut scene = trace.scene_0.clone();
    let mut robot = trace.robot_0.clone();
    for (step, st) in trace.subtasks.iter().enumerate() {
        let stored = &trace.stages[step];
        if stored.scene != scene || stored.robot != robot {
            return Err(ReplayError::StageMismatch { task_id, stage: step });
        }
        let (s, r) = apply_subtask(&scene, &robot, *st).map_err(|source| ReplayError::Transition {
            task_id,
            step,
            source,
        })?;
        scene = s;
        robot = r;
    }
    Ok(())
}
