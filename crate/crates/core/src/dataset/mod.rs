//! Synthetic dataset: random household scenes, feasible tasks from a small
//! set of templates, grammar-based instructions and rolled-out traces.

mod instruct;
mod scene;
mod tasks;
mod vocab;

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::digest_of;
use crate::graph::{write_traces, Action, GraphError, Trace};

pub use instruct::{frames, referring_expression, render_frame, synthesize_instruction};
pub use scene::{
    sample_scene, SceneConfig, MAX_FURNITURE_PER_ROOM, MAX_ITEMS_PER_FURNITURE, MAX_OBJECTS, MIN_OBJECTS,
};
pub use tasks::{
    fit_template_mix, roll_trace, sample_task, Slots, Task, TaskTemplate, TemplateWeights, REFERENCE_COUNTS,
};
pub use vocab::{is_unseen_combo, ComboSplit, Kind, CATEGORIES, COLORS, ROOMS};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset configuration cannot be satisfied: {0}")]
    ConfigInfeasible(String),
    #[error("template {} cannot be filled: {reason}", template.name())]
    SlotUnsatisfiable { template: TaskTemplate, reason: String },
    #[error("generated task is not executable: {0}")]
    Graph(#[from] GraphError),
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub weights: TemplateWeights,
    pub seed: u64,
    pub eval_fraction: f64,
    /// Fresh scenes drawn for one task before giving up on its template.
    pub max_scene_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            weights: TemplateWeights::default(),
            seed: 0,
            eval_fraction: 0.2,
            max_scene_attempts: 50,
        }
    }
}

impl DatasetConfig {
    /// Template weights after dropping templates the scene settings can
    /// never satisfy.
    pub fn effective_weights(&self) -> Result<TemplateWeights, DatasetError> {
        let sc = &self.scene;
        let mut w = self.weights.clone();
        for t in TaskTemplate::ALL {
            let impossible = (t.needs_containers() && sc.articulated_fraction == 0.0)
                || (t == TaskTemplate::GoAndClose && sc.open_fraction == 0.0)
                || (t != TaskTemplate::Relocate && t != TaskTemplate::GoAndClose && sc.open_fraction == 1.0);
            let x = &mut w.0[t as usize];
            if impossible || !x.is_finite() || *x < 0.0 {
                *x = 0.0;
            }
        }
        if w.0.iter().sum::<f64>() <= 0.0 {
            return Err(DatasetError::ConfigInfeasible(
                "no template can be satisfied with these scene settings".into(),
            ));
        }
        Ok(w)
    }
}

/// Per-action subtask counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub tasks: usize,
    pub counts: [usize; Action::COUNT],
    pub templates: [usize; 5],
}

impl DatasetStats {
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> Self {
        let mut st = DatasetStats::default();
        for tr in traces {
            st.tasks += 1;
            for s in &tr.subtasks {
                st.counts[s.action.index()] += 1;
            }
        }
        st
    }

    pub fn count(&self, a: Action) -> usize {
        self.counts[a.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn move_pick_ratio(&self) -> f64 {
        self.count(Action::Move) as f64 / self.count(Action::Pick).max(1) as f64
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<36}{:>8}", "Subtask Type", "Count")?;
        for a in Action::ALL {
            writeln!(f, "{:<36}{:>8}", format!("<{}> - <object>", a.words()), self.count(a))?;
        }
        writeln!(f, "{:<36}{:>8}", "Total", self.total())
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Trace>,
    pub eval: Vec<Trace>,
    pub stats: DatasetStats,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &Trace> {
        self.train.iter().chain(&self.eval)
    }
}

/// RNG for one task: the dataset seed selects the key, the task id the
/// stream, so tasks can be generated in any order.
pub fn task_rng(seed: u64, task_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_id);
    rng
}

/// Generates one task with its own scene.
pub fn generate_task(cfg: &DatasetConfig, weights: &TemplateWeights, task_id: u64) -> Result<(Trace, TaskTemplate), DatasetError> {
    let mut rng = task_rng(cfg.seed, task_id);
    let template = weights.sample(&mut rng);
    let mut last = None;
    for _ in 0..cfg.max_scene_attempts.max(1) {
        let (s, r) = sample_scene(&cfg.scene, &mut rng)?;
        match sample_task(&s, &r, template, &mut rng) {
            Ok(task) => {
                let instruction = synthesize_instruction(&task, &s, &mut rng);
                let trace = roll_trace(task_id, instruction, &s, &r, &task.subtasks)?;
                return Ok((trace, template));
            }
            Err(e @ DatasetError::SlotUnsatisfiable { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(DatasetError::ConfigInfeasible(format!(
        "task {task_id}: {} after {} scenes",
        last.map(|e| e.to_string()).unwrap_or_default(),
        cfg.max_scene_attempts
    )))
}

/// Generates `n_tasks` tasks in parallel (output ordered by task id) and
/// splits them by task into train and eval parts.
pub fn generate_dataset(cfg: &DatasetConfig, n_tasks: usize) -> Result<Dataset, DatasetError> {
    if n_tasks == 0 {
        return Err(DatasetError::ConfigInfeasible("n_tasks must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.eval_fraction) {
        return Err(DatasetError::ConfigInfeasible(format!(
            "eval_fraction {} outside [0, 1)",
            cfg.eval_fraction
        )));
    }
    cfg.scene.validate()?;
    let weights = cfg.effective_weights()?;
    let generated: Vec<(Trace, TaskTemplate)> = (0..n_tasks as u64)
        .into_par_iter()
        .map(|id| generate_task(cfg, &weights, id))
        .collect::<Result<_, _>>()?;

    let mut stats = DatasetStats::from_traces(generated.iter().map(|g| &g.0));
    for (_, t) in &generated {
        stats.templates[*t as usize] += 1;
    }
    let n_eval = (n_tasks as f64 * cfg.eval_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n_tasks).collect();
    order.shuffle(&mut task_rng(cfg.seed, u64::MAX));
    let mut is_eval = vec![false; n_tasks];
    for &i in &order[..n_eval] {
        is_eval[i] = true;
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (i, (tr, _)) in generated.into_iter().enumerate() {
        if is_eval[i] {
            eval.push(tr);
        } else {
            train.push(tr);
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        train,
        eval,
        stats,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a DatasetConfig,
    config_digest: String,
    train_tasks: usize,
    eval_tasks: usize,
    stats: &'a DatasetStats,
}

/// Writes `train.jsonl`, `eval.jsonl`, `stats.txt` and `manifest.json`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    write_traces(&dir.join("train.jsonl"), &ds.train)?;
    write_traces(&dir.join("eval.jsonl"), &ds.eval)?;
    fs::write(dir.join("stats.txt"), ds.stats.to_string())?;
    let manifest = Manifest {
        config: &ds.config,
        config_digest: digest_of(&ds.config),
        train_tasks: ds.train.len(),
        eval_tasks: ds.eval.len(),
        stats: &ds.stats,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable manifest"),
    )?;
    Ok(())
}
