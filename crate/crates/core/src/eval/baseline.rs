use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{ClientError, PlannerClient};
use super::metrics::{subtask_metrics, MetricsReport};
use super::prompt::{build_prompt, parse_planner_response};
use super::EvalError;
use crate::graph::{Subtask, Trace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub n_shots: usize,
    pub timeout_ms: u64,
    /// Upper bound on client calls in flight.
    pub max_concurrency: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            n_shots: 2,
            timeout_ms: 60_000,
            max_concurrency: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub task_id: u64,
    pub stage: usize,
    pub expected: Subtask,
    pub predicted: Option<Subtask>,
    pub response: String,
    pub failure: Option<String>,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub client: String,
    pub metrics: MetricsReport,
    pub records: Vec<BaselineRecord>,
}

/// Calls the client on a helper thread so a client that ignores its timeout
/// cannot stall the run; the late answer is dropped.
fn call_with_deadline(client: &Arc<dyn PlannerClient>, prompt: String, timeout: Duration) -> Result<String, ClientError> {
    let (tx, rx) = mpsc::channel();
    let c = Arc::clone(client);
    std::thread::spawn(move || {
        let _ = tx.send(c.complete(&prompt, timeout));
    });
    // A small grace period lets well-behaved clients report their own timeout.
    match rx.recv_timeout(timeout + Duration::from_millis(50)) {
        Ok(r) => r,
        Err(_) => Err(ClientError::Timeout(timeout)),
    }
}

/// Prompts the client at every stage of every trace, parses its answers and
/// scores them. Client errors and unparsable answers count as wrong.
pub fn baseline_eval(
    client: Arc<dyn PlannerClient>,
    traces: &[Trace],
    cfg: &PromptConfig,
) -> Result<BaselineReport, EvalError> {
    let timeout = Duration::from_millis(cfg.timeout_ms);
    let jobs: Vec<(&Trace, usize)> = traces
        .iter()
        .flat_map(|t| (0..t.len()).map(move |i| (t, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_concurrency.max(1))
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let records: Vec<BaselineRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(tr, i)| {
                let st = &tr.stages[i];
                let prompt = build_prompt(&tr.instruction, &st.robot, &st.scene, cfg.n_shots);
                let start = Instant::now();
                let answer = call_with_deadline(&client, prompt, timeout);
                let latency_ms = start.elapsed().as_secs_f64() * 1e3;
                let (response, predicted, failure) = match answer {
                    Ok(text) => match parse_planner_response(&text, &st.scene) {
                        Ok(sub) => (text, Some(sub), None),
                        Err(e) => (text, None, Some(e.to_string())),
                    },
                    Err(e) => (String::new(), None, Some(e.to_string())),
                };
                BaselineRecord {
                    task_id: tr.task_id,
                    stage: i,
                    expected: tr.subtasks[i],
                    predicted,
                    response,
                    failure,
                    latency_ms,
                }
            })
            .collect()
    });
    let preds: Vec<Option<Subtask>> = records.iter().map(|r| r.predicted).collect();
    let gt: Vec<Subtask> = records.iter().map(|r| r.expected).collect();
    let mut task_correct = 0;
    let mut start = 0;
    for tr in traces {
        let end = start + tr.len();
        task_correct += records[start..end].iter().all(|r| r.predicted == Some(r.expected)) as usize;
        start = end;
    }
    let metrics = subtask_metrics(&preds, &gt)?.with_tasks(traces.len(), task_correct);
    Ok(BaselineReport {
        client: client.name(),
        metrics,
        records,
    })
}
