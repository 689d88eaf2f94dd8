//! Wire payloads. Every JSON body carries `schema: SCHEMA_VERSION`.

use serde::{Deserialize, Serialize};

use instrumental::optimizer::Progress;
use instrumental::pipeline::MatchReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub schema: u32,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub schema: u32,
    pub id: String,
    pub state: JobState,
    pub tier: String,
    pub budget: usize,
    pub seed: u64,
    /// Unix milliseconds.
    pub created_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
    pub latest: Option<ProgressEvent>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    /// 1-based generation index.
    pub generation: usize,
    pub evaluations: usize,
    pub best_loss: f64,
    pub elapsed_ms: u64,
    pub progress_fraction: f64,
}

impl ProgressEvent {
    pub fn from_progress(p: &Progress, budget: usize) -> Self {
        ProgressEvent {
            generation: p.generation,
            evaluations: p.evaluations,
            best_loss: p.best_loss,
            elapsed_ms: p.wall_ms,
            progress_fraction: (p.evaluations as f64 / budget.max(1) as f64).min(1.0),
        }
    }
}

/// One WebSocket text record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StreamRecord {
    Progress {
        schema: u32,
        #[serde(flatten)]
        event: ProgressEvent,
    },
    Terminal {
        schema: u32,
        state: JobState,
        final_loss: Option<f64>,
        error: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub schema: u32,
    pub id: String,
    pub report: MatchReport,
    /// The matched patch as preset TOML.
    pub preset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema: u32,
    pub error: String,
}
