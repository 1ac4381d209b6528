use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use railtrace_core::explain::agent::TranscriptEntry;
use railtrace_core::optimize::{OptRun, OptimizerConfig};
use railtrace_core::scenario::Scenario;
use railtrace_core::trace::{EventSample, Reward};
use railtrace_core::optimize::SignalEmitter;
use serde::Serialize;
use tokio::sync::{Mutex, RwLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
pub struct RunEntry {
    pub id: String,
    pub status: RunStatus,
    /// Completed iterations.
    pub progress: Arc<AtomicUsize>,
    pub config: OptimizerConfig,
    pub run: Option<Arc<OptRun>>,
    /// Rendered JSONL, fixed once the run is done.
    pub trace: Option<Arc<String>>,
    pub error: Option<String>,
    pub persist_error: Option<String>,
}

impl RunEntry {
    pub fn queued(id: String, config: OptimizerConfig) -> Self {
        Self {
            id,
            status: RunStatus::Queued,
            progress: Arc::new(AtomicUsize::new(0)),
            config,
            run: None,
            trace: None,
            error: None,
            persist_error: None,
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self.status, RunStatus::Queued | RunStatus::Running)
    }

    pub fn fraction_done(&self) -> f64 {
        if self.status == RunStatus::Done {
            return 1.0;
        }
        self.progress.load(Ordering::Relaxed) as f64 / self.config.steps as f64
    }
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub scenario: Scenario,
    pub runs: BTreeMap<String, RunEntry>,
    pub next_run: usize,
    pub transcript: Vec<TranscriptEntry>,
}

impl Session {
    pub fn new(id: String, scenario: Scenario) -> Self {
        Self {
            id,
            scenario,
            runs: BTreeMap::new(),
            next_run: 1,
            transcript: Vec::new(),
        }
    }

    pub fn active_run(&self) -> Option<&str> {
        self.runs.values().find(|r| r.is_active()).map(|r| r.id.as_str())
    }

    pub fn allocate_run_id(&mut self) -> String {
        let id = format!("run-{}", self.next_run);
        self.next_run += 1;
        id
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SessionHandle>>,
}

impl SessionStore {
    pub async fn insert(&self, session: Session) -> SessionHandle {
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.sessions.write().await.insert(id, handle.clone());
        handle
    }

    pub async fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().await.get(id).cloned()
    }
}

/// Publishes completed iterations to a shared counter.
pub struct ProgressEmitter(pub Arc<AtomicUsize>);

impl SignalEmitter for ProgressEmitter {
    fn on_event(&mut self, _iter: usize, _sample: &EventSample) {}

    fn on_reward(&mut self, iter: usize, _reward: &Reward) {
        self.0.store(iter, Ordering::Relaxed);
    }
}
