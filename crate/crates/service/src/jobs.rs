//! Optimization jobs: a FIFO queue drained by a bounded worker pool.
//!
//! Jobs are polled, never pushed. Each job runs on a snapshot of the scenario taken at
//! submission and records the revision of that snapshot.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use nightfield::fieldmap::Scenario;
use nightfield::optimizer::{self, OptimizationResult, OptimizationSpec};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, Notify, Semaphore};

use crate::error::{ApiError, ErrorBody};

pub const DEFAULT_JOB_SLOTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Queued to running to one of done or failed, nothing else.
    fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running) | (JobState::Running, JobState::Done) | (JobState::Running, JobState::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub kind: JobKind,
    pub state: JobState,
    pub scenario_id: String,
    /// Scenario revision the job was submitted against.
    pub revision: u64,
    pub spec: OptimizationSpec,
    pub submitted_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<OptimizationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

struct Pending {
    id: u64,
    scenario: Scenario,
    spec: OptimizationSpec,
}

#[derive(Default)]
struct Table {
    jobs: Mutex<BTreeMap<u64, Job>>,
    changed: Notify,
}

impl Table {
    fn get(&self, id: u64) -> Option<Job> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(&id).cloned()
    }

    fn advance(&self, id: u64, next: JobState, f: impl FnOnce(&mut Job)) {
        {
            let mut jobs = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
            let Some(job) = jobs.get_mut(&id) else { return };
            if !job.state.can_become(next) {
                tracing::warn!(job = id, from = ?job.state, to = ?next, "ignored backward job transition");
                return;
            }
            job.state = next;
            f(job);
        }
        self.changed.notify_waiters();
    }
}

/// Handle to the job table and its dispatcher.
pub struct JobQueue {
    table: Arc<Table>,
    next_id: AtomicU64,
    tx: mpsc::UnboundedSender<Pending>,
    slots: usize,
}

impl std::fmt::Debug for JobQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JobQueue").field("slots", &self.slots).finish_non_exhaustive()
    }
}

impl JobQueue {
    /// Starts the dispatcher on the current tokio runtime. At most `slots` jobs run at
    /// once; the rest wait in submission order.
    pub fn start(slots: usize) -> Self {
        let slots = slots.max(1);
        let table = Arc::new(Table::default());
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(dispatch(table.clone(), rx, Arc::new(Semaphore::new(slots))));
        Self { table, next_id: AtomicU64::new(1), tx, slots }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Queues an optimization of `scenario` (read at `revision`) and returns the job id.
    pub fn submit(&self, scenario: Scenario, revision: u64, spec: OptimizationSpec) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let job = Job {
            id,
            kind: JobKind::Optimize,
            state: JobState::Queued,
            scenario_id: scenario.id().to_string(),
            revision,
            spec: spec.clone(),
            submitted_at: Utc::now(),
            started_at: None,
            finished_at: None,
            result: None,
            error: None,
        };
        self.table.jobs.lock().unwrap_or_else(|e| e.into_inner()).insert(id, job);
        tracing::info!(job = id, scenario = scenario.id(), revision, mode = ?spec.mode, "job queued");
        if self.tx.send(Pending { id, scenario, spec }).is_err() {
            self.table.advance(id, JobState::Running, |_| {});
            self.table.advance(id, JobState::Failed, |j| {
                j.finished_at = Some(Utc::now());
                j.error = Some(ApiError::internal("job runner is shut down").body);
            });
        }
        id
    }

    pub fn get(&self, id: u64) -> Option<Job> {
        self.table.get(id)
    }

    /// Waits until the job is done or failed. `None` for unknown ids.
    pub async fn wait(&self, id: u64) -> Option<Job> {
        loop {
            let notified = self.table.changed.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            let job = self.table.get(id)?;
            if job.state.is_finished() {
                return Some(job);
            }
            notified.await;
        }
    }
}

async fn dispatch(table: Arc<Table>, mut rx: mpsc::UnboundedReceiver<Pending>, slots: Arc<Semaphore>) {
    while let Some(pending) = rx.recv().await {
        let Ok(permit) = slots.clone().acquire_owned().await else { return };
        let table = table.clone();
        tokio::spawn(async move {
            let id = pending.id;
            table.advance(id, JobState::Running, |j| j.started_at = Some(Utc::now()));
            tracing::debug!(job = id, "job started");
            let outcome = tokio::task::spawn_blocking(move || optimizer::solve(&pending.scenario, &pending.spec)).await;
            drop(permit);
            let finished = Some(Utc::now());
            match outcome {
                Ok(Ok(result)) => {
                    tracing::info!(job = id, converged = result.converged, iterations = result.iterations, "job done");
                    table.advance(id, JobState::Done, |j| {
                        j.finished_at = finished;
                        j.result = Some(result);
                    });
                }
                Ok(Err(e)) => {
                    tracing::info!(job = id, error = %e, "job failed");
                    table.advance(id, JobState::Failed, |j| {
                        j.finished_at = finished;
                        j.error = Some(ApiError::from(e).body);
                    });
                }
                Err(e) => {
                    table.advance(id, JobState::Failed, |j| {
                        j.finished_at = finished;
                        j.error = Some(ApiError::internal(format!("job panicked: {e}")).body);
                    });
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions_only_move_forward() {
        use JobState::*;
        assert!(Queued.can_become(Running));
        assert!(Running.can_become(Done));
        assert!(Running.can_become(Failed));
        for (a, b) in [(Running, Queued), (Done, Running), (Failed, Done), (Queued, Done), (Done, Done)] {
            assert!(!a.can_become(b), "{a:?} -> {b:?}");
        }
    }
}
