//! Asynchronous landscape computations.
//!
//! Jobs run one at a time on a dedicated executor thread, in submission
//! order; each uses the configured number of grid workers. Job records live
//! in memory only, while finished experiments go to the store.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use landscape_core::pipeline::{LandscapeRequest, Prepared};
use landscape_core::ExperimentStore;
use serde::Serialize;
use tracing::{info, warn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

/// What `GET /api/jobs/{id}` returns.
#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub job_id: String,
    pub state: JobState,
    pub progress: Progress,
    pub result_id: Option<String>,
    pub error: Option<String>,
    pub spec: LandscapeRequest,
}

struct Job {
    id: String,
    spec: LandscapeRequest,
    total: usize,
    completed: AtomicUsize,
    status: Mutex<(JobState, Option<String>)>,
}

impl Job {
    fn view(&self) -> JobView {
        let (state, error) = self.status.lock().unwrap().clone();
        let mut completed = self.completed.load(Ordering::SeqCst);
        // all points can finish before the result is stored; only a done
        // job reports full progress
        if state != JobState::Done {
            completed = completed.min(self.total.saturating_sub(1));
        }
        JobView {
            job_id: self.id.clone(),
            state,
            progress: Progress {
                completed,
                total: self.total,
            },
            result_id: (state == JobState::Done).then(|| self.spec.id.clone()),
            error,
            spec: self.spec.clone(),
        }
    }

    fn set(&self, state: JobState, error: Option<String>) {
        *self.status.lock().unwrap() = (state, error);
    }
}

pub struct JobQueue {
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    next: AtomicUsize,
    sender: Mutex<mpsc::Sender<(Arc<Job>, Prepared)>>,
}

impl JobQueue {
    pub fn start(store: Arc<ExperimentStore>, workers: usize) -> Arc<Self> {
        let (sender, receiver) = mpsc::channel::<(Arc<Job>, Prepared)>();
        std::thread::Builder::new()
            .name("landscape-jobs".into())
            .spawn(move || {
                for (job, prepared) in receiver {
                    run(&job, &prepared, &store, workers);
                }
            })
            .expect("spawn job executor");
        Arc::new(Self {
            jobs: Mutex::new(HashMap::new()),
            next: AtomicUsize::new(1),
            sender: Mutex::new(sender),
        })
    }

    /// Fresh job id; callers use it as the default experiment id.
    pub fn next_id(&self) -> String {
        format!("job-{}", self.next.fetch_add(1, Ordering::SeqCst))
    }

    pub fn submit(&self, job_id: String, prepared: Prepared) -> JobView {
        let job = Arc::new(Job {
            id: job_id.clone(),
            spec: prepared.request.clone(),
            total: prepared.total_points(),
            completed: AtomicUsize::new(0),
            status: Mutex::new((JobState::Queued, None)),
        });
        self.jobs.lock().unwrap().insert(job_id, job.clone());
        let view = job.view();
        if self.sender.lock().unwrap().send((job.clone(), prepared)).is_err() {
            job.set(JobState::Failed, Some("job executor is not running".into()));
        }
        view
    }

    pub fn get(&self, id: &str) -> Option<JobView> {
        self.jobs.lock().unwrap().get(id).map(|j| j.view())
    }
}

fn run(job: &Job, prepared: &Prepared, store: &ExperimentStore, workers: usize) {
    job.set(JobState::Running, None);
    info!(job = %job.id, points = job.total, "job started");
    let progress = |done: usize, _total: usize| {
        job.completed.fetch_max(done, Ordering::SeqCst);
    };
    let result = prepared
        .run(workers, &progress)
        .map_err(|e| e.to_string())
        .and_then(|outcome| store.put(outcome.experiment).map_err(|e| e.to_string()));
    match result {
        Ok(()) => {
            info!(job = %job.id, "job done");
            job.set(JobState::Done, None);
        }
        Err(message) => {
            warn!(job = %job.id, %message, "job failed");
            job.set(JobState::Failed, Some(message));
        }
    }
}
