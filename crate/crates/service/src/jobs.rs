//! Asynchronous export jobs: an in-process queue drained by a fixed pool
//! of worker threads.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, Utc};
use crossbeam_channel::{unbounded, Sender};
use layerloom_core::ir::Framework;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_id: Option<String>,
}

/// What to export: a model at a fixed version.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportRequest {
    pub model_id: String,
    pub version: u64,
    pub target: Framework,
    pub custom_layers: bool,
}

/// Status view of a job; the generated file itself is fetched separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportJob {
    pub job_id: String,
    pub model_id: String,
    pub version: u64,
    pub target: Framework,
    pub state: JobState,
    pub file_name: &'static str,
    pub created_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
    #[serde(skip)]
    pub result: Option<Arc<str>>,
}

pub fn file_name(target: Framework) -> &'static str {
    match target {
        Framework::Caffe => "model.prototxt",
        Framework::Keras => "model.json",
    }
}

/// Produces the file for one request. Runs on a worker thread.
pub type Executor = Arc<dyn Fn(&ExportRequest) -> Result<String, JobError> + Send + Sync>;
/// Called once a job reaches `done` or `failed`.
pub type Notifier = Arc<dyn Fn(&ExportJob) + Send + Sync>;

/// The queue as the HTTP layer sees it.
pub trait JobQueue: Send + Sync {
    /// Records a pending job and hands it to the workers without waiting.
    fn submit(&self, request: ExportRequest) -> ExportJob;
    fn get(&self, job_id: &str) -> Option<ExportJob>;
}

type Table = Arc<Mutex<HashMap<String, ExportJob>>>;

/// Worker threads fed through a channel. Dropping the pool closes the
/// channel and joins the workers after they finish queued jobs.
pub struct WorkerPool {
    jobs: Table,
    sender: Option<Sender<(String, ExportRequest)>>,
    workers: Vec<JoinHandle<()>>,
    retention: Duration,
}

impl WorkerPool {
    pub fn new(workers: usize, retention: Duration, executor: Executor, notifier: Notifier) -> Self {
        let (sender, receiver) = unbounded::<(String, ExportRequest)>();
        let jobs: Table = Arc::default();
        let handles = (0..workers.max(1))
            .map(|i| {
                let receiver = receiver.clone();
                let jobs = jobs.clone();
                let executor = executor.clone();
                let notifier = notifier.clone();
                std::thread::Builder::new()
                    .name(format!("export-{i}"))
                    .spawn(move || {
                        lower_priority();
                        for (job_id, request) in receiver {
                            set(&jobs, &job_id, |j| {
                                j.state = JobState::Running;
                                j.started_at = Some(Utc::now());
                            });
                            // Let the request that queued the job finish its reply first.
                            std::thread::yield_now();
                            let outcome = executor(&request);
                            let finished = set(&jobs, &job_id, |j| {
                                j.finished_at = Some(Utc::now());
                                match outcome {
                                    Ok(text) => {
                                        j.state = JobState::Done;
                                        j.result = Some(text.into());
                                    }
                                    Err(e) => {
                                        j.state = JobState::Failed;
                                        j.error = Some(e);
                                    }
                                }
                            });
                            if let Some(job) = finished {
                                notifier(&job);
                            }
                        }
                    })
                    .expect("spawn export worker")
            })
            .collect();
        WorkerPool { jobs, sender: Some(sender), workers: handles, retention }
    }

    fn purge_expired(&self, jobs: &mut HashMap<String, ExportJob>) {
        let Ok(retention) = chrono::Duration::from_std(self.retention) else {
            return;
        };
        let cutoff = Utc::now() - retention;
        jobs.retain(|_, j| j.finished_at.is_none_or(|t| t > cutoff));
    }
}

/// Exports are background work; request handlers should win the CPU.
#[cfg(target_os = "linux")]
fn lower_priority() {
    // SAFETY: plain syscalls on the calling thread; failure leaves the
    // priority unchanged.
    unsafe {
        let tid = libc::gettid();
        libc::setpriority(libc::PRIO_PROCESS, tid as libc::id_t, 10);
    }
}

#[cfg(not(target_os = "linux"))]
fn lower_priority() {}

fn set(jobs: &Table, job_id: &str, f: impl FnOnce(&mut ExportJob)) -> Option<ExportJob> {
    let mut jobs = jobs.lock().unwrap();
    let job = jobs.get_mut(job_id)?;
    f(job);
    Some(job.clone())
}

pub fn new_job_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

impl JobQueue for WorkerPool {
    fn submit(&self, request: ExportRequest) -> ExportJob {
        let job = ExportJob {
            job_id: new_job_id(),
            model_id: request.model_id.clone(),
            version: request.version,
            target: request.target,
            state: JobState::Pending,
            file_name: file_name(request.target),
            created_at: Utc::now(),
            started_at: None,
            finished_at: None,
            error: None,
            result: None,
        };
        {
            let mut jobs = self.jobs.lock().unwrap();
            self.purge_expired(&mut jobs);
            jobs.insert(job.job_id.clone(), job.clone());
        }
        if let Some(sender) = &self.sender {
            let _ = sender.send((job.job_id.clone(), request));
        }
        job
    }

    fn get(&self, job_id: &str) -> Option<ExportJob> {
        let mut jobs = self.jobs.lock().unwrap();
        self.purge_expired(&mut jobs);
        jobs.get(job_id).cloned()
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.sender.take();
        for handle in self.workers.drain(..) {
            let _ = handle.join();
        }
    }
}
