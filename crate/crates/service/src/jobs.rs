//! Job registry and the FIFO runner.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use tokio::sync::watch;

use instrumental::audio::decode_wav;
use instrumental::optimizer::CmaConfig;
use instrumental::params::{Preset, Tier};
use instrumental::pipeline::{match_audio, MatchConfig, MatchReport};

use crate::schema::{JobState, JobStatus, ProgressEvent, SCHEMA_VERSION};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobOptions {
    pub tier: Tier,
    pub budget: usize,
    pub seed: u64,
}

impl Default for JobOptions {
    fn default() -> Self {
        JobOptions {
            tier: Tier::T28,
            budget: instrumental::optimizer::cma::FAST_BUDGET,
            seed: 0,
        }
    }
}

impl JobOptions {
    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            tier: self.tier,
            cma: CmaConfig::default().with_budget(self.budget).with_seed(self.seed),
            ..MatchConfig::default()
        }
    }
}

#[derive(Debug)]
struct Mutable {
    state: JobState,
    started_ms: Option<u64>,
    finished_ms: Option<u64>,
    events: Vec<ProgressEvent>,
    report: Option<Arc<MatchReport>>,
    error: Option<String>,
    audio: Option<Vec<u8>>,
}

/// One job. Progress is appended to an in-memory log; the watch channel
/// carries the log length so subscribers can wait for new entries.
#[derive(Debug)]
pub struct Job {
    pub id: String,
    pub options: JobOptions,
    pub created_ms: u64,
    inner: Mutex<Mutable>,
    version: watch::Sender<usize>,
}

/// A consistent view of a job's stream.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: JobState,
    pub events: Vec<ProgressEvent>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

impl Job {
    fn new(id: String, options: JobOptions, audio: Vec<u8>) -> Self {
        Job {
            id,
            options,
            created_ms: now_ms(),
            inner: Mutex::new(Mutable {
                state: JobState::Queued,
                started_ms: None,
                finished_ms: None,
                events: Vec::new(),
                report: None,
                error: None,
                audio: Some(audio),
            }),
            version: watch::channel(0).0,
        }
    }

    fn finished(id: String, options: JobOptions, report: MatchReport) -> Self {
        let job = Job::new(id, options, Vec::new());
        {
            let mut m = job.inner.lock().expect("job lock");
            m.state = JobState::Done;
            m.report = Some(Arc::new(report));
            m.audio = None;
        }
        job
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Mutable> {
        self.inner.lock().expect("job lock poisoned")
    }

    fn bump(&self) {
        self.version.send_modify(|v| *v += 1);
    }

    pub fn state(&self) -> JobState {
        self.lock().state
    }

    pub fn report(&self) -> Option<Arc<MatchReport>> {
        self.lock().report.clone()
    }

    pub fn error(&self) -> Option<String> {
        self.lock().error.clone()
    }

    pub fn status(&self) -> JobStatus {
        let m = self.lock();
        JobStatus {
            schema: SCHEMA_VERSION,
            id: self.id.clone(),
            state: m.state,
            tier: self.options.tier.label().to_string(),
            budget: self.options.budget,
            seed: self.options.seed,
            created_ms: self.created_ms,
            started_ms: m.started_ms,
            finished_ms: m.finished_ms,
            latest: m.events.last().copied(),
            error: m.error.clone(),
        }
    }

    /// Events from index `from` on, plus the state they were read in.
    pub fn snapshot(&self, from: usize) -> Snapshot {
        let m = self.lock();
        Snapshot {
            state: m.state,
            events: m.events.get(from..).map(<[_]>::to_vec).unwrap_or_default(),
            final_loss: m.report.as_ref().map(|r| r.final_loss),
            error: m.error.clone(),
        }
    }

    pub fn event_count(&self) -> usize {
        self.lock().events.len()
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.version.subscribe()
    }

    fn push(&self, event: ProgressEvent) {
        self.lock().events.push(event);
        self.bump();
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    jobs: Arc<RwLock<HashMap<String, Arc<Job>>>>,
    queue: mpsc::Sender<Arc<Job>>,
    counter: Arc<AtomicU64>,
    data_dir: PathBuf,
}

impl Registry {
    /// Starts the runner thread. Candidate evaluation uses a rayon pool of
    /// `eval_threads` threads. Finished results under `data_dir` are loaded.
    pub fn start(data_dir: impl Into<PathBuf>, eval_threads: usize) -> std::io::Result<Registry> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(data_dir.join("jobs"))?;
        let (tx, rx) = mpsc::channel::<Arc<Job>>();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(eval_threads.max(1))
            .build()
            .map_err(std::io::Error::other)?;
        let registry = Registry {
            jobs: Arc::new(RwLock::new(HashMap::new())),
            queue: tx,
            counter: Arc::new(AtomicU64::new(0)),
            data_dir: data_dir.clone(),
        };
        registry.load_persisted();
        std::thread::Builder::new()
            .name("job-runner".into())
            .spawn(move || {
                for job in rx {
                    pool.install(|| run(&job, &data_dir));
                }
            })?;
        Ok(registry)
    }

    fn load_persisted(&self) {
        let Ok(dirs) = std::fs::read_dir(self.data_dir.join("jobs")) else {
            return;
        };
        for entry in dirs.flatten() {
            let path = entry.path().join("report.json");
            let Ok(text) = std::fs::read_to_string(&path) else {
                continue;
            };
            let Ok(report) = serde_json::from_str::<MatchReport>(&text) else {
                log::warn!("skipping unreadable {}", path.display());
                continue;
            };
            let id = entry.file_name().to_string_lossy().into_owned();
            let options = JobOptions {
                tier: report.tier,
                budget: report.evaluations,
                seed: 0,
            };
            self.jobs
                .write()
                .expect("registry lock")
                .insert(id.clone(), Arc::new(Job::finished(id, options, report)));
        }
    }

    /// Queues a job and returns its id.
    pub fn submit(&self, audio: Vec<u8>, options: JobOptions) -> String {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let id = format!("{:x}-{n:04}", now_ms());
        let job = Arc::new(Job::new(id.clone(), options, audio));
        self.jobs.write().expect("registry lock").insert(id.clone(), job.clone());
        if self.queue.send(job).is_err() {
            log::error!("job runner has stopped; {id} will not run");
        }
        id
    }

    pub fn get(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().expect("registry lock").get(id).cloned()
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }
}

fn run(job: &Job, data_dir: &Path) {
    let audio = {
        let mut m = job.lock();
        m.state = JobState::Running;
        m.started_ms = Some(now_ms());
        m.audio.take().unwrap_or_default()
    };
    job.bump();
    log::info!("job {} started", job.id);
    let config = job.options.match_config();
    let budget = job.options.budget;
    let outcome = decode_wav(&audio)
        .and_then(|buf| match_audio(&buf, &config, &mut |p| job.push(ProgressEvent::from_progress(p, budget))))
        .and_then(|out| {
            persist(data_dir, &job.id, &out.report)?;
            Ok(out.report)
        });
    {
        let mut m = job.lock();
        m.finished_ms = Some(now_ms());
        match outcome {
            Ok(report) => {
                m.state = JobState::Done;
                m.report = Some(Arc::new(report));
            }
            Err(e) => {
                m.state = JobState::Failed;
                m.error = Some(e.to_string());
            }
        }
    }
    job.bump();
    log::info!("job {} finished: {:?}", job.id, job.state());
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Writes the preset, then the report; a job directory counts as finished
/// only once `report.json` exists.
fn persist(data_dir: &Path, id: &str, report: &MatchReport) -> instrumental::Result<()> {
    let dir = data_dir.join("jobs").join(id);
    let io = |e| instrumental::Error::Io {
        path: dir.clone(),
        source: e,
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let preset = Preset::new(report.patch.clone()).with_loss(report.final_loss);
    write_atomic(&dir.join("preset.toml"), preset.to_toml_string().as_bytes()).map_err(io)?;
    write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes()).map_err(io)?;
    Ok(())
}
