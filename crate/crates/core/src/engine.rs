//! Parallel execution of independent model-checking jobs.
//!
//! Each queue manager owns a bounded FIFO queue and one compute backend.
//! Queue 0 is always the CPU pool (one worker per core); further queues are
//! accelerator slots, here filled by a stub that runs the CPU kernels
//! inline. A manager whose queue is empty and whose backend is idle asks a
//! peer for a job over a message channel, retrying with a 1 ms backoff.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, never, select, unbounded, Receiver, Sender, TryRecvError};

use crate::model::ProductMdp;
use crate::numerics::{
    evaluate_scheduler, optimal_scheduler, IterOptions, NumericsError, Optimum, Scheduler, Solution,
};

/// Worker-count override read by [`configure_pool`].
pub const WORKERS_ENV: &str = "MORAP_WORKERS";
pub const DEFAULT_CAPACITY: usize = 64;
const BACKOFF: Duration = Duration::from_millis(1);
/// Backoff doubles after each empty steal reply, up to this.
const MAX_BACKOFF: Duration = Duration::from_millis(16);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum JobError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("job panicked: {0}")]
    Panic(String),
}

/// Which reward a job optimizes or evaluates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardSpec {
    Cost,
    Success,
    /// `cost * ρ_cost + success * ρ_success`.
    Weighted {
        cost: f64,
        success: f64,
    },
}

impl RewardSpec {
    pub fn materialize(&self, p: &ProductMdp) -> Vec<f64> {
        match *self {
            RewardSpec::Cost => p.cost().0.clone(),
            RewardSpec::Success => p.success().0.clone(),
            RewardSpec::Weighted { cost, success } => p
                .cost()
                .iter()
                .zip(p.success().iter())
                .map(|(c, s)| cost * c + success * s)
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum JobKind {
    Optimize,
    Evaluate(Arc<Scheduler>),
}

#[derive(Clone, Debug)]
pub struct Job {
    pub id: usize,
    pub model: Arc<ProductMdp>,
    pub kind: JobKind,
    pub reward: RewardSpec,
    pub opts: IterOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub enum JobOutput {
    Optimized(Optimum),
    Evaluated(Solution),
}

impl JobOutput {
    pub fn value(&self) -> f64 {
        match self {
            JobOutput::Optimized(o) => o.solution.value,
            JobOutput::Evaluated(s) => s.value,
        }
    }
}

pub type JobResult = Result<JobOutput, JobError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    CpuPool,
    StubAccelerator,
}

/// Compute backend behind a queue manager.
pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn run_optimize(&self, job: &Job) -> Result<Optimum, NumericsError>;
    fn run_evaluate(&self, job: &Job, scheduler: &Scheduler) -> Result<Solution, NumericsError>;
}

/// The sequential sweep kernels.
pub struct CpuKernels;

impl Backend for CpuKernels {
    fn kind(&self) -> BackendKind {
        BackendKind::CpuPool
    }

    fn run_optimize(&self, job: &Job) -> Result<Optimum, NumericsError> {
        optimal_scheduler(job.model.as_ref(), &job.reward.materialize(&job.model), job.opts)
    }

    fn run_evaluate(&self, job: &Job, scheduler: &Scheduler) -> Result<Solution, NumericsError> {
        evaluate_scheduler(
            job.model.as_ref(),
            scheduler,
            &job.reward.materialize(&job.model),
            job.opts,
        )
    }
}

/// Accelerator slot without device code; runs the CPU kernels.
pub struct StubAccelerator;

impl Backend for StubAccelerator {
    fn kind(&self) -> BackendKind {
        BackendKind::StubAccelerator
    }

    fn run_optimize(&self, job: &Job) -> Result<Optimum, NumericsError> {
        CpuKernels.run_optimize(job)
    }

    fn run_evaluate(&self, job: &Job, scheduler: &Scheduler) -> Result<Solution, NumericsError> {
        CpuKernels.run_evaluate(job, scheduler)
    }
}

fn execute(backend: &dyn Backend, job: &Job) -> JobResult {
    let run = || match &job.kind {
        JobKind::Optimize => backend.run_optimize(job).map(JobOutput::Optimized),
        JobKind::Evaluate(s) => backend.run_evaluate(job, s).map(JobOutput::Evaluated),
    };
    match catch_unwind(AssertUnwindSafe(run)) {
        Ok(r) => r.map_err(JobError::from),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Err(JobError::Panic(msg))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    /// CPU workers behind queue 0.
    pub workers: usize,
    /// Queue managers: 1 CPU pool plus `queues - 1` accelerator slots.
    pub queues: usize,
    pub capacity: usize,
    pub pin_workers: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        configure_pool(None, 1, DEFAULT_CAPACITY).expect("default configuration is valid")
    }
}

fn logical_cores() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Validate a pool configuration. Without an explicit `workers` count the
/// [`WORKERS_ENV`] variable is consulted, then the number of logical cores.
pub fn configure_pool(workers: Option<usize>, queues: usize, capacity: usize) -> Result<EngineConfig, EngineError> {
    let workers = match workers {
        Some(w) => w,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| EngineError::InvalidConfig(format!("{WORKERS_ENV}={v:?} is not a count")))?,
            Err(_) => logical_cores(),
        },
    };
    if workers == 0 {
        return Err(EngineError::InvalidConfig("need at least one worker".into()));
    }
    if queues == 0 {
        return Err(EngineError::InvalidConfig("need at least one queue".into()));
    }
    if capacity == 0 {
        return Err(EngineError::InvalidConfig("queue capacity must be positive".into()));
    }
    Ok(EngineConfig {
        workers,
        queues,
        capacity,
        pin_workers: true,
    })
}

struct Envelope {
    job: Job,
    reply: Sender<(usize, JobResult)>,
}

struct StealRequest {
    from: usize,
    reply: Sender<Option<Envelope>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManagerInfo {
    pub index: usize,
    pub backend: BackendKind,
    pub workers: usize,
    /// Managers this one may steal from.
    pub peers: Vec<usize>,
}

#[derive(Default)]
struct Counters {
    executed: AtomicUsize,
    stolen: AtomicUsize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineStats {
    pub executed: usize,
    pub stolen: usize,
}

/// A running pool of queue managers and workers. Dropping it shuts the
/// threads down.
pub struct Engine {
    config: EngineConfig,
    queues: Vec<Sender<Envelope>>,
    managers: Vec<JoinHandle<()>>,
    topology: Vec<ManagerInfo>,
    counters: Arc<Counters>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Engine {
        let backends: Vec<Arc<dyn Backend>> = (0..config.queues)
            .map(|q| -> Arc<dyn Backend> {
                if q == 0 {
                    Arc::new(CpuKernels)
                } else {
                    Arc::new(StubAccelerator)
                }
            })
            .collect();
        Engine::with_backends(config, backends)
    }

    /// Single worker, single queue.
    pub fn sequential() -> Engine {
        Engine::new(EngineConfig {
            workers: 1,
            queues: 1,
            capacity: DEFAULT_CAPACITY,
            pin_workers: false,
        })
    }

    /// Queue 0 gets `config.workers` worker threads; every other backend is
    /// driven inline by its manager.
    pub fn with_backends(config: EngineConfig, backends: Vec<Arc<dyn Backend>>) -> Engine {
        assert_eq!(backends.len(), config.queues, "one backend per queue");
        let counters = Arc::new(Counters::default());
        let mut queue_txs = Vec::new();
        let mut queue_rxs = Vec::new();
        let mut steal_txs = Vec::new();
        let mut steal_rxs = Vec::new();
        for _ in 0..config.queues {
            let (tx, rx) = bounded::<Envelope>(config.capacity);
            queue_txs.push(tx);
            queue_rxs.push(rx);
            let (stx, srx) = unbounded::<StealRequest>();
            steal_txs.push(stx);
            steal_rxs.push(srx);
        }
        let mut topology = Vec::new();
        let mut managers = Vec::new();
        for (index, ((queue, steal_rx), backend)) in queue_rxs.into_iter().zip(steal_rxs).zip(backends).enumerate() {
            let peers: Vec<(usize, Sender<StealRequest>)> = steal_txs
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != index)
                .map(|(k, s)| (k, s.clone()))
                .collect();
            let workers = if index == 0 { config.workers } else { 0 };
            topology.push(ManagerInfo {
                index,
                backend: backend.kind(),
                workers: workers.max(1),
                peers: peers.iter().map(|(k, _)| *k).collect(),
            });
            let manager = Manager {
                index,
                queue,
                steal_rx,
                peers,
                backend,
                workers,
                pin: config.pin_workers,
                counters: counters.clone(),
            };
            managers.push(
                std::thread::Builder::new()
                    .name(format!("morap-manager-{index}"))
                    .spawn(move || manager.run())
                    .expect("spawn manager thread"),
            );
        }
        Engine {
            config,
            queues: queue_txs,
            managers,
            topology,
            counters,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn topology(&self) -> &[ManagerInfo] {
        &self.topology
    }

    pub fn stats(&self) -> EngineStats {
        EngineStats {
            executed: self.counters.executed.load(Ordering::SeqCst),
            stolen: self.counters.stolen.load(Ordering::SeqCst),
        }
    }

    /// Run every job and return its result keyed by job id. Jobs are dealt
    /// round-robin to the queues; blocks until all have finished.
    pub fn run_batch(&self, jobs: Vec<Job>) -> BTreeMap<usize, JobResult> {
        self.run_batch_placed(jobs, |k, q| k % q)
    }

    /// As [`Engine::run_batch`], with `place(k, queues)` choosing the queue
    /// of the `k`-th job.
    pub fn run_batch_placed(
        &self,
        jobs: Vec<Job>,
        place: impl Fn(usize, usize) -> usize,
    ) -> BTreeMap<usize, JobResult> {
        let total = jobs.len();
        let mut out = BTreeMap::new();
        if total == 0 {
            return out;
        }
        let (reply, results) = unbounded();
        let q = self.queues.len();
        for (k, job) in jobs.into_iter().enumerate() {
            let env = Envelope {
                job,
                reply: reply.clone(),
            };
            self.queues[place(k, q) % q].send(env).expect("queue manager alive");
        }
        drop(reply);
        for _ in 0..total {
            let (id, r) = results.recv().expect("every job reports back");
            out.insert(id, r);
        }
        out
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.queues.clear();
        for h in self.managers.drain(..) {
            let _ = h.join();
        }
    }
}

struct Manager {
    index: usize,
    queue: Receiver<Envelope>,
    steal_rx: Receiver<StealRequest>,
    peers: Vec<(usize, Sender<StealRequest>)>,
    backend: Arc<dyn Backend>,
    /// Worker threads; 0 means the manager executes jobs itself.
    workers: usize,
    pin: bool,
    counters: Arc<Counters>,
}

impl Manager {
    fn run(self) {
        let (work_tx, work_rx) = unbounded::<Envelope>();
        let (idle_tx, idle_rx) = unbounded::<()>();
        let mut handles = Vec::new();
        for w in 0..self.workers {
            let rx = work_rx.clone();
            let idle = idle_tx.clone();
            let backend = self.backend.clone();
            let counters = self.counters.clone();
            let pin = self.pin;
            handles.push(
                std::thread::Builder::new()
                    .name(format!("morap-worker-{}-{w}", self.index))
                    .spawn(move || {
                        if pin {
                            pin_to_core(w);
                        }
                        if idle.send(()).is_err() {
                            return;
                        }
                        while let Ok(env) = rx.recv() {
                            let r = execute(backend.as_ref(), &env.job);
                            counters.executed.fetch_add(1, Ordering::SeqCst);
                            let _ = env.reply.send((env.job.id, r));
                            if idle.send(()).is_err() {
                                break;
                            }
                        }
                    })
                    .expect("spawn worker thread"),
            );
        }
        drop(idle_tx);
        drop(work_rx);

        let inline = self.workers == 0;
        let mut idle = 0usize;
        let mut local: VecDeque<Envelope> = VecDeque::new();
        let mut pending: Option<Receiver<Option<Envelope>>> = None;
        let mut next_peer = 0usize;
        let mut queue_open = true;
        // disconnected channels would fire on every select
        let mut idle_open = self.workers > 0;
        let mut steal_open = true;
        let mut backoff = BACKOFF;
        let mut next_steal = Instant::now();
        loop {
            while idle_rx.try_recv().is_ok() {
                idle += 1;
            }
            while let Ok(req) = self.steal_rx.try_recv() {
                self.answer_steal(req);
            }
            if let Some(rx) = &pending {
                match rx.try_recv() {
                    Ok(Some(env)) => {
                        self.counters.stolen.fetch_add(1, Ordering::SeqCst);
                        local.push_back(env);
                        pending = None;
                        backoff = BACKOFF;
                    }
                    Ok(None) | Err(TryRecvError::Disconnected) => {
                        pending = None;
                        next_steal = Instant::now() + backoff;
                        backoff = (backoff * 2).min(MAX_BACKOFF);
                    }
                    Err(TryRecvError::Empty) => {}
                }
            }
            let can_run = inline || idle > 0;
            if can_run {
                let next = local.pop_front().or_else(|| match self.queue.try_recv() {
                    Ok(env) => Some(env),
                    Err(TryRecvError::Disconnected) => {
                        queue_open = false;
                        None
                    }
                    Err(TryRecvError::Empty) => None,
                });
                if let Some(env) = next {
                    backoff = BACKOFF;
                    if inline {
                        let r = execute(self.backend.as_ref(), &env.job);
                        self.counters.executed.fetch_add(1, Ordering::SeqCst);
                        let _ = env.reply.send((env.job.id, r));
                    } else {
                        idle -= 1;
                        work_tx.send(env).expect("workers alive");
                    }
                    continue;
                }
                if !queue_open && pending.is_none() {
                    break;
                }
                if pending.is_none() && !self.peers.is_empty() && queue_open && Instant::now() >= next_steal {
                    let (peer, tx) = &self.peers[next_peer % self.peers.len()];
                    next_peer += 1;
                    let (rtx, rrx) = bounded(1);
                    if tx
                        .send(StealRequest {
                            from: self.index,
                            reply: rtx,
                        })
                        .is_ok()
                    {
                        log::trace!("manager {} asks {} for work", self.index, peer);
                        pending = Some(rrx);
                    }
                }
            }
            let queue_arm = if can_run && queue_open {
                self.queue.clone()
            } else {
                never()
            };
            let pending_arm = pending.clone().unwrap_or_else(never);
            let idle_arm = if idle_open { idle_rx.clone() } else { never() };
            let steal_arm = if steal_open { self.steal_rx.clone() } else { never() };
            select! {
                recv(queue_arm) -> msg => match msg {
                    Ok(env) => local.push_back(env),
                    Err(_) => queue_open = false,
                },
                recv(idle_arm) -> msg => match msg {
                    Ok(()) => idle += 1,
                    Err(_) => idle_open = false,
                },
                recv(steal_arm) -> msg => match msg {
                    Ok(req) => self.answer_steal(req),
                    Err(_) => steal_open = false,
                },
                recv(pending_arm) -> msg => {
                    if let Ok(Some(env)) = msg {
                        self.counters.stolen.fetch_add(1, Ordering::SeqCst);
                        local.push_back(env);
                        backoff = BACKOFF;
                    } else {
                        next_steal = Instant::now() + backoff;
                        backoff = (backoff * 2).min(MAX_BACKOFF);
                    }
                    pending = None;
                }
                default(backoff) => {}
            }
        }
        drop(work_tx);
        for h in handles {
            let _ = h.join();
        }
    }

    fn answer_steal(&self, req: StealRequest) {
        let job = self.queue.try_recv().ok();
        if job.is_some() {
            log::trace!("manager {} hands a job to {}", self.index, req.from);
        }
        if let Err(back) = req.reply.send(job) {
            // requester gone; run the job here instead of dropping it
            if let Some(env) = back.into_inner() {
                let r = execute(self.backend.as_ref(), &env.job);
                self.counters.executed.fetch_add(1, Ordering::SeqCst);
                let _ = env.reply.send((env.job.id, r));
            }
        }
    }
}

#[cfg(target_os = "linux")]
fn pin_to_core(worker: usize) {
    let cores = logical_cores();
    // SAFETY: cpu_set_t is plain data; sched_setaffinity only reads it.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(worker % cores, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            log::debug!("could not pin worker {worker}");
        }
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_to_core(_worker: usize) {}
