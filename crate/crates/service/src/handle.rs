//! The engine loop and its command channel.
//!
//! A dedicated thread owns the [`Engine`]; everything else talks to it
//! through an ordered command channel and gets immutable snapshots back.
//! In simulated mode the loop is purely reactive and time moves only on
//! explicit advance commands. In wall-clock mode the loop paces itself
//! against real time and runs task subprocesses as they come due.

use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use tokio::sync::oneshot;

use slicer_core::engine::{
    ClusterView, Engine, EngineError, EngineOptions, Event, ExecMode, JobStatus, SideEffect,
    SubmitError,
};
use slicer_core::executor;
use slicer_core::model::{ClusterConfig, JobId, JobSpec, ModelError, Timeline};
use slicer_core::time::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeMode {
    Sim,
    Wall,
}

pub enum Command {
    Submit {
        job: JobSpec,
        reply: oneshot::Sender<Result<JobStatus, SubmitError>>,
    },
    Status {
        id: JobId,
        reply: oneshot::Sender<Option<JobStatus>>,
    },
    Timeline {
        id: JobId,
        reply: oneshot::Sender<Result<Timeline, EngineError>>,
    },
    Cancel {
        id: JobId,
        reply: oneshot::Sender<Result<(), EngineError>>,
    },
    Cluster {
        reply: oneshot::Sender<ClusterView>,
    },
    Events {
        since: usize,
        limit: usize,
        reply: oneshot::Sender<(Vec<Event>, usize)>,
    },
    /// Simulated mode only; the loop rejects it in wall mode.
    Advance {
        seconds: Millis,
        reply: oneshot::Sender<Result<Millis, WrongMode>>,
    },
    /// Internal: a wall-mode subprocess finished.
    TaskFinished {
        job: JobId,
        task_index: usize,
        status: executor::TaskStatus,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WrongMode;

/// Cloneable entry point to the engine loop.
#[derive(Clone)]
pub struct EngineHandle {
    tx: mpsc::Sender<Command>,
    mode: ServeMode,
}

#[derive(Debug)]
pub struct LoopGone;

impl EngineHandle {
    pub fn mode(&self) -> ServeMode {
        self.mode
    }

    async fn call<T>(
        &self,
        make: impl FnOnce(oneshot::Sender<T>) -> Command,
    ) -> Result<T, LoopGone> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| LoopGone)?;
        rx.await.map_err(|_| LoopGone)
    }

    pub async fn submit(&self, job: JobSpec) -> Result<Result<JobStatus, SubmitError>, LoopGone> {
        self.call(|reply| Command::Submit { job, reply }).await
    }

    pub async fn status(&self, id: JobId) -> Result<Option<JobStatus>, LoopGone> {
        self.call(|reply| Command::Status { id, reply }).await
    }

    pub async fn timeline(&self, id: JobId) -> Result<Result<Timeline, EngineError>, LoopGone> {
        self.call(|reply| Command::Timeline { id, reply }).await
    }

    pub async fn cancel(&self, id: JobId) -> Result<Result<(), EngineError>, LoopGone> {
        self.call(|reply| Command::Cancel { id, reply }).await
    }

    pub async fn cluster(&self) -> Result<ClusterView, LoopGone> {
        self.call(|reply| Command::Cluster { reply }).await
    }

    pub async fn events(&self, since: usize, limit: usize) -> Result<(Vec<Event>, usize), LoopGone> {
        self.call(|reply| Command::Events { since, limit, reply }).await
    }

    pub async fn advance(&self, seconds: Millis) -> Result<Result<Millis, WrongMode>, LoopGone> {
        self.call(|reply| Command::Advance { seconds, reply }).await
    }
}

/// Builds the engine and spawns its loop thread. The thread exits when the
/// last handle is dropped.
pub fn start_engine(
    cluster: ClusterConfig,
    options: EngineOptions,
    mode: ServeMode,
) -> Result<EngineHandle, ModelError> {
    let options = EngineOptions {
        mode: match mode {
            ServeMode::Sim => ExecMode::Simulated,
            ServeMode::Wall => ExecMode::External,
        },
        ..options
    };
    let engine = Engine::new(cluster, options)?;
    let (tx, rx) = mpsc::channel();
    let loop_tx = tx.clone();
    thread::Builder::new()
        .name("slicer-engine".to_string())
        .spawn(move || match mode {
            ServeMode::Sim => sim_loop(engine, rx),
            ServeMode::Wall => wall_loop(engine, rx, loop_tx),
        })
        .expect("spawn engine loop");
    Ok(EngineHandle { tx, mode })
}

fn sim_loop(mut engine: Engine, rx: mpsc::Receiver<Command>) {
    while let Ok(command) = rx.recv() {
        dispatch(&mut engine, command, ServeMode::Sim, None);
    }
}

fn wall_loop(mut engine: Engine, rx: mpsc::Receiver<Command>, tx: mpsc::Sender<Command>) {
    let started = Instant::now();
    let now_ms = |started: Instant| Millis::from_ms(started.elapsed().as_millis() as u64);
    loop {
        let now = now_ms(started);
        let effects = engine.advance(now.max(engine.clock())).expect("monotone wall clock");
        run_effects(&engine, effects, &tx);
        let wait = match engine.next_due() {
            Some(due) if due > now => Duration::from_millis((due - now).as_ms().min(100)),
            Some(_) => Duration::from_millis(1),
            None => Duration::from_millis(100),
        };
        match rx.recv_timeout(wait) {
            Ok(command) => {
                let now = now_ms(started);
                let effects = engine.advance(now.max(engine.clock())).expect("monotone");
                run_effects(&engine, effects, &tx);
                dispatch(&mut engine, command, ServeMode::Wall, Some(&tx));
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
}

fn run_effects(engine: &Engine, effects: Vec<SideEffect>, tx: &mpsc::Sender<Command>) {
    for effect in effects {
        let SideEffect::SpawnTask {
            job,
            node,
            task_index,
        } = effect;
        let task = engine
            .slice(&job)
            .expect("effect for a known job")
            .job
            .tasks[task_index]
            .clone();
        let tx = tx.clone();
        thread::spawn(move || {
            let (_, status, detail) = executor::execute_subprocess(&task, &job, &node)
                .expect("tasks are validated to carry commands in wall mode");
            let _ = tx.send(Command::TaskFinished {
                job,
                task_index,
                status,
                detail,
            });
        });
    }
}

fn dispatch(
    engine: &mut Engine,
    command: Command,
    mode: ServeMode,
    tx: Option<&mpsc::Sender<Command>>,
) {
    match command {
        Command::Submit { job, reply } => {
            let id = job.id.clone();
            let result = engine
                .submit(job)
                .map(|()| engine.job_status(&id).expect("just submitted"));
            let _ = reply.send(result);
        }
        Command::Status { id, reply } => {
            let _ = reply.send(engine.job_status(&id));
        }
        Command::Timeline { id, reply } => {
            let _ = reply.send(engine.timeline_of(&id));
        }
        Command::Cancel { id, reply } => {
            let _ = reply.send(engine.cancel(&id));
        }
        Command::Cluster { reply } => {
            let _ = reply.send(engine.cluster_view());
        }
        Command::Events { since, limit, reply } => {
            let events = engine.events_page(since, limit).to_vec();
            let _ = reply.send((events, engine.events().len()));
        }
        Command::Advance { seconds, reply } => {
            if mode == ServeMode::Wall {
                let _ = reply.send(Err(WrongMode));
            } else {
                let target = engine.clock() + seconds;
                engine.advance(target).expect("monotone target");
                let _ = reply.send(Ok(engine.clock()));
            }
        }
        Command::TaskFinished {
            job,
            task_index,
            status,
            detail,
        } => {
            // results for slices that already tore down (cancelled) are
            // dropped on the floor
            let _ = engine.external_task_done(&job, task_index, status, detail);
            if let (ServeMode::Wall, Some(tx)) = (mode, tx) {
                let effects = engine.advance(engine.clock()).expect("no-op advance");
                run_effects(engine, effects, tx);
            }
        }
    }
}
