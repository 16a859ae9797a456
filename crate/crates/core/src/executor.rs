//! Task execution backends for the RUNNING phase.
//!
//! Simulated execution schedules completions on the virtual clock from
//! configured durations and never consults the wall clock. Subprocess
//! execution runs real local commands and measures them; the simulated node
//! assignment is bookkeeping only — everything runs on this machine.

use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::model::{JobId, NodeId, TaskSpec};
use crate::time::Millis;

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("task {0} has no duration_s; simulated mode needs one")]
    NoDuration(String),
    #[error("task {0} has no command; subprocess mode needs one")]
    NoCommand(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Failed,
}

/// Outcome of one task execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskResult {
    pub task: String,
    pub node: NodeId,
    pub started_s: Millis,
    pub ended_s: Millis,
    pub status: TaskStatus,
    pub exit_detail: String,
}

/// Simulated completion: at `now + duration_s`, or at the timeout with a
/// failure if the configured duration exceeds it.
pub fn execute_simulated(task: &TaskSpec, now: Millis) -> Result<(Millis, TaskStatus, String), ExecError> {
    let duration = task.duration_s.ok_or_else(|| ExecError::NoDuration(task.name.clone()))?;
    match task.timeout_s {
        Some(timeout) if duration > timeout => Ok((
            now + timeout,
            TaskStatus::Failed,
            format!("timed out after {timeout}s"),
        )),
        _ => Ok((now + duration, TaskStatus::Ok, "exit 0".to_string())),
    }
}

/// Runs the task's command through the platform shell, blocking until it
/// exits or its timeout expires. Wall durations are reported back in
/// milliseconds; `started_s`/`ended_s` are filled in by the caller, which
/// owns the clock.
pub fn execute_subprocess(
    task: &TaskSpec,
    job: &JobId,
    node: &NodeId,
) -> Result<(Millis, TaskStatus, String), ExecError> {
    let command = task.command.clone().ok_or_else(|| ExecError::NoCommand(task.name.clone()))?;
    let started = Instant::now();
    let spawned = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .env("JOB_ID", job.as_str())
        .env("NODE_ID", node.as_str())
        .env("TASK_NAME", &task.name)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn();
    let mut child = match spawned {
        Ok(child) => child,
        Err(e) => {
            return Ok((
                Millis::ZERO,
                TaskStatus::Failed,
                format!("spawn failed: {e}"),
            ));
        }
    };
    let deadline = task
        .timeout_s
        .map(|t| Duration::from_millis(t.as_ms()));
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) => {
                if let Some(limit) = deadline {
                    if started.elapsed() >= limit {
                        let _ = child.kill();
                        let _ = child.wait();
                        break None;
                    }
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Ok((
                    elapsed_ms(started),
                    TaskStatus::Failed,
                    format!("wait failed: {e}"),
                ));
            }
        }
    };
    let elapsed = elapsed_ms(started);
    match status {
        Some(status) if status.success() => Ok((elapsed, TaskStatus::Ok, "exit 0".to_string())),
        Some(status) => Ok((
            elapsed,
            TaskStatus::Failed,
            match status.code() {
                Some(code) => format!("exit {code}"),
                None => "killed by signal".to_string(),
            },
        )),
        None => Ok((
            elapsed,
            TaskStatus::Failed,
            format!("timed out after {}s", task.timeout_s.unwrap()),
        )),
    }
}

fn elapsed_ms(started: Instant) -> Millis {
    Millis::from_ms(started.elapsed().as_millis() as u64)
}

/// Gang barrier: the RUNNING phase ends when the last member finishes, and
/// the slice fails if any member failed.
pub fn gang_barrier(results: &[TaskResult]) -> (Millis, TaskStatus) {
    let end = results
        .iter()
        .map(|r| r.ended_s)
        .max()
        .unwrap_or(Millis::ZERO);
    let status = if results.iter().any(|r| r.status == TaskStatus::Failed) {
        TaskStatus::Failed
    } else {
        TaskStatus::Ok
    };
    (end, status)
}
