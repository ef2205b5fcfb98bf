use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::assertions::{enable_single_block, find_blocks, strip_assertions, AssertionBlock};
use crate::error::{Error, Result};
use crate::tabular::{Batch, Dataset};

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

fn default_interpreter() -> Vec<String> {
    vec!["python3".into(), "{script}".into(), "{batch}".into()]
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

/// A downstream task script. `interpreter_command` is an argv template in
/// which `{script}` and `{batch}` are replaced by the paths of the script
/// copy and the batch file inside the run's working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskArtifact {
    pub id: String,
    pub script_path: PathBuf,
    #[serde(default = "default_interpreter")]
    pub interpreter_command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout: u64,
}

impl TaskArtifact {
    pub fn new(id: impl Into<String>, script_path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            script_path: script_path.into(),
            interpreter_command: default_interpreter(),
            timeout: DEFAULT_TIMEOUT_SECS,
        }
    }

    pub fn with_timeout(mut self, secs: u64) -> Self {
        self.timeout = secs;
        self
    }

    /// Resolve a relative script path against `base`.
    pub fn resolved(mut self, base: &Path) -> Self {
        if self.script_path.is_relative() {
            self.script_path = base.join(&self.script_path);
        }
        self
    }

    pub fn source(&self) -> Result<String> {
        fs::read_to_string(&self.script_path).map_err(|e| Error::io(&self.script_path, e))
    }

    /// Task code with every assertion block removed, as shown to generators.
    pub fn stripped_source(&self) -> Result<String> {
        Ok(strip_assertions(&self.source()?)?.0)
    }

    fn script_name(&self) -> String {
        self.script_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "task.py".into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    AllAssertions,
    Stripped,
    Single(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// `None` when the process was killed (timeout or signal).
    pub exit_status: Option<i32>,
    pub timed_out: bool,
    pub failed_block: Option<usize>,
    pub stdout: String,
    pub stderr: String,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        !self.timed_out && self.exit_status == Some(0)
    }
}

fn capture<R: Read + Send + 'static>(stream: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Last traceback line number that points into `script_name`.
fn failing_line(stderr: &str, script_name: &str) -> Option<usize> {
    stderr
        .lines()
        .filter_map(|l| {
            let rest = l.trim_start().strip_prefix("File \"")?;
            let (path, tail) = rest.split_once('"')?;
            if !path.ends_with(script_name) {
                return None;
            }
            let num = tail.strip_prefix(", line ")?;
            let digits: String = num.chars().take_while(char::is_ascii_digit).collect();
            digits.parse().ok()
        })
        .next_back()
}

/// Execute a task on a batch in a fresh temporary directory holding only the
/// script copy and `<batch id>.csv`.
pub fn run_task(task: &TaskArtifact, batch: &Batch, mode: RunMode) -> Result<RunOutcome> {
    run_on_data(task, &batch.id, &batch.data, mode)
}

pub fn run_on_data(task: &TaskArtifact, batch_id: &str, data: &Dataset, mode: RunMode) -> Result<RunOutcome> {
    let original = task.source()?;
    let (source, blocks): (String, Vec<AssertionBlock>) = match mode {
        RunMode::AllAssertions => {
            let blocks = find_blocks(&original)?;
            (original, blocks)
        }
        RunMode::Stripped => (strip_assertions(&original)?.0, Vec::new()),
        RunMode::Single(i) => {
            let src = enable_single_block(&original, i)?;
            let mut blocks = find_blocks(&src)?;
            for b in &mut blocks {
                b.index = i;
            }
            (src, blocks)
        }
    };

    let dir = tempfile::Builder::new()
        .prefix("taskcheck-run-")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let script_name = task.script_name();
    let script = dir.path().join(&script_name);
    fs::write(&script, &source).map_err(|e| Error::io(&script, e))?;
    let batch_path = dir.path().join(format!("{batch_id}.csv"));
    data.save_csv(&batch_path)?;

    let argv: Vec<String> = task
        .interpreter_command
        .iter()
        .map(|a| {
            a.replace("{script}", &script.to_string_lossy())
                .replace("{batch}", &batch_path.to_string_lossy())
        })
        .collect();
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| Error::Config(format!("task {}: empty interpreter command", task.id)))?;
    let mut child = Command::new(program)
        .args(args)
        .current_dir(dir.path())
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Environment(format!("interpreter {program:?} not found")),
            _ => Error::io(program, e),
        })?;
    let out = capture(child.stdout.take());
    let err = capture(child.stderr.take());

    let deadline = Instant::now() + Duration::from_secs(task.timeout);
    let mut timed_out = false;
    let status = loop {
        match child.try_wait().map_err(|e| Error::io(program, e))? {
            Some(status) => break Some(status),
            None if Instant::now() >= deadline => {
                timed_out = true;
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            None => thread::sleep(Duration::from_millis(5)),
        }
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    let exit_status = status.and_then(|s| s.code());

    let failed_block = if mode == RunMode::Stripped || timed_out || exit_status == Some(0) {
        None
    } else {
        failing_line(&stderr, &script_name)
            .and_then(|line| blocks.iter().find(|b| b.contains_line(line)))
            .map(|b| b.index)
    };
    log::debug!(
        "task {} on {batch_id} ({mode:?}): exit {exit_status:?}, timed out {timed_out}",
        task.id
    );
    Ok(RunOutcome {
        exit_status,
        timed_out,
        failed_block,
        stdout,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traceback_line_parsing() {
        let stderr = "Traceback (most recent call last):\n  File \"/tmp/x/task.py\", line 7, in <module>\n    helper()\n  File \"/tmp/x/task.py\", line 3, in helper\n    assert False\nAssertionError\n";
        assert_eq!(failing_line(stderr, "task.py"), Some(3));
        assert_eq!(failing_line(stderr, "other.py"), None);
    }
}
