use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::protocol::Message;
use crate::error::{Error, Result};

/// A child process speaking the line protocol on stdin/stdout. A reader
/// thread forwards stdout lines so replies can be awaited with a timeout.
pub struct ProcessClient {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl ProcessClient {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::SpawnFailure(format!("`{program}`: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| Error::SpawnFailure("stdin unavailable".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| Error::SpawnFailure("stdout unavailable".into()))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin: Some(stdin), lines: rx })
    }

    pub fn send(&mut self, message: &Message) -> Result<()> {
        let stdin = self.stdin.as_mut().ok_or_else(|| Error::Protocol("model input already closed".into()))?;
        let line = message.encode()?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Protocol(format!("write to model failed: {e}")))
    }

    pub fn receive(&mut self, timeout: Duration) -> Result<Message> {
        loop {
            match self.lines.recv_timeout(timeout) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return Message::decode(&line),
                Ok(Err(e)) => return Err(Error::Protocol(format!("read from model failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol("model closed its output".into()))
                }
            }
        }
    }
}

impl Drop for ProcessClient {
    fn drop(&mut self) {
        let _ = self.send(&Message::Shutdown);
        drop(self.stdin.take());
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
