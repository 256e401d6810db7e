//! Worker side of distributed evaluation: connect, handshake, then evaluate
//! TASK frames until SHUTDOWN. Workers keep no state between tasks.

use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::eval::{EvalContext, EvalTask};
use crate::wire::{read_message, write_message, Message, ResultMsg, TaskMsg, WireError, PROTOCOL_VERSION};
use crate::Error;

#[derive(Clone, Debug)]
pub struct WorkerOptions {
    /// Tasks evaluated concurrently; also advertised in HELLO.
    pub capacity: usize,
    /// Connection attempts before giving up, per outage.
    pub max_attempts: u32,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        WorkerOptions {
            capacity: thread::available_parallelism().map_or(1, |n| n.get()),
            max_attempts: 8,
            backoff_initial: Duration::from_millis(100),
            backoff_max: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerExit {
    /// The master sent SHUTDOWN.
    Shutdown,
}

enum Session {
    Shutdown,
    Lost,
}

/// Serves the master at `addr` until it sends SHUTDOWN. Lost connections
/// are retried with exponential backoff; a rejected handshake is an error.
pub fn run_worker(
    addr: impl ToSocketAddrs + Clone,
    ctx: EvalContext,
    checksum: u64,
    opts: &WorkerOptions,
) -> Result<WorkerExit, Error> {
    let ctx = Arc::new(ctx);
    loop {
        let stream = connect_with_backoff(addr.clone(), opts)?;
        match session(stream, &ctx, checksum, opts)? {
            Session::Shutdown => return Ok(WorkerExit::Shutdown),
            Session::Lost => continue,
        }
    }
}

fn connect_with_backoff(addr: impl ToSocketAddrs + Clone, opts: &WorkerOptions) -> Result<TcpStream, Error> {
    let mut delay = opts.backoff_initial;
    let mut last = None;
    for attempt in 0..opts.max_attempts.max(1) {
        if attempt > 0 {
            thread::sleep(delay);
            delay = (delay * 2).min(opts.backoff_max);
        }
        match TcpStream::connect(addr.clone()) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Io(last.expect("at least one attempt")))
}

fn session(stream: TcpStream, ctx: &Arc<EvalContext>, checksum: u64, opts: &WorkerOptions) -> Result<Session, Error> {
    stream.set_nodelay(true)?;
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let mut reader = BufReader::new(stream);
    let capacity = opts.capacity.clamp(1, usize::from(u16::MAX));
    let hello = Message::Hello {
        version: PROTOCOL_VERSION,
        checksum,
        capacity: capacity as u16,
    };
    if write_message(&mut *writer.lock().expect("writer lock"), &hello).is_err() {
        return Ok(Session::Lost);
    }
    match read_message(&mut reader) {
        Ok(Message::Hello { .. }) => {}
        Ok(Message::Shutdown) => {
            return Err(Error::Protocol(
                "master rejected this worker (protocol version or noise table mismatch)".into(),
            ))
        }
        Ok(other) => return Err(Error::Protocol(format!("unexpected handshake reply {other:?}"))),
        Err(_) => return Ok(Session::Lost),
    }

    let (jobs_tx, jobs_rx) = mpsc::channel::<TaskMsg>();
    let jobs_rx = Arc::new(Mutex::new(jobs_rx));
    let failure: Arc<Mutex<Option<Error>>> = Arc::new(Mutex::new(None));
    let stop = Arc::new(AtomicBool::new(false));
    let pool: Vec<_> = (0..capacity)
        .map(|_| {
            let jobs = jobs_rx.clone();
            let writer = writer.clone();
            let ctx = ctx.clone();
            let failure = failure.clone();
            let stop = stop.clone();
            thread::spawn(move || loop {
                let job = jobs.lock().expect("job queue").recv();
                let Ok(task) = job else { return };
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                let eval = EvalTask {
                    genotype: task.genotype,
                    episode_seeds: task.episode_seeds,
                };
                let outcome = match ctx.evaluate(&eval) {
                    Ok(o) => o,
                    Err(e) => {
                        *failure.lock().expect("failure slot") = Some(e);
                        let w = writer.lock().expect("writer lock");
                        let _ = w.shutdown(std::net::Shutdown::Both);
                        return;
                    }
                };
                let msg = Message::Result(ResultMsg {
                    task_id: task.task_id,
                    fitness: outcome.fitness,
                    bc: outcome.bc,
                    frames: outcome.frames,
                });
                if write_message(&mut *writer.lock().expect("writer lock"), &msg).is_err() {
                    return;
                }
            })
        })
        .collect();

    let outcome = loop {
        match read_message(&mut reader) {
            Ok(Message::Task(task)) => {
                if jobs_tx.send(task).is_err() {
                    break Session::Lost;
                }
            }
            Ok(Message::Heartbeat) => {
                let _ = write_message(&mut *writer.lock().expect("writer lock"), &Message::Heartbeat);
            }
            Ok(Message::Shutdown) => break Session::Shutdown,
            Ok(_) => break Session::Lost,
            Err(WireError::Io(_)) => break Session::Lost,
            Err(_) => break Session::Lost,
        }
    };
    drop(jobs_tx);
    if matches!(outcome, Session::Shutdown) {
        // Abandon queued work; the master has what it needs.
        stop.store(true, Ordering::SeqCst);
        let _ = writer.lock().expect("writer lock").shutdown(std::net::Shutdown::Both);
    }
    for t in pool {
        let _ = t.join();
    }
    if let Some(e) = failure.lock().expect("failure slot").take() {
        return Err(e);
    }
    Ok(outcome)
}
