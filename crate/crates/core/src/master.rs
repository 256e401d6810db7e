//! Coordinator side of distributed evaluation.
//!
//! Workers connect, present a HELLO carrying the noise-table checksum and are
//! then fed TASK frames. Results are merged by task id into member order, so
//! the outcome of a batch never depends on which worker ran what or when.
//! Lost or slow tasks are reassigned; the first RESULT for a task id wins and
//! later duplicates are dropped. With no workers the batch runs in-process.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::eval::{EvalOutcome, EvalTask, Evaluator, LocalEvaluator};
use crate::wire::{read_message, write_message, Message, ResultMsg, TaskMsg, PROTOCOL_VERSION};
use crate::Error;

#[derive(Clone, Debug)]
pub struct MasterOptions {
    /// A task not answered within this time is handed to another worker.
    pub task_timeout: Duration,
    /// Block the first batch until this many workers have joined.
    pub wait_workers: usize,
    pub wait_timeout: Duration,
    pub heartbeat: Duration,
    pub handshake_timeout: Duration,
}

impl Default for MasterOptions {
    fn default() -> Self {
        MasterOptions {
            task_timeout: Duration::from_secs(60),
            wait_workers: 0,
            wait_timeout: Duration::from_secs(120),
            heartbeat: Duration::from_secs(5),
            handshake_timeout: Duration::from_secs(10),
        }
    }
}

enum Event {
    Joined {
        id: u64,
        stream: TcpStream,
        capacity: usize,
    },
    Message {
        id: u64,
        msg: Message,
    },
    Closed {
        id: u64,
    },
}

struct WorkerLink {
    stream: TcpStream,
    capacity: usize,
    inflight: HashSet<usize>,
    last_sent: Instant,
}

/// Counters for diagnostics and tests.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MasterStats {
    pub dispatched: u64,
    pub reassigned: u64,
    pub duplicates: u64,
    pub local_tasks: u64,
    pub workers_lost: u64,
}

pub struct Master {
    local: LocalEvaluator,
    events: Receiver<Event>,
    workers: BTreeMap<u64, WorkerLink>,
    next_task_id: u32,
    addr: SocketAddr,
    opts: MasterOptions,
    stop: Arc<AtomicBool>,
    waited: bool,
    pub stats: MasterStats,
}

impl Master {
    /// Starts listening. `checksum` is the local noise-table checksum that
    /// workers must match.
    pub fn bind(
        addr: impl ToSocketAddrs,
        local: LocalEvaluator,
        checksum: u64,
        opts: MasterOptions,
    ) -> Result<Self, Error> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let handshake_timeout = opts.handshake_timeout;
        thread::Builder::new()
            .name("deepga-accept".into())
            .spawn(move || accept_loop(listener, tx, checksum, stop_flag, handshake_timeout))?;
        Ok(Master {
            local,
            events: rx,
            workers: BTreeMap::new(),
            next_task_id: 0,
            addr,
            opts,
            stop,
            waited: false,
            stats: MasterStats::default(),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    fn handle(&mut self, event: Event) -> Option<(u64, ResultMsg)> {
        match event {
            Event::Joined {
                id,
                stream,
                capacity,
            } => {
                self.workers.insert(
                    id,
                    WorkerLink {
                        stream,
                        capacity: capacity.max(1),
                        inflight: HashSet::new(),
                        last_sent: Instant::now(),
                    },
                );
                None
            }
            Event::Message { id, msg } => match msg {
                Message::Result(r) => Some((id, r)),
                Message::Heartbeat => None,
                _ => {
                    self.drop_worker(id);
                    None
                }
            },
            Event::Closed { id } => {
                self.drop_worker(id);
                None
            }
        }
    }

    fn drop_worker(&mut self, id: u64) -> Option<WorkerLink> {
        let link = self.workers.remove(&id)?;
        let _ = link.stream.shutdown(std::net::Shutdown::Both);
        self.stats.workers_lost += 1;
        Some(link)
    }

    fn drain(&mut self) {
        while let Ok(ev) = self.events.try_recv() {
            // Results outside a batch are stale duplicates.
            if self.handle(ev).is_some() {
                self.stats.duplicates += 1;
            }
        }
    }

    fn wait_for_workers(&mut self) -> Result<(), Error> {
        let deadline = Instant::now() + self.opts.wait_timeout;
        while self.workers.len() < self.opts.wait_workers {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(Error::Protocol(format!(
                    "only {} of {} workers joined",
                    self.workers.len(),
                    self.opts.wait_workers
                )));
            }
            match self.events.recv_timeout(left) {
                Ok(ev) => {
                    self.handle(ev);
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol("listener stopped".into()))
                }
            }
        }
        Ok(())
    }

    fn send(&mut self, id: u64, msg: &Message) -> bool {
        let Some(link) = self.workers.get_mut(&id) else {
            return false;
        };
        link.last_sent = Instant::now();
        if write_message(&mut link.stream, msg).is_ok() {
            true
        } else {
            self.drop_worker(id);
            false
        }
    }

    fn heartbeat(&mut self) {
        let idle: Vec<u64> = self
            .workers
            .iter()
            .filter(|(_, l)| l.last_sent.elapsed() >= self.opts.heartbeat)
            .map(|(&id, _)| id)
            .collect();
        for id in idle {
            self.send(id, &Message::Heartbeat);
        }
    }

    /// Sends SHUTDOWN to every worker.
    pub fn shutdown_workers(&mut self) {
        let ids: Vec<u64> = self.workers.keys().copied().collect();
        for id in ids {
            self.send(id, &Message::Shutdown);
            if let Some(link) = self.workers.remove(&id) {
                let _ = link.stream.shutdown(std::net::Shutdown::Write);
            }
        }
    }
}

impl Drop for Master {
    fn drop(&mut self) {
        self.shutdown_workers();
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
    }
}

struct Slot {
    task_id: u32,
    result: Option<EvalOutcome>,
    sent_at: Option<Instant>,
    reassigned: bool,
}

impl Evaluator for Master {
    fn evaluate_batch(&mut self, generation: u32, tasks: &[EvalTask]) -> Result<Vec<EvalOutcome>, Error> {
        if !self.waited {
            self.waited = true;
            self.wait_for_workers()?;
        }
        self.drain();
        if self.workers.is_empty() {
            self.stats.local_tasks += tasks.len() as u64;
            return self.local.evaluate_batch(generation, tasks);
        }
        for link in self.workers.values_mut() {
            link.inflight.clear();
        }
        let base = self.next_task_id;
        self.next_task_id = self.next_task_id.wrapping_add(tasks.len() as u32);
        let mut slots: Vec<Slot> = (0..tasks.len())
            .map(|i| Slot {
                task_id: base.wrapping_add(i as u32),
                result: None,
                sent_at: None,
                reassigned: false,
            })
            .collect();
        let mut pending: VecDeque<usize> = (0..tasks.len()).collect();
        let mut remaining = tasks.len();
        let tick = Duration::from_millis(20).min(self.opts.task_timeout);
        while remaining > 0 {
            // Hand out work to every worker with spare capacity.
            let ids: Vec<u64> = self.workers.keys().copied().collect();
            for id in ids {
                loop {
                    let Some(link) = self.workers.get(&id) else { break };
                    if link.inflight.len() >= link.capacity {
                        break;
                    }
                    let Some(idx) = pending.pop_front() else { break };
                    if slots[idx].result.is_some() {
                        continue;
                    }
                    let msg = Message::Task(TaskMsg {
                        generation,
                        task_id: slots[idx].task_id,
                        episode_seeds: tasks[idx].episode_seeds.clone(),
                        genotype: tasks[idx].genotype.clone(),
                    });
                    if self.send(id, &msg) {
                        self.stats.dispatched += 1;
                        slots[idx].sent_at = Some(Instant::now());
                        if let Some(link) = self.workers.get_mut(&id) {
                            link.inflight.insert(idx);
                        }
                    } else {
                        pending.push_front(idx);
                        self.requeue_lost(&mut pending, &slots);
                        break;
                    }
                }
            }
            if self.workers.is_empty() {
                // Everyone left: finish the batch here.
                let rest: Vec<usize> = (0..tasks.len()).filter(|&i| slots[i].result.is_none()).collect();
                let sub: Vec<EvalTask> = rest.iter().map(|&i| tasks[i].clone()).collect();
                self.stats.local_tasks += sub.len() as u64;
                let outs = self.local.evaluate_batch(generation, &sub)?;
                for (i, o) in rest.into_iter().zip(outs) {
                    slots[i].result = Some(o);
                }
                break;
            }
            match self.events.recv_timeout(tick) {
                Ok(ev) => {
                    let closed = matches!(ev, Event::Closed { .. });
                    if let Some((wid, r)) = self.handle(ev) {
                        let idx = r.task_id.wrapping_sub(base) as usize;
                        if let Some(link) = self.workers.get_mut(&wid) {
                            link.inflight.remove(&idx);
                        }
                        if idx < slots.len() && slots[idx].result.is_none() {
                            slots[idx].result = Some(EvalOutcome {
                                fitness: r.fitness,
                                bc: r.bc,
                                frames: r.frames,
                            });
                            remaining -= 1;
                        } else {
                            self.stats.duplicates += 1;
                        }
                    } else if closed {
                        self.requeue_lost(&mut pending, &slots);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol("listener stopped".into()))
                }
            }
            // Slow tasks go back in the queue once.
            for (idx, slot) in slots.iter_mut().enumerate() {
                if slot.result.is_none()
                    && !slot.reassigned
                    && slot.sent_at.is_some_and(|t| t.elapsed() >= self.opts.task_timeout)
                {
                    slot.reassigned = true;
                    self.stats.reassigned += 1;
                    pending.push_back(idx);
                }
            }
            self.heartbeat();
        }
        Ok(slots
            .into_iter()
            .map(|s| s.result.expect("every slot filled"))
            .collect())
    }
}

impl Master {
    /// Requeues unfinished tasks that no live worker holds.
    fn requeue_lost(&mut self, pending: &mut VecDeque<usize>, slots: &[Slot]) {
        let held: HashSet<usize> = self
            .workers
            .values()
            .flat_map(|l| l.inflight.iter().copied())
            .collect();
        let queued: HashSet<usize> = pending.iter().copied().collect();
        for (idx, slot) in slots.iter().enumerate() {
            if slot.result.is_none() && slot.sent_at.is_some() && !held.contains(&idx) && !queued.contains(&idx) {
                self.stats.reassigned += 1;
                pending.push_back(idx);
            }
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    tx: Sender<Event>,
    checksum: u64,
    stop: Arc<AtomicBool>,
    handshake_timeout: Duration,
) {
    let next_id = Arc::new(AtomicU64::new(0));
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let tx = tx.clone();
        let next_id = next_id.clone();
        let _ = thread::Builder::new()
            .name("deepga-conn".into())
            .spawn(move || serve_connection(stream, tx, checksum, next_id, handshake_timeout));
    }
}

fn serve_connection(
    stream: TcpStream,
    tx: Sender<Event>,
    checksum: u64,
    next_id: Arc<AtomicU64>,
    handshake_timeout: Duration,
) {
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(handshake_timeout));
    let Ok(mut writer) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let capacity = match read_message(&mut reader) {
        Ok(Message::Hello {
            version,
            checksum: theirs,
            capacity,
        }) if version == PROTOCOL_VERSION && theirs == checksum => capacity as usize,
        Ok(_) => {
            let _ = write_message(&mut writer, &Message::Shutdown);
            return;
        }
        Err(_) => return,
    };
    let reply = Message::Hello {
        version: PROTOCOL_VERSION,
        checksum,
        capacity: 0,
    };
    if write_message(&mut writer, &reply).is_err() {
        return;
    }
    let _ = reader.get_ref().set_read_timeout(None);
    let id = next_id.fetch_add(1, Ordering::SeqCst);
    if tx
        .send(Event::Joined {
            id,
            stream: writer,
            capacity,
        })
        .is_err()
    {
        return;
    }
    loop {
        match read_message(&mut reader) {
            Ok(msg) => {
                if tx.send(Event::Message { id, msg }).is_err() {
                    return;
                }
            }
            Err(_) => {
                let _ = tx.send(Event::Closed { id });
                return;
            }
        }
    }
}
