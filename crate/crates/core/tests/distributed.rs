//! Master/worker behavior over real sockets: handshake checks, partitioned
//! work, duplicates, timeouts and lost workers.

use std::io::BufReader;
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use deepga::config::ExperimentConfig;
use deepga::eval::{EvalContext, EvalOutcome, EvalTask, Evaluator, LocalEvaluator};
use deepga::genome::{CodecMode, Genotype};
use deepga::master::{Master, MasterOptions};
use deepga::noise::{NoiseTable, Seed, SplitMix64};
use deepga::wire::{read_message, write_message, Message, ResultMsg, PROTOCOL_VERSION};
use deepga::worker::{run_worker, WorkerOptions};
use deepga::Error;

const CONFIG: &str = r#"
mode = "ga"
[noise]
seed = 7
size = 8192
[env]
kind = "bandit"
target = [0.3, -0.4]
noise_std = 0.1
[policy]
input = [4]
[[policy.layers]]
kind = "dense"
units = 6
[[policy.layers]]
kind = "dense"
units = 2
[ga]
population = 10
truncation = 3
sigma = 0.05
generations = 3
seed = 1
"#;

fn context(noise_seed: u32) -> (EvalContext, u64) {
    let mut cfg = ExperimentConfig::parse(CONFIG).unwrap();
    cfg.noise.seed = Seed::new(noise_seed).unwrap();
    let table = Arc::new(NoiseTable::build(cfg.noise.seed, cfg.noise.size).unwrap());
    let checksum = table.checksum();
    (cfg.context_with(table).unwrap(), checksum)
}

fn tasks(n: usize) -> Vec<EvalTask> {
    let mut rng = SplitMix64::new(5);
    (0..n)
        .map(|_| {
            let mut g = Genotype::new(rng.next_seed(), 0.05, CodecMode::Direct);
            for _ in 0..rng.next_below(20) {
                g = g.mutate(rng.next_seed());
            }
            EvalTask {
                genotype: g,
                episode_seeds: vec![rng.next_seed(), rng.next_seed()],
            }
        })
        .collect()
}

fn expected(ctx: &EvalContext, tasks: &[EvalTask]) -> Vec<EvalOutcome> {
    tasks.iter().map(|t| ctx.evaluate(t).unwrap()).collect()
}

fn master(ctx: &EvalContext, checksum: u64, wait_workers: usize, task_timeout: Duration) -> Master {
    Master::bind(
        "127.0.0.1:0",
        LocalEvaluator::new(ctx.clone()),
        checksum,
        MasterOptions {
            wait_workers,
            wait_timeout: Duration::from_secs(30),
            task_timeout,
            ..MasterOptions::default()
        },
    )
    .unwrap()
}

fn spawn_worker(addr: SocketAddr, noise_seed: u32) -> thread::JoinHandle<Result<deepga::worker::WorkerExit, Error>> {
    let (ctx, checksum) = context(noise_seed);
    let opts = WorkerOptions {
        capacity: 2,
        max_attempts: 3,
        ..WorkerOptions::default()
    };
    thread::spawn(move || run_worker(addr, ctx, checksum, &opts))
}

/// A hand-driven worker: handshake done, then whatever the test does.
fn fake_worker(addr: SocketAddr, checksum: u64, capacity: u16) -> (BufReader<TcpStream>, TcpStream) {
    let mut stream = TcpStream::connect(addr).unwrap();
    write_message(
        &mut stream,
        &Message::Hello {
            version: PROTOCOL_VERSION,
            checksum,
            capacity,
        },
    )
    .unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    assert!(matches!(read_message(&mut reader).unwrap(), Message::Hello { .. }));
    (reader, stream)
}

#[test]
fn no_workers_means_in_process_evaluation() {
    let (ctx, checksum) = context(7);
    let t = tasks(6);
    let mut m = master(&ctx, checksum, 0, Duration::from_secs(60));
    assert_eq!(m.evaluate_batch(1, &t).unwrap(), expected(&ctx, &t));
    assert_eq!(m.stats.local_tasks, 6);
    assert_eq!(m.stats.dispatched, 0);
}

#[test]
fn mismatched_noise_table_is_rejected_at_hello() {
    let (ctx, checksum) = context(7);
    let m = master(&ctx, checksum, 0, Duration::from_secs(60));
    let result = spawn_worker(m.local_addr(), 8).join().unwrap();
    assert!(matches!(result, Err(Error::Protocol(_))), "{result:?}");
    assert_eq!(m.worker_count(), 0);
}

#[test]
fn disjoint_partitions_pool_to_the_single_worker_result() {
    let (ctx, checksum) = context(7);
    let t = tasks(12);
    let (left, right) = t.split_at(5);

    let mut pooled = Vec::new();
    for part in [left, right] {
        let mut m = master(&ctx, checksum, 1, Duration::from_secs(60));
        let w = spawn_worker(m.local_addr(), 7);
        pooled.extend(m.evaluate_batch(1, part).unwrap());
        drop(m);
        w.join().unwrap().unwrap();
    }

    let mut m = master(&ctx, checksum, 1, Duration::from_secs(60));
    let w = spawn_worker(m.local_addr(), 7);
    let whole = m.evaluate_batch(1, &t).unwrap();
    assert_eq!(m.stats.dispatched, 12);
    drop(m);
    w.join().unwrap().unwrap();

    assert_eq!(pooled, whole);
    assert_eq!(whole, expected(&ctx, &t));
}

#[test]
fn duplicate_results_are_discarded() {
    let (ctx, checksum) = context(7);
    let t = tasks(6);
    let mut m = master(&ctx, checksum, 1, Duration::from_secs(60));
    let addr = m.local_addr();
    let worker_ctx = ctx.clone();
    let fake = thread::spawn(move || {
        let (mut reader, mut writer) = fake_worker(addr, checksum, 16);
        loop {
            match read_message(&mut reader) {
                Ok(Message::Task(task)) => {
                    let out = worker_ctx
                        .evaluate(&EvalTask {
                            genotype: task.genotype,
                            episode_seeds: task.episode_seeds,
                        })
                        .unwrap();
                    let good = Message::Result(ResultMsg {
                        task_id: task.task_id,
                        fitness: out.fitness,
                        bc: out.bc,
                        frames: out.frames,
                    });
                    let junk = Message::Result(ResultMsg {
                        task_id: task.task_id,
                        fitness: -1e9,
                        bc: vec![9.0, 9.0],
                        frames: 1,
                    });
                    write_message(&mut writer, &good).unwrap();
                    write_message(&mut writer, &junk).unwrap();
                }
                Ok(Message::Heartbeat) => {}
                _ => return,
            }
        }
    });
    let got = m.evaluate_batch(1, &t).unwrap();
    // Let the last junk frames arrive, then run a second batch on top.
    thread::sleep(Duration::from_millis(100));
    let again = m.evaluate_batch(2, &t).unwrap();
    assert_eq!(got, expected(&ctx, &t));
    assert_eq!(again, got);
    assert!(m.stats.duplicates >= 6, "{:?}", m.stats);
    drop(m);
    fake.join().unwrap();
}

#[test]
fn silent_worker_tasks_are_reassigned_after_timeout() {
    let (ctx, checksum) = context(7);
    let t = tasks(8);
    let mut m = master(&ctx, checksum, 2, Duration::from_millis(300));
    let addr = m.local_addr();
    // Joins first and swallows whatever it is sent.
    let silent = thread::spawn(move || {
        let (mut reader, _writer) = fake_worker(addr, checksum, 3);
        while read_message(&mut reader).is_ok() {}
    });
    thread::sleep(Duration::from_millis(100));
    let real = spawn_worker(addr, 7);
    let got = m.evaluate_batch(1, &t).unwrap();
    assert_eq!(got, expected(&ctx, &t));
    assert!(m.stats.reassigned >= 1, "{:?}", m.stats);
    drop(m);
    real.join().unwrap().unwrap();
    silent.join().unwrap();
}

#[test]
fn batch_finishes_locally_when_every_worker_disconnects() {
    let (ctx, checksum) = context(7);
    let t = tasks(8);
    let mut m = master(&ctx, checksum, 1, Duration::from_secs(60));
    let addr = m.local_addr();
    let quitter = thread::spawn(move || {
        let (mut reader, writer) = fake_worker(addr, checksum, 4);
        // Take one task, then vanish.
        let _ = read_message(&mut reader);
        writer.shutdown(std::net::Shutdown::Both).unwrap();
    });
    let got = m.evaluate_batch(1, &t).unwrap();
    quitter.join().unwrap();
    assert_eq!(got, expected(&ctx, &t));
    assert_eq!(m.worker_count(), 0);
    assert!(m.stats.local_tasks > 0);
}

#[test]
fn worker_exits_cleanly_on_shutdown() {
    let (ctx, checksum) = context(7);
    let mut m = master(&ctx, checksum, 1, Duration::from_secs(60));
    let w = spawn_worker(m.local_addr(), 7);
    let t = tasks(3);
    m.evaluate_batch(1, &t).unwrap();
    m.shutdown_workers();
    assert_eq!(w.join().unwrap().unwrap(), deepga::worker::WorkerExit::Shutdown);
}
