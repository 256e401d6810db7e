//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use deepga::config::ExperimentConfig;
use deepga::env::EnvSpec;
use deepga::eval::{EvalTask, Evaluator, LocalEvaluator};
use deepga::evolution::Mode;
use deepga::genome::{reconstruct_with, CodecMode, Genotype};
use deepga::master::{Master, MasterOptions};
use deepga::noise::{NoiseTable, Seed, SplitMix64};
use deepga::novelty::{novelty, Distance};
use deepga::policy::{PolicySpec, ShapeError};
use deepga::train::{self, TrainOptions, CURVE_FILE, ELITE_FILE};
use deepga::wire::{read_message, write_message, Message, TaskMsg};
use deepga::worker::{run_worker, WorkerOptions};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let word = if pass { "PASS" } else { "FAIL" };
    // Straight to the process stdout so the line survives test output capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n} ({name}): {word}: {detail}");
    let _ = out.flush();
}

fn seed(v: u32) -> Seed {
    Seed::new(v).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

// ---- 1 ----

#[test]
fn criterion_1_compression() {
    let config = configs().join("maze_full.toml");
    let cfg = ExperimentConfig::load(&config).unwrap();
    let params = cfg.policy.param_count().unwrap();
    let mut g = Genotype::new(seed(1), 0.005, CodecMode::Direct);
    let mut rng = SplitMix64::new(349);
    for _ in 0..349 {
        g = g.mutate(rng.next_seed());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.dgn");
    std::fs::write(&path, g.to_bytes()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_deepga"))
        .args(["inspect", "--config"])
        .arg(&config)
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let field = |name: &str| -> String {
        text.lines()
            .find_map(|l| l.strip_prefix(name).map(|v| v.trim().to_string()))
            .unwrap_or_else(|| panic!("{name} missing from:\n{text}"))
    };
    let size: usize = field("serialized_bytes").parse().unwrap();
    let printed_params: usize = field("param_count").parse().unwrap();
    let ratio: f64 = field("compression_ratio").parse().unwrap();
    let expected = params as f64 * 4.0 / 1417.0;
    let pass = size == 1417
        && printed_params == params
        && (ratio - expected).abs() < 1e-3
        && params > 1_420_000
        && ratio > 4000.0;
    verdict(
        1,
        "compression",
        pass,
        format!("{size} bytes, {printed_params} params, ratio {ratio} (expected {expected:.3})"),
    );
    assert!(pass);
}

// ---- 2 ----

/// Worker side of a reconstruction round trip: decode TASK frames, rebuild
/// theta from an independently built table, send the raw values back.
fn reconstruct_server(listener: TcpListener, cfg: ExperimentConfig) {
    let (stream, _) = listener.accept().unwrap();
    let table = NoiseTable::build(cfg.noise.seed, cfg.noise.size).unwrap();
    let net = cfg.policy.compile().unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    loop {
        match read_message(&mut reader).unwrap() {
            Message::Task(t) => {
                let theta = reconstruct_with(&t.genotype, &net, &table).unwrap();
                let mut out = Vec::with_capacity(4 * theta.len() + 8);
                out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
                for v in theta {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                writer.write_all(&out).unwrap();
            }
            Message::Shutdown => return,
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn criterion_2_reconstruction_determinism() {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(&configs().join("maze_ga.toml")).unwrap();
    let ctx = cfg.context().unwrap();
    let mut rng = SplitMix64::new(2024);
    let genotypes: Vec<Genotype> = (0..20)
        .map(|i| {
            let chain = if i == 0 { 1000 } else { rng.next_below(1001) as usize };
            let mut g = Genotype::new(rng.next_seed(), 0.005, CodecMode::Direct);
            for _ in 0..chain {
                g = g.mutate(rng.next_seed());
            }
            g
        })
        .collect();

    // Raw theta through the wire format.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server_cfg = cfg.clone();
    let server = thread::spawn(move || reconstruct_server(listener, server_cfg));
    let mut stream = TcpStream::connect(addr).unwrap();
    let mut identical = 0;
    for (i, g) in genotypes.iter().enumerate() {
        let a = ctx.reconstruct(g).unwrap();
        let b = ctx.reconstruct(g).unwrap();
        let task = Message::Task(TaskMsg {
            generation: 0,
            task_id: i as u32,
            episode_seeds: vec![seed(0)],
            genotype: g.clone(),
        });
        write_message(&mut stream, &task).unwrap();
        let mut len = [0u8; 8];
        stream.read_exact(&mut len).unwrap();
        let mut raw = vec![0u8; 4 * u64::from_le_bytes(len) as usize];
        stream.read_exact(&mut raw).unwrap();
        let c: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if bits(&a) == bits(&b) && bits(&a) == bits(&c) {
            identical += 1;
        }
    }
    write_message(&mut stream, &Message::Shutdown).unwrap();
    server.join().unwrap();

    // The real worker must agree with in-process evaluation as well.
    let table = Arc::new(NoiseTable::build(cfg.noise.seed, cfg.noise.size).unwrap());
    let checksum = table.checksum();
    let worker_ctx = cfg.context_with(table).unwrap();
    let mut master = Master::bind(
        "127.0.0.1:0",
        LocalEvaluator::new(ctx.clone()),
        checksum,
        MasterOptions {
            wait_workers: 1,
            ..MasterOptions::default()
        },
    )
    .unwrap();
    let maddr = master.local_addr();
    let worker = thread::spawn(move || run_worker(maddr, worker_ctx, checksum, &WorkerOptions::default()));
    let tasks: Vec<EvalTask> = genotypes
        .iter()
        .map(|g| EvalTask {
            genotype: g.clone(),
            episode_seeds: vec![seed(0)],
        })
        .collect();
    let remote = master.evaluate_batch(1, &tasks).unwrap();
    let remote_tasks = master.stats.dispatched;
    drop(master);
    worker.join().unwrap().unwrap();
    let local: Vec<_> = tasks.iter().map(|t| ctx.evaluate(t).unwrap()).collect();
    let results_agree = remote.len() == local.len()
        && remote.iter().zip(&local).all(|(r, l)| {
            r.fitness.to_bits() == l.fitness.to_bits() && bits(&r.bc) == bits(&l.bc) && r.frames == l.frames
        });

    let pass = identical == 20 && results_agree && remote_tasks == 20;
    verdict(
        2,
        "reconstruction determinism",
        pass,
        format!(
            "{identical}/20 genotypes identical across 60 reconstructions; worker results agree: {results_agree}; {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---- 3 ----

#[test]
fn criterion_3_ga_beats_random_search() {
    let started = Instant::now();
    let ga_cfg = ExperimentConfig::load(&configs().join("bandit_ga.toml")).unwrap();
    let rs_cfg = ExperimentConfig::load(&configs().join("bandit_rs.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut wins = 0;
    let (mut ga_sum, mut rs_sum) = (0.0, 0.0);
    let mut detail = Vec::new();
    for s in 1..=5u32 {
        let run = |cfg: &ExperimentConfig, name: &str| {
            let mut cfg = cfg.clone();
            cfg.ga.seed = seed(s);
            let opts = TrainOptions {
                out: Some(dir.path().join(format!("{name}{s}"))),
                ..TrainOptions::default()
            };
            let r = train::train(&cfg, &opts).unwrap();
            assert_eq!(r.state.evaluations, 10_000, "{name} budget");
            r.state.elite().unwrap().fitness
        };
        let ga = run(&ga_cfg, "ga");
        let rs = run(&rs_cfg, "rs");
        if ga >= rs {
            wins += 1;
        }
        ga_sum += ga;
        rs_sum += rs;
        detail.push(format!("seed {s}: ga {ga:.3e} rs {rs:.3e}"));
    }
    let pass = wins >= 4 && ga_sum / 5.0 > rs_sum / 5.0;
    verdict(
        3,
        "GA beats random search",
        pass,
        format!(
            "GA >= RS in {wins}/5 pairs, mean {:.3e} vs {:.3e} [{}] {:.1}s",
            ga_sum / 5.0,
            rs_sum / 5.0,
            detail.join("; "),
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---- 4 and 5 ----

struct CurveRow {
    elite_fitness: f64,
    population_max: f64,
    best_reward: Option<f64>,
}

fn read_curve(path: &Path) -> Vec<CurveRow> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (e, m, b) = (col("elite_fitness").unwrap(), col("population_max").unwrap(), col("best_reward"));
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            CurveRow {
                elite_fitness: r[e].parse().unwrap(),
                population_max: r[m].parse().unwrap(),
                best_reward: b.map(|b| r[b].parse().unwrap()),
            }
        })
        .collect()
}

fn coordinate_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn criterion_4_and_5_deception_and_elite_monotonicity() {
    let started = Instant::now();
    let ga_cfg = ExperimentConfig::load(&configs().join("maze_ga.toml")).unwrap();
    let ns_cfg = ExperimentConfig::load(&configs().join("maze_ga_ns.toml")).unwrap();
    assert_eq!((ga_cfg.ga.population, ga_cfg.ga.truncation, ga_cfg.ga.generations), (201, 20, 100));
    assert_eq!(ga_cfg.ga.sigma, 0.005);
    assert_eq!((ns_cfg.novelty.k, ns_cfg.novelty.p), (25, 0.01));
    assert_eq!(ga_cfg.policy, PolicySpec::desk_maze());
    let EnvSpec::Maze(maze) = ga_cfg.env.resolve().unwrap() else {
        panic!("maze config expected")
    };
    assert_eq!(maze.params.max_steps, 400);
    let map = &maze.map;
    let trap2 = map.landmark("trap2").expect("trap2 landmark");
    let solved = -map.goal_radius;

    let table = Arc::new(ga_cfg.noise.build().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let mut ns_reached = 0;
    let mut ga_reached = 0;
    let mut monotone = 0;
    let mut ga_final = Vec::new();
    for s in 1..=10u32 {
        for (cfg, name) in [(&ga_cfg, "ga"), (&ns_cfg, "ns")] {
            let mut cfg = cfg.clone();
            cfg.ga.seed = seed(s);
            let out = dir.path().join(format!("{name}{s}"));
            let ctx = cfg.context_with(table.clone()).unwrap();
            let r = train::train_with(&cfg, ctx, &TrainOptions {
                out: Some(out.clone()),
                ..TrainOptions::default()
            })
            .unwrap();
            let rows = read_curve(&out.join(CURVE_FILE));
            assert_eq!(rows.len(), 100);
            let reached = if cfg.mode == Mode::GaNs {
                rows.iter().any(|r| r.best_reward.unwrap() >= solved)
            } else {
                rows.iter().any(|r| r.population_max >= solved)
            };
            let elite = r.state.elite().unwrap();
            println!(
                "  {name} seed {s}: reached goal {reached}, final elite at ({:.1}, {:.1}) fitness {:.2}",
                elite.bc[0], elite.bc[1], elite.fitness
            );
            if cfg.mode == Mode::GaNs {
                ns_reached += usize::from(reached);
            } else {
                ga_reached += usize::from(reached);
                if rows.windows(2).all(|w| w[1].elite_fitness >= w[0].elite_fitness) {
                    monotone += 1;
                }
                ga_final.push((f64::from(elite.bc[0]), f64::from(elite.bc[1])));
            }
        }
    }
    let mx = coordinate_median(ga_final.iter().map(|p| p.0).collect());
    let my = coordinate_median(ga_final.iter().map(|p| p.1).collect());
    let d_trap = (mx - trap2.x).hypot(my - trap2.y);
    let d_goal = (mx - map.goal.0).hypot(my - map.goal.1);
    let pass4 = ns_reached >= 7 && ga_reached <= 2 && d_trap < d_goal;
    verdict(
        4,
        "deception",
        pass4,
        format!(
            "GA-NS reached the goal in {ns_reached}/10 runs, GA in {ga_reached}/10; GA median final position ({mx:.1}, {my:.1}) is {d_trap:.1} from Trap 2 and {d_goal:.1} from the goal; {:.0}s",
            started.elapsed().as_secs_f64()
        ),
    );
    let pass5 = monotone == 10;
    verdict(
        5,
        "elite monotonicity",
        pass5,
        format!("elite fitness non-decreasing in {monotone}/10 GA learning curves"),
    );
    assert!(pass4 && pass5);
}

// ---- 6 ----

const TRANSPORT_CONFIG: &str = r#"
mode = "ga"

[noise]
seed = 7
size = 33554432

[env]
kind = "maze"

[ga]
population = 41
truncation = 8
sigma = 0.005
generations = 12
seed = 5
"#;

fn spawn_master(config: &Path, out: &Path, workers: usize) -> (Child, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_deepga"))
        .args(["train", "-q", "--listen", "127.0.0.1:0", "--wait-workers"])
        .arg(workers.to_string())
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    loop {
        line.clear();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "master exited before listening");
        if let Some(addr) = line.trim().strip_prefix("listening on ") {
            let addr = addr.to_string();
            thread::spawn(move || std::io::copy(&mut stderr, &mut std::io::sink()));
            return (child, addr);
        }
    }
}

fn spawn_worker(config: &Path, addr: &str) -> Child {
    Command::new(env!("CARGO_BIN_EXE_deepga"))
        .args(["worker", "--capacity", "1", "--connect", addr, "--config"])
        .arg(config)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap()
}

/// Learning curve without the wall-clock column.
fn curve_without_time(dir: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(dir.join(CURVE_FILE)).unwrap();
    let headers = reader.headers().unwrap().clone();
    let t = headers.iter().position(|h| h == "elapsed_seconds").unwrap();
    let mut rows = vec![headers.iter().map(String::from).collect::<Vec<_>>()];
    for r in reader.records() {
        let r = r.unwrap();
        rows.push(r.iter().enumerate().filter(|(i, _)| *i != t).map(|(_, v)| v.to_string()).collect());
    }
    rows
}

fn wait_for_rows(dir: &Path, rows: usize, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if let Ok(text) = std::fs::read_to_string(dir.join(CURVE_FILE)) {
            if text.lines().count() > rows {
                return true;
            }
        }
        thread::sleep(Duration::from_millis(20));
    }
    false
}

#[test]
fn criterion_6_transport_transparency() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("transport.toml");
    std::fs::write(&config, TRANSPORT_CONFIG).unwrap();

    let local = dir.path().join("local");
    let status = Command::new(env!("CARGO_BIN_EXE_deepga"))
        .args(["train", "-q", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&local)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());

    let mut runs = vec![("in-process", local)];
    for (name, workers, kill) in [("1 worker", 1, false), ("3 workers", 3, false), ("3 workers, one killed", 3, true)] {
        let out = dir.path().join(name.replace([' ', ','], "_"));
        let (mut master, addr) = spawn_master(&config, &out, workers);
        let mut children: Vec<Child> = (0..workers).map(|_| spawn_worker(&config, &addr)).collect();
        if kill {
            assert!(wait_for_rows(&out, 3, Duration::from_secs(300)), "run never progressed");
            children[1].kill().unwrap();
        }
        assert!(master.wait().unwrap().success(), "{name}: master failed");
        for c in &mut children {
            let _ = c.wait();
        }
        runs.push((name, out));
    }

    let reference_curve = curve_without_time(&runs[0].1);
    let reference_elite = std::fs::read(runs[0].1.join(ELITE_FILE)).unwrap();
    let mut same = Vec::new();
    for (name, out) in &runs {
        let ok = curve_without_time(out) == reference_curve
            && std::fs::read(out.join(ELITE_FILE)).unwrap() == reference_elite;
        same.push(format!("{name}: {}", if ok { "identical" } else { "DIFFERENT" }));
    }
    let pass = same.iter().all(|s| s.ends_with("identical")) && reference_curve.len() == 13;
    verdict(
        6,
        "transport transparency",
        pass,
        format!("{}; {:.1}s", same.join(", "), started.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

// ---- 7 ----

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn criterion_7_initializer_statistics() {
    // One dense layer with 1000 inputs and 100 units: 10^5 weights.
    let spec = PolicySpec::mlp(1000, &[], 100);
    let net = spec.compile().unwrap();
    let theta = net.xavier_init(seed(3));
    let weights = &theta[..100_000];
    let biases = &theta[100_000..];
    let (_, wvar) = mean_var(weights.iter().map(|&v| f64::from(v)));
    let xavier_ok = (0.00085..=0.00115).contains(&wvar) && biases.iter().all(|&b| b == 0.0);

    let table = NoiseTable::build(seed(7), 1_000_000).unwrap();
    let (tmean, tvar) = mean_var(table.values().iter().map(|&v| f64::from(v)));
    let table_ok = tmean.abs() < 0.004 && (0.98..=1.02).contains(&tvar);

    let pass = xavier_ok && table_ok;
    verdict(
        7,
        "initializer statistics",
        pass,
        format!("weight variance {wvar:.6} (target 0.001 +/- 15%), table mean {tmean:.5} variance {tvar:.5}"),
    );
    assert!(pass);
}

// ---- 8 ----

fn brute_force_novelty(bc: &[f32], pool: &[Vec<f32>], k: usize) -> f64 {
    if pool.is_empty() {
        return f64::INFINITY;
    }
    let mut d: Vec<f64> = pool
        .iter()
        .map(|p| {
            bc.iter()
                .zip(p)
                .map(|(a, b)| {
                    let x = f64::from(*a) - f64::from(*b);
                    x * x
                })
                .sum()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let k = k.min(d.len());
    d[..k].iter().sum::<f64>() / k as f64
}

#[test]
fn criterion_8_novelty_oracle() -> Result<(), ShapeError> {
    let mut rng = SplitMix64::new(88);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..200 {
        let k = [1, 5, 25][i % 3];
        let size = rng.next_below(201) as usize;
        let scale = 10f64.powi(rng.next_below(4) as i32);
        let mut point = || vec![(rng.next_f64() * scale) as f32, (rng.next_f64() * scale) as f32];
        let bc = point();
        let pool: Vec<Vec<f32>> = (0..size).map(|_| point()).collect();
        let got = novelty(&bc, pool.iter().map(Vec::as_slice), k, Distance::SquaredEuclidean)?;
        let want = brute_force_novelty(&bc, &pool, k);
        let err = if want.is_infinite() {
            if got == want { 0.0 } else { f64::INFINITY }
        } else if want == 0.0 {
            got.abs()
        } else {
            ((got - want) / want).abs()
        };
        worst = worst.max(err);
        checked += 1;
    }
    let pass = worst <= 1e-6 && checked == 200;
    verdict(
        8,
        "novelty oracle",
        pass,
        format!("{checked} pools, worst relative error {worst:.2e}"),
    );
    assert!(pass);
    Ok(())
}
