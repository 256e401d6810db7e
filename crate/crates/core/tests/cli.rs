//! The `deepga` binary: subcommands, artifacts and error exits.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepga::genome::{CodecMode, Genotype};
use deepga::noise::Seed;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepga"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn genotype(dir: &Path, chain: u32) -> PathBuf {
    let mut g = Genotype::new(Seed::new(11).unwrap(), 0.005, CodecMode::Direct);
    for s in 0..chain {
        g = g.mutate(Seed::new(1000 + s).unwrap());
    }
    let path = dir.join("g.dgn");
    std::fs::write(&path, g.to_bytes()).unwrap();
    path
}

/// Learning-curve rows with the wall-clock column dropped.
fn rows(dir: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(dir.join("learning_curve.csv")).unwrap();
    let t = reader.headers().unwrap().iter().position(|h| h == "elapsed_seconds").unwrap();
    reader
        .records()
        .map(|r| {
            r.unwrap()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != t)
                .map(|(_, v)| v.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn eval_on_the_maze_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let g = genotype(dir.path(), 3);
    let run = || {
        ok(bin()
            .args(["eval", "--episodes", "1", "--config"])
            .arg(configs().join("maze_ga.toml"))
            .arg(&g)
            .output()
            .unwrap())
    };
    let first = run();
    assert!(first.contains("mean "), "{first}");
    assert_eq!(first, run());
}

#[test]
fn inspect_reports_the_genotype() {
    let dir = tempfile::tempdir().unwrap();
    let g = genotype(dir.path(), 349);
    let text = ok(bin()
        .args(["inspect", "--config"])
        .arg(configs().join("maze_ga.toml"))
        .arg(&g)
        .output()
        .unwrap());
    let params = deepga::policy::PolicySpec::desk_maze().param_count().unwrap();
    assert!(text.contains("chain_length 349"), "{text}");
    assert!(text.contains("sigma 0.005"), "{text}");
    assert!(text.contains("serialized_bytes 1417"), "{text}");
    assert!(text.contains(&format!("param_count {params}")), "{text}");
    let ratio = params as f64 * 4.0 / 1417.0;
    assert!(text.contains(&format!("compression_ratio {ratio:.3}")), "{text}");
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.dgn");
    std::fs::write(&junk, b"not a genotype").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["train".into(), "--config".into(), "/nonexistent/config.toml".into()],
        vec!["inspect".into(), junk.display().to_string()],
        vec!["inspect".into(), "/nonexistent/g.dgn".into()],
        vec!["resume".into(), "--resume".into(), junk.display().to_string()],
        vec![
            "eval".into(),
            "--episodes".into(),
            "0".into(),
            "--config".into(),
            configs().join("bandit_ga.toml").display().to_string(),
            junk.display().to_string(),
        ],
    ];
    for args in cases {
        let out = bin().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.starts_with("error:"), "{args:?}: {err}");
    }
}

#[test]
fn train_writes_artifacts_and_resume_continues_identically() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("bandit_ga.toml"))
        .unwrap()
        .replace("[output]", "[output]\ncheckpoint_history = true");
    let config = dir.path().join("bandit.toml");
    std::fs::write(&config, text).unwrap();

    let full = dir.path().join("full");
    ok(bin().args(["train", "-q", "--config"]).arg(&config).arg("--out").arg(&full).output().unwrap());
    for file in ["config.toml", "learning_curve.csv", "checkpoint.dgac", "elite.dgn", "checkpoint_gen00050.dgac"] {
        assert!(full.join(file).exists(), "{file} missing");
    }
    let reference = rows(&full);
    assert_eq!(reference.len(), 101);

    // Resume into a fresh directory: only generations 51.. are written.
    let resumed = dir.path().join("resumed");
    ok(bin()
        .args(["resume", "-q", "--resume"])
        .arg(full.join("checkpoint_gen00050.dgac"))
        .arg("--out")
        .arg(&resumed)
        .output()
        .unwrap());
    assert_eq!(rows(&resumed), reference[50..].to_vec());
    assert_eq!(
        std::fs::read(resumed.join("elite.dgn")).unwrap(),
        std::fs::read(full.join("elite.dgn")).unwrap()
    );

    // Resume in place through `train --resume`: later rows are replaced.
    let in_place = dir.path().join("in_place");
    std::fs::create_dir(&in_place).unwrap();
    for file in ["learning_curve.csv", "checkpoint_gen00050.dgac"] {
        std::fs::copy(full.join(file), in_place.join(file)).unwrap();
    }
    ok(bin()
        .args(["train", "-q", "--resume"])
        .arg(in_place.join("checkpoint_gen00050.dgac"))
        .output()
        .unwrap());
    assert_eq!(rows(&in_place), reference);
}

#[test]
fn novelty_run_writes_extra_columns_and_best_genotype() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("bandit_ga.toml"))
        .unwrap()
        .replace("mode = \"ga\"", "mode = \"ga-ns\"")
        .replace("generations = 101", "generations = 5");
    let config = dir.path().join("ns.toml");
    std::fs::write(&config, text).unwrap();
    let out = dir.path().join("run");
    ok(bin().args(["train", "-q", "--config"]).arg(&config).arg("--out").arg(&out).output().unwrap());
    let mut reader = csv::Reader::from_path(out.join("learning_curve.csv")).unwrap();
    let headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        headers,
        [
            "generation",
            "elite_fitness",
            "population_max",
            "population_median",
            "frames_cumulative",
            "elapsed_seconds",
            "best_reward",
            "archive_size"
        ]
    );
    assert_eq!(reader.records().count(), 5);
    assert!(out.join("best.dgn").exists());
}

#[test]
fn worker_with_a_different_noise_table_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(configs().join("bandit_ga.toml")).unwrap();
    let other = dir.path().join("other.toml");
    std::fs::write(&other, base.replace("seed = 7", "seed = 8")).unwrap();

    let listener = deepga::master::Master::bind(
        "127.0.0.1:0",
        deepga::eval::LocalEvaluator::new(
            deepga::config::ExperimentConfig::load(&configs().join("bandit_ga.toml"))
                .unwrap()
                .context()
                .unwrap(),
        ),
        deepga::config::ExperimentConfig::load(&configs().join("bandit_ga.toml"))
            .unwrap()
            .noise
            .build()
            .unwrap()
            .checksum(),
        Default::default(),
    )
    .unwrap();
    let out = bin()
        .args(["worker", "--connect", &listener.local_addr().to_string(), "--config"])
        .arg(&other)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("rejected"));
}
