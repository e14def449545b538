//! End-to-end checks of the binary: determinism, strategy equivalences,
//! exit codes, and config-file precedence.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hknn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hknn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_args<'a>(out: &'a str, seed: &'a str, pairs: &'a str) -> Vec<&'a str> {
    vec![
        "gen",
        "--out",
        out,
        "--pairs",
        pairs,
        "--max-len",
        "6",
        "--src-vocab",
        "20",
        "--tgt-vocab",
        "20",
        "--seed",
        seed,
    ]
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&hknn(dir.path(), &gen_args("a.txt", "5", "200")));
    assert_ok(&hknn(dir.path(), &gen_args("b.txt", "5", "200")));
    assert_ok(&hknn(dir.path(), &gen_args("c.txt", "6", "200")));
    let a = fs::read(dir.path().join("a.txt")).unwrap();
    let b = fs::read(dir.path().join("b.txt")).unwrap();
    let c = fs::read(dir.path().join("c.txt")).unwrap();
    assert_eq!(a, b, "same seed must be byte-identical");
    assert_ne!(a, c, "different seed must differ");
}

#[test]
fn lambda_zero_strategies_emit_identical_hypotheses() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&hknn(dir.path(), &gen_args("train.txt", "1", "200")));
    assert_ok(&hknn(dir.path(), &gen_args("test.txt", "2", "10")));
    for (strategy, out) in [
        ("faster", "h1.txt"),
        ("vanilla", "h2.txt"),
        ("fast", "h3.txt"),
    ] {
        assert_ok(&hknn(
            dir.path(),
            &[
                "translate",
                "--corpus",
                "train.txt",
                "--test",
                "test.txt",
                "--strategy",
                strategy,
                "--lambda",
                "0",
                "--dim",
                "16",
                "--m",
                "8",
                "--out",
                out,
            ],
        ));
    }
    let h1 = fs::read(dir.path().join("h1.txt")).unwrap();
    let h2 = fs::read(dir.path().join("h2.txt")).unwrap();
    let h3 = fs::read(dir.path().join("h3.txt")).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(h2, h3);
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = hknn(
        dir.path(),
        &["cluster", "--corpus", "nope.txt", "--out", "c.hknn"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn format_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("garbage.txt"), "not\ta\tcorpus line x-y\n").unwrap();
    let out = hknn(
        dir.path(),
        &["cluster", "--corpus", "garbage.txt", "--out", "c.hknn"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_strategy_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&hknn(dir.path(), &gen_args("train.txt", "1", "50")));
    assert_ok(&hknn(dir.path(), &gen_args("test.txt", "2", "5")));
    let out = hknn(
        dir.path(),
        &[
            "translate",
            "--corpus",
            "train.txt",
            "--test",
            "test.txt",
            "--strategy",
            "bogus",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("conf"),
        "pairs=50\nmax-len=6\nsrc-vocab=20\ntgt-vocab=20\n",
    )
    .unwrap();
    // config drives pairs=50
    assert_ok(&hknn(
        dir.path(),
        &["gen", "--config", "conf", "--out", "a.txt", "--seed", "3"],
    ));
    // flag overrides to 10
    assert_ok(&hknn(
        dir.path(),
        &[
            "gen", "--config", "conf", "--out", "b.txt", "--seed", "3", "--pairs", "10",
        ],
    ));
    let lines = |p: &str| {
        fs::read_to_string(dir.path().join(p))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(lines("a.txt"), 50);
    assert_eq!(lines("b.txt"), 10);
}

#[test]
fn bench_counters_hold_on_a_tiny_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = hknn(
        dir.path(),
        &[
            "bench",
            "--sizes",
            "1500",
            "--c-sweep",
            "2,4",
            "--n-sweep",
            "3",
            "--reps",
            "3",
            "--warmup",
            "1",
            "--sentences",
            "2",
            "--dim",
            "8",
            "--k",
            "2",
            "--m",
            "8",
            "--src-vocab",
            "6",
            "--tgt-vocab",
            "6",
            "--format",
            "csv",
            "--out",
            "r.csv",
        ],
    );
    assert_ok(&out);
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "strategy,n,c,k,d,store_bytes,dist_ops,ns_mean,ns_p95"
    );
    // 2 c-values x 3 strategies
    assert_eq!(lines.count(), 6);
}

#[test]
fn pq_mode_translate_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&hknn(dir.path(), &gen_args("train.txt", "1", "200")));
    assert_ok(&hknn(dir.path(), &gen_args("test.txt", "2", "10")));
    let out = hknn(
        dir.path(),
        &[
            "translate", "--corpus", "train.txt", "--test", "test.txt", "--strategy", "vanilla",
            "--dim", "16", "--pq", "--pq-m", "4", "--lambda", "1.0", "--out", "h.txt",
        ],
    );
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("token_accuracy"));
    assert!(dir.path().join("h.txt").exists());
}

#[test]
fn ablate_prints_all_five_strategies() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&hknn(dir.path(), &gen_args("train.txt", "1", "300")));
    assert_ok(&hknn(dir.path(), &gen_args("test.txt", "2", "10")));
    let out = hknn(
        dir.path(),
        &[
            "ablate", "--corpus", "train.txt", "--test", "test.txt", "--dim", "16", "--m", "8",
            "--c", "4", "--lambda", "1.0", "--temp", "0.2", "--out", "table.csv",
        ],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for strategy in [
        "vanilla",
        "fast",
        "faster",
        "fast_with_faster_source",
        "faster_no_cache",
    ] {
        assert!(stdout.contains(strategy), "missing {strategy} in:\n{stdout}");
    }
    let csv = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6, "header + five strategies");
}

#[test]
fn cross_flavor_store_load_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&hknn(dir.path(), &gen_args("train.txt", "1", "100")));
    assert_ok(&hknn(
        dir.path(),
        &[
            "build",
            "--corpus",
            "train.txt",
            "--out",
            "v.hknn",
            "--dim",
            "16",
        ],
    ));
    // a vanilla store is not a cluster store
    let out = hknn(
        dir.path(),
        &[
            "translate",
            "--corpus",
            "train.txt",
            "--test",
            "train.txt",
            "--strategy",
            "faster",
            "--dim",
            "16",
            "--clusters",
            "v.hknn",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}
