use std::path::Path;
use std::process::{Command, Output};

fn gsdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsdd"))
        .args(args)
        .env_remove("GSDD_WORKERS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gsdd(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TOY: &[&str] = &[
    "--data",
    "toy",
    "--toy-size",
    "8",
    "--toy-train-per-class",
    "6",
    "--toy-test-per-class",
    "10",
];

fn fit(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "fit",
        "--seed",
        "3",
        "--out",
        p(dir),
        "--count",
        "4",
        "--gaussians",
        "6",
        "--steps",
        "20",
    ];
    args.extend_from_slice(TOY);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = gsdd(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsdd(&["fit", "--out", p(dir.path()), "--data", "toy"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsdd(&[
        "render",
        "--in",
        p(&dir.path().join("nope.gsd")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--cases", "20", "--seed", "7"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn fit_writes_container_csvs_and_config() {
    let dir = tempfile::tempdir().unwrap();
    fit(dir.path(), &[]);
    let bytes = std::fs::read(dir.path().join("fit.gsd")).unwrap();
    assert_eq!(bytes.len(), gsdd::data::gsd_file_size(4, 6));
    let psnr = std::fs::read_to_string(dir.path().join("psnr.csv")).unwrap();
    assert_eq!(psnr.lines().count(), 5);
    assert!(psnr.starts_with("image,label,psnr_init,psnr_final"));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);
    let config = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    let resolved: toml::Table = config.parse().unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(3));
    assert_eq!(resolved["train"]["steps"].as_integer(), Some(20));
}

#[test]
fn render_writes_one_image_per_synthetic_image() {
    let dir = tempfile::tempdir().unwrap();
    fit(dir.path(), &[]);
    let frames = dir.path().join("frames");
    ok(&[
        "render",
        "--in",
        p(&dir.path().join("fit.gsd")),
        "--out",
        p(&frames),
    ]);
    let mut names: Vec<String> = std::fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".ppm"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for n in &names {
        let bytes = std::fs::read(frames.join(n)).unwrap();
        let (w, h, _) = gsdd::data::decode_ppm(&bytes).unwrap();
        assert_eq!((w, h), (8, 8));
    }
}

#[test]
fn runs_are_byte_identical_across_repeats_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let mut args = vec![
            "--workers",
            workers,
            "distill",
            "--seed",
            "11",
            "--out",
            p(&out),
            "--gpc",
            "2",
            "--steps",
            "4",
            "--init-steps",
            "3",
            "--batch-real",
            "4",
        ];
        args.extend_from_slice(TOY);
        ok(&args);
        std::fs::read(out.join("distilled.gsd")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let loss = std::fs::read_to_string(dir.path().join("a/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 5);
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 5\n[train]\nsteps = 7\nlr = 0.02\n[data]\nsource = \"toy\"\ntoy_size = 8\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&[
        "--config",
        p(&cfg),
        "fit",
        "--out",
        p(&out),
        "--count",
        "2",
        "--gaussians",
        "3",
        "--steps",
        "9",
        "--toy-train-per-class",
        "2",
    ]);
    let resolved: toml::Table = std::fs::read_to_string(out.join("config.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(5));
    assert_eq!(resolved["train"]["steps"].as_integer(), Some(9));
    assert_eq!(resolved["train"]["lr"].as_float(), Some(0.02));

    std::fs::write(&cfg, "seed = 5\nbogus = 1\n").unwrap();
    let bad = gsdd(&["--config", p(&cfg), "gradcheck", "--cases", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn prune_and_eval_report_results() {
    let dir = tempfile::tempdir().unwrap();
    fit(dir.path(), &[]);
    let fitted = dir.path().join("fit.gsd");
    let pruned = dir.path().join("pruned");
    let mut args = vec![
        "prune",
        "--in",
        p(&fitted),
        "--out",
        p(&pruned),
        "--seed",
        "1",
        "--ratio",
        "0.5",
        "--mode",
        "large_opaque_first",
        "--with-eval",
    ];
    args.extend_from_slice(TOY);
    ok(&args);
    let set = gsdd::data::load_gsd(pruned.join("pruned.gsd")).unwrap();
    assert_eq!(set.gaussians_per_image, 3);
    let csv = std::fs::read_to_string(pruned.join("prune.csv")).unwrap();
    assert!(csv.starts_with("ratio,strategy,psnr,accuracy"));
    assert!(csv.contains("large_opaque_first"));

    let mut args = vec!["eval", "--in", p(&fitted), "--seed", "2", "--epochs", "5"];
    args.extend_from_slice(TOY);
    let out = ok(&args);
    let text = String::from_utf8_lossy(&out.stdout);
    let acc: f64 = text
        .trim()
        .strip_prefix("accuracy ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn bench_writes_the_csv_schema() {
    let out = ok(&[
        "bench",
        "--seed",
        "1",
        "--res",
        "16,32",
        "--batch",
        "2",
        "--gaussians",
        "5",
        "--runs",
        "1",
        "--warmups",
        "0",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(gsdd::analysis::BENCH_CSV_HEADER));
    assert_eq!(lines.count(), 4);
}
