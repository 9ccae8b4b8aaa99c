use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "turbulence": {"params": {"duration_s": 600.0}},
  "env": {"flow_throughs": 2.0},
  "sac": {"hidden": [16, 16], "batch_size": 16, "warmup_steps": 20, "replay_capacity": 1000},
  "pretrain": {"max_epochs": 2},
  "training": {"total_steps": 60, "snapshot_every": 30},
  "eval": {"grid": {"directions": [265.0, 270.0], "speeds": [10.0], "n_boxes": 1, "horizon_s": 200.0},
           "lut_directions": [260.0, 270.0, 280.0], "lut_speeds": [8.0, 12.0]},
  "seeds": [0, 1]
}"#;

fn wakerl(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("tiny.json");
    if !cfg.exists() {
        std::fs::write(&cfg, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_wakerl"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref())
        .unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    let out = Command::new(env!("CARGO_BIN_EXE_wakerl"))
        .arg("no-such-command")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_wakerl"))
        .args(["--size", "Huge", "gen-expert"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_wakerl"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // No boxes generated yet.
    let out = wakerl(dir.path(), &["--size", "small", "gen-expert"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.json"), r#"{"sac": {"batchsize": 3}}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wakerl"))
        .arg("--config")
        .arg(dir.path().join("bad.json"))
        .arg("show-config")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn turbulence_library_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(wakerl(dir.path(), &["gen-turbulence"]));
    let tdir = dir.path().join("out/turbulence");
    let files: Vec<_> = std::fs::read_dir(&tdir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(files.len(), 17);
    let manifest = json(tdir.join("manifest.json"));
    let boxes = manifest["boxes"].as_array().unwrap();
    assert_eq!(boxes.len(), 16);
    assert_eq!(boxes.iter().filter(|b| b["role"] == "train").count(), 10);
    assert_eq!(boxes.iter().filter(|b| b["role"] == "eval").count(), 6);
    assert!(boxes.iter().all(|b| b["seed"].is_u64()));

    let first = read(tdir.join("eval_box_03.json"));
    let other = tempfile::tempdir().unwrap();
    ok(wakerl(other.path(), &["gen-turbulence"]));
    assert_eq!(
        first,
        read(other.path().join("out/turbulence/eval_box_03.json"))
    );
    assert_eq!(
        read(tdir.join("manifest.json")),
        read(other.path().join("out/turbulence/manifest.json"))
    );
}

#[test]
fn expert_dataset_sizes() {
    let dir = tempfile::tempdir().unwrap();
    ok(wakerl(dir.path(), &["gen-turbulence"]));
    ok(wakerl(dir.path(), &["--size", "none", "gen-expert"]));
    ok(wakerl(dir.path(), &["--size", "small", "gen-expert"]));
    let none = json(dir.path().join("out/expert/none.json"));
    assert_eq!(none["trajectories"].as_array().unwrap().len(), 0);
    let small = json(dir.path().join("out/expert/small.json"));
    assert_eq!(small["trajectories"].as_array().unwrap().len(), 10);
    assert_eq!(small["meta"]["n_episodes"], 10);
}

#[test]
fn training_pipeline_contracts() {
    let dir = tempfile::tempdir().unwrap();
    ok(wakerl(dir.path(), &["gen-turbulence"]));
    ok(wakerl(dir.path(), &["--size", "small", "gen-expert"]));
    ok(wakerl(
        dir.path(),
        &["--size", "none", "--seed", "1", "train"],
    ));
    ok(wakerl(
        dir.path(),
        &["--size", "small", "--seed", "1", "train"],
    ));
    let out = dir.path().join("out");
    for step in [0, 30, 60] {
        assert!(out.join(format!("none/1/{step}.snap")).exists());
        assert!(out.join(format!("small/1/{step}.snap")).exists());
    }
    assert!(!out.join("none/0").exists());

    let actor = |p: &str| json(out.join(p))["actor"].clone();
    // Both sizes share the seed's initialization; only pretraining differs.
    assert_eq!(actor("none/1/0.snap"), actor("none/1/pretrained.snap"));
    assert_eq!(actor("small/1/0.snap"), actor("small/1/pretrained.snap"));
    assert_ne!(actor("small/1/0.snap"), actor("none/1/0.snap"));
    let record = json(out.join("small/1/pretrain.json"));
    assert!(record["summary"]["actor"]["val_loss"].is_array());
    assert!(json(out.join("none/1/pretrain.json"))["summary"].is_null());
    let hash = json(out.join("small/1/0.snap"))["config_hash"].clone();
    assert!(hash.is_string());
    assert!(read(out.join("small/1/log.csv")).starts_with("# config_hash="));
}

#[test]
fn greedy_baseline_has_zero_gain() {
    let dir = tempfile::tempdir().unwrap();
    ok(wakerl(dir.path(), &["gen-turbulence"]));
    ok(wakerl(dir.path(), &["evaluate", "--baseline", "greedy"]));
    for seed in [0, 1] {
        let cases = read(
            dir.path()
                .join(format!("out/eval/greedy/seed_{seed}/cases.csv")),
        );
        let mut rdr = csv_lines(&cases);
        let header = rdr.remove(0);
        let col = header.split(',').position(|h| h == "gain_pct").unwrap();
        assert_eq!(rdr.len(), 2);
        for row in rdr {
            assert_eq!(
                row.split(',').nth(col).unwrap().parse::<f64>().unwrap(),
                0.0
            );
        }
    }
}

fn csv_lines(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

#[test]
fn sweep_covers_all_sizes_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tiny.json"),
        TINY.replace(r#""seeds": [0, 1]"#, r#""seeds": [0, 1, 2, 3, 4]"#),
    )
    .unwrap();
    let first = ok(wakerl(dir.path(), &["sweep"]));
    let out = dir.path().join("out");
    let runs = ["none", "small", "medium", "large"]
        .iter()
        .flat_map(|s| (0..5).map(move |seed| format!("{s}/{seed}/done.json")))
        .filter(|p| out.join(p).exists())
        .count();
    assert_eq!(runs, 20);
    let heatmap = csv_lines(&read(out.join("report/heatmap.csv")));
    assert_eq!(heatmap[0], "label,0,30,60");
    assert_eq!(heatmap.len(), 1 + 4);
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("LUT mean gain"), "{stdout}");

    let before = read(out.join("eval/medium/step_30/cases.csv"));
    let snap_time = std::fs::metadata(out.join("large/3/60.snap"))
        .unwrap()
        .modified()
        .unwrap();
    ok(wakerl(dir.path(), &["sweep"]));
    assert_eq!(before, read(out.join("eval/medium/step_30/cases.csv")));
    assert_eq!(
        snap_time,
        std::fs::metadata(out.join("large/3/60.snap"))
            .unwrap()
            .modified()
            .unwrap()
    );
}
