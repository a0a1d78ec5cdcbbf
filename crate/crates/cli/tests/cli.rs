use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drain_cli::{LoadedConfig, OUTPUT_ROOT_ENV};

const TINY: &str = r#"
version = 1
name = "tiny"
seeds = [1, 2]
output_dir = "runs/tiny"

[dataset]
source = "moons"
num_domains = 4
n_per_domain = 20
train_domains = [0, 1, 2]
test_domain = 3

[schema]
input_dim = 2
generated_suffix_len = 2
layers = [{ width = 4, activation = "relu" }, { width = 1, activation = "sigmoid" }]

[generator]
latent_dim = 4
lstm_depth = 2
init_hidden = 4
encoder_hidden = 4
decoder_hidden = 4

[train]
learning_rate = 0.01
iters_per_domain = 5

[baselines]
full_iters = 15
first_iters = 5
finetune_iters = 5
"#;

fn drain(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drain"))
        .args(args)
        .env(OUTPUT_ROOT_ENV, root)
        .output()
        .expect("spawn drain")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_data_writes_every_domain_deterministically_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("num_domains = 4", "num_domains = 10"));
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = drain(dir.path(), &["gen-data", "--config", cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names: Vec<String> = (0..10).map(|k| format!("domain_{k:02}.csv")).collect();
    for n in &names {
        let x = std::fs::read(a.join(n)).unwrap();
        assert_eq!(x, std::fs::read(b.join(n)).unwrap(), "{n} differs between runs");
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("x0,x1,label,domain\n"));
        assert_eq!(text.lines().count(), 21);
    }
    assert_eq!(std::fs::read_dir(&a).unwrap().count(), 10);

    let again = drain(dir.path(), &["gen-data", "--config", cfg, "--seed", "8", "--out", a.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("domain_00.csv"), "{}", stderr(&again));
    let before = std::fs::read(a.join(&names[0])).unwrap();
    let forced = drain(dir.path(), &["gen-data", "--config", cfg, "--seed", "8", "--out", a.to_str().unwrap(), "--force"]);
    assert!(forced.status.success());
    assert_ne!(before, std::fs::read(a.join(&names[0])).unwrap());
}

#[test]
fn train_writes_the_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = drain(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed_dir = dir.path().join("runs/tiny/seed-2");
    for f in [
        "manifest.json",
        "metrics.jsonl",
        "results.json",
        "drain.ckpt",
        "drain_future.pv",
        "offline.pv",
        "last_domain.pv",
        "inc_finetune.pv",
    ] {
        assert!(seed_dir.join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(seed_dir.join("metrics.jsonl")).unwrap();
    // 3 domains x 5 for drain, 15 offline, 15 last domain, 3 x 5 finetune
    assert_eq!(metrics.lines().count(), 15 + 15 + 15 + 15);
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(first["method"], "drain");
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(seed_dir.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["methods"].as_array().unwrap().len(), 4);
    assert_eq!(results["metric"], "error_pct");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(seed_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn suite_writes_a_summary_for_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = drain(dir.path(), &["suite", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let base = dir.path().join("runs/tiny");
    assert!(base.join("seed-1/results.json").is_file());
    assert!(base.join("seed-2/results.json").is_file());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(base.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"], serde_json::json!([1, 2]));
    for row in summary["rows"].as_array().unwrap() {
        assert_eq!(row["n"], 2);
    }
    let table = std::fs::read_to_string(base.join("summary.txt")).unwrap();
    assert!(table.contains("inc_finetune"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
}

#[test]
fn boundary_renders_a_ppm_and_names_a_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let cfg = cfg.to_str().unwrap();
    assert!(drain(dir.path(), &["train", "--config", cfg, "--seed", "1"]).status.success());
    let ckpt = dir.path().join("runs/tiny/seed-1/drain.ckpt");
    let ppm = dir.path().join("d3.ppm");
    let o = drain(
        dir.path(),
        &["boundary", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap(), "--seed", "1", "--domain", "3",
          "--resolution", "32", "--out", ppm.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(&ppm).unwrap();
    assert!(bytes.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(bytes.len(), 13 + 32 * 32 * 3);

    let bad = dir.path().join("broken.ckpt");
    let mut raw = std::fs::read(&ckpt).unwrap();
    raw.truncate(raw.len() / 2);
    std::fs::write(&bad, raw).unwrap();
    let o = drain(
        dir.path(),
        &["boundary", "--config", cfg, "--checkpoint", bad.to_str().unwrap(), "--domain", "1", "--out",
          ppm.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.ckpt"), "{}", stderr(&o));

    let o = drain(
        dir.path(),
        &["boundary", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap(), "--domain", "7", "--out",
          ppm.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_csv_fails_with_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace(
        "source = \"moons\"\nnum_domains = 4\nn_per_domain = 20",
        "source = \"csv\"\npath = \"nowhere.csv\"\nfeature_columns = [\"x0\", \"x1\"]\nlabel_column = \"label\"\ntask = \"classification\"\ndomain = { kind = \"column\", column = \"domain\" }",
    );
    let cfg = write_config(dir.path(), &text);
    let o = drain(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn csv_fixture_trains_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x0,x1,label,domain\n");
    for d in 0..4 {
        for i in 0..12 {
            let x = i as f64 / 6.0 - 1.0;
            let y = (i % 3) as f64 - 1.0 + 0.1 * d as f64;
            let label = u8::from(x + y > 0.1 * d as f64);
            csv.push_str(&format!("{x},{y},{label},{d}\n"));
        }
    }
    std::fs::write(dir.path().join("fixture.csv"), csv).unwrap();
    let text = TINY.replace(
        "source = \"moons\"\nnum_domains = 4\nn_per_domain = 20",
        "source = \"csv\"\npath = \"fixture.csv\"\nfeature_columns = [\"x0\", \"x1\"]\nlabel_column = \"label\"\ntask = \"classification\"\nnormalize = true\ndomain = { kind = \"column\", column = \"domain\" }",
    );
    let cfg = write_config(dir.path(), &text);
    let o = drain(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("runs/tiny/seed-1/results.json").is_file());
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(drain(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(drain(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(drain(dir.path(), &["train"]).status.code(), Some(1));
    assert_eq!(drain(dir.path(), &["frobnicate"]).status.code(), Some(1));
    let o = drain(dir.path(), &["train", "--config", "/does/not/exist.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exist.toml"));
    let cfg = write_config(dir.path(), &TINY.replace("version = 1", "version = 9"));
    assert_eq!(drain(dir.path(), &["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn committed_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            LoadedConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 7, "expected moons, regression and five real-data configs, found {n}");
}
