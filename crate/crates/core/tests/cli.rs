use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 4

[data.synthetic]
classes = 8
side = 12
per_class = 30

[protocol]
tasks = 2
classes_per_task = 4

[strategy]
capacity = 40
client_capacity = 12

[fl]
rounds_per_task = 3
n_clients = 4
local_iters = 3
sst_iters = 3
batch_size = 8

[model]
arch = "mlp"
hidden = 16
embed_dim = 6
classifier_hidden = 12
pretrain_epochs = 1
"#;

fn filver(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filver"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> String {
    fs::write(dir.join(name), format!("{extra}\n{TINY}")).unwrap();
    name.to_string()
}

fn run_ok(dir: &Path, args: &[&str]) {
    let o = filver(args, dir);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
}

#[test]
fn bad_value_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[strategy]\nrho = 1.5\n[fl]\nrounds = 3\n").unwrap();
    let o = filver(&["run", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("strategy.rho"), "{err}");
    assert!(err.contains("fl.rounds"), "{err}");
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(filver(&["run", "--preset", "no-such-preset"], dir.path()).status.code(), Some(2));
    assert_eq!(filver(&["run", "absent.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(filver(&["run", "--resume", "nowhere"], dir.path()).status.code(), Some(2));
    fs::create_dir(dir.path().join("empty")).unwrap();
    let o = filver(&["compare", "empty", "empty"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("summary.json"));
}

#[test]
fn idx_preset_without_files_names_the_data_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_filver"))
        .args(["run", "--preset", "scenario1-split4"])
        .current_dir(dir.path())
        .env("FILVER_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.train_images"));
}

#[test]
fn presets_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let o = filver(&["presets"], dir.path());
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().any(|l| l == "desk-split4"));
}

#[test]
fn identical_runs_write_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", "");
    run_ok(dir.path(), &["run", &cfg, "--out", "a"]);
    run_ok(dir.path(), &["run", &cfg, "--out", "b", "--threads", "3"]);
    let a = fs::read(dir.path().join("a/rounds.csv")).unwrap();
    let b = fs::read(dir.path().join("b/rounds.csv")).unwrap();
    assert_eq!(a, b);
    // header plus tasks x rounds rows
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 2 * 3);
    let o = filver(&["compare", "a", "b", "--out", "cmp.csv"], dir.path());
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.rsplit(',').take(3).all(|d| d.parse::<f64>().unwrap() == 0.0), "{csv}");
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", "");
    run_ok(dir.path(), &["run", &cfg, "--out", "a"]);
    run_ok(dir.path(), &["run", &cfg, "--out", "b", "--seed", "5"]);
    assert_ne!(
        fs::read(dir.path().join("a/rounds.csv")).unwrap(),
        fs::read(dir.path().join("b/rounds.csv")).unwrap()
    );
}

#[test]
fn stop_and_resume_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", "");
    run_ok(dir.path(), &["run", &cfg, "--out", "full"]);
    run_ok(dir.path(), &["run", &cfg, "--out", "part", "--stop-after", "4"]);
    let partial = fs::read_to_string(dir.path().join("part/rounds.csv")).unwrap();
    assert_eq!(partial.lines().count(), 1 + 4);
    run_ok(dir.path(), &["run", "--resume", "part", "--threads", "2"]);
    assert_eq!(
        fs::read(dir.path().join("full/rounds.csv")).unwrap(),
        fs::read(dir.path().join("part/rounds.csv")).unwrap()
    );
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", "");
    run_ok(dir.path(), &["run", &cfg, "--out", "a"]);
    run_ok(dir.path(), &["run", "a/manifest.json", "--out", "b"]);
    assert_eq!(
        fs::read(dir.path().join("a/rounds.csv")).unwrap(),
        fs::read(dir.path().join("b/rounds.csv")).unwrap()
    );
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["fl.rounds_per_task"]["origin"], "config");
    assert_eq!(m["config"]["model.kernel"]["origin"], "paper default");
}

#[test]
fn arms_and_seeds_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "seeds = [1, 2]\narms = [{ kind = \"none\" }, { kind = \"ebr\", memory = \"x16\" }]";
    let cfg = write_config(dir.path(), "multi.toml", extra);
    // the base `seed` is superseded by the list
    run_ok(dir.path(), &["run", &cfg, "--out", "m"]);
    for arm in ["none", "ebr-x16"] {
        for s in [1, 2] {
            assert!(dir.path().join(format!("m/{arm}/seed-{s}/rounds.csv")).is_file());
        }
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("m/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["arms"].as_array().unwrap().len(), 2);
    let o = filver(&["compare", "m", "m/ebr-x16/seed-1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}
