use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn man(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_man")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = man(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: &str = "seed = 3\nsynth.users_per_domain = 30\nsynth.items_per_domain = 25\nsynth.seq_len_mean = 6\nmax_len = 6\n";

/// Synthesizes a tiny dataset and a one-epoch run config next to it.
fn fixture(dir: &Path) -> std::path::PathBuf {
    let synth = dir.join("synth.conf");
    fs::write(&synth, SYNTH).unwrap();
    ok(&["synth", "--config", p(&synth), "--out", p(&dir.join("data"))]);
    let run = dir.join("run.conf");
    fs::write(
        &run,
        "seed = 1\ndata.dir = data\nmodel.item_dim = 8\nmodel.domain_dim = 2\ntrain.max_epochs = 1\neval.negatives = 9\n",
    )
    .unwrap();
    run
}

#[test]
fn missing_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = man(&["train", "--config", p(&dir.path().join("nope.conf")), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn unknown_subcommand_fails() {
    assert!(!man(&["frobnicate"]).status.success());
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("s.conf");
    fs::write(&conf, SYNTH).unwrap();
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    ok(&["synth", "--config", p(&conf), "--out", p(&x)]);
    ok(&["synth", "--config", p(&conf), "--out", p(&y)]);
    let mut names: Vec<_> = fs::read_dir(&x).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "groups.tsv"));
    for n in names {
        assert_eq!(fs::read(x.join(&n)).unwrap(), fs::read(y.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn synth_rejects_zero_users() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("s.conf");
    fs::write(&conf, "synth.users_per_domain = 0\n").unwrap();
    let out = man(&["synth", "--config", p(&conf), "--out", p(&dir.path().join("d"))]);
    assert!(!out.status.success());
}

#[test]
fn train_then_eval_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = fixture(dir.path());
    let out = dir.path().join("run");
    let metrics = ok(&["train", "--config", p(&run), "--out", p(&out)]);
    for f in ["checkpoint.bin", "train_log.csv", "config.conf", "metrics_test.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let ckpt = out.join("checkpoint.bin");
    let first = ok(&["eval", "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("e1"))]);
    let second = ok(&["eval", "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("e2"))]);
    assert_eq!(first, second);
    assert_eq!(first, metrics);
    assert_eq!(
        fs::read(dir.path().join("e1/eval_test.csv")).unwrap(),
        fs::read(out.join("metrics_test.csv")).unwrap()
    );
    ok(&["eval", "--checkpoint", p(&ckpt), "--split", "validation", "--out", p(&dir.path().join("e3"))]);
    assert!(!man(&["eval", "--checkpoint", p(&ckpt), "--split", "train", "--out", p(dir.path())]).status.success());
}

#[test]
fn ablate_writes_32_rows() {
    let dir = tempfile::tempdir().unwrap();
    let run = fixture(dir.path());
    let out = dir.path().join("abl");
    ok(&["ablate", "--config", p(&run), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32);
}

#[test]
fn sweep_trains_four_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = fixture(dir.path());
    let out = dir.path().join("sweep");
    ok(&["sweep-groups", "--config", p(&run), "--out", p(&out)]);
    let runs = fs::read_dir(out.join("sweep")).unwrap().count();
    assert_eq!(runs, 4);
    let csv = fs::read_to_string(out.join("sweep_groups.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32);
    assert!(!man(&["sweep-groups", "--config", p(&run), "--values", "0", "--out", p(&out)]).status.success());
}

#[test]
fn analyze_writes_exports() {
    let dir = tempfile::tempdir().unwrap();
    let run = fixture(dir.path());
    let out = dir.path().join("run");
    ok(&["train", "--config", p(&run), "--out", p(&out)]);
    let text = ok(&["analyze", "--checkpoint", p(&out.join("checkpoint.bin")), "--out", p(&dir.path().join("an"))]);
    assert!(text.contains("alignment"));
    let repr = fs::read_to_string(dir.path().join("an/group_repr.csv")).unwrap();
    assert!(repr.starts_with("user_id,domain,true_group,"));
    let proj = fs::read_to_string(dir.path().join("an/projection.csv")).unwrap();
    assert!(proj.starts_with("user_id,domain,cluster,x,y"));
    assert_eq!(proj.lines().count(), repr.lines().count());
    assert!(dir.path().join("an/analysis.csv").exists());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let synth = fs::read_to_string(root.join("synth_transfer.conf")).unwrap();
    let s = man_core::config::parse_synth_config(&synth).unwrap();
    assert_eq!(s.synth.users_per_domain, 2000);
    let run = man_core::config::RunConfig::load(&root.join("transfer.conf")).unwrap();
    assert_eq!(run.model.encoder.backbone.name(), "gru");
    assert_eq!(run.train.lambda_g, 1e-4);
    let rec = man_core::config::RunConfig::load(&root.join("recovery.conf")).unwrap();
    assert_eq!((rec.train.lambda_a, rec.train.lambda_g), (1e-7, 1e-2));
}
