use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcwinter::fixtures::{block_model, BlockModel};
use pcwinter::graph::export_dataset;
use tempfile::TempDir;

struct Env {
    tmp: TempDir,
    data: PathBuf,
}

impl Env {
    fn new(seed: u64) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let (g, split) = block_model(&BlockModel {
            nodes: 90,
            val: 20,
            test: 20,
            seed,
            ..BlockModel::default()
        });
        export_dataset(&g, &split, &data).unwrap();
        Env { tmp, data }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pcwinter"))
            .args(args)
            .env("PCWINTER_OUTPUT_ROOT", self.tmp.path().join("runs"))
            .output()
            .unwrap()
    }

    fn value(&self, method: &str, out: &Path, extra: &[&str]) -> Output {
        let mut args = vec![
            "value",
            "--dataset",
            self.data.to_str().unwrap(),
            "--method",
            method,
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        self.run(&args)
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn value_writes_all_tables_for_a_tree_method() {
    let env = Env::new(1);
    let out = env.path("pc");
    let o = env.value(
        "pc-winter",
        &out,
        &["--max-perms", "6", "--no-convergence-stop"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "values.csv",
        "node_values.csv",
        "edge_values.csv",
        "players.csv",
        "checkpoint.txt",
        "report.txt",
        "config.txt",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let values = fs::read_to_string(out.join("values.csv")).unwrap();
    let mut lines = values.lines();
    assert!(lines.next().unwrap().starts_with("# dataset_sha256="));
    assert_eq!(lines.next().unwrap(), "entity_type,entity_id,value,count");
    let kinds: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    let first_node = kinds.iter().position(|&k| k == "node").unwrap();
    assert!(kinds[..first_node].iter().all(|&k| k == "player"));
    assert!(kinds.contains(&"edge"));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("traversals=6"));
}

#[test]
fn budget_exhaustion_exits_with_its_own_code() {
    let env = Env::new(2);
    let o = env.value("pc-winter", &env.path("b"), &["--max-perms", "2"]);
    assert_eq!(code(&o), 5);
    assert!(env.path("b").join("values.csv").is_file());
}

#[test]
fn every_method_runs() {
    let env = Env::new(3);
    for m in [
        "pc-winter-l",
        "pc-winter-p",
        "data-shapley",
        "loo-node",
        "loo-edge",
        "degree",
        "random",
        "betweenness",
    ] {
        let out = env.path(m);
        let o = env.value(m, &out, &["--max-perms", "3", "--no-convergence-stop"]);
        assert_eq!(code(&o), 0, "{m}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("values.csv").is_file(), "{m}");
    }
}

#[test]
fn usage_and_io_errors() {
    let env = Env::new(4);
    assert_eq!(code(&env.value("nope", &env.path("x"), &[])), 2);
    assert_eq!(
        code(&env.run(&["value", "--method", "degree", "--dataset", "/no/such/dir"])),
        1
    );
    assert_eq!(
        code(&env.value("pc-winter", &env.path("x"), &["--trunc", "1.5"])),
        2
    );
    assert_eq!(code(&env.run(&["frobnicate"])), 2);
}

#[test]
fn default_output_dir_is_content_addressed() {
    let env = Env::new(5);
    let data = env.data.to_str().unwrap();
    let args = ["value", "--dataset", data, "--method", "degree"];
    let a = String::from_utf8(env.run(&args).stdout).unwrap();
    let b = String::from_utf8(env.run(&args).stdout).unwrap();
    let dir = |s: &str| {
        s.lines()
            .find_map(|l| l.strip_prefix("output="))
            .unwrap()
            .to_string()
    };
    assert_eq!(dir(&a), dir(&b));
    assert!(dir(&a).contains("degree-"));
}

#[test]
fn eval_rejects_values_from_another_dataset() {
    let env = Env::new(6);
    let other = Env::new(7);
    let out = other.path("deg");
    assert_eq!(code(&other.value("degree", &out, &[])), 0);
    let o = env.run(&[
        "eval",
        "--dataset",
        env.data.to_str().unwrap(),
        "--values",
        out.join("values.csv").to_str().unwrap(),
        "--experiment",
        "drop-nodes",
        "--out",
        env.path("ev").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_writes_a_curve() {
    let env = Env::new(8);
    let out = env.path("pc");
    env.value(
        "pc-winter",
        &out,
        &["--max-perms", "4", "--no-convergence-stop"],
    );
    for (exp, file) in [
        ("drop-nodes", "values.csv"),
        ("add-edges", "edge_values.csv"),
    ] {
        let ev = env.path(exp);
        let o = env.run(&[
            "eval",
            "--dataset",
            env.data.to_str().unwrap(),
            "--values",
            out.join(file).to_str().unwrap(),
            "--experiment",
            exp,
            "--step",
            "0.25",
            "--out",
            ev.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let curve = fs::read_to_string(ev.join("curve.csv")).unwrap();
        assert_eq!(curve.lines().count(), 6, "{curve}");
        assert!(ev.join("manifest.json").is_file());
    }
}

#[test]
fn aggregate_reproduces_the_tables() {
    let env = Env::new(9);
    let out = env.path("pc");
    env.value(
        "pc-winter",
        &out,
        &["--max-perms", "4", "--no-convergence-stop"],
    );
    let agg = env.path("agg");
    let o = env.run(&[
        "aggregate",
        "--values",
        out.join("values.csv").to_str().unwrap(),
        "--out",
        agg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["node_values.csv", "edge_values.csv"] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(agg.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn resume_of_a_finished_run_does_nothing() {
    let env = Env::new(10);
    let out = env.path("pc");
    env.value(
        "pc-winter",
        &out,
        &["--max-perms", "3", "--no-convergence-stop"],
    );
    let before = fs::read(out.join("values.csv")).unwrap();
    let ckpt = out.join("checkpoint.txt");
    let o = env.run(&["resume", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("already complete"));
    assert_eq!(before, fs::read(out.join("values.csv")).unwrap());
}

#[test]
fn tampered_checkpoint_is_refused() {
    let env = Env::new(11);
    let out = env.path("pc");
    env.value(
        "pc-winter",
        &out,
        &["--max-perms", "3", "--no-convergence-stop"],
    );
    let ckpt = out.join("checkpoint.txt");
    let text = fs::read_to_string(&ckpt).unwrap();
    fs::write(&ckpt, text.replacen("traversals 3", "traversals 4", 1)).unwrap();
    let o = env.run(&[
        "resume",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--max-perms",
        "6",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_file_and_flags_combine() {
    let env = Env::new(12);
    let cfg = env.path("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# comment\ndataset = {}\nmethod = pc-winter\nmax-perms = 2\nstop_on_convergence = false\n",
            env.data.display()
        ),
    )
    .unwrap();
    let out = env.path("cfg-run");
    let o = env.run(&[
        "value",
        "--config",
        cfg.to_str().unwrap(),
        "--max-perms",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(out.join("report.txt"))
        .unwrap()
        .contains("traversals=3"));
}
