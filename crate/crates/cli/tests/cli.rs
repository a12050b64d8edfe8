use std::path::Path;
use std::process::{Command, Output};

fn nse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nse")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = nse(args, cwd);
    assert!(out.status.success(), "nse {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn usage_errors_exit_two_and_runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nse(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(nse(&["train"], d).status.code(), Some(2));
    assert_eq!(nse(&["train", "--config", "absent.conf"], d).status.code(), Some(2));
    assert_eq!(nse(&["trace", "--text", "a b"], d).status.code(), Some(2));
    assert_eq!(nse(&["synth", "shuffle", "--n", "3", "--out", "x.tsv"], d).status.code(), Some(2));

    std::fs::write(d.join("bad.conf"), "task = classify\ntrain = missing.tsv\n").unwrap();
    let out = nse(&["train", "--config", "bad.conf"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    std::fs::write(d.join("lr.conf"), "task = recall\ntrain = r.tsv\nlr = 0\n").unwrap();
    ok(&["synth", "assoc", "--n", "10", "--out", "r.tsv"], d);
    assert_eq!(nse(&["train", "--config", "lr.conf"], d).status.code(), Some(1));
}

#[test]
fn trace_of_three_tokens_has_three_records_and_edges() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("fresh.conf"), "task = classify\nlabels = a,b\ndim = 6\n").unwrap();
    ok(&["trace", "--config", "fresh.conf", "--text", "the cat sat", "--out", "t", "--seed", "4"], d);
    let trace = std::fs::read_to_string(d.join("t/trace.txt")).unwrap();
    assert_eq!(trace.lines().next(), Some("# nse-trace v1"));
    assert_eq!(trace.lines().skip(1).count(), 3);
    let dot = std::fs::read_to_string(d.join("t/graph.dot")).unwrap();
    assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 3);
    assert!(dot.contains("\"cat@1\""));
    let table = std::fs::read_to_string(d.join("t/memory.txt")).unwrap();
    assert!(table.starts_with("t=0\n"));
}

#[test]
fn synth_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (name, seed) in [("a.tsv", "7"), ("b.tsv", "7"), ("c.tsv", "8")] {
        ok(&["synth", "copy", "--n", "100", "--seed", seed, "--out", name], d);
    }
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.tsv"), read("b.tsv"));
    assert_ne!(read("a.tsv"), read("c.tsv"));
    let text = String::from_utf8(read("a.tsv")).unwrap();
    assert_eq!(text.lines().count(), 100);
    for line in text.lines() {
        let (target, source) = line.split_once('\t').unwrap();
        assert_eq!(target, source);
    }
}

#[test]
fn translate_writes_one_line_per_source() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "reverse", "--n", "60", "--vocab", "8", "--max-len", "4", "--out", "train.tsv"], d);
    std::fs::write(d.join("s2s.conf"), "task = seq2seq\nvariant = nse-lstm\ntrain = train.tsv\ndim = 8\nepochs = 1\n").unwrap();
    ok(&["train", "--config", "s2s.conf", "--out", "run", "--precision", "f64"], d);
    let metrics = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(std::fs::read_to_string(d.join("run/config.txt")).unwrap().contains("precision = f64"));

    std::fs::write(d.join("src.txt"), "t1 t2\nt3\n\nt4 t5 t6\n").unwrap();
    ok(&["translate", "--checkpoint", "run", "--input", "src.txt", "--out", "hyp.txt", "--max-len", "5", "--trace"], d);
    let hyp = std::fs::read_to_string(d.join("hyp.txt")).unwrap();
    assert_eq!(hyp.lines().count(), 3);
    assert!(hyp.lines().all(|l| l.split_whitespace().count() <= 5));
    let traces = std::fs::read_to_string(d.join("hyp.txt.trace")).unwrap();
    assert_eq!(traces.matches("# nse-trace v1").count(), 3);

    let eval = ok(&["eval", "--checkpoint", "run/model.ckpt"], d);
    let keys: Vec<&str> = eval.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(keys, ["examples", "loss", "accuracy", "greedy_token_acc"]);

    let out = nse(&["translate", "--checkpoint", "run", "--input", "nope.txt", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_fails_when_the_step_is_too_coarse() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("g.conf"), "dim = 4\nslots = 3\nsteps = 2\neps = 0.02\n").unwrap();
    let out = nse(&["gradcheck", "--config", "g.conf"], d);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let worst: f64 = stdout.lines().last().unwrap().strip_prefix("max_rel_error ").unwrap().parse().unwrap();
    assert!(worst >= 1e-4);
    assert_eq!(out.status.code(), Some(1));
}
