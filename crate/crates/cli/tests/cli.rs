use std::path::Path;
use std::process::{Command, Output};

fn simvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simvit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn accuracy_line(o: &Output) -> String {
    stdout(o)
        .lines()
        .find(|l| l.starts_with("accuracy "))
        .expect("accuracy line")
        .to_string()
}

#[test]
fn describe_micro_totals() {
    let o = simvit(&["describe", "--variant", "micro"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let totals = out.lines().last().unwrap();
    assert!(totals.starts_with("total\t"));
    assert!(totals.contains("(3.33M params"), "{totals}");
    assert_eq!(
        out.lines()
            .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
            .count(),
        4
    );
    assert_eq!(stdout(&simvit(&["describe", "--variant", "micro"])), out);
}

#[test]
fn describe_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "variant = \"tiny\"\ndepths = [1, 1, 1, 1]\n").unwrap();
    let o = simvit(&["describe", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("# tiny[depth 1-1-1-1]"));

    std::fs::write(&path, "variant = \"tiny\"\nextra = 1\n").unwrap();
    let o = simvit(&["describe", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("extra"));
}

#[test]
fn forward_prints_pyramid_shapes() {
    let o = simvit(&[
        "forward",
        "--variant",
        "micro",
        "--random",
        "--res",
        "224",
        "--seed",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let shapes: Vec<&str> = out.lines().take(4).map(|l| l.split(' ').nth(1).unwrap()).collect();
    assert_eq!(shapes, ["56x56x32", "28x28x64", "14x14x160", "7x7x256"]);
    assert!(out.contains("logits 1000 argmax"));
    assert_eq!(out.lines().last().unwrap().split(' ').count(), 1000);
}

#[test]
fn forward_reads_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.ppm");
    let mut bytes = b"P6\n# test\n64 32\n255\n".to_vec();
    bytes.extend((0..64 * 32 * 3).map(|i| (i % 251) as u8));
    std::fs::write(&path, bytes).unwrap();
    let o = simvit(&[
        "forward",
        "--variant",
        "micro",
        "--image",
        path.to_str().unwrap(),
        "--classes",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("F1 8x16x32 "));
    assert!(stdout(&o).contains("logits 5 "));

    std::fs::write(&path, b"P3\n1 1\n255\n0 0 0\n").unwrap();
    let o = simvit(&["forward", "--variant", "micro", "--image", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_and_gradcheck_pass() {
    let o = simvit(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let o = simvit(&["gradcheck", "--scope", "kernel", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("40 cases, 0 failed"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["describe", "--variant", "huge"][..],
        &["describe"],
        &["gradcheck", "--scope", "everything"],
        &["forward", "--variant", "micro"],
        &["frobnicate"],
        &["verify", "--fast"],
    ] {
        let o = simvit(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn toy_weights_reproduce_accuracy_across_commands() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.bin");
    let w = w.to_str().unwrap();
    let o = simvit(&[
        "train-toy",
        "--variant",
        "micro-reduced",
        "--epochs",
        "2",
        "--seed",
        "4",
        "--out",
        w,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace: Vec<String> = stdout(&o)
        .lines()
        .filter(|l| l.starts_with("epoch "))
        .map(String::from)
        .collect();
    assert_eq!(trace.len(), 2);
    assert!(trace[0].starts_with("epoch 0 loss "));
    assert!(Path::new(w).exists());

    let eval = simvit(&["eval-toy", "--weights", w, "--seed", "4"]);
    assert_eq!(eval.status.code(), Some(0));
    let fwd = simvit(&[
        "forward",
        "--variant",
        "micro-reduced",
        "--weights",
        w,
        "--toy-seed",
        "4",
    ]);
    assert_eq!(fwd.status.code(), Some(0), "{}", String::from_utf8_lossy(&fwd.stderr));
    assert_eq!(accuracy_line(&eval), accuracy_line(&fwd));

    let again = simvit(&["train-toy", "--epochs", "2", "--seed", "4", "--out", w]);
    let trace_again: Vec<String> = stdout(&again)
        .lines()
        .filter(|l| l.starts_with("epoch "))
        .map(String::from)
        .collect();
    assert_eq!(trace, trace_again);

    std::fs::write(w, b"not weights").unwrap();
    assert_eq!(simvit(&["eval-toy", "--weights", w]).status.code(), Some(1));
}
