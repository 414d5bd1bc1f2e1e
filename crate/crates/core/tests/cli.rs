use std::process::Command;

fn factqg(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_factqg")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn exit_codes() {
    assert_eq!(factqg(&["--help"]).0, 0);
    assert_eq!(factqg(&["frobnicate"]).0, 1);
    assert_eq!(factqg(&["neighbors", "--entities", "/nonexistent", "--relationships", "/nonexistent", "--entity", "m.x"]).0, 2);
    let (code, stdout) = factqg(&["gradcheck", "--seed", "7"]);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("max relative error"));
    assert_eq!(factqg(&["gradcheck", "--tolerance", "0"]).0, 2);
}

#[test]
fn evaluate_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("q.txt");
    std::fs::write(&f, "who founded oak ridge ?\nwhere was red hill born ?\n").unwrap();
    let p = f.to_str().unwrap();
    let (code, stdout) = factqg(&["evaluate", "--candidates", p, "--references", p]);
    assert_eq!(code, 0);
    assert!(stdout.contains("BLEU\t100.0000"));
    assert!(stdout.contains("METEOR-lite\t"));
}
