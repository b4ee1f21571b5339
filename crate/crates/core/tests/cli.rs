//! End-to-end runs of the `symgain` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use symgain::abstraction::{MaterializedStore, TransitionStore, build_abstraction};
use symgain::config::NetConfig;
use symgain::synthesis::{Controller, SafetySpec, synthesize_safety};
use symgain::system::BoxUnion;
use tempfile::TempDir;

fn symgain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symgain")).args(args).env_remove("SYMGAIN_THREADS").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

const ROOM: &str = r#"{"n": 3, "subsystem": {"kind": "roomtemp", "preset": "paper"},
    "boxes": {"x": [17, 23], "u": [0, 0.6], "w": [19, 21]}, "eta": 0.05, "mu": 0.05, "safe": [19, 21]}"#;

fn room_config(dir: &Path) -> String {
    write_config(dir, "room.json", ROOM).display().to_string()
}

#[test]
fn usage_and_help() {
    assert_eq!(code(&symgain(&["--help"])), 0);
    assert_eq!(code(&symgain(&["--version"])), 0);
    assert_eq!(code(&symgain(&[])), 64);
    assert_eq!(code(&symgain(&["bench", "roomtemp", "--no-such-flag"])), 64);
    assert_eq!(code(&symgain(&["check-smallgain", "--config", "x.json", "--mode", "fast"])), 64);
    let o = symgain(&["synthesize", "--config", "x.json", "--safe", "21,19", "--out", "c.bin"]);
    assert_eq!(code(&o), 64);
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty interval"));
    assert_eq!(code(&symgain(&["check-smallgain", "--config", "/nonexistent/net.json"])), 1);

    let bad_env = Command::new(env!("CARGO_BIN_EXE_symgain"))
        .args(["check-smallgain", "--config", "x.json"])
        .env("SYMGAIN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&bad_env), 64);
}

#[test]
fn check_smallgain_exit_codes() {
    let dir = TempDir::new().unwrap();
    let cfg = room_config(dir.path());
    for mode in ["linear", "exhaustive", "auto"] {
        let o = symgain(&["check-smallgain", "--config", &cfg, "--mode", mode]);
        assert_eq!(code(&o), 0, "{mode}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let hot = write_config(dir.path(), "hot.json", &ROOM.replace(r#""preset": "paper""#, r#""preset": "paper", "overrides": {"alpha": 0.9}"#));
    let o = symgain(&["check-smallgain", "--config", hot.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("violated"));

    // exhaustive enumeration refuses rings above the cycle cap
    let big = write_config(dir.path(), "big.json", &ROOM.replace(r#""n": 3"#, r#""n": 13"#));
    let big = big.to_str().unwrap();
    assert_eq!(code(&symgain(&["check-smallgain", "--config", big, "--mode", "exhaustive"])), 4);
    assert_eq!(code(&symgain(&["check-smallgain", "--config", big, "--mode", "linear"])), 0);
}

#[test]
fn compose_error_csv_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = room_config(dir.path());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for (p, threads) in [(&a, "1"), (&b, "2")] {
        let o = symgain(&["--threads", threads, "compose-error", "--config", &cfg, "--n", "3,10,100", "--eta", "0.005,0.01", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,eta,eps_hat");
    assert_eq!(lines.len(), 7);
    let eps: Vec<(f64, f64)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    for (eta, e) in &eps {
        let oracle = 2.0 * eta / (0.99 * 0.945);
        assert!((e - oracle).abs() <= 1e-12 * oracle, "{e} vs {oracle}");
    }

    let hot = write_config(dir.path(), "hot.json", &ROOM.replace(r#""preset": "paper""#, r#""preset": "paper", "overrides": {"alpha": 0.9}"#));
    let out = dir.path().join("hot.csv");
    let o = symgain(&["compose-error", "--config", hot.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("n,eta,eps_hat,status"));
    assert!(text.contains("small_gain_violated"));
}

#[test]
fn synthesize_writes_readable_controller() {
    let dir = TempDir::new().unwrap();
    let cfg = room_config(dir.path());
    let out = dir.path().join("ctrl.bin");
    let o = symgain(&["synthesize", "--config", &cfg, "--safe", "19,21", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = fs::read(&out).unwrap();
    assert_eq!(&bytes[..4], b"SGCT");

    let net = NetConfig::load(Path::new(&cfg)).unwrap();
    let case = net.case().unwrap();
    let model = build_abstraction(&case.subsystems[0], case.abstraction_feedback(), case.abstraction_params(0)).unwrap();
    let direct = synthesize_safety(&model, &SafetySpec::new(BoxUnion::interval(19.0, 21.0).unwrap()), None).unwrap();
    let read = Controller::read_from(bytes.as_slice(), model.x_grid().clone(), model.u_grid().clone()).unwrap();
    assert_eq!(read, direct);
    assert!(read.domain_size() > 0);

    // a band too narrow to hold against the neighbors' range
    let o = symgain(&["synthesize", "--config", &cfg, "--safe", "22.9,23", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn simulate_and_abstract() {
    let dir = TempDir::new().unwrap();
    let cfg = room_config(dir.path());
    let traj = dir.path().join("traj.csv");
    let o = symgain(&["simulate", "--config", &cfg, "--steps", "10", "--x0", "20", "--out", traj.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&traj).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,i,x");
    assert_eq!(lines.len(), 1 + 11 * 3);
    for l in &lines[1..] {
        let x: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
        assert!((19.0..=21.0).contains(&x), "{l}");
    }
    assert_eq!(code(&symgain(&["simulate", "--config", &cfg, "--x0", "20,20", "--out", traj.to_str().unwrap()])), 64);

    let dump = dir.path().join("sub.sgab");
    let o = symgain(&["abstract", "--config", &cfg, "--sub", "1", "--out", dump.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("states 121"), "{stdout}");
    let stored = MaterializedStore::read_from(fs::File::open(&dump).unwrap()).unwrap();
    let case = NetConfig::load(Path::new(&cfg)).unwrap().case().unwrap();
    let mut model = build_abstraction(&case.subsystems[1], case.abstraction_feedback(), case.abstraction_params(1)).unwrap();
    model.materialize(u64::MAX).unwrap();
    match model.store() {
        TransitionStore::Materialized(m) => assert_eq!(m, &stored),
        TransitionStore::Implicit => unreachable!(),
    }
}

#[test]
fn bench_roomtemp_end_to_end() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = symgain(&["bench", "roomtemp", "--n", "12", "--eta", "0.05", "--mu", "0.05", "--steps", "30", "--out-dir", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let err = fs::read_to_string(dir.path().join("err.csv")).unwrap();
    let rows: Vec<&str> = err.lines().collect();
    assert_eq!(rows[0], "n,eta,eps_hat");
    assert_eq!(rows.len(), 4);
    let vals: Vec<&str> = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap()).collect();
    assert!(vals.iter().all(|v| *v == vals[0]));
    let traj = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 31 * 12);

    let o = symgain(&["bench", "roomtemp", "--alpha", "0.9", "--eta", "0.05", "--mu", "0.05", "--out-dir", d]);
    assert_eq!(code(&o), 2);

    let o = symgain(&["bench", "fullnet", "--n", "10", "--out-dir", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let err = fs::read_to_string(dir.path().join("err.csv")).unwrap();
    let last: f64 = err.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((last - 2.0 * 0.01 / (0.99 * 0.525)).abs() < 1e-12);
}

#[test]
fn linear_config_runs_through_the_pipeline() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "lin.json",
        r#"{"n": 4, "subsystem": {"kind": "linear", "a": [[0.6]], "b": [[1.0]], "c": [[1.0]], "d": [[0.02, 0.02]],
             "z": [[1.0]], "k": [[0.0]]},
            "boxes": {"x": [-1, 1], "u": [-0.2, 0.2], "w": [-1, 1]}, "eta": 0.05, "mu": 0.05, "safe": [-0.8, 0.8]}"#,
    );
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&symgain(&["check-smallgain", "--config", cfg])), 0);
    let csv = dir.path().join("e.csv");
    let o = symgain(&["compose-error", "--config", cfg, "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = dir.path().join("t.csv");
    let o = symgain(&["simulate", "--config", cfg, "--steps", "20", "--x0", "0.3", "--out", traj.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
