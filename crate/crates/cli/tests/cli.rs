use std::path::Path;
use std::process::{Command, Output};

fn lenslab(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lenslab"));
    cmd.current_dir(dir).args(args).env_remove("LENSLAB_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &["--set", "tensor.n=17", "--set", "ray.paths_s=12", "--set", "ray.paths_mu=12"];

fn with<'a>(base: &[&'a str], rest: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(rest).copied().collect()
}

fn write_field(path: &Path) {
    let n = 17;
    let w = 1.05;
    let mut text = String::from("x,y,f11,f12,f22\n");
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (-w + 2.0 * w * i as f64 / (n - 1) as f64, -w + 2.0 * w * j as f64 / (n - 1) as f64);
            let inside = x * x + y * y <= 1.0;
            let b = if inside { (-4.0 * (x * x + y * y)).exp() } else { 0.0 };
            text.push_str(&format!("{x},{y},{},{},{}\n", b * (1.0 + x), 0.3 * b * y, b));
        }
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = lenslab(dir.path(), &["--set", "integrator.h=-1", "lens", "gen", "--out", "a.csv"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("integrator.h"), "{}", stderr(&o));
    assert!(!dir.path().join("a.csv").exists());

    std::fs::write(dir.path().join("bad.cfg"), "lens.n_s = 8\nlens.colour = red\n").unwrap();
    let o = lenslab(dir.path(), &["-c", "bad.cfg", "verify"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lens.colour"), "{}", stderr(&o));

    let o = lenslab(dir.path(), &["lens", "gen", "--out", "a.csv"], &[("LENSLAB_THREADS", "0")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("LENSLAB_THREADS"));

    let o = lenslab(dir.path(), &["lens", "frobnicate"], &[]);
    assert_eq!(code(&o), 2);

    let o = lenslab(dir.path(), &["tensor", "decompose", "--in", "missing.csv", "--out-fs", "a", "--out-v", "b"], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn solver_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_field(&dir.path().join("f.csv"));
    let args = with(SMALL, &["--set", "solver.max_iter=1", "tensor", "decompose", "--in", "f.csv", "--out-fs", "fs.csv", "--out-v", "v.csv"]);
    let o = lenslab(dir.path(), &args, &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn verify_passes_on_the_euclidean_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = lenslab(dir.path(), &["verify", "--out", "report.json"], &[]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    assert!(out.contains("0 failed"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() > 20);
}

#[test]
fn verify_reports_violations_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // bilinear sampling of a curved metric on a coarse grid misses the 1e-4 row identity
    let args = ["--set", "metric.family=conformal", "--set", "metric.phi_amplitude=0.3", "--set", "tensor.n=17", "verify"];
    let o = lenslab(dir.path(), &args, &[]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 1, "{out}");
    assert!(out.lines().any(|l| l.starts_with("FAIL ray") && l.contains("row identity")), "{out}");
}

#[test]
fn artifacts_are_reproducible_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_field(&d.join("f.csv"));
    let gen = |out: &str, threads: &str| {
        let args = with(SMALL, &["--set", "lens.n_s=10", "--set", "lens.n_mu=10", "lens", "gen", "--out", out]);
        assert_eq!(code(&lenslab(d, &args, &[("LENSLAB_THREADS", threads)])), 0);
        let (data, llfs) = (format!("{out}.data"), format!("{out}.llfs"));
        let args = with(SMALL, &["tensor", "xray", "--in", "f.csv", "--out", &data, "--save-system", &llfs]);
        assert_eq!(code(&lenslab(d, &args, &[("LENSLAB_THREADS", threads)])), 0);
    };
    gen("a", "1");
    gen("b", "4");
    for ext in ["", ".data", ".llfs"] {
        let a = std::fs::read(d.join(format!("a{ext}"))).unwrap();
        let b = std::fs::read(d.join(format!("b{ext}"))).unwrap();
        assert!(a == b, "artifact a{ext} differs");
    }
    let lens = std::fs::read_to_string(d.join("a")).unwrap();
    assert!(lens.lines().nth(1).unwrap().starts_with("# config="));
    assert_eq!(&std::fs::read(d.join("a.llfs")).unwrap()[..8], b"LLFS1\0\0\0");
}

#[test]
fn saved_system_drives_inversion_and_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_field(&d.join("f.csv"));
    let o = lenslab(d, &with(SMALL, &["tensor", "xray", "--in", "f.csv", "--out", "d.csv", "--save-system", "sys.llfs"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // solver settings do not invalidate the system
    let o = lenslab(d, &with(SMALL, &["tensor", "invert", "--data", "d.csv", "--out", "r.csv", "--system", "sys.llfs", "--lambda", "1e-6"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["reconstruction"]["lambda"], 1e-6);
    assert!(std::fs::read_to_string(d.join("r.csv")).unwrap().starts_with("# lenslab config="));

    let o = lenslab(d, &with(SMALL, &["spectrum", "--system", "sys.llfs", "--out", "s.json"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("s.json")).unwrap()).unwrap();
    assert!(s["spectrum"]["sigma_min"].as_f64().unwrap() > 0.0);

    // a different path family does
    let o = lenslab(d, &["--set", "tensor.n=17", "tensor", "invert", "--data", "d.csv", "--out", "r.csv", "--system", "sys.llfs"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--system"));
}

#[test]
fn json_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["--set", "lens.n_s=8", "--set", "lens.n_mu=8", "jet", "--x0", "0.5", "--out"];
    for out in ["j1.json", "j2.json"] {
        let mut a = args.to_vec();
        a.push(out);
        assert_eq!(code(&lenslab(d, &a, &[])), 0);
    }
    assert_eq!(std::fs::read(d.join("j1.json")).unwrap(), std::fs::read(d.join("j2.json")).unwrap());
    let j: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("j1.json")).unwrap()).unwrap();
    assert!((j["jet"]["g11"].as_f64().unwrap() - 1.0).abs() < 1e-4);
}

#[test]
fn geodesic_path_csv_has_jacobi_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = lenslab(dir.path(), &["--set", "metric.family=sphere", "lens", "path", "--s", "0", "--mu", "0", "--out", "p.csv"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let mut lines = text.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "t,x,y,xi1,xi2,J");
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[0] - std::f64::consts::PI).abs() < 1e-8);
    assert!(last[5].abs() < 1e-6);
}
