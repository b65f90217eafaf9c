use std::path::Path;
use std::process::{Command, Output};

fn fatou(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fatou"))
        .args(args)
        .current_dir(dir)
        .env_remove("FATOU_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn normalize_koenigs_reports_small_residual() {
    let dir = tempfile::tempdir().unwrap();
    let o = fatou(&["normalize", "-e", "koenigs1d", "--m", "6", "-o", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("PD-residual:")).unwrap().to_string();
    let fields: Vec<&str> = line.split(": ").collect();
    assert_eq!(fields[1], "PASS");
    assert!(fields[2].parse::<f64>().unwrap() < 1e-10);
    let nf = std::fs::read_to_string(dir.path().join("out/koenigs1d.nf.txt")).unwrap();
    assert!(nf.starts_with("normal_form 6"));
}

#[test]
fn normalize_linear_germ_gives_identity_conjugacy() {
    let dir = tempfile::tempdir().unwrap();
    let germ = "polymap 2 6\nterm 0 1,0 0.5 0.0\nterm 1 0,1 0.3 0.0\nend\n";
    std::fs::write(dir.path().join("lin.txt"), germ).unwrap();
    let o = fatou(&["normalize", "--germ", "lin.txt", "-o", "."], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let nf = std::fs::read_to_string(dir.path().join("lin.nf.txt")).unwrap();
    let t_block: Vec<&str> = nf.split("[T]\n").nth(1).unwrap().split("end\n").next().unwrap().lines().collect();
    let terms: Vec<&str> = t_block.iter().copied().filter(|l| l.starts_with("term")).collect();
    assert_eq!(terms.len(), 2, "{nf}");
    for t in terms {
        let parts: Vec<&str> = t.split_whitespace().collect();
        let expected = if parts[1] == "0" { "1,0" } else { "0,1" };
        assert_eq!(parts[2], expected);
        assert_eq!(parts[3].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn repelling_germ_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rep.txt"), "polymap 1 4\nterm 0 1 2.0 0.0\nterm 0 2 1.0 0.0\nend\n").unwrap();
    let o = fatou(&["normalize", "--germ", "rep.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not attracting"), "{}", stderr(&o));
}

#[test]
fn render_is_deterministic_and_rejects_zero_area() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["render", "-e", "exp_regular", "--resolution", "32", "--threads", "2"];
    let a = fatou(&[&args[..], &["-o", "a"]].concat(), dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = fatou(&[&args[..], &["-o", "b"]].concat(), dir.path());
    assert_eq!(b.status.code(), Some(0));
    let ia = std::fs::read(dir.path().join("a/exp_regular.ppm")).unwrap();
    let ib = std::fs::read(dir.path().join("b/exp_regular.ppm")).unwrap();
    assert!(ia.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(ia, ib);
    let meta: toml::Value = toml::from_str(&std::fs::read_to_string(dir.path().join("a/exp_regular.toml")).unwrap()).unwrap();
    assert_eq!(meta["slice"]["resolution"].as_integer(), Some(32));

    let z = fatou(&["render", "-e", "exp_regular", "--window", "0,0,-1,1"], dir.path());
    assert_eq!(z.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "command = \"render\"\nexample = \"koenigs1d\"\nout = \"cfg_out\"\n[slice]\nresolution = 8\nwindow = [-0.1, 0.1, -0.1, 0.1]\n";
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = fatou(&["render", "-c", "run.toml", "--resolution", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let img = std::fs::read(dir.path().join("cfg_out/koenigs1d.ppm")).unwrap();
    assert!(img.starts_with(b"P6\n4 4\n255\n"));
    assert!(stdout(&o).contains("member 16"));

    let wrong = fatou(&["verify", "-c", "run.toml"], dir.path());
    assert_eq!(wrong.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "newton_tol = 0.0\n").unwrap();
    let bad = fatou(&["verify", "-c", "bad.toml", "-e", "koenigs1d"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn threads_fall_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fatou"))
        .args(["render", "-e", "koenigs1d", "--resolution", "4"])
        .current_dir(dir.path())
        .env("FATOU_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "zero threads from the environment must be rejected");
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = fatou(&["verify", "-e", "koenigs1d"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).lines().last().unwrap().starts_with("summary: PASS"));

    let bad = fatou(&["verify", "-e", "koenigs1d", "--corrupt-normal-form"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).lines().any(|l| l.starts_with("PD-residual: FAIL")));

    let empty = fatou(&["verify", "-e", "koenigs1d", "--checks", ""], dir.path());
    assert_eq!(empty.status.code(), Some(0));
    assert!(stdout(&empty).contains("warning"));
    assert!(stdout(&empty).contains("summary: PASS: 0 checks"));

    let unknown = fatou(&["verify", "-e", "nope"], dir.path());
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn evaluation_commands() {
    let dir = tempfile::tempdir().unwrap();
    let psi = fatou(&["psi-eval", "-e", "koenigs1d", "-p", "0.01,0"], dir.path());
    assert_eq!(psi.status.code(), Some(0), "{}", stderr(&psi));
    let value: f64 = stdout(&psi).split("-> ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((value - 0.01).abs() < 1e-3);

    let theta = fatou(&["theta-eval", "-e", "henon_fb", "-p", "0.2,0;-0.1,0.1"], dir.path());
    assert_eq!(theta.status.code(), Some(0), "{}", stderr(&theta));

    let off = fatou(&["psi-eval", "-e", "exp_regular", "-p", "-1,0;0.3,0"], dir.path());
    assert_eq!(off.status.code(), Some(2));

    let none = fatou(&["psi-eval", "-e", "koenigs1d"], dir.path());
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn fibers_and_monodromy() {
    let dir = tempfile::tempdir().unwrap();
    let f = fatou(&["fibers", "-e", "power_cover"], dir.path());
    assert_eq!(f.status.code(), Some(0), "{}", stderr(&f));
    assert!(stdout(&f).starts_with("fiber: 3 points"));

    let m = fatou(&["monodromy", "-e", "power_cover:3", "--turns", "1", "-o", "."], dir.path());
    assert_eq!(m.status.code(), Some(0), "{}", stderr(&m));
    assert!(stdout(&m).contains("delta [1/3]"));
    let written = std::fs::read_dir(dir.path()).unwrap().filter_map(Result::ok).any(|e| e.file_name().to_string_lossy().ends_with(".monodromy.txt"));
    assert!(written);

    let none = fatou(&["monodromy", "-e", "koenigs1d"], dir.path());
    assert_eq!(none.status.code(), Some(2));
}
