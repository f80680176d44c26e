//! Binary-level contract: exit codes, machine-readable stderr, byte-level
//! determinism of emitted CSVs, and the documented file layout.

use std::fs;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flocklab"))
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process must exit, not signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small, fast kinetic configuration; the kernel radius stays above the
/// four-cell resolution threshold of the 32-cell grid.
const SMALL_KINETIC: &str = "\
[kernel]
profile = triangle
r = 0.3
lambda = 1.0
beta = 0.25
alignment = mt

[grid]
Lx = 0.75
Lv = 1.0
Nx = 32
Nv = 32

[time]
t_end = 0.2
dt = 0.004
snapshot_stride = 25

[init]
name = two_bumps
";

#[test]
fn kinetic_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL_KINETIC).expect("write config");
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = bin()
            .args(["kinetic", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .expect("spawn");
        assert_eq!(code(&out), 0, "kinetic run must succeed: {}", stderr(&out));
        outputs.push(out_dir);
    }
    for name in ["diagnostics.csv", "snapshots.csv", "snapshot_000.csv"] {
        let a = fs::read(outputs[0].join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let b = fs::read(outputs[1].join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(a, b, "{name} must be byte-identical across reruns");
    }
    let manifest = fs::read_to_string(outputs[0].join("manifest.csv")).expect("manifest");
    assert!(manifest.starts_with("command,config_sha256,version,wall_s\n"), "manifest header");
    assert!(manifest.contains("kinetic"), "manifest records the subcommand");
    let diag = fs::read_to_string(outputs[0].join("diagnostics.csv")).expect("diagnostics");
    assert!(
        diag.starts_with("t,mass,momentum,energy,d_local,d_cs,linf_f,lp_f,lbound_lhs,lbound_rhs,outflow\n"),
        "diagnostics header contract"
    );
}

#[test]
fn thread_count_does_not_change_sweep_bytes() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("run.cfg");
    let text = format!(
        "{SMALL_KINETIC}\n[sweep]\nr_list = 0.4,0.3,0\nq = 1.0\ndeg_t = 2\ndeg_x = 3\ndeg_v = 3\n"
    );
    fs::write(&cfg, text).expect("write config");
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = bin()
            .env("FLOCKLAB_THREADS", threads)
            .args(["sweep", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .expect("spawn");
        assert_eq!(code(&out), 0, "sweep must succeed with {threads} threads: {}", stderr(&out));
        files.push(fs::read_to_string(out_dir.join("sweep.csv")).expect("sweep.csv"));
    }
    // runtime_s is wall time and legitimately differs; everything before it
    // on each line must agree byte for byte.
    let strip = |text: &str| -> Vec<String> {
        text.lines().map(|l| l.rsplit_once(',').expect("runtime column").0.to_owned()).collect()
    };
    assert_eq!(strip(&files[0]), strip(&files[1]), "sweep rows must not depend on thread count");
}

#[test]
fn sweep_radius_override_and_check_table() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("run.cfg");
    let text = format!(
        "{SMALL_KINETIC}\n[sweep]\nr_list = 0.4,0.35,0.3,0\nq = 1.0\ndeg_t = 2\ndeg_x = 3\ndeg_v = 3\n"
    );
    fs::write(&cfg, text).expect("write config");
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--r", "0.3,0"])
        .arg("--out")
        .arg(&out_dir)
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 0, "sweep must succeed: {}", stderr(&out));
    let sweep = fs::read_to_string(out_dir.join("sweep.csv")).expect("sweep.csv");
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "r,l1_rho_gap,l1_j_gap,product_gap,energy_margin,mt_sup,runtime_s");
    assert_eq!(rows.len(), 3, "--r override must shrink the radius list to two rows: {sweep}");
    assert!(rows[1].starts_with("0.3,") && rows[2].starts_with("0,"), "rows sorted, limit last");
    let check = fs::read_to_string(out_dir.join("check.csv")).expect("check.csv");
    assert!(check.starts_with("check,passed,margin,tolerance\n"), "check header contract");
    for name in ["gaps_decrease_in_r", "mt_sup_bounded", "energy_inequality", "product_gap_floor"] {
        assert!(check.contains(name), "check.csv must carry the {name} row:\n{check}");
    }
}

#[test]
fn two_dimensional_trajectories_have_component_columns() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "[kernel]\nprofile = triangle\nr = 0.3\nlambda = 0.5\nbeta = 0.25\nalignment = mt\n\
         [time]\nt_end = 0.1\ndt = 0.01\nsnapshot_stride = 5\n\
         [init]\nname = clusters\nx_centers = -0.3,0.1; 0.3,-0.2\nv_centers = 0.2,0.0; -0.2,0.1\n\
         radius = 0.1\nvspread = 0.05\ncounts = 40; 24\n\
         [particles]\nn = 64\nseed = 3\ndim = 2\ndeposit = cubic\n",
    )
    .expect("write config");
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["particles", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .expect("spawn");
    assert_eq!(code(&out), 0, "2-d particle run must succeed: {}", stderr(&out));
    let traj = fs::read_to_string(out_dir.join("trajectory.csv")).expect("trajectory.csv");
    assert!(traj.starts_with("t,i,x0,x1,v0,v1\n"), "2-d trajectory header contract, got {traj:.40}");
}

#[test]
fn exit_codes_and_stderr_contract() {
    let dir = tempfile::tempdir().expect("tempdir");

    // 2: missing config file, with usage guidance.
    let out = bin().args(["kinetic", "--config", "/nonexistent.cfg", "--out"]).arg(dir.path()).output().expect("spawn");
    assert_eq!(code(&out), 2, "missing config is a usage error");
    let err = stderr(&out);
    assert!(err.starts_with("error,2,"), "machine-readable stderr line, got {err}");
    assert!(err.contains("usage"), "stderr must carry usage guidance, got {err}");

    // 2: duplicate key, naming both lines.
    let dup = dir.path().join("dup.cfg");
    fs::write(&dup, "[kernel]\nr = 0.3\nr = 0.2\n").expect("write config");
    let out = bin().args(["kinetic", "--config"]).arg(&dup).arg("--out").arg(dir.path().join("d")).output().expect("spawn");
    assert_eq!(code(&out), 2, "duplicate key is a config error");
    let err = stderr(&out);
    assert!(err.contains('2') && err.contains('3'), "both conflicting lines must be named: {err}");

    // 3: runtime abort (fixed step far above the stable bound).
    let cfl = dir.path().join("cfl.cfg");
    fs::write(
        &cfl,
        "[kernel]\nprofile = triangle\nr = 0.4\nlambda = 1.0\nbeta = 0.25\nalignment = mt\n\
         [grid]\nNx = 32\nNv = 32\n[time]\nt_end = 1.0\ndt = 0.5\nsnapshot_stride = 10\n",
    )
    .expect("write config");
    let out = bin().args(["kinetic", "--config"]).arg(&cfl).arg("--out").arg(dir.path().join("c")).output().expect("spawn");
    assert_eq!(code(&out), 3, "step-size violation aborts at runtime: {}", stderr(&out));
    assert!(stderr(&out).starts_with("error,3,"), "stderr code must match exit code");

    // 1: a check genuinely failing. At extreme kernel strength the
    // centered-difference divergence residual is roundoff-limited near
    // 1e-10, above the fixed 1e-12 tolerance — the checker must say so.
    let hot = dir.path().join("hot.cfg");
    fs::write(
        &hot,
        "[kernel]\nprofile = triangle\nr = 0.3\nlambda = 1000000\nbeta = 0.25\nalignment = mt\n\
         [grid]\nNx = 48\nNv = 48\n[time]\nt_end = 0.0000002\ndt = 0.0000001\nsnapshot_stride = 100\n",
    )
    .expect("write config");
    let out = bin().args(["check", "--config"]).arg(&hot).output().expect("spawn");
    assert_eq!(code(&out), 1, "a failed check must exit 1");
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("divergence_identity,false"), "the failing row must be reported:\n{table}");

    // 0: the happy path.
    let ok = dir.path().join("ok.cfg");
    fs::write(&ok, SMALL_KINETIC).expect("write config");
    let out = bin().args(["check", "--config"]).arg(&ok).output().expect("spawn");
    assert_eq!(code(&out), 0, "healthy config must pass every check: {}", String::from_utf8_lossy(&out.stdout));
}
