use std::path::Path;
use std::process::{Command, Output};

fn lsbo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsbo"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn generate_then_sweep_then_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let base = "dataset = shape\n\
                num_train = 60\n\
                latent_dims = 2\n\
                budget = 2\n\
                n_init = 4\n\
                vae_epochs = 2\n\
                gp_steps = 2\n\
                num_inducing = 8\n\
                num_candidates = 32\n\
                num_refine = 1\n\
                grid_width = 3\n\
                grid_height = 3\n";
    std::fs::write(dir.path().join("gen.cfg"), base).unwrap();
    let stdout = ok(&lsbo(&["gen-data", "--config", "gen.cfg", "--out", "data", "--seed", "11"], dir.path()));
    assert!(stdout.contains("60 rows of 100 values"), "{stdout}");
    let pool = dir.path().join("data/shape.txt");
    assert!(pool.exists());

    let sweep_cfg = format!("{base}data_file = {}\n", pool.display());
    std::fs::write(dir.path().join("sweep.cfg"), &sweep_cfg).unwrap();
    let stdout = ok(&lsbo(
        &["sweep", "--config", "sweep.cfg", "--out", "runs", "--seed", "3", "--workers", "2"],
        dir.path(),
    ));
    assert!(stdout.contains("disjoint_d2_hypercube_ei"), "{stdout}");
    assert!(stdout.contains("1/1 runs"), "{stdout}");
    let curve = std::fs::read_to_string(dir.path().join("runs/curves/disjoint_d2_hypercube_ei.csv")).unwrap();
    assert!(curve.lines().next().unwrap().ends_with("seed_3"));
    assert_eq!(curve.lines().count(), 3);

    let stdout = ok(&lsbo(&["diagnose", "--config", "sweep.cfg", "--out", "diag"], dir.path()));
    assert!(stdout.contains("inside contour"), "{stdout}");
    assert_eq!(
        std::fs::read_to_string(dir.path().join("diag/diagnostics.csv")).unwrap().lines().count(),
        10
    );
}

#[test]
fn bad_configs_exit_nonzero_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "budget = 2\n\nbugdet = 3\n").unwrap();
    let out = lsbo(&["sweep", "--config", "bad.cfg"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bugdet") && err.contains('3'), "{err}");
    assert!(!dir.path().join("out").exists());

    let out = lsbo(&["sweep", "--config", "missing.cfg"], dir.path());
    assert!(!out.status.success());
    let out = lsbo(&["frobnicate"], dir.path());
    assert!(!out.status.success());
}
