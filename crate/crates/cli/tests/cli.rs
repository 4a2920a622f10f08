use std::path::Path;
use std::process::Command;

use nsdwr::report::read_csv;

fn nsdwr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nsdwr")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn cached_reference(dir: &Path) -> String {
    let src = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data/reference.toml");
    let dst = dir.join("reference.toml");
    std::fs::copy(src, &dst).unwrap();
    dst.display().to_string()
}

#[test]
fn bad_arguments_exit_with_two() {
    for args in [
        &["--goal", "vorticity"][..],
        &["--enrichment", "q"],
        &["--theta", "1.5"],
        &["--max-steps", "0"],
        &["--no-such-flag"],
    ] {
        let out = nsdwr(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn unwritable_output_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "").unwrap();
    let out = nsdwr(&["--stokes", "--max-steps", "1", "--out", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn stokes_run_has_round_off_gap() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cache = dir.path().join("ref.toml");
    let out = nsdwr(&[
        "--stokes",
        "--goal",
        "dp",
        "--enrichment",
        "p",
        "--max-steps",
        "2",
        "--reference-level",
        "1",
        "--reference-cache",
        cache.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--emit-vtk",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&run.join("records.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.eta_e <= 1e-10), "{rows:?}");
    assert!(run.join("step_1.vtk").exists() && run.join("config.toml").exists());
}

#[test]
fn config_file_is_merged_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "goal = \"lift\"\nstokes = true\nmax_steps = 5\nreference_level = 1\n").unwrap();
    let cache = dir.path().join("ref.toml");
    let out = nsdwr(&[
        "--config",
        cfg.to_str().unwrap(),
        "--max-steps",
        "1",
        "--uniform",
        "--reference-cache",
        cache.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(written.contains("goal = \"lift\"") && written.contains("max_steps = 1") && written.contains("uniform = true"));
    assert_eq!(read_csv(&run.join("records.csv")).unwrap().len(), 1);
}

#[test]
fn combined_p_run_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cache = cached_reference(dir.path());
    let out = nsdwr(&[
        "--enrichment",
        "p",
        "--goal",
        "combined",
        "--max-dofs",
        "60000",
        "--reference-cache",
        &cache,
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&run.join("records.csv")).unwrap();
    assert!(rows.len() >= 4);
    assert!(rows.iter().all(|r| r.dofs_primal <= 60000 && r.i_eff.is_finite()));
}
