use std::fs;
use std::process::Command;

fn tsgdm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsgdm"))
}

fn write_config(dir: &std::path::Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(
        &path,
        format!(
            "trials = 2\noutput_dir = \"{}\"\n[task]\nname = \"synthetic\"\n[task.synthetic]\ntrain = 30\nholdout = 6\ntest = 6\n\
             [backend]\nkind = \"scripted\"\n[run]\ntotal_iterations = 2\nbatch_size = 3\n\
             [generation]\ncandidates = 2\nmax_total_tokens = 10\nblock_tokens = 5\n{extra}",
            dir.join("out").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_succeeds_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = tsgdm()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--trials", "3", "--set", "generation.alpha=0.3"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("3/3 trials"), "{stdout}");
    assert!(dir.path().join("out/trial_002.json").exists());
}

#[test]
fn failing_trials_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = tsgdm()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--max-gateway-calls", "5"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(dir.path().join("out/summary.json").exists());
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = tsgdm()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--alpha", "1.5"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("generation.alpha"));

    let cfg = write_config(dir.path(), "[extra]\nx = 1\n");
    let out = tsgdm()
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `extra`"));
}

#[test]
fn sweep_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = tsgdm()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "alpha", "--values", "0.9,0.0"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let values: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(values, vec!["0.0", "0.9"]);
}

#[test]
fn variance_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsgdm()
        .args([
            "variance",
            "--alphas",
            "0.5",
            "--horizons",
            "1,10",
            "--trials",
            "2000",
            "--output-dir",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(dir.path().join("variance.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let summary = fs::read_to_string(dir.path().join("variance_summary.json")).unwrap();
    assert!(summary.contains("alpha weights the newest sample"));
}
