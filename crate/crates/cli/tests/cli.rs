use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn famm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_famm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV written by the tool (comment header skipped).
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn summary_value(dir: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(dir.join("summary.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing"))
        .parse()
        .unwrap()
}

#[test]
fn generate_stationary_has_one_pose() {
    let dir = tempfile::tempdir().unwrap();
    let o = famm(&["generate", "--regime", "stationary", "--seed", "4", "--out", "b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = rows(&dir.path().join("b/truth.csv"));
    assert_eq!(truth.len(), 4551);
    let poses: std::collections::BTreeSet<Vec<String>> = truth.iter().map(|r| r[1..4].to_vec()).collect();
    assert_eq!(poses.len(), 1);
}

#[test]
fn generate_loop_closes() {
    let dir = tempfile::tempdir().unwrap();
    let o = famm(&["generate", "--regime", "loop", "--out", "b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = rows(&dir.path().join("b/truth.csv"));
    let p = |r: &Vec<String>| -> Vec<f64> { r[1..4].iter().map(|v| v.parse().unwrap()).collect() };
    let (a, b) = (p(&truth[0]), p(truth.last().unwrap()));
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(gap < 0.1, "{gap}");
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["x", "y"] {
        let o = famm(&["generate", "--regime", "turns", "--seed", "9", "--out", out], dir.path());
        assert!(o.status.success());
    }
    for f in ["meta.toml", "truth.csv", "gps.nmea", "imu.csv", "calib.csv", "vision.csv"] {
        let a = fs::read(dir.path().join("x").join(f)).unwrap();
        let b = fs::read(dir.path().join("y").join(f)).unwrap();
        // Headers differ only in run.out.
        let strip = |v: Vec<u8>| -> String {
            String::from_utf8(v).unwrap().lines().filter(|l| !l.starts_with("# run.out=")).collect::<Vec<_>>().join("\n")
        };
        assert_eq!(strip(a), strip(b), "{f}");
    }
}

#[test]
fn run_outputs_embed_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = famm(&["run", "--seed", "12", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["steps.csv", "labels.csv", "covariance.csv", "summary.txt"] {
        let text = fs::read_to_string(dir.path().join("r").join(f)).unwrap();
        assert!(text.contains("# run.seed=12\n"), "{f}");
        assert!(text.contains("# filter.q_pos="), "{f}");
        assert!(text.contains("# dataset.regime=stationary\n"), "{f}");
    }
    let steps = fs::read_to_string(dir.path().join("r/steps.csv")).unwrap();
    assert!(steps.contains("\nt,Px,Py,Pz,Rx,Ry,Rz,y_p,y_r,model_id,trace_Sigma\n"));
}

#[test]
fn stationary_famm_settles_on_p0r0() {
    let dir = tempfile::tempdir().unwrap();
    let o = famm(&["run", "--mode", "famm", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let labels = rows(&dir.path().join("r/labels.csv"));
    let tail = &labels[20..];
    let share = tail.iter().filter(|r| r[1] == "P0R0").count() as f64 / tail.len() as f64;
    assert!(share >= 0.95, "{share}");
}

#[test]
fn cmm_labels_are_constant() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "dataset.regime=turns\n").unwrap();
    let o = famm(&["run", "--config", "c.cfg", "--mode", "cmm", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let labels = rows(&dir.path().join("r/labels.csv"));
    assert_eq!(labels.len(), 1406);
    assert!(labels.iter().all(|r| r[1] == "P1R1"));
}

#[test]
fn run_reads_generated_bundle() {
    let dir = tempfile::tempdir().unwrap();
    assert!(famm(&["generate", "--regime", "medium_walk", "--seed", "2", "--out", "b"], dir.path()).status.success());
    fs::write(dir.path().join("c.cfg"), "dataset.path=b\nrun.concurrent=false\n").unwrap();
    let o = famm(&["run", "--config", "c.cfg", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary_value(&dir.path().join("r"), "steps"), 1735.0);
    let text = fs::read_to_string(dir.path().join("r/summary.txt")).unwrap();
    assert!(text.contains("# run.seed=2\n"));
}

#[test]
fn identical_configs_compare_flat() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.cfg"), "run.mode=famm\n").unwrap();
    let o = famm(&["compare", "--config", "a.cfg", "--against", "a.cfg", "--out", "c"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for r in rows(&dir.path().join("c/compare.csv")) {
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0, "{r:?}");
        assert_eq!(r[4], "");
    }
}

#[test]
fn noiseless_stationary_famm_not_worse_than_cmm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "noise.gps_sigma=0\nnoise.imu_accel_sigma=0\nnoise.imu_gyro_sigma=0\nnoise.vision_rot_sigma=0\nnoise.vision_trans_sigma=0\n";
    fs::write(dir.path().join("z.cfg"), cfg).unwrap();
    let o = famm(&["compare", "--config", "z.cfg", "--out", "c"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cmm = summary_value(&dir.path().join("c/a"), "mean_error");
    let famm_err = summary_value(&dir.path().join("c/b"), "mean_error");
    assert!(famm_err <= cmm, "{famm_err} > {cmm}");
    assert!(stdout(&o).contains("famm/gps_imu_vision"));
}

#[test]
fn malformed_second_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.cfg"), "").unwrap();
    fs::write(dir.path().join("b.cfg"), "run.mode=famm\nfilter.pos_sigma=wide\n").unwrap();
    let o = famm(&["compare", "--config", "a.cfg", "--against", "b.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2: filter.pos_sigma"), "{}", stderr(&o));
}

#[test]
fn compare_rejects_different_datasets() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.cfg"), "dataset.regime=turns\n").unwrap();
    fs::write(dir.path().join("b.cfg"), "dataset.regime=loop\n").unwrap();
    let o = famm(&["compare", "--config", "a.cfg", "--against", "b.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("share dataset"));
}

fn default_rules() -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/rules/default.rules")).unwrap()
}

#[test]
fn validate_default_rules() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("r.rules"), default_rules()).unwrap();
    let o = famm(&["validate-rules", "r.rules"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("81 rules"));
}

#[test]
fn duplicate_rule_reports_both_lines() {
    let dir = tempfile::tempdir().unwrap();
    let text = default_rules() + "Low,Low,P0R0,P0R0\n";
    let last = text.lines().count();
    let first = text.lines().position(|l| l == "Low,Low,P0R0,P0R0").unwrap() + 1;
    fs::write(dir.path().join("r.rules"), text).unwrap();
    let o = famm(&["validate-rules", "r.rules"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains(&format!("lines {first} and {last}")), "{}", stdout(&o));
}

#[test]
fn missing_rule_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = default_rules()
        .lines()
        .filter(|l| *l != "High,High,P2R1,P0R1")
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.path().join("r.rules"), text).unwrap();
    let o = famm(&["validate-rules", "r.rules"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("80 rules"));
    assert!(stdout(&o).contains("missing key (High, High, P2R1)"), "{}", stdout(&o));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(famm(&["run", "--mode", "imm"], dir.path()).status.code(), Some(1));
    assert_eq!(famm(&["run", "--config", "absent.cfg"], dir.path()).status.code(), Some(1));
    fs::write(dir.path().join("blocker"), "").unwrap();
    let o = famm(&["run", "--out", "blocker/r"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(famm(&["--help"], dir.path()).status.code(), Some(0));
}
