use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn railtrace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_railtrace"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LM_API_BASE")
        .output()
        .expect("binary runs")
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn seeded_commands_are_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        let o = railtrace(&["gen", "--seed", "11", "--out", &format!("{out}/s.json")], d);
        assert!(o.status.success());
        let o = railtrace(
            &["optimize", "--seed", "11", "--steps", "12", "--optimizer", "rmsprop", "--out", &format!("{out}/run")],
            d,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let o = railtrace(
            &["eval-discrim", "--instances", "1", "--steps", "5", "--methods", "numerical", "--stub", "random", "--out", &format!("{out}/disc")],
            d,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(d.join("a/s.json")).unwrap(), fs::read(d.join("b/s.json")).unwrap());
    for sub in ["run", "disc"] {
        let (a, b) = (tree(&d.join("a").join(sub)), tree(&d.join("b").join(sub)));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{sub} differs");
    }
}

#[test]
fn usage_and_runtime_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(railtrace(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(railtrace(&["gen", "--no-such-flag"], tmp.path()).status.code(), Some(1));
    assert_eq!(railtrace(&["optimize", "--optimizer", "lbfgs", "--out", "x"], tmp.path()).status.code(), Some(1));
    assert_eq!(railtrace(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(railtrace(&["describe", "--run", "missing"], tmp.path()).status.code(), Some(2));
    assert_eq!(railtrace(&["optimize", "--steps", "0", "--out", "x"], tmp.path()).status.code(), Some(2));
    let o = railtrace(&["eval-qa", "--seeds", "1", "--out", "q"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("LM_API_BASE"));
}

const FIXTURE: &str = include_str!("../../core/fixtures/step_table.csv");

#[test]
fn fixture_check_reports_each_row() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("table.csv"), FIXTURE).unwrap();
    let o = railtrace(&["simulate", "--fixture-check", "table.csv"], tmp.path());
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let rows = FIXTURE.lines().count() - 1;
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS step")).count(), rows);

    let mut broken: Vec<String> = FIXTURE.lines().map(str::to_string).collect();
    let fields: Vec<&str> = broken[3].split(',').collect();
    let velocity: f64 = fields[6].parse().unwrap();
    let row = format!("{},{:.4}", fields[..6].join(","), velocity + 0.5);
    broken[3] = row;
    fs::write(tmp.path().join("broken.csv"), broken.join("\n")).unwrap();
    let o = railtrace(&["simulate", "--fixture-check", "broken.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL step  3"));
}

#[test]
fn simulate_table_uses_fixture_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let o = railtrace(&["simulate", "--seed", "2", "--csv", "t.csv", "--out", "r.json"], tmp.path());
    assert!(o.status.success());
    let table = fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    assert_eq!(table.lines().next(), FIXTURE.lines().next());
    let result: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    let steps = result["steps"].as_array().unwrap();
    assert_eq!(table.lines().count() - 1, steps.len());
    let last_time: f64 = table.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let total = result["total_time"].as_f64().unwrap();
    assert!((last_time - total).abs() < 1e-9 * total.max(1.0));
}

#[test]
fn batch_writes_run_and_cell_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = railtrace(
        &["batch", "--seeds", "2", "--steps", "4", "--optimizers", "adam,sign_sgd", "--objectives", "1,3", "--jobs", "2", "--obstacles", "6", "--ctrl-points", "6", "--out", "b"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = fs::read_to_string(tmp.path().join("b/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2 * 2);
    let cells = fs::read_to_string(tmp.path().join("b/savings.csv")).unwrap();
    let mut lines = cells.lines();
    assert_eq!(lines.next(), Some("optimizer,objective,runs,mean_time_savings,mean_cost_savings"));
    let keys: Vec<String> = lines.map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(keys, ["adam,1,2", "adam,3,2", "sign_sgd,1,2", "sign_sgd,3,2"]);
}
