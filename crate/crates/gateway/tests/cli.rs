use std::path::Path;
use std::process::Command;

fn vrlab(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_vrlab")).env("VRLAB_DATA_DIR", dir).args(args).output().unwrap();
    assert!(out.status.success(), "vrlab {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn create_simulate_analyze_export_import() {
    let data = tempfile::tempdir().unwrap();
    let d = data.path();
    assert_eq!(vrlab(d, &["panel", "seed"]).trim(), "approved 242 workers");
    assert_eq!(vrlab(d, &["create", "--study", "study3"]).trim(), "study3-crowd");
    vrlab(d, &["activate", "study3-crowd"]);
    let posting = vrlab(d, &["post", "study3-crowd", "--reward-cents", "500"]);
    assert!(posting.contains("\"open_duration_days\":7"));
    let sim = vrlab(d, &["simulate", "--experiment", "study3-crowd", "--agents", "12", "--seed", "3"]);
    assert_eq!(sim.trim(), "12 sessions, 12 completed, 0 abandoned");
    let status = vrlab(d, &["status", "study3-crowd"]);
    assert!(status.contains("12 sessions") && status.contains("SurveyComplete=12"), "{status}");

    let report: serde_json::Value =
        serde_json::from_str(&vrlab(d, &["analyze", "study3-crowd", "--measure", "zone1_share", "--json"])).unwrap();
    assert_eq!(report["groups"].as_array().unwrap().len(), 4);
    let text = vrlab(d, &["analyze", "study3-crowd", "--measure", "presence.presence"]);
    assert!(text.contains("presence"));

    let out = tempfile::tempdir().unwrap();
    vrlab(d, &["export", "study3-crowd", "--out", out.path().to_str().unwrap()]);
    let other = tempfile::tempdir().unwrap();
    assert_eq!(vrlab(other.path(), &["import", out.path().to_str().unwrap()]).trim(), "study3-crowd");
    let again = tempfile::tempdir().unwrap();
    vrlab(other.path(), &["export", "study3-crowd", "--out", again.path().to_str().unwrap()]);
    for entry in std::fs::read_dir(out.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(out.path().join(&name)).unwrap(), std::fs::read(again.path().join(&name)).unwrap());
    }
}

#[test]
fn bad_input_fails_with_a_message() {
    let data = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vrlab")).env("VRLAB_DATA_DIR", data.path()).args(["activate", "missing"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment missing"));
}
