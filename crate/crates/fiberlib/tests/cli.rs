//! End-to-end tests of the `fiber` binary: exit codes, output shapes, the
//! env-var tolerance override, and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn fiber(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiber"))
        .args(args)
        .env_remove("FIBERLIB_TOL")
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn read_value(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn represent_weight_module_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle.json");
    let report = dir.path().join("report.json");
    let out = fiber(&[
        "represent",
        "--input",
        fixture("weight_module.json").to_str().unwrap(),
        "--depth",
        "6",
        "--net",
        "16",
        "--out",
        bundle.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_of(&out).contains("max_defect 0"));
    let rep = read_value(&report);
    assert_eq!(rep["max_defect"], serde_json::json!(0.0));
    let b = read_value(&bundle);
    assert_eq!(b["ambient"]["depth"], serde_json::json!(6));
    let fibers = b["fibers"].as_object().unwrap();
    assert!(fibers.contains_key("a") && fibers.contains_key("b"));
    assert_eq!(fibers["a"].as_array().unwrap().len(), 1);
}

// Fiber spans list one image per generator, so the zero module keeps two
// vectors per atom; they must all be zero.
#[test]
fn represent_zero_module_embeds_generators_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle.json");
    let out = fiber(&[
        "represent",
        "--input",
        fixture("zero_module.json").to_str().unwrap(),
        "--depth",
        "6",
        "--net",
        "16",
        "--out",
        bundle.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let b = read_value(&bundle);
    for (_, span) in b["fibers"].as_object().unwrap() {
        let vectors = span.as_array().unwrap();
        assert_eq!(vectors.len(), 2);
        for w in vectors {
            assert!(w
                .as_array()
                .unwrap()
                .iter()
                .all(|c| c == &serde_json::json!(0)));
        }
    }
}

#[test]
fn represent_reports_tolerance_failure_as_exit_1() {
    let out = fiber(&[
        "represent",
        "--input",
        fixture("smooth_module.json").to_str().unwrap(),
        "--net",
        "64",
    ]);
    assert_eq!(exit_code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tolerance"), "stderr: {err}");
}

#[test]
fn represent_smooth_module_within_loose_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = fiber(&[
        "represent",
        "--input",
        fixture("smooth_module.json").to_str().unwrap(),
        "--net",
        "64",
        "--tol",
        "1e-2",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let d = read_value(&report)["max_defect"].as_f64().unwrap();
    assert!(d > 0.0 && d <= 1e-2, "defect {d}");
}

#[test]
fn env_var_overrides_default_tolerance() {
    let out = Command::new(env!("CARGO_BIN_EXE_fiber"))
        .args([
            "represent",
            "--input",
            fixture("smooth_module.json").to_str().unwrap(),
            "--net",
            "64",
        ])
        .env("FIBERLIB_TOL", "1e-2")
        .output()
        .expect("binary runs");
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_input_is_exit_2() {
    let out = fiber(&[
        "represent",
        "--input",
        fixture("malformed.json").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let missing = fiber(&["prphi", "--map", "/nonexistent/map.json", "--fn", "/nonexistent/f.json"]);
    assert_eq!(exit_code(&missing), 2);
}

#[test]
fn check_all_suites_pass_on_default_seed() {
    let out = fiber(&["check", "--suite", "all", "--seed", "42", "--cases", "10"]);
    assert_eq!(exit_code(&out), 0, "{}", stdout_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("suite all passed (seed 42)"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn check_injected_fault_is_caught_and_named() {
    let out = fiber(&[
        "check",
        "--suite",
        "norms",
        "--seed",
        "7",
        "--cases",
        "10",
        "--inject",
        "triangle-violation",
    ]);
    assert_eq!(exit_code(&out), 1);
    let text = stdout_of(&out);
    assert!(text.contains("FAIL norms.triangle"), "{text}");
    assert!(text.contains("failing instance"), "{text}");
}

#[test]
fn check_rejects_unknown_suite_and_fault() {
    assert_eq!(exit_code(&fiber(&["check", "--suite", "nosuch"])), 2);
    assert_eq!(
        exit_code(&fiber(&["check", "--inject", "gremlins"])),
        2
    );
    assert_eq!(exit_code(&fiber(&["check", "--cases", "0"])), 2);
}

#[test]
fn prphi_averages_along_fibers() {
    let out = fiber(&[
        "prphi",
        "--map",
        fixture("divergence_map.json").to_str().unwrap(),
        "--fn",
        fixture("divergence_fn.json").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(v["values"]["0"], serde_json::json!(3));
}

#[test]
fn prphi_grow_prints_exact_unbounded_values() {
    let out = fiber(&["prphi", "--grow", "5"]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout_of(&out);
    for k in 1..=5 {
        assert!(
            text.contains(&format!("Pr_phi(f_{k}) = {k}")),
            "missing line for k={k}: {text}"
        );
    }
    assert_eq!(exit_code(&fiber(&["prphi", "--grow", "0"])), 2);
}

#[test]
fn pullback_precomposes_with_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    std::fs::write(&g, r#"{ "values": { "0": "7/2" } }"#).unwrap();
    let out = fiber(&[
        "pullback",
        "--map",
        fixture("divergence_map.json").to_str().unwrap(),
        "--fn",
        g.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    for atom in ["1", "2", "3", "rest"] {
        assert_eq!(v["values"][atom], serde_json::json!("7/2"));
    }
}

#[test]
fn lift_routes_null_atoms_to_positive_values() {
    let out = fiber(&[
        "lift",
        "--measure",
        fixture("lift_measure.json").to_str().unwrap(),
        "--fn",
        fixture("lift_fn.json").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(v["values"]["a"], serde_json::json!(5));
    assert_eq!(v["values"]["b"], serde_json::json!(5));
}

#[test]
fn embed_polytope_norm_exactly() {
    let out = fiber(&[
        "embed",
        "--fiber",
        fixture("fiber_dim1.json").to_str().unwrap(),
        "--depth",
        "6",
        "--net",
        "8",
    ]);
    assert_eq!(exit_code(&out), 0);
    let first_line = stdout_of(&out);
    let v: serde_json::Value =
        serde_json::from_str(first_line.split("defect").next().unwrap()).unwrap();
    assert_eq!(v["epsilon"], serde_json::json!(0.0));
    assert_eq!(v["exact"], serde_json::json!(true));
}

#[test]
fn embed_round_fiber_has_certified_positive_defect() {
    let dir = tempfile::tempdir().unwrap();
    let outfile = dir.path().join("emb.json");
    let out = fiber(&[
        "embed",
        "--fiber",
        fixture("fiber_lp2.json").to_str().unwrap(),
        "--net",
        "64",
        "--tol",
        "1e-2",
        "--out",
        outfile.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_value(&outfile);
    let eps = v["epsilon"].as_f64().unwrap();
    assert!(eps > 0.0 && eps <= 1e-2, "epsilon {eps}");
    assert_eq!(v["exact"], serde_json::json!(false));
}

// Parsing then serializing a fixture reproduces it value-for-value.
#[test]
fn json_round_trip_is_identity_on_fixtures() {
    use fiberlib::measure::{FunctionClass, Measure, PointMap};
    use fiberlib::modules::ModulePresentation;
    use fiberlib::norms::FiberNorm;

    for name in ["weight_module.json", "zero_module.json", "smooth_module.json"] {
        let v = read_value(&fixture(name));
        let p = ModulePresentation::from_json(&v).unwrap();
        assert_eq!(p.to_json(), v, "{name}");
    }

    let map_v = read_value(&fixture("divergence_map.json"));
    let m = Measure::from_json(&map_v["measure"]).unwrap();
    assert_eq!(m.to_json(), map_v["measure"]);
    let phi = PointMap::from_json(&map_v, m.space()).unwrap();
    assert_eq!(phi.to_json()["assign"], map_v["assign"]);

    let fn_v = read_value(&fixture("divergence_fn.json"));
    let f = FunctionClass::from_json(&fn_v, &m).unwrap();
    assert_eq!(f.to_json(), fn_v);

    let lm_v = read_value(&fixture("lift_measure.json"));
    let lm = Measure::from_json(&lm_v).unwrap();
    assert_eq!(lm.to_json(), lm_v);

    for name in ["fiber_dim1.json", "fiber_lp2.json"] {
        let v = read_value(&fixture(name));
        let n = FiberNorm::from_json(&v).unwrap();
        assert_eq!(n.to_json(), v, "{name}");
    }
}

#[test]
fn identical_flags_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let summary = dir.path().join(format!("summary{run}.json"));
        let bundle = dir.path().join(format!("bundle{run}.json"));
        let check = fiber(&[
            "check",
            "--suite",
            "modules",
            "--seed",
            "9",
            "--cases",
            "20",
            "--out",
            summary.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&check), 0);
        let rep = fiber(&[
            "represent",
            "--input",
            fixture("weight_module.json").to_str().unwrap(),
            "--depth",
            "6",
            "--net",
            "16",
            "--out",
            bundle.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&rep), 0);
        files.push((std::fs::read(&summary).unwrap(), std::fs::read(&bundle).unwrap()));
    }
    assert_eq!(files[0].0, files[1].0, "check output differs between runs");
    assert_eq!(files[0].1, files[1].1, "represent output differs between runs");
}
