use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eerds"));
    c.env_remove("EERDS_OUTPUT_DIR");
    c
}

fn canonical() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/bipolar.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn validate(v: &serde_json::Value) {
    let schema_path =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/eerds-summary-1.schema.json");
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let msgs: Vec<String> = match compiled.validate(v) {
        Ok(()) => Vec::new(),
        Err(errors) => errors
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect(),
    };
    assert!(msgs.is_empty(), "summary does not match schema: {msgs:?}");
}

#[test]
fn canonical_scenario_passes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = run(&[
            "run",
            canonical().to_str().unwrap(),
            "-o",
            d.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let s = summary(&a);
    validate(&s);
    assert_eq!(s["status"], "ok");
    assert!(s["dual"]["theta_spread"].as_f64().unwrap() <= 1e-8);
    assert!(s["direct"]["cross_validation"]["pass"].as_bool().unwrap());
    assert_eq!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(b.join("summary.json")).unwrap()
    );
    for f in [
        "dual_fields.csv",
        "dual_trace.csv",
        "direct_fields.csv",
        "evolve_monitor.csv",
        "evolve_snapshots.csv",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    let monitor = fs::read_to_string(a.join("evolve_monitor.csv")).unwrap();
    assert!(monitor.starts_with("t,entropy,energy,charge,distance,theta_spread\n"));
}

#[test]
fn stage_toggle_limits_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        canonical().to_str().unwrap(),
        "-o",
        tmp.path().to_str().unwrap(),
        "--stages",
        "dual",
        "--dat",
    ]);
    assert!(out.status.success());
    let mut files: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "dual_fields.csv",
            "dual_fields.dat",
            "dual_trace.csv",
            "dual_trace.dat",
            "summary.json"
        ]
    );
    let s = summary(tmp.path());
    validate(&s);
    assert!(s["electro"].is_null() && s["direct"].is_null() && s["evolve"].is_null());
    assert!(fs::read_to_string(tmp.path().join("dual_trace.dat"))
        .unwrap()
        .starts_with("# iteration k grad_norm step\n"));
}

const INFEASIBLE: &str = r#"
name = "low-energy"
[mesh]
nodes = 51
[boundary]
left = { type = "robin", omega = 1.0 }
right = { type = "robin", omega = 1.0 }
[entropy]
model = "boltzmann"
charges = [-1.0, 1.0]
[constraints]
energy = 0.5
charge = 2.0
"#;

#[test]
fn infeasible_energy_exits_nonzero_with_minimal_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("low.toml");
    fs::write(&path, INFEASIBLE).unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "run",
        path.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let s = summary(&out_dir);
    validate(&s);
    assert_eq!(s["status"], "infeasible");
    assert!(s["message"].as_str().unwrap().contains("infeasible"));
    assert!((s["electro"]["minimal_energy"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    // dual alone still reports V
    let out = run(&[
        "run",
        path.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
        "--stages",
        "dual",
    ]);
    assert!(!out.status.success());
    assert_eq!(summary(&out_dir)["status"], "infeasible");
}

#[test]
fn parse_errors_name_the_location() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, INFEASIBLE.replace("nodes = 51", "nodes = \"many\"")).unwrap();
    let out = run(&[
        "run",
        path.to_str().unwrap(),
        "-o",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("nodes"), "{err}");
}

#[test]
fn output_dir_from_environment_and_batch_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = tmp.path().join("scen");
    fs::create_dir(&scen).unwrap();
    let small = fs::read_to_string(canonical())
        .unwrap()
        .replace("nodes = 401", "nodes = 81");
    fs::write(scen.join("one.toml"), &small).unwrap();
    fs::write(
        scen.join("two.toml"),
        small.replace("energy = 5.0", "energy = 7.0"),
    )
    .unwrap();
    let env_out = tmp.path().join("env-out");
    let out = bin()
        .env("EERDS_OUTPUT_DIR", &env_out)
        .args([
            "run",
            "--batch",
            scen.to_str().unwrap(),
            "--stages",
            "electro,dual",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let one = summary(&env_out.join("one"));
    let two = summary(&env_out.join("two"));
    assert_eq!(one["energy"], 5.0);
    assert_eq!(two["energy"], 7.0);
    assert!(two["dual"]["theta"].as_f64().unwrap() > one["dual"]["theta"].as_f64().unwrap());
}

#[test]
fn selfcheck_passes_and_reports_injected_failure() {
    let out = run(&["selfcheck"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("young_bound") && !text.contains("FAIL"));

    let out = run(&["selfcheck", "--inject-tolerance", "legendre_round_trip=-1"]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let failing: Vec<&str> = text.lines().filter(|l| l.ends_with("FAIL")).collect();
    assert_eq!(failing.len(), 1);
    assert!(failing[0].starts_with("legendre_round_trip"));
}
