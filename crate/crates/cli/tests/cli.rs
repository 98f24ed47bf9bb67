use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipshadow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn path(p: &PathBuf) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn builtin_f0_atlas_is_certified() {
    let out = run(&["verify-atlas"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("certified"));
}

#[test]
fn atlas_files_round_trip_through_verification() {
    let out = run(&[
        "verify-atlas",
        "--map",
        path(&fixture("f0_map.json")),
        "--atlas",
        path(&fixture("f0_atlas.json")),
        "--json",
    ]);
    assert_eq!(code(&out), 0);
    let doc = json(&out);
    assert_eq!(doc["result"]["constants"]["LL"], "109");
    assert_eq!(doc["result"]["transitions"]["d"], "1/1024");
}

#[test]
fn identity_atlas_fails_with_norm_violations() {
    let out = run(&[
        "verify-atlas",
        "--map",
        path(&fixture("identity_map.json")),
        "--atlas",
        path(&fixture("identity_atlas.json")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("violation: ‖B⁻¹‖ = 1 > λ = 1/2"));
}

#[test]
fn truncated_atlas_is_a_usage_error() {
    let out = run(&["verify-atlas", "--atlas", path(&fixture("truncated_atlas.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["sweep", "--d", "not-a-number"])), 2);
    assert_eq!(code(&run(&["shadow", "/nonexistent/traj.csv"])), 2);
    // above the threshold of f0
    assert_eq!(code(&run(&["sweep", "--d", "1/16"])), 2);
}

#[test]
fn case3_fixture_is_shadowed_within_109d() {
    let out = run(&["shadow", path(&fixture("case3.csv")), "--json"]);
    assert_eq!(code(&out), 0);
    let doc = json(&out);
    assert_eq!(doc["result"]["pipeline"]["case"]["Case3"]["k0"], 30);
    assert_eq!(doc["result"]["shadow"]["bound_factor"], "109");
    assert_eq!(doc["result"]["shadow"]["within_bound"], true);
}

#[test]
fn case3_fixture_also_passes_the_generic_pipeline() {
    let out = run(&[
        "shadow",
        "--map",
        path(&fixture("f0_map.json")),
        "--atlas",
        path(&fixture("f0_atlas.json")),
        path(&fixture("case3.csv")),
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("itinerary G0 -> G1"));
}

#[test]
fn near_zero_fixture_of_f_uses_the_rest_point() {
    let out = run(&["shadow", "--map", "f", path(&fixture("rest_f.csv"))]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("pipeline: rest point"), "{text}");
    assert!(text.contains("bound = 44d"), "{text}");
}

#[test]
fn defect_above_threshold_is_reported_as_d_too_large() {
    let out = run(&["shadow", path(&fixture("d_too_large.csv")), "--json"]);
    assert_eq!(code(&out), 1);
    assert_eq!(json(&out)["error"]["cause"], "DTooLarge");
}

#[test]
fn reports_are_deterministic_apart_from_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&["shadow", path(&fixture("case3.csv")), "--out", path(out_dir)]);
        assert_eq!(code(&out), 0);
    }
    let read = |p: &PathBuf| -> Value {
        let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(p.join("shadow.json")).unwrap()).unwrap();
        doc.as_object_mut().unwrap().remove("metadata");
        doc.as_object_mut().unwrap().remove("config");
        doc
    };
    assert_eq!(read(&a), read(&b));
    let steps = std::fs::read_to_string(a.join("shadow_steps.csv")).unwrap();
    assert!(steps.starts_with("k,x_k,z_k,error"));
    assert_eq!(steps.lines().count(), 62);
}

#[test]
fn generated_trajectories_feed_the_shadower_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate",
        "--kind",
        "crossing",
        "--d",
        "2^-14",
        "--lead",
        "12",
        "--tail",
        "9",
        "--out",
        path(&dir.path().to_path_buf()),
    ]);
    // `2^-14` is not a rational literal
    assert_eq!(code(&out), 2);
    let out = run(&[
        "generate",
        "--kind",
        "crossing",
        "--d",
        "1/16384",
        "--lead",
        "12",
        "--tail",
        "9",
        "--seed",
        "5",
        "--out",
        path(&dir.path().to_path_buf()),
    ]);
    assert_eq!(code(&out), 0);
    let traj = dir.path().join("traj.csv");
    let shadow = json(&run(&["shadow", path(&traj), "--json"]));
    let oracle = json(&run(&["oracle", path(&traj), "--json"]));
    let parse = |v: &Value| lipshadow::scalar::parse_scalar(v.as_str().unwrap()).unwrap();
    let constructive = parse(&shadow["result"]["shadow"]["max_error"]);
    let optimal = parse(&oracle["result"]["oracle"]["rho_star"]);
    assert!(optimal <= constructive);
    assert_eq!(oracle["result"]["oracle"]["method"], "exact_breakpoints");
}

#[test]
fn batch_specs_write_one_file_each() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("batch.json");
    std::fs::write(
        &spec,
        r#"[
            {"kind": "perturbed", "x0": "1/100", "T": 30, "d_target": "1/32768", "seed": 1},
            {"kind": "constant", "map": "f", "x0": "1/2", "T": 5, "d_target": "0"}
        ]"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["generate", "--spec", path(&spec), "--out", path(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("traj_0.csv").exists());
    assert!(out_dir.join("traj_1.csv").exists());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("generate.json")).unwrap()).unwrap();
    assert_eq!(report["result"].as_array().unwrap().len(), 2);
}

#[test]
fn small_sweep_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep",
        "--d",
        "1/1024,1/65536",
        "--trials",
        "3",
        "-T",
        "16",
        "--jobs",
        "1",
        "--out",
        path(&dir.path().to_path_buf()),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("d,trial,rho_star,ratio,method"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn quick_reproduction_passes_and_a_corrupted_row_fails() {
    let out = run(&["reproduce-paper", "--quick", "--no-time-limits", "--json"]);
    assert_eq!(code(&out), 0);
    let doc = json(&out);
    assert_eq!(doc["passed"], true);
    assert_eq!(doc["result"]["criteria"].as_array().unwrap().len(), 8);
    assert!(doc["result"]["criteria"][0].get("elapsed_s").is_none());

    let out = run(&["reproduce-paper", "--quick", "--no-time-limits", "--expect", "LL=110"]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("[FAIL] item 2"), "{text}");
    assert!(text.contains("failed items: [2]"), "{text}");
}
