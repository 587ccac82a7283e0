use omnipred::cli::main_with;
use omnipred::model::{Dataset, HypothesisClass, Predictor, Transformation};
use omnipred::rank::is_rank_preserving;
use omnipred::simulate::ProbTable;
use omnipred::verify::synthetic_instance;
use std::path::Path;
use std::process::Command;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(dir: &Path, args: &[&str]) -> Out {
    let log = dir.join("runs.jsonl");
    let mut argv = vec!["omnipred".to_string(), "--log".into(), log.display().to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with(argv, &mut out, &mut err);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn write_synthetic(dir: &Path) {
    let inst = synthetic_instance(3).unwrap();
    let mut csv = Vec::new();
    inst.d.write_csv(&mut csv).unwrap();
    std::fs::write(dir.join("d.csv"), csv).unwrap();
    std::fs::write(dir.join("c.json"), serde_json::to_string(&inst.c_class).unwrap()).unwrap();
    std::fs::write(
        dir.join("tasks.json"),
        r#"[{"name":"l1","objective":{"form":"l1","scale":0.5}},
            {"name":"parity","objective":{"form":"squared","scale":0.5},
             "constraints":[{"fairness":{"kind":"statistical_parity","group":1,"alpha":0.05}}]}]"#,
    )
    .unwrap();
    std::fs::write(
        dir.join("task.json"),
        r#"{"name":"budget","objective":{"form":"squared"},"constraints":[{"budget":0.4}]}"#,
    )
    .unwrap();
}

#[test]
fn demo_g1_prints_fixture_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["demo", "--fixture", "g1"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("computed 1/2 = 0.5"), "{}", o.stdout);
    assert!(o.stdout.contains("computed 9/16 = 0.5625"), "{}", o.stdout);
    assert!(o.stdout.contains("verify at eps=0.05: fails"));
}

#[test]
fn audit_on_exported_g2_prints_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["demo", "--fixture", "g2", "--export", &p(d, "g2")]).code, 0);
    let o = run(
        d,
        &[
            "audit",
            "--dataset",
            &p(d, "g2/dataset.csv"),
            "--predictor",
            &p(d, "g2/predictor.json"),
            "--kind",
            "grpmc",
            "--hypotheses",
            &p(d, "g2/hypotheses.json"),
            "--exact",
        ],
    );
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v[0]["total_violation"], 0.0);
    assert_eq!(v[0]["exact_violation"], "0");
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_1() {
    let o = Command::new(env!("CARGO_BIN_EXE_omnipred")).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage:") && err.contains("verify"), "{err}");
}

#[test]
fn malformed_task_is_a_parse_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["demo", "--fixture", "g1", "--export", &p(d, "g1")]).code, 0);
    assert_eq!(
        run(d, &["probtable", "--predictor", &p(d, "g1/predictor.json"), "--dataset", &p(d, "g1/dataset.csv"), "--out", &p(d, "pt.json")]).code,
        0
    );
    std::fs::write(d.join("bad.json"), "{\"name\": \"x\",\n \"objective\": }").unwrap();
    let o = run(
        d,
        &["solve", "--probtable", &p(d, "pt.json"), "--task", &p(d, "bad.json"), "--mode", "randomized", "--eps", "0.1", "--out", &p(d, "t.json")],
    );
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("line 2, column"), "{}", o.stderr);
}

#[test]
fn infeasible_solve_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["demo", "--fixture", "g1", "--export", &p(d, "g1")]);
    run(d, &["probtable", "--predictor", &p(d, "g1/predictor.json"), "--dataset", &p(d, "g1/dataset.csv"), "--out", &p(d, "pt.json")]);
    std::fs::write(d.join("neg.json"), r#"{"objective":{"form":"l1"},"constraints":[{"budget":-0.5}]}"#).unwrap();
    let o = run(
        d,
        &["solve", "--probtable", &p(d, "pt.json"), "--task", &p(d, "neg.json"), "--mode", "randomized", "--eps", "0.1", "--out", &p(d, "t.json")],
    );
    assert_eq!(o.code, 2, "{}{}", o.stdout, o.stderr);
    assert!(!d.join("t.json").exists());
}

fn pipeline(d: &Path) -> Vec<String> {
    let steps: Vec<Vec<String>> = vec![
        vec!["train", "--dataset", &p(d, "d.csv"), "--kind", "grpma,grpcal", "--eps", "0.02", "--hypotheses", &p(d, "c.json"), "--out", &p(d, "p.json"), "--seed", "7"],
        vec!["monotonize", "--predictor", &p(d, "p.json"), "--dataset", &p(d, "d.csv"), "--eps", "0.05", "--delta", "0.1", "--out", &p(d, "p2.json")],
        vec!["probtable", "--predictor", &p(d, "p.json"), "--dataset", &p(d, "d.csv"), "--out", &p(d, "pt.json")],
        vec!["probtable", "--predictor", &p(d, "p.json"), "--dataset", &p(d, "d.csv"), "--samples", "5000", "--seed", "3", "--out", &p(d, "pt_est.json")],
        vec!["solve", "--probtable", &p(d, "pt.json"), "--task", &p(d, "task.json"), "--mode", "randomized", "--eps", "0.1", "--out", &p(d, "tau.json")],
        vec!["postprocess", "--tau", &p(d, "tau.json"), "--probtable", &p(d, "pt.json"), "--task", &p(d, "task.json"), "--mode", "randomized", "--out", &p(d, "tau_rp.json")],
        vec![
            "verify", "--dataset", &p(d, "d.csv"), "--predictor", &p(d, "p.json"), "--tasks", &p(d, "tasks.json"), "--hypotheses", &p(d, "c.json"),
            "--eps", "0.12", "--family", "deterministic", "--jobs", "2",
        ],
    ]
    .into_iter()
    .map(|s| s.into_iter().map(String::from).collect())
    .collect();
    steps
        .iter()
        .map(|args| {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let o = run(d, &args);
            assert_eq!(o.code, 0, "{args:?}: {}", o.stderr);
            o.stdout
        })
        .collect()
}

#[test]
fn pipeline_outputs_round_trip_and_repeat_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_synthetic(d);
    let first = pipeline(d);
    let files = ["p.json", "p2.json", "pt.json", "pt_est.json", "tau.json", "tau_rp.json"];
    let saved: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(d.join(f)).unwrap()).collect();
    let second = pipeline(d);
    assert_eq!(first, second);
    for (f, bytes) in files.iter().zip(&saved) {
        assert_eq!(&std::fs::read(d.join(f)).unwrap(), bytes, "{f} changed between runs");
    }

    Predictor::read_json(d.join("p.json")).unwrap();
    Predictor::read_json(d.join("p2.json")).unwrap();
    ProbTable::read_json(d.join("pt.json")).unwrap();
    ProbTable::read_json(d.join("pt_est.json")).unwrap();
    Transformation::read_json(d.join("tau.json")).unwrap();
    let rp = Transformation::read_json(d.join("tau_rp.json")).unwrap();
    assert!(is_rank_preserving(&rp));
    Dataset::read_csv(d.join("d.csv")).unwrap();
    HypothesisClass::read_json(d.join("c.json")).unwrap();

    let verify: serde_json::Value = serde_json::from_str(&first[6]).unwrap();
    assert_eq!(verify.as_array().unwrap().len(), 2);
    assert_eq!(verify[0]["task"], "l1");
    assert_eq!(verify[1]["task"], "parity");
}

#[test]
fn every_run_appends_a_log_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_synthetic(d);
    pipeline(d);
    let log = std::fs::read_to_string(d.join("runs.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0]["command"], "train");
    assert_eq!(lines[0]["seed"], 7);
    let hash = lines[0]["inputs"][p(d, "d.csv")].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let verify = &lines[6];
    assert_eq!(verify["command"], "verify");
    let resolved = verify["resolved_constraints"].as_array().unwrap();
    assert_eq!(resolved.len(), 1);
    assert_eq!(resolved[0]["task"], "parity");
    assert_eq!(resolved[0]["constraints"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_order_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_synthetic(d);
    run(d, &["train", "--dataset", &p(d, "d.csv"), "--kind", "grpma,grpcal", "--eps", "0.02", "--hypotheses", &p(d, "c.json"), "--out", &p(d, "p.json")]);
    let outs: Vec<String> = ["1", "4"]
        .iter()
        .map(|j| {
            run(
                d,
                &[
                    "verify", "--dataset", &p(d, "d.csv"), "--predictor", &p(d, "p.json"), "--tasks", &p(d, "tasks.json"), "--hypotheses",
                    &p(d, "c.json"), "--eps", "0.12", "--family", "randomized", "--action-grid", "0,0.25,0.5,0.75,1", "--jobs", j,
                ],
            )
            .stdout
        })
        .collect();
    assert!(!outs[0].is_empty());
    assert_eq!(outs[0], outs[1]);
}
