use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> PathBuf {
    root().join("config/fixtures.json")
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn causalkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causalkg"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate_demo(out: &Path, extra: &[&str]) -> Output {
    let fx = fixtures();
    let mut args = vec![
        "--seed-fixtures",
        s(&fx),
        "generate",
        "--concept",
        "Asthma",
        "--concept",
        "HIV",
        "--output-dir",
        s(out),
    ];
    args.extend_from_slice(extra);
    causalkg(&args)
}

fn assert_golden_graphs(out: &Path) {
    for f in ["asthma.json", "hiv.json", "manifest.json"] {
        let got = std::fs::read_to_string(out.join("scripted-demo").join(f)).unwrap();
        assert_eq!(got, golden(&format!("scripted-demo/{f}")), "{f}");
    }
}

#[test]
fn generate_matches_golden_graphs() {
    for extra in [
        &["--concurrency", "1"][..],
        &["--concurrency", "4", "--parallel-concepts", "2"],
    ] {
        let dir = tempfile::tempdir().unwrap();
        let o = generate_demo(dir.path(), extra);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_golden_graphs(dir.path());
        assert!(!dir.path().join("scripted-demo/.resume").exists());
    }
}

#[test]
fn generate_without_concepts_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let o = causalkg(&["--seed-fixtures", s(&fx), "generate", "--output-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no concepts"));
}

#[test]
fn missing_api_key_is_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "concepts = [\"Asthma\"]\n[backends.remote]\nkind = \"openai\"\nmodel = \"m\"\napi_key_env = \"CAUSALKG_TEST_UNSET_KEY\"\n",
    )
    .unwrap();
    let o = causalkg(&["--config", s(&cfg), "generate"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn interrupted_run_resumes_to_golden_output() {
    let dir = tempfile::tempdir().unwrap();
    // the same fixtures without a default answer: the first unscripted prompt fails
    let full: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fixtures()).unwrap()).unwrap();
    let mut broken = full.clone();
    broken.as_object_mut().unwrap().remove("default");
    let broken_path = dir.path().join("broken.json");
    std::fs::write(&broken_path, broken.to_string()).unwrap();
    let out = dir.path().join("out");

    let o = causalkg(&[
        "--seed-fixtures",
        s(&broken_path),
        "generate",
        "--concept",
        "Asthma",
        "--concept",
        "HIV",
        "--output-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let resume = out.join("scripted-demo/.resume");
    assert!(std::fs::read_dir(&resume).unwrap().count() > 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("scripted-demo/manifest.json")).unwrap()).unwrap();
    assert!(!manifest["failed"].as_array().unwrap().is_empty());

    let o = generate_demo(&out, &["--concurrency", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_golden_graphs(&out);
}

fn write_truth(dir: &Path) -> (PathBuf, PathBuf) {
    let concepts = dir.join("concepts.csv");
    let edges = dir.join("edges.csv");
    std::fs::write(
        &concepts,
        "id,name\nC1,Asthma\nC2,HIV Infections\nC3,Dementia\nC4,Immune System Diseases\nC5,Neuroinflammation\n",
    )
    .unwrap();
    std::fs::write(
        &edges,
        "src,dst,relation\nC2,C4,causes\nC4,C5,associated with\nC5,C3,causes\nC2,C3,is a\n",
    )
    .unwrap();
    (concepts, edges)
}

#[test]
fn evaluate_requires_complete_mapping_then_maps_first() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("graphs");
    assert!(generate_demo(&out, &[]).status.success());
    let (tc, te) = write_truth(dir.path());
    let mapping = dir.path().join("mapping.json");
    std::fs::write(&mapping, "{\"Asthma\": \"Asthma\"}").unwrap();
    let graphs = out.join("scripted-demo");
    let reports = dir.path().join("reports");
    let fx = fixtures();
    let base = [
        "--seed-fixtures",
        s(&fx),
        "evaluate",
        "--truth-concepts",
        s(&tc),
        "--truth-edges",
        s(&te),
        "--mapping",
        s(&mapping),
        "--out",
        s(&reports),
    ];

    let mut args = base.to_vec();
    args.push(s(&graphs));
    let o = causalkg(&args);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("Airway Inflammation") && err.contains("Opportunistic Infection"),
        "{err}"
    );

    args.insert(args.len() - 1, "--map-first");
    let o = causalkg(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&mapping).unwrap()).unwrap();
    assert_eq!(m["HIV"], "HIV Infections");
    assert_eq!(m["Dementia"], "Dementia");
    assert_eq!(m["Bronchospasm"], "none");
    assert_eq!(m.as_object().unwrap().len(), 11);

    // HIV -> Dementia runs HIV Infections - Immune System Diseases -
    // Neuroinflammation - Dementia (4 nodes); the is-a shortcut is not walked.
    // Relevant reference edges: C2-C4 and C5-C3.
    let hiv: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("scripted-demo/hiv.eval.json")).unwrap()).unwrap();
    assert_eq!(hiv["n_hit"], 1);
    assert_eq!(hiv["relevant_reference_edges"], 2);
    assert_eq!(hiv["precision"].as_f64().unwrap(), 1.0 / 6.0);
    assert_eq!(hiv["recall"].as_f64().unwrap(), 0.5);
    let hit = hiv["edges"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["outcome"] == "hit")
        .unwrap();
    assert_eq!(
        (hit["src"].as_str(), hit["dst"].as_str(), hit["path_nodes"].as_u64()),
        (Some("HIV"), Some("Dementia"), Some(4))
    );

    // only the root maps and it touches no reference edge
    let asthma: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("scripted-demo/asthma.eval.json")).unwrap())
            .unwrap();
    assert_eq!(
        (asthma["precision"].as_f64(), asthma["recall"].as_f64()),
        (Some(0.0), Some(0.0))
    );

    let summary = std::fs::read_to_string(reports.join("summary.csv")).unwrap();
    assert_eq!(
        summary,
        "model,metric,n,mean,min,max,sd\n\
         scripted-demo,precision,2,0.0833,0.0000,0.1667,0.1179\n\
         scripted-demo,recall,2,0.2500,0.0000,0.5000,0.3536\n"
    );
    assert!(reports.join("scripted-demo/hiv.eval.txt").exists());

    // metrics picks precision/recall up from the reports
    let hiv_report = reports.join("scripted-demo/hiv.eval.json");
    let o = causalkg(&[
        "metrics",
        "--report",
        s(&hiv_report),
        "--sort-by",
        "precision",
        s(&graphs),
    ]);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(
        table
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("scripted-demo,HIV,0.167,0.500,"),
        "{table}"
    );
}

#[test]
fn metrics_table_matches_hand_computation() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate_demo(dir.path(), &[]).status.success());
    let graphs = dir.path().join("scripted-demo");
    let out = dir.path().join("attrs.csv");
    let summary = dir.path().join("summary.csv");
    let o = causalkg(&["metrics", "--out", s(&out), "--summary", s(&summary), s(&graphs)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), golden("metrics.csv"));
    let summary = std::fs::read_to_string(&summary).unwrap();
    // nodes 5 and 6: mean 5.5, sample sd sqrt(0.5)
    assert!(
        summary.contains("scripted-demo,nodes,2,5.5000,5.0000,6.0000,0.7071"),
        "{summary}"
    );

    let o = causalkg(&[
        "metrics",
        "--sort-by",
        "density",
        s(&graphs.join("hiv.json")),
        s(&graphs.join("asthma.json")),
    ]);
    let table = String::from_utf8(o.stdout).unwrap();
    let order: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(order, ["Asthma", "HIV"]);
}

#[test]
fn metrics_without_graphs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = causalkg(&["metrics", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn review_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let scores = root().join("data/reviewer_scores.csv");
    let cfg = root().join("config/sample.toml");
    let out = dir.path().join("review");
    let o = causalkg(&["--config", s(&cfg), "review", "--strict", s(&scores), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["cells.csv", "models.csv", "sorted.csv", "review.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let models = std::fs::read_to_string(out.join("models.csv")).unwrap();
    assert!(models.contains("gpt-4,3.37"), "{models}");

    let single = dir.path().join("single.csv");
    std::fs::write(
        &single,
        "condition,model,reviewer_id,accuracy,comprehensiveness\nAsthma,gpt-4,r1,3,4\n",
    )
    .unwrap();
    let o = causalkg(&["review", s(&single), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("fewer reviewers than expected"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "condition,model,reviewer_id,accuracy,comprehensiveness\nAsthma,gpt-4,r1,3,4\nAsthma,gpt-4,r2,5,4\n",
    )
    .unwrap();
    let o = causalkg(&["review", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = causalkg(&["--config", s(&cfg), "review", "--strict", s(&single), "--out", s(&out)]);
    assert!(o.status.success());
    std::fs::write(
        &single,
        "condition,model,reviewer_id,accuracy,comprehensiveness\nGout,gpt-4,r1,3,4\n",
    )
    .unwrap();
    let o = causalkg(&["--config", s(&cfg), "review", "--strict", s(&single), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn export_formats() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate_demo(dir.path(), &[]).status.success());
    let g = dir.path().join("scripted-demo/hiv.json");
    let dot = causalkg(&["export", s(&g), "--format", "dot"]);
    let dot = String::from_utf8(dot.stdout).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(
        dot.contains("\"Opportunistic Infection\" -> \"Dementia\" [provenance=\"refinement\"]"),
        "{dot}"
    );
    let gml = dir.path().join("hiv.graphml");
    assert!(causalkg(&["export", s(&g), "--format", "graphml", "--out", s(&gml)])
        .status
        .success());
    assert_eq!(std::fs::read_to_string(&gml).unwrap().matches("<edge ").count(), 6);
    let csv = String::from_utf8(causalkg(&["export", s(&g), "--format", "csv"]).stdout).unwrap();
    assert_eq!(csv.lines().count(), 7);
}
