//! Every subcommand, driven through `run_from` with an in-memory writer.

use std::collections::BTreeMap;
use std::path::Path;

use bmbe::kb::{load_kb, Feature, ElicitedEntry, ElicitedTables, FeatureSpec, KbSchema, Record, RecordValue, SchemaDisease};
use bmbe::patient::PatientProfile;

use bmbe_service::cli::{resolve_kb, run_from};
use serde_json::Value;

fn cli(args: &[&str]) -> String {
    try_cli(args).unwrap_or_else(|e| panic!("{args:?}: {e:#}"))
}

fn try_cli(args: &[&str]) -> anyhow::Result<String> {
    let mut out = Vec::new();
    run_from(std::iter::once("bmbe").chain(args.iter().copied()), &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_run(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("run");
    cli(&["run", "--kb", "separable", "--per-disease", "2", "--canonical", "--out", p(&out)]);
    out
}

#[test]
fn help_and_version_go_to_the_writer() {
    let help = cli(&["--help"]);
    for sub in ["run", "patients", "eval", "kb", "policy", "serve"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
    assert!(cli(&["--version"]).contains(env!("CARGO_PKG_VERSION")));
    assert!(try_cli(&["frobnicate"]).is_err());
}

#[test]
fn run_writes_the_full_output_folder() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let line = cli(&["run", "--kb", "separable", "--per-disease", "2", "--out", p(&out)]);
    assert!(line.starts_with("20 sessions:"), "{line}");
    for f in ["results.json", "patients.jsonl", "metrics.csv", "sweep.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_dir(out.join("traces")).unwrap().count(), 20);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["created_at"].is_string());
    assert_eq!(manifest["cohort"]["n_patients"], 20);
    assert_eq!(manifest["kb_hash"], resolve_kb("separable").unwrap().content_hash());
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 20);

    let canon = dir.path().join("canon");
    cli(&["run", "--kb", "separable", "--per-disease", "1", "--canonical", "--out", p(&canon)]);
    let manifest = std::fs::read_to_string(canon.join("manifest.json")).unwrap();
    assert!(!manifest.contains("created_at"));
    assert!(try_cli(&["run", "--kb", "nowhere", "--out", p(&canon)]).is_err());
    assert!(try_cli(&["run", "--kb", "separable", "--tau", "2", "--out", p(&canon)]).is_err());
}

#[test]
fn run_accepts_a_patient_file_and_a_persona() {
    let dir = tempfile::tempdir().unwrap();
    let patients = dir.path().join("patients.jsonl");
    cli(&["patients", "sample", "--kb", "twin", "--per-disease", "3", "--seed", "4", "--out", p(&patients)]);
    let out = dir.path().join("run");
    let line = cli(&[
        "run",
        "--kb",
        "twin",
        "--patients",
        p(&patients),
        "--sensor",
        "patterns",
        "--persona",
        "overanxious",
        "--policy",
        "focused",
        "--canonical",
        "--out",
        p(&out),
    ]);
    assert!(line.starts_with("6 sessions:"), "{line}");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["persona"], "overanxious");
    assert_eq!(manifest["sensor"], "patterns");
}

#[test]
fn patients_sample_and_stratify() {
    let dir = tempfile::tempdir().unwrap();
    let sampled = cli(&["patients", "sample", "--kb", "separable", "--per-disease", "2", "--seed", "9"]);
    let profiles: Vec<PatientProfile> = sampled.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(profiles.len(), 20);
    assert_eq!(sampled, cli(&["patients", "sample", "--kb", "separable", "--per-disease", "2", "--seed", "9"]));

    let all = dir.path().join("all.jsonl");
    std::fs::write(&all, &sampled).unwrap();
    let sub = cli(&["patients", "stratify", "--input", p(&all), "--n", "12", "--seed", "1"]);
    let subset: Vec<PatientProfile> = sub.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(subset.len(), 12);
    assert!(subset.iter().all(|s| profiles.iter().any(|p| p.id == s.id)));
    assert!(try_cli(&["patients", "stratify", "--input", p(&all), "--n", "21"]).is_err());
}

#[test]
fn eval_metrics_sweep_strata_failures() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(dir.path());

    let metrics = cli(&["eval", "metrics", "--results", p(&run)]);
    assert_eq!(metrics, std::fs::read_to_string(run.join("metrics.csv")).unwrap());
    let at = cli(&["eval", "metrics", "--results", p(&run.join("results.json")), "--tau", "0.0"]);
    let row: Vec<&str> = at.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "0");
    assert_eq!(row[2], "1", "every session commits at tau 0");

    let sweep = cli(&["eval", "sweep", "--results", p(&run), "--grid", "0.2,0.4"]);
    assert_eq!(sweep.lines().count(), 3);
    let json: Value = serde_json::from_str(&cli(&["eval", "sweep", "--results", p(&run), "--json"])).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 20);
    assert!(json["tau_star"].is_number());
    assert_eq!(
        cli(&["eval", "sweep", "--results", p(&run)]),
        std::fs::read_to_string(run.join("sweep.csv")).unwrap()
    );

    let strata: Value = serde_json::from_str(&cli(&["eval", "strata", "--results", p(&run), "--kb", "separable"])).unwrap();
    assert!(strata.is_array() || strata.is_object());

    let failures: Value =
        serde_json::from_str(&cli(&["eval", "failures", "--results", p(&run), "--kb", "separable"])).unwrap();
    assert!(failures["summary"].is_object());
    assert!(failures["tags"].as_object().unwrap().is_empty(), "the separable run is all correct");
    assert!(try_cli(&["eval", "metrics", "--results", p(&dir.path().join("none"))]).is_err());
}

#[test]
fn eval_scaling_and_cross_kb() {
    let scaling = cli(&["eval", "scaling", "--kb", "separable", "--sizes", "1,4", "--seeds", "0,1", "--tmin", "4", "--tmax", "8"]);
    let lines: Vec<&str> = scaling.lines().collect();
    assert_eq!(lines[0], "size,seed,n_patients,top1");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,0,") && lines[1].ends_with(",1"), "{}", lines[1]);
    assert!(try_cli(&["eval", "scaling", "--kb", "separable", "--sizes", "11"]).is_err());

    let same: Value = serde_json::from_str(&cli(&[
        "eval",
        "cross-kb",
        "--native",
        "separable",
        "--foreign",
        "separable",
        "--per-disease",
        "1",
    ]))
    .unwrap();
    assert_eq!(same["mean_feature_coverage"], 1.0);
    assert!(same["warning"].is_null());
}

#[test]
fn kb_build_import_stats_match() {
    let dir = tempfile::tempdir().unwrap();
    let schema = KbSchema {
        diseases: vec![
            SchemaDisease { id: "d1".into(), name: "One".into() },
            SchemaDisease { id: "d2".into(), name: "Two".into() },
        ],
        features: vec![FeatureSpec::Single(Feature::binary("f", "fever", "Fever?"))],
        negated_features: vec![],
    };
    let schema_path = dir.path().join("schema.json");
    std::fs::write(&schema_path, serde_json::to_string(&schema).unwrap()).unwrap();
    let mut lines = String::new();
    for (d, v) in [("d1", "yes"), ("d1", "yes"), ("d2", "no")] {
        let r = Record {
            disease_id: d.into(),
            values: BTreeMap::from([("f".to_owned(), RecordValue::Single(v.into()))]),
        };
        lines.push_str(&serde_json::to_string(&r).unwrap());
        lines.push('\n');
    }
    let records = dir.path().join("records.jsonl");
    std::fs::write(&records, lines).unwrap();
    let built = dir.path().join("built.json");
    let report: Value = serde_json::from_str(&cli(&[
        "kb",
        "build",
        "--schema",
        p(&schema_path),
        "--records",
        p(&records),
        "--out",
        p(&built),
    ]))
    .unwrap();
    let kb = load_kb(&built).unwrap();
    assert_eq!(report["kb_hash"], kb.content_hash());
    assert_eq!(report["n_diseases"], 2);
    assert!((kb.likelihood("d1", "f", "yes").unwrap() - 101.0 / 102.0).abs() < 1e-12);

    let mut tables: ElicitedTables = BTreeMap::new();
    tables.insert("d1".into(), BTreeMap::from([("f".to_owned(), ElicitedEntry::ProbYes { prob_yes: 0.8 })]));
    tables.insert("d2".into(), BTreeMap::from([("f".to_owned(), ElicitedEntry::ProbYes { prob_yes: 1.4 })]));
    let tables_path = dir.path().join("tables.json");
    std::fs::write(&tables_path, serde_json::to_string(&tables).unwrap()).unwrap();
    let imported = dir.path().join("imported.json");
    let report: Value = serde_json::from_str(&cli(&[
        "kb",
        "import-elicited",
        "--tables",
        p(&tables_path),
        "--out",
        p(&imported),
    ]))
    .unwrap();
    assert_eq!(report["accepted"], 1);
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);
    assert!(load_kb(&imported).is_ok());

    let stats: Value = serde_json::from_str(&cli(&["kb", "stats", "--kb", p(&built)])).unwrap();
    assert!(stats["mean_pair_kl"].as_f64().unwrap() > 0.0);
    let csv = cli(&["kb", "stats", "--kb", "separable", "--csv"]);
    assert_eq!(csv.lines().next(), Some("feature_id,variance,range"));
    assert_eq!(csv.lines().count(), 1 + resolve_kb("separable").unwrap().n_features());

    let m: Value = serde_json::from_str(&cli(&["kb", "match", "--a", "separable", "--b", "separable"])).unwrap();
    assert_eq!(m["coverage_a_in_b"], 1.0);
}

#[test]
fn policy_score_reads_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(dir.path());
    let trace = std::fs::read_dir(run.join("traces")).unwrap().next().unwrap().unwrap().path();
    let csv = cli(&["policy", "score", "--session", p(&trace), "--kb", "separable"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("feature_id,eig_global,eig_focus,score"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(!rows.is_empty());
    for r in &rows {
        let g: f64 = r[1].parse().unwrap();
        assert!(g >= 0.0);
        if r[2].is_empty() {
            assert_eq!(r[1], r[3], "global policy scores by global EIG");
        }
    }
    let focused = cli(&["policy", "score", "--session", p(&trace), "--kb", "separable", "--policy", "focused"]);
    assert_eq!(focused.lines().count(), csv.lines().count());

    let id = trace.file_stem().unwrap().to_str().unwrap();
    let sessions = dir.path().join("data").join("sessions");
    std::fs::create_dir_all(&sessions).unwrap();
    std::fs::copy(&trace, sessions.join(format!("{id}.jsonl"))).unwrap();
    let by_id = cli(&[
        "policy",
        "score",
        "--session",
        id,
        "--kb",
        "separable",
        "--data-dir",
        p(&dir.path().join("data")),
    ]);
    assert_eq!(by_id, csv);
}

#[test]
fn serve_rejects_bad_kb_arguments_before_binding() {
    assert!(try_cli(&["serve", "--kb", "no-equals-sign"]).is_err());
    assert!(try_cli(&["serve", "--kb", "x=/definitely/not/here.json"]).is_err());
}
