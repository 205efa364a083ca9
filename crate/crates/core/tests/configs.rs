use std::path::{Path, PathBuf};

use stepcost::config::{load_config, parse_config, RunConfig};
use stepcost::evaluate::{evaluate, EvalContext};
use stepcost::report::{parse_report, render, to_table, OutputFormat, Report};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_configs() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| !p.ends_with("roofline-points.json"))
        .collect();
    out.sort();
    out
}

#[test]
fn every_shipped_config_loads_and_echoes() {
    let paths = run_configs();
    assert!(paths.len() >= 8);
    for path in paths {
        let cfg = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let echoed = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&echoed).unwrap();
        assert_eq!(back, cfg, "{}", path.display());
    }
}

#[test]
fn eval_report_round_trips_through_json() {
    let cfg = load_config(&configs_dir().join("llama2-70b-eval.json")).unwrap();
    let ctx = EvalContext {
        arch: cfg.model().unwrap(),
        hw: cfg.hardware().unwrap(),
        profile: cfg.profile().unwrap(),
        settings: &cfg.settings,
    };
    let eval = evaluate(&ctx, cfg.plan().unwrap(), &cfg.optimization).unwrap();
    assert!(eval.cost.t_step > 0.0 && eval.cost.tflops > 0.0);
    let report = Report::Eval(eval);
    let json = render(&report, OutputFormat::Json).unwrap();
    assert_eq!(parse_report(&json).unwrap(), report);
    assert_eq!(render(&report, OutputFormat::Json).unwrap(), json);

    let csv = render(&report, OutputFormat::Csv).unwrap();
    let table = to_table(&report);
    assert_eq!(csv.lines().count(), 1 + table.rows.len());
    let md = render(&report, OutputFormat::Markdown).unwrap();
    assert!(md.lines().nth(1).unwrap().starts_with("|---") || md.lines().nth(1).unwrap().starts_with("| ---"));
}

#[test]
fn inline_sections_need_no_files() {
    let text = r#"{
        "schema_version": 1,
        "fault": {"r_f_per_node_day": 0.01, "u_b": 60, "n_nodes": 32, "T_save": 2, "S": 1000000, "T_step": 28}
    }"#;
    let cfg = parse_config(text, Path::new("."), "inline").unwrap();
    let fault = cfg.fault().unwrap();
    assert_eq!(fault.model.n_nodes, 32);
    assert!(cfg.model().is_err());
}

#[test]
fn unknown_fields_and_versions_are_rejected() {
    let base = Path::new(".");
    let bad_field = r#"{"schema_version": 1, "fault": {"r_f": 0.01, "u_b": 60, "n_nodes": 2, "T_save": 1, "S": 10, "T_step": 1, "colour": 3}}"#;
    assert!(parse_config(bad_field, base, "x").is_err());
    assert!(parse_config(r#"{"schema_version": 99}"#, base, "x").is_err());
    let err = parse_config("{\n  \"schema_version\": 1,\n  oops\n}", base, "cfg.json").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}
