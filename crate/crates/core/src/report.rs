//! Report rendering: a versioned JSON envelope that round-trips, and flat
//! tables rendered as RFC 4180 CSV or markdown.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::Evaluation;
use crate::fault::{EttrReport, IntervalChoice, IntervalNote};
use crate::oracle::faults::MonteCarloEstimate;
use crate::oracle::verify::VerifyReport;
use crate::plan::ParallelPlan;
use crate::profile::RooflineAssessment;
use crate::tuner::{Candidate, SweepRow, TuneResult};

pub const SCHEMA_VERSION: u32 = 1;

const GB: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Markdown,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            other => Err(Error::input(format!("unknown output format `{other}`"))),
        }
    }
}

/// ETTR of one plan: closed form, fixed-point form and an optional replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EttrResult {
    pub closed_form: EttrReport,
    pub exact: EttrReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: String,
    pub rows: Vec<SweepRow>,
}

/// Every result the command line can emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "result", rename_all = "kebab-case")]
pub enum Report {
    Eval(Evaluation),
    Tune(TuneResult),
    Sweep(SweepResult),
    Ettr(EttrResult),
    Interval(IntervalChoice),
    Verify(VerifyReport),
    Roofline(Vec<RooflineAssessment>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: Report,
}

/// Header plus rows of preformatted cells.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Full precision for CSV, rounded for markdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Precision {
    Full,
    Display,
}

fn num(x: f64, digits: usize, prec: Precision) -> String {
    match prec {
        Precision::Full => format!("{x}"),
        Precision::Display => format!("{x:.digits$}"),
    }
}

fn opt_num(x: Option<f64>, digits: usize, prec: Precision) -> String {
    x.map(|v| num(v, digits, prec)).unwrap_or_default()
}

fn percent(x: Option<f64>, prec: Precision) -> String {
    match (x, prec) {
        (None, _) => String::new(),
        (Some(v), Precision::Full) => format!("{v}"),
        (Some(v), Precision::Display) => format!("{:.2}%", v * 100.0),
    }
}

const PLAN_COLS: [&str; 8] = ["t", "c", "p", "e", "d", "m_bs", "g_bs", "v"];

fn plan_cells(plan: Option<&ParallelPlan>) -> Vec<String> {
    match plan {
        Some(p) => [p.t, p.c, p.p, p.e, p.d, p.m_bs, p.g_bs, p.v].iter().map(u32::to_string).collect(),
        None => vec![String::new(); PLAN_COLS.len()],
    }
}

/// Columns of the step-tuning table: parallelism, optimization, memory,
/// throughput, step time and the key-stage breakdown.
const CANDIDATE_COLS: [&str; 18] = [
    "rank",
    "t",
    "c",
    "p",
    "e",
    "d",
    "m_bs",
    "g_bs",
    "v",
    "optimization",
    "Memory(GB)",
    "TFLOPS",
    "T_step",
    "T_cal",
    "T_TP",
    "T_CP",
    "T_EP",
    "T_PP",
];
const CANDIDATE_TAIL: [&str; 2] = ["T_DP", "T_update"];
const E2E_COLS: [&str; 3] = ["I_ckpt", "ETTR", "T_e2e"];

fn candidate_header(e2e: bool) -> Table {
    let mut cols: Vec<&str> = CANDIDATE_COLS.iter().chain(CANDIDATE_TAIL.iter()).copied().collect();
    if e2e {
        cols.extend(E2E_COLS);
    }
    Table::new(&cols)
}

fn candidate_row(rank: usize, ev: &Evaluation, e2e: Option<&Candidate>, with_e2e: bool, prec: Precision) -> Vec<String> {
    let c = &ev.cost;
    let mut row = vec![rank.to_string()];
    row.extend(plan_cells(Some(&ev.plan)));
    row.push(format!("{} {}", ev.optimization, ev.features));
    row.push(num(ev.memory.m_peak / GB, 2, prec));
    row.push(num(c.tflops, 1, prec));
    for x in [c.t_step, c.t_cal, c.t_tp, c.t_cp, c.t_ep, c.t_pp, c.t_dp, c.t_update] {
        row.push(num(x, 4, prec));
    }
    if with_e2e {
        let ann = e2e.and_then(|c| c.e2e.as_ref());
        row.push(ann.map(|a| a.interval.to_string()).unwrap_or_default());
        row.push(percent(ann.and_then(|a| a.ettr), prec));
        row.push(opt_num(ann.and_then(|a| a.t_e2e), 1, prec));
    }
    row
}

fn candidate_as_eval(c: &Candidate) -> Evaluation {
    Evaluation {
        plan: c.plan,
        optimization: c.optimization.clone(),
        features: c.features.clone(),
        cost: c.cost.clone(),
        memory: c.memory.clone(),
        warnings: c.warnings.clone(),
    }
}

fn table_for(report: &Report, prec: Precision) -> Table {
    match report {
        Report::Eval(ev) => {
            let mut t = candidate_header(false);
            t.rows.push(candidate_row(1, ev, None, false, prec));
            t
        }
        Report::Tune(r) => {
            let e2e = r.candidates.iter().any(|c| c.e2e.is_some());
            let mut t = candidate_header(e2e);
            for c in &r.candidates {
                t.rows.push(candidate_row(c.rank, &candidate_as_eval(c), Some(c), e2e, prec));
            }
            t
        }
        Report::Sweep(s) => {
            let mut cols = vec![s.param.as_str()];
            cols.extend(PLAN_COLS);
            cols.extend([
                "optimization",
                "T_step",
                "TFLOPS",
                "Memory(GB)",
                "ETTR",
                "I_ckpt",
                "T_e2e",
                "linearity",
                "note",
            ]);
            let mut t = Table::new(&cols);
            for r in &s.rows {
                let mut row = vec![r.value.clone()];
                row.extend(plan_cells(r.plan.as_ref()));
                row.push(r.optimization.clone().unwrap_or_default());
                row.push(opt_num(r.t_step, 4, prec));
                row.push(opt_num(r.tflops, 1, prec));
                row.push(opt_num(r.m_peak.map(|m| m / GB), 2, prec));
                row.push(percent(r.ettr, prec));
                row.push(r.interval.map(|i| i.to_string()).unwrap_or_default());
                row.push(opt_num(r.t_e2e, 1, prec));
                row.push(opt_num(r.linearity, 4, prec));
                row.push(r.note.clone().unwrap_or_default());
                t.rows.push(row);
            }
            t
        }
        Report::Ettr(e) => {
            let mut t = Table::new(&["form", "I_ckpt", "ETTR", "T_tr", "T_in", "T_e2e", "F_f", "u_b", "std_error"]);
            for (name, r) in [("closed-form", &e.closed_form), ("exact", &e.exact)] {
                t.rows.push(vec![
                    name.to_string(),
                    r.interval.to_string(),
                    percent(Some(r.ettr), prec),
                    num(r.t_tr, 1, prec),
                    num(r.t_in, 1, prec),
                    num(r.t_e2e, 1, prec),
                    num(r.failures, 2, prec),
                    num(r.u_b, 2, prec),
                    String::new(),
                ]);
            }
            if let Some(mc) = &e.monte_carlo {
                let mut row = vec!["monte-carlo".to_string(), e.exact.interval.to_string()];
                row.push(percent(Some(mc.mean), prec));
                row.extend([String::new(), String::new(), String::new()]);
                row.push(num(mc.mean_failures, 2, prec));
                row.push(String::new());
                row.push(num(mc.std_error, 6, prec));
                t.rows.push(row);
            }
            t
        }
        Report::Interval(c) => {
            let mut t = Table::new(&["I_ckpt", "continuous", "ETTR", "T_e2e", "note"]);
            let note = match c.note {
                IntervalNote::Optimal => "optimal",
                IntervalNote::NoFailures => "no-failures",
                IntervalNote::NoOptimum => "no-optimum",
            };
            t.rows.push(vec![
                c.interval.to_string(),
                opt_num(c.continuous, 3, prec),
                percent(c.ettr, prec),
                opt_num(c.t_e2e, 1, prec),
                note.to_string(),
            ]);
            t
        }
        Report::Verify(v) => {
            let mut t = Table::new(&["suite", "passed", "cases", "seconds", "detail"]);
            for s in &v.suites {
                t.rows.push(vec![
                    s.name.clone(),
                    s.passed.to_string(),
                    s.cases.to_string(),
                    num(s.seconds, 3, prec),
                    s.detail.clone(),
                ]);
            }
            t
        }
        Report::Roofline(points) => {
            let mut t = Table::new(&[
                "label",
                "intensity",
                "achieved(TFLOPS)",
                "theoretical(TFLOPS)",
                "modified(TFLOPS)",
                "efficiency",
                "headroom",
                "outlier",
            ]);
            for p in points {
                t.rows.push(vec![
                    p.label.clone(),
                    num(p.intensity, 2, prec),
                    num(p.achieved / 1e12, 1, prec),
                    num(p.theoretical_bound / 1e12, 1, prec),
                    num(p.modified_bound / 1e12, 1, prec),
                    num(p.efficiency, 3, prec),
                    num(p.headroom, 3, prec),
                    p.outlier.to_string(),
                ]);
            }
            t
        }
    }
}

/// The report as a table, full precision (the CSV content).
pub fn to_table(report: &Report) -> Table {
    table_for(report, Precision::Full)
}

pub fn render_csv(table: &Table) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Invariant(format!("csv: {e}"));
    w.write_record(&table.header).map_err(io)?;
    for row in &table.rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
}

pub fn render_markdown(table: &Table) -> String {
    let esc = |s: &str| s.replace('|', "\\|");
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", table.header.iter().map(|h| esc(h)).collect::<Vec<_>>().join(" | "));
    let _ = writeln!(out, "|{}|", vec!["---"; table.header.len()].join("|"));
    for row in &table.rows {
        let _ = writeln!(out, "| {} |", row.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
    }
    out
}

pub fn render_json(report: &Report) -> Result<String> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        report: report.clone(),
    };
    serde_json::to_string_pretty(&env).map_err(|e| Error::Invariant(e.to_string()))
}

/// Parses JSON produced by [`render_json`].
pub fn parse_report(text: &str) -> Result<Report> {
    let env: Envelope = crate::config::parse_json(text, "report")?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::config(format!("unsupported report schema_version {}", env.schema_version)));
    }
    Ok(env.report)
}

pub fn render(report: &Report, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => render_json(report).map(|mut s| {
            s.push('\n');
            s
        }),
        OutputFormat::Csv => render_csv(&to_table(report)),
        OutputFormat::Markdown => Ok(render_markdown(&table_for(report, Precision::Display))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{ettr_closed_form_report, ettr_exact, CheckpointPolicy, FaultModel};
    use std::collections::BTreeMap;

    fn ettr() -> Report {
        let f = FaultModel::with_repair_time(0.005, 16, 134.41);
        let p = CheckpointPolicy {
            interval: 10,
            t_save: 4.19,
            steps: 953_675,
            t_step: 27.83,
        };
        Report::Ettr(EttrResult {
            closed_form: ettr_closed_form_report(&f, &p).unwrap(),
            exact: ettr_exact(&f, &p).unwrap(),
            monte_carlo: None,
        })
    }

    #[test]
    fn json_round_trips() {
        let r = ettr();
        let text = render_json(&r).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("\"kind\": \"ettr\""));
        assert_eq!(parse_report(&text).unwrap(), r);
    }

    #[test]
    fn empty_tune_is_header_only_csv() {
        let r = Report::Tune(TuneResult {
            candidates: Vec::new(),
            evaluated: 0,
            feasible: 0,
            rejections: BTreeMap::new(),
        });
        let csv = render(&r, OutputFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("rank,t,c,p,e,d,m_bs,g_bs,v,optimization,Memory(GB),TFLOPS,T_step"));
    }

    #[test]
    fn csv_quotes_fields() {
        let mut t = Table::new(&["a", "b"]);
        t.rows.push(vec!["x,y".into(), "say \"hi\"".into()]);
        assert_eq!(render_csv(&t).unwrap(), "a,b\r\n\"x,y\",\"say \"\"hi\"\"\"\r\n");
    }

    #[test]
    fn markdown_escapes_pipes() {
        let mut t = Table::new(&["a"]);
        t.rows.push(vec!["x|y".into()]);
        assert_eq!(render_markdown(&t), "| a |\n|---|\n| x\\|y |\n");
    }

    #[test]
    fn format_names() {
        assert_eq!("md".parse::<OutputFormat>().unwrap(), OutputFormat::Markdown);
        assert!("xml".parse::<OutputFormat>().is_err());
    }
}
