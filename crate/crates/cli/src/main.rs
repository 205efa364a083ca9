//! `stepcost`: evaluate, tune and sweep training plans from a JSON config.
//!
//! Exit codes: 0 success, 2 infeasible or no candidate, 1 usage or input error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use stepcost::config::{load_config, parse_json, RunConfig};
use stepcost::evaluate::{evaluate, EvalContext};
use stepcost::fault::{ettr_closed_form_report, ettr_exact, optimal_ckpt_interval};
use stepcost::oracle::pipeline::{simulate_pipeline, PipelineInstance};
use stepcost::oracle::verify::{run_all, run_suite, VerifyOptions, VerifyReport, SCHEMA_VERSION, SUITES};
use stepcost::oracle::{simulate_faults, MonteCarloOptions};
use stepcost::profile::{assess_roofline, RooflineFit, RooflinePoint};
use stepcost::report::{render, EttrResult, OutputFormat, Report, SweepResult};
use stepcost::tuner::{sweep, sweep_fault, tune_e2e, tune_step, SweepParam};
use stepcost::Error;

#[derive(Parser)]
#[command(name = "stepcost", version, about = "Analytical cost model and strategy tuner for distributed LLM pretraining")]
struct Cli {
    /// Output format: json, csv or markdown. Overrides the config.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Cost and memory of the configured plan.
    Eval(ConfigArg),
    /// Search the configured space.
    Tune {
        #[command(subcommand)]
        mode: TuneMode,
    },
    /// Best candidate per value of one parameter.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Parameter to vary; overrides the config's sweep section.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// ETTR and end-to-end time of the configured plan.
    Ettr {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Checkpoint interval; defaults to the config, then the optimum.
        #[arg(long)]
        interval: Option<u64>,
        /// Also replay this many Monte Carlo trials.
        #[arg(long)]
        trials: Option<u32>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Optimal checkpoint interval.
    Interval(ConfigArg),
    /// Run the oracle suites.
    Verify {
        /// Run only this suite.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo trials per configuration.
        #[arg(long)]
        trials: Option<u32>,
    },
    /// Chrome trace of the pipeline schedule.
    Trace(TraceArgs),
    /// Compare profiled operators against the theoretical and modified rooflines.
    Roofline {
        #[command(flatten)]
        cfg: ConfigArg,
        /// JSON file with `fit`, `points` and optional `threshold`.
        #[arg(long)]
        points: PathBuf,
    },
    /// Validate a config and echo it with every default filled in.
    Check(ConfigArg),
}

#[derive(Subcommand)]
enum TuneMode {
    /// Minimize step time.
    Step {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 4)]
        top_k: usize,
    },
    /// Minimize end-to-end time including failures and checkpoints.
    E2e {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 4)]
        top_k: usize,
    },
}

#[derive(Args)]
struct TraceArgs {
    /// Derive the schedule from the configured plan.
    #[arg(long, conflicts_with_all = ["p", "m_b", "fwd", "bwd"])]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<u32>,
    #[arg(long, default_value_t = 1)]
    v: u32,
    /// Layers per chunk.
    #[arg(long, default_value_t = 1)]
    layers: u32,
    #[arg(long = "m-b")]
    m_b: Option<u32>,
    /// Per-layer forward time.
    #[arg(long)]
    fwd: Option<f64>,
    /// Per-layer backward time.
    #[arg(long)]
    bwd: Option<f64>,
    /// Point-to-point hop time.
    #[arg(long, default_value_t = 0.0)]
    pp: f64,
}

#[derive(Deserialize)]
struct RooflineInput {
    fit: RooflineFit,
    points: Vec<RooflinePoint>,
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn default_threshold() -> f64 {
    0.8
}

/// Outcome of a command: text to print and whether the result is empty or infeasible.
struct Output {
    text: String,
    infeasible: bool,
}

fn ctx(cfg: &RunConfig) -> Result<EvalContext<'_>, Error> {
    Ok(EvalContext {
        arch: cfg.model()?,
        hw: cfg.hardware()?,
        profile: cfg.profile()?,
        settings: &cfg.settings,
    })
}

fn format_for(cli: Option<&str>, cfg: Option<&RunConfig>) -> Result<OutputFormat, Error> {
    match cli {
        Some(f) => f.parse(),
        None => Ok(cfg.map(|c| c.output).unwrap_or_default()),
    }
}

fn emit(report: &Report, format: OutputFormat, infeasible: bool) -> Result<Output, Error> {
    Ok(Output {
        text: render(report, format)?,
        infeasible,
    })
}

/// Step time and node count of the configured plan, from the fault section or an evaluation.
fn plan_step(cfg: &RunConfig) -> Result<(f64, u64), Error> {
    let fault = cfg.fault()?;
    let nodes_from_plan = |c: &RunConfig| -> Result<u64, Error> { Ok(c.plan()?.nodes(c.hardware()?.gpus_per_node)) };
    match fault.t_step {
        Some(t) => {
            let nodes = match fault.n_nodes {
                Some(n) => n,
                None => nodes_from_plan(cfg)?,
            };
            Ok((t, nodes))
        }
        None => {
            let ev = evaluate(&ctx(cfg)?, cfg.plan()?, &cfg.optimization)?;
            Ok((ev.cost.t_step, fault.n_nodes.unwrap_or(ev.plan.nodes(cfg.hardware()?.gpus_per_node))))
        }
    }
}

fn run(cli: Cli) -> Result<Output, Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    }
    let fmt = cli.format.as_deref();
    match cli.command {
        Command::Eval(a) => {
            let cfg = load_config(&a.config)?;
            let ev = evaluate(&ctx(&cfg)?, cfg.plan()?, &cfg.optimization)?;
            emit(&Report::Eval(ev), format_for(fmt, Some(&cfg))?, false)
        }
        Command::Tune { mode } => {
            let (path, top_k, e2e) = match mode {
                TuneMode::Step { cfg, top_k } => (cfg.config, top_k, false),
                TuneMode::E2e { cfg, top_k } => (cfg.config, top_k, true),
            };
            let cfg = load_config(&path)?;
            let c = ctx(&cfg)?;
            let result = if e2e {
                tune_e2e(&c, cfg.space()?, &cfg.fault()?.e2e(), top_k)?
            } else {
                tune_step(&c, cfg.space()?, top_k)?
            };
            let empty = result.candidates.is_empty();
            emit(&Report::Tune(result), format_for(fmt, Some(&cfg))?, empty)
        }
        Command::Sweep { cfg: a, param, values } => {
            let cfg = load_config(&a.config)?;
            let (name, values) = match (param, &cfg.sweep) {
                (Some(p), _) => (p, values),
                (None, Some(s)) => (s.param.clone(), if values.is_empty() { s.values.clone() } else { values }),
                (None, None) => return Err(Error::Input("give --param or a sweep section".into())),
            };
            if values.is_empty() {
                return Err(Error::Input("sweep needs at least one value".into()));
            }
            let p: SweepParam = name.parse()?;
            let fault_only = matches!(
                p,
                SweepParam::FailureRate
                    | SweepParam::RepairTime
                    | SweepParam::SaveTime
                    | SweepParam::Nodes
                    | SweepParam::Interval
            ) && cfg.space.is_none();
            let rows = if fault_only {
                let (t_step, nodes) = plan_step(&cfg)?;
                sweep_fault(&cfg.fault()?.e2e(), t_step, nodes, p, &values)?
            } else {
                let spec = cfg.fault.as_ref().map(|f| f.e2e());
                sweep(&ctx(&cfg)?, cfg.space()?, spec.as_ref(), p, &values)?
            };
            let empty = rows.iter().all(|r| r.t_step.is_none());
            emit(&Report::Sweep(SweepResult { param: name, rows }), format_for(fmt, Some(&cfg))?, empty)
        }
        Command::Ettr {
            cfg: a,
            interval,
            trials,
            seed,
        } => {
            let cfg = load_config(&a.config)?;
            let fault = cfg.fault()?;
            let (t_step, nodes) = plan_step(&cfg)?;
            let model = fault.model_on(nodes);
            let interval = match interval.or(fault.interval) {
                Some(i) => i,
                None => optimal_ckpt_interval(&model, &fault.policy(t_step, 1))?.interval,
            };
            let policy = fault.policy(t_step, interval);
            let monte_carlo = trials
                .map(|trials| {
                    simulate_faults(
                        &model,
                        &policy,
                        &MonteCarloOptions {
                            trials,
                            seed,
                            rollback: true,
                        },
                    )
                })
                .transpose()?;
            let result = EttrResult {
                closed_form: ettr_closed_form_report(&model, &policy)?,
                exact: ettr_exact(&model, &policy)?,
                monte_carlo,
            };
            emit(&Report::Ettr(result), format_for(fmt, Some(&cfg))?, false)
        }
        Command::Interval(a) => {
            let cfg = load_config(&a.config)?;
            let fault = cfg.fault()?;
            let (t_step, nodes) = plan_step(&cfg)?;
            let choice = optimal_ckpt_interval(&fault.model_on(nodes), &fault.policy(t_step, 1))?;
            emit(&Report::Interval(choice), format_for(fmt, Some(&cfg))?, false)
        }
        Command::Verify { suite, seed, trials } => {
            let defaults = VerifyOptions::default();
            let opts = VerifyOptions {
                seed: seed.unwrap_or(defaults.seed),
                trials: trials.unwrap_or(defaults.trials),
            };
            let report = match suite {
                None => run_all(&opts),
                Some(name) => {
                    let s = run_suite(&name, &opts).map_err(|_| {
                        Error::Input(format!("unknown suite `{name}`; known: {}", SUITES.join(", ")))
                    })?;
                    VerifyReport {
                        schema_version: SCHEMA_VERSION,
                        passed: s.passed,
                        suites: vec![s],
                    }
                }
            };
            let passed = report.passed;
            let out = emit(&Report::Verify(report), format_for(fmt, None)?, false)?;
            if passed {
                Ok(out)
            } else {
                print!("{}", out.text);
                Err(Error::Invariant("one or more verify suites failed".into()))
            }
        }
        Command::Trace(t) => {
            let inst = match &t.config {
                Some(path) => {
                    let cfg = load_config(path)?;
                    let plan = cfg.plan()?;
                    let ev = evaluate(&ctx(&cfg)?, plan, &cfg.optimization)?;
                    PipelineInstance {
                        p: plan.p,
                        v: plan.v,
                        l: plan.layers_per_chunk(cfg.model()?.layers)?,
                        m_b: plan.micro_batches()?,
                        fwd: ev.cost.t_fwd,
                        bwd: ev.cost.t_bwd,
                        pp: ev.cost.t_pp_hop,
                    }
                }
                None => {
                    let need = |name: &str| Error::Input(format!("trace needs --config or --{name}"));
                    PipelineInstance {
                        p: t.p.ok_or_else(|| need("p"))?,
                        v: t.v,
                        l: t.layers,
                        m_b: t.m_b.ok_or_else(|| need("m-b"))?,
                        fwd: t.fwd.ok_or_else(|| need("fwd"))?,
                        bwd: t.bwd.ok_or_else(|| need("bwd"))?,
                        pp: t.pp,
                    }
                }
            };
            let (_, trace) = simulate_pipeline(&inst)?;
            let text = serde_json::to_string_pretty(&trace.to_chrome_json())
                .map_err(|e| Error::Invariant(e.to_string()))?;
            Ok(Output {
                text: text + "\n",
                infeasible: false,
            })
        }
        Command::Roofline { cfg: a, points } => {
            let cfg = load_config(&a.config)?;
            let text = fs::read_to_string(&points)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", points.display())))?;
            let input: RooflineInput = parse_json(&text, &points.display().to_string())?;
            let out = assess_roofline(&input.points, cfg.hardware()?, &input.fit, input.threshold);
            emit(&Report::Roofline(out), format_for(fmt, Some(&cfg))?, false)
        }
        Command::Check(a) => {
            let cfg = load_config(&a.config)?;
            let text = serde_json::to_string_pretty(&cfg).map_err(|e| Error::Invariant(e.to_string()))?;
            Ok(Output {
                text: text + "\n",
                infeasible: false,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{}", out.text);
            if out.infeasible {
                eprintln!("no feasible candidate");
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
