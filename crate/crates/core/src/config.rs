//! Run configuration: JSON file with inline or file-referenced model,
//! hardware and profile, plus the plan, search space and fault inputs.
//! Loading converts every unit to SI and fills every default, so the
//! resolved [`RunConfig`] can be echoed back as the full set of inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::arch::ModelArchitecture;
use crate::error::{Error, Result};
use crate::evaluate::Settings;
use crate::fault::{steps_from_tokens, CheckpointPolicy, FaultModel, DEFAULT_MIX, DEFAULT_RECOVERY, SECONDS_PER_DAY};
use crate::optim::OptimizationSet;
use crate::plan::ParallelPlan;
use crate::profile::{HardwareFile, HardwareSpec, ProfileDb, ProfileFile};
use crate::report::OutputFormat;
use crate::tuner::{E2eSpec, SearchSpace};

pub const SCHEMA_VERSION: u32 = 1;

/// A section given inline or as a path (string) relative to the config file.
type Source = serde_json::Value;

/// Search-space overrides; unset dimensions take the power-of-two defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceFile {
    t: Option<Vec<u32>>,
    c: Option<Vec<u32>>,
    p: Option<Vec<u32>>,
    e: Option<Vec<u32>>,
    d: Option<Vec<u32>>,
    m_bs: Option<Vec<u32>>,
    v: Option<Vec<u32>>,
    g_n: u64,
    g_bs: u32,
    #[serde(default)]
    optimizations: Vec<OptimizationSet>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultFile {
    #[serde(alias = "r_f")]
    r_f_per_node_day: f64,
    /// Single repair time; replaces the three-way mixture.
    u_b: Option<f64>,
    u_bc: Option<f64>,
    u_bp: Option<f64>,
    u_bj: Option<f64>,
    mix: Option<[f64; 3]>,
    #[serde(default)]
    u0: f64,
    #[serde(alias = "N_nodes")]
    n_nodes: Option<u64>,
    #[serde(rename = "T_save")]
    t_save: f64,
    #[serde(rename = "I_ckpt")]
    interval: Option<u64>,
    #[serde(rename = "S")]
    steps: Option<u64>,
    tokens: Option<f64>,
    #[serde(rename = "T_step")]
    t_step: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    param: String,
    values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema_version: u32,
    model: Option<Source>,
    hardware: Option<Source>,
    profile: Option<Source>,
    #[serde(default)]
    settings: Settings,
    plan: Option<ParallelPlan>,
    optimization: Option<OptimizationSet>,
    space: Option<Source>,
    fault: Option<FaultFile>,
    sweep: Option<SweepFile>,
    #[serde(default)]
    output: OutputFormat,
}

/// Fault inputs in SI units with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub model: FaultModel,
    /// Failure rate per node per second.
    pub r_f_per_second: f64,
    /// Node count pinned by the config; otherwise derived from the plan.
    pub n_nodes: Option<u64>,
    #[serde(rename = "T_save")]
    pub t_save: f64,
    #[serde(rename = "I_ckpt")]
    pub interval: Option<u64>,
    #[serde(rename = "S")]
    pub steps: u64,
    #[serde(rename = "T_step")]
    pub t_step: Option<f64>,
}

impl FaultSpec {
    /// Fault model on `n_nodes` unless the config pins the count.
    pub fn model_on(&self, n_nodes: u64) -> FaultModel {
        FaultModel {
            n_nodes: self.n_nodes.unwrap_or(n_nodes),
            ..self.model.clone()
        }
    }

    pub fn policy(&self, t_step: f64, interval: u64) -> CheckpointPolicy {
        CheckpointPolicy {
            interval,
            t_save: self.t_save,
            steps: self.steps,
            t_step,
        }
    }

    pub fn e2e(&self) -> E2eSpec {
        E2eSpec {
            fault: self.model.clone(),
            t_save: self.t_save,
            steps: self.steps,
            interval: self.interval,
            n_nodes: self.n_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<String>,
}

/// Fully resolved inputs of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: Option<ModelArchitecture>,
    pub hardware: Option<HardwareSpec>,
    pub profile: Option<ProfileDb>,
    pub settings: Settings,
    pub plan: Option<ParallelPlan>,
    pub optimization: OptimizationSet,
    pub space: Option<SearchSpace>,
    pub fault: Option<FaultSpec>,
    pub sweep: Option<SweepSpec>,
    pub output: OutputFormat,
}

fn missing(what: &str) -> Error {
    Error::config(format!("config has no `{what}` section"))
}

impl RunConfig {
    pub fn model(&self) -> Result<&ModelArchitecture> {
        self.model.as_ref().ok_or_else(|| missing("model"))
    }
    pub fn hardware(&self) -> Result<&HardwareSpec> {
        self.hardware.as_ref().ok_or_else(|| missing("hardware"))
    }
    pub fn profile(&self) -> Result<&ProfileDb> {
        self.profile.as_ref().ok_or_else(|| missing("profile"))
    }
    pub fn plan(&self) -> Result<&ParallelPlan> {
        self.plan.as_ref().ok_or_else(|| missing("plan"))
    }
    pub fn space(&self) -> Result<&SearchSpace> {
        self.space.as_ref().ok_or_else(|| missing("space"))
    }
    pub fn fault(&self) -> Result<&FaultSpec> {
        self.fault.as_ref().ok_or_else(|| missing("fault"))
    }
}

/// Parses JSON, reporting the line and column of the first error.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.split(" at line ").next().unwrap_or(&msg);
        Error::config(format!("{origin}: line {}, column {}: {msg}", e.line(), e.column()))
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

fn resolve<T: DeserializeOwned>(section: &str, src: Source, base: &Path) -> Result<T> {
    match src {
        serde_json::Value::String(p) => {
            let path = base.join(PathBuf::from(p));
            parse_json(&read(&path)?, &path.display().to_string())
        }
        inline => serde_json::from_value(inline).map_err(|e| Error::config(format!("section `{section}`: {e}"))),
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, &path.display().to_string())
}

/// Parses config text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path, origin: &str) -> Result<RunConfig> {
    let raw: ConfigFile = parse_json(text, origin)?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(Error::config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            raw.schema_version
        )));
    }
    let model: Option<ModelArchitecture> = raw.model.map(|s| resolve("model", s, base)).transpose()?;
    let hardware: Option<HardwareSpec> = raw
        .hardware
        .map(|s| resolve("hardware", s, base))
        .transpose()?
        .map(|f: HardwareFile| HardwareSpec::from(&f));
    let profile: Option<ProfileDb> = raw
        .profile
        .map(|s| resolve("profile", s, base))
        .transpose()?
        .map(|f: ProfileFile| ProfileDb::from(&f));
    if let Some(m) = &model {
        m.validate()?;
    }
    if let Some(h) = &hardware {
        h.validate()?;
    }
    if let Some(p) = &profile {
        p.validate()?;
    }
    if let (Some(plan), Some(m)) = (&raw.plan, &model) {
        plan.validate(m)?;
    }
    let optimization = raw.optimization.unwrap_or_else(OptimizationSet::baseline);
    optimization.validate()?;

    let space = match raw.space {
        None => None,
        Some(src) => {
            let s: SpaceFile = resolve("space", src, base)?;
            let arch = model.as_ref().ok_or_else(|| missing("model"))?;
            let per_node = hardware.as_ref().ok_or_else(|| missing("hardware"))?.gpus_per_node;
            let d = SearchSpace::defaults(arch, per_node, s.g_n, s.g_bs);
            let space = SearchSpace {
                t: s.t.unwrap_or(d.t),
                c: s.c.unwrap_or(d.c),
                p: s.p.unwrap_or(d.p),
                e: s.e.unwrap_or(d.e),
                d: s.d.unwrap_or(d.d),
                m_bs: s.m_bs.unwrap_or(d.m_bs),
                v: s.v.unwrap_or(d.v),
                g_n: s.g_n,
                g_bs: s.g_bs,
                optimizations: if s.optimizations.is_empty() {
                    OptimizationSet::default_allowlist()
                } else {
                    s.optimizations
                },
            };
            space.validate()?;
            Some(space)
        }
    };

    let fault = raw
        .fault
        .map(|f| resolve_fault(f, model.as_ref(), raw.plan.as_ref(), space.as_ref()))
        .transpose()?;

    let sweep = raw.sweep.map(|s| SweepSpec {
        param: s.param,
        values: s
            .values
            .into_iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            })
            .collect(),
    });

    Ok(RunConfig {
        schema_version: raw.schema_version,
        model,
        hardware,
        profile,
        settings: raw.settings,
        plan: raw.plan,
        optimization,
        space,
        fault,
        sweep,
        output: raw.output,
    })
}

fn resolve_fault(
    f: FaultFile,
    model: Option<&ModelArchitecture>,
    plan: Option<&ParallelPlan>,
    space: Option<&SearchSpace>,
) -> Result<FaultSpec> {
    let (u_bc, u_bp, u_bj, mix) = match f.u_b {
        Some(u) => (u, u, u, [1.0, 0.0, 0.0]),
        None => (
            f.u_bc.unwrap_or(DEFAULT_RECOVERY[0]),
            f.u_bp.unwrap_or(DEFAULT_RECOVERY[1]),
            f.u_bj.unwrap_or(DEFAULT_RECOVERY[2]),
            f.mix.unwrap_or(DEFAULT_MIX),
        ),
    };
    let fault = FaultModel {
        r_f_per_node_day: f.r_f_per_node_day,
        u_bc,
        u_bp,
        u_bj,
        mix,
        u0: f.u0,
        n_nodes: f.n_nodes.unwrap_or(1),
    };
    fault.validate()?;
    if !(f.t_save >= 0.0) {
        return Err(Error::config("T_save must be >= 0"));
    }
    if f.interval == Some(0) {
        return Err(Error::config("I_ckpt must be >= 1"));
    }
    if f.t_step.is_some_and(|t| !(t > 0.0)) {
        return Err(Error::config("T_step must be > 0"));
    }
    let steps = match (f.steps, f.tokens) {
        (Some(s), None) => s,
        (None, Some(tokens)) => {
            let g_bs = plan
                .map(|p| p.g_bs)
                .or(space.map(|s| s.g_bs))
                .ok_or_else(|| Error::config("`tokens` needs a plan or space to fix g_bs"))?;
            let s = model.ok_or_else(|| missing("model"))?.seq_len;
            steps_from_tokens(tokens, g_bs, s)?
        }
        (Some(_), Some(_)) => return Err(Error::config("give either S or tokens, not both")),
        (None, None) => return Err(Error::config("fault section needs S or tokens")),
    };
    if steps == 0 {
        return Err(Error::config("S must be >= 1"));
    }
    Ok(FaultSpec {
        r_f_per_second: fault.r_f_per_node_day / SECONDS_PER_DAY,
        model: fault,
        n_nodes: f.n_nodes,
        t_save: f.t_save,
        interval: f.interval,
        steps,
        t_step: f.t_step,
    })
}
