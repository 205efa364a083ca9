//! Strategy search: pruned depth-first enumeration of parallel plans and
//! optimization sets ranked by step time, the end-to-end extension that
//! picks a checkpoint interval per candidate, and parameter sweeps.
//!
//! The end-to-end search runs in two phases (plans first, interval second).
//! `G` grows with `T_step` for a fixed fault regime, and the optimal
//! interval depends on the plan only through `T_step` and the node count,
//! so the per-candidate interval optimization loses nothing.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ModelArchitecture, StructureKind};
use crate::basecost::{CostReport, MemoryReport};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalContext, Evaluation};
use crate::fault::{e2e_objective, ettr_closed_form, optimal_ckpt_interval, CheckpointPolicy, FaultModel, IntervalNote};
use crate::optim::{DpOverlap, DpOverlapMode, OptimizationSet, OptimizerStrategy};
use crate::plan::ParallelPlan;

/// Candidate values per plan dimension plus the fixed cluster and batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub t: Vec<u32>,
    pub c: Vec<u32>,
    pub p: Vec<u32>,
    pub e: Vec<u32>,
    pub d: Vec<u32>,
    pub m_bs: Vec<u32>,
    /// Chunk counts; empty means every divisor of `L/p`.
    #[serde(default)]
    pub v: Vec<u32>,
    /// GPUs available.
    pub g_n: u64,
    pub g_bs: u32,
    /// Feature sets to try; empty means the default allowlist.
    #[serde(default)]
    pub optimizations: Vec<OptimizationSet>,
}

fn powers_of_two(limit: u64) -> Vec<u32> {
    let mut out = Vec::new();
    let mut x: u64 = 1;
    while x <= limit && x <= u32::MAX as u64 {
        out.push(x as u32);
        x *= 2;
    }
    out
}

/// Divisors of `n` in ascending order.
pub fn divisors(n: u32) -> Vec<u32> {
    (1..=n).filter(|k| n.is_multiple_of(*k)).collect()
}

impl SearchSpace {
    /// Powers of two bounded by the cluster: `t` up to the node size, `p` up
    /// to `L`, `e` up to the expert count.
    pub fn defaults(arch: &ModelArchitecture, gpus_per_node: u32, g_n: u64, g_bs: u32) -> Self {
        let e = match arch.structure {
            StructureKind::Dense => vec![1],
            StructureKind::Moe => powers_of_two((arch.num_experts.unwrap_or(1) as u64).min(g_n)),
        };
        Self {
            t: powers_of_two((gpus_per_node as u64).min(g_n)),
            c: powers_of_two(g_n),
            p: powers_of_two((arch.layers as u64).min(g_n)),
            e,
            d: powers_of_two(g_n),
            m_bs: powers_of_two(g_bs as u64),
            v: Vec::new(),
            g_n,
            g_bs,
            optimizations: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("t", &self.t),
            ("c", &self.c),
            ("p", &self.p),
            ("e", &self.e),
            ("d", &self.d),
            ("m_bs", &self.m_bs),
        ];
        for (name, values) in dims {
            if values.is_empty() || values.contains(&0) {
                return Err(Error::config(format!("search space `{name}` must be nonempty and >= 1")));
            }
        }
        if self.v.contains(&0) {
            return Err(Error::config("search space `v` values must be >= 1"));
        }
        if self.g_n == 0 || self.g_bs == 0 {
            return Err(Error::config("g_n and g_bs must be >= 1"));
        }
        for o in &self.optimizations {
            o.validate()?;
        }
        Ok(())
    }

    /// Feature sets in enumeration order.
    pub fn optimization_sets(&self) -> Vec<OptimizationSet> {
        if self.optimizations.is_empty() {
            OptimizationSet::default_allowlist()
        } else {
            self.optimizations.clone()
        }
    }

    fn v_values(&self, layers: u32, p: u32) -> Vec<u32> {
        if self.v.is_empty() {
            if layers.is_multiple_of(p) {
                divisors(layers / p)
            } else {
                Vec::new()
            }
        } else {
            self.v.clone()
        }
    }

    /// Size of the raw cartesian product (plans × feature sets).
    pub fn raw_size(&self, layers: u32) -> u64 {
        let mut n = 0u64;
        for &p in &self.p {
            n += self.v_values(layers, p).len().max(1) as u64;
        }
        n * [&self.t, &self.c, &self.e, &self.d, &self.m_bs]
            .iter()
            .map(|v| v.len() as u64)
            .product::<u64>()
            * self.optimization_sets().len() as u64
    }
}

/// Why a (partial) plan was cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    /// `t·c·p·e·d > g_n`.
    Resources,
    /// `g_bs` not divisible by `m_bs·d`.
    BatchDivisibility,
    /// `g_bs/m_bs < p`.
    TooFewMicroBatches,
    /// `t` larger than the GPUs in one node.
    TpExceedsNode,
    /// `L` not divisible by `p·v`.
    LayerDivisibility,
    /// A hidden, head, sequence or expert dimension does not shard evenly.
    Shape,
    /// Peak memory above device memory.
    Memory,
    /// The cost model could not evaluate the candidate.
    Evaluation,
}

impl Rejection {
    pub fn name(&self) -> &'static str {
        match self {
            Rejection::Resources => "resources",
            Rejection::BatchDivisibility => "batch-divisibility",
            Rejection::TooFewMicroBatches => "too-few-micro-batches",
            Rejection::TpExceedsNode => "tp-exceeds-node",
            Rejection::LayerDivisibility => "layer-divisibility",
            Rejection::Shape => "shape",
            Rejection::Memory => "memory",
            Rejection::Evaluation => "evaluation",
        }
    }
}

/// A plan with some dimensions still open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PartialPlan {
    pub t: Option<u32>,
    pub c: Option<u32>,
    pub p: Option<u32>,
    pub e: Option<u32>,
    pub d: Option<u32>,
    pub m_bs: Option<u32>,
    pub v: Option<u32>,
}

impl From<&ParallelPlan> for PartialPlan {
    fn from(p: &ParallelPlan) -> Self {
        Self {
            t: Some(p.t),
            c: Some(p.c),
            p: Some(p.p),
            e: Some(p.e),
            d: Some(p.d),
            m_bs: Some(p.m_bs),
            v: Some(p.v),
        }
    }
}

/// Static facts the pruning rules need.
#[derive(Debug, Clone, Copy)]
pub struct PruneContext<'a> {
    pub arch: &'a ModelArchitecture,
    pub gpus_per_node: u32,
    pub g_n: u64,
    pub g_bs: u32,
}

/// Applies every rule that the assigned dimensions already determine.
pub fn prune(ctx: &PruneContext<'_>, x: &PartialPlan) -> std::result::Result<(), Rejection> {
    let arch = ctx.arch;
    let world: u64 = [x.t, x.c, x.p, x.e, x.d].iter().flatten().map(|&v| v as u64).product();
    if world > ctx.g_n {
        return Err(Rejection::Resources);
    }
    if let Some(t) = x.t {
        if t > ctx.gpus_per_node {
            return Err(Rejection::TpExceedsNode);
        }
        if !arch.hidden.is_multiple_of(t) || !arch.heads.is_multiple_of(t) {
            return Err(Rejection::Shape);
        }
    }
    if let Some(c) = x.c {
        if !arch.seq_len.is_multiple_of(c) {
            return Err(Rejection::Shape);
        }
    }
    if let Some(p) = x.p {
        if !arch.layers.is_multiple_of(p) {
            return Err(Rejection::LayerDivisibility);
        }
    }
    if let Some(e) = x.e {
        let ok = match arch.structure {
            StructureKind::Dense => e == 1,
            StructureKind::Moe => arch.num_experts.unwrap_or(0).is_multiple_of(e),
        };
        if !ok {
            return Err(Rejection::Shape);
        }
    }
    if let (Some(m_bs), Some(d)) = (x.m_bs, x.d) {
        if !(ctx.g_bs as u64).is_multiple_of(m_bs as u64 * d as u64) {
            return Err(Rejection::BatchDivisibility);
        }
    }
    if let (Some(m_bs), Some(p)) = (x.m_bs, x.p) {
        if ctx.g_bs / m_bs < p {
            return Err(Rejection::TooFewMicroBatches);
        }
    }
    if let (Some(p), Some(v)) = (x.p, x.v) {
        if !(arch.layers as u64).is_multiple_of(p as u64 * v as u64) {
            return Err(Rejection::LayerDivisibility);
        }
    }
    Ok(())
}

/// End-to-end annotation of a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eAnnotation {
    pub n_nodes: u64,
    #[serde(rename = "I_ckpt")]
    pub interval: u64,
    pub ettr: Option<f64>,
    #[serde(rename = "T_e2e")]
    pub t_e2e: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub rank: usize,
    pub plan: ParallelPlan,
    pub optimization: String,
    /// Position of the feature set in the enumeration order.
    pub optimization_index: usize,
    pub features: String,
    pub cost: CostReport,
    pub memory: MemoryReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e2e: Option<E2eAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub candidates: Vec<Candidate>,
    /// Leaves that reached the cost model.
    pub evaluated: u64,
    pub feasible: u64,
    /// Pruned subtrees and rejected leaves, by rule.
    pub rejections: BTreeMap<String, u64>,
}

/// Leaves (plan, feature-set index) surviving the pruning rules, in DFS order.
fn enumerate(
    space: &SearchSpace,
    pctx: &PruneContext<'_>,
    n_opts: usize,
    rejections: &mut BTreeMap<String, u64>,
) -> Vec<(ParallelPlan, usize)> {
    let mut leaves = Vec::new();
    let mut reject = |r: Rejection| *rejections.entry(r.name().to_string()).or_insert(0) += 1;
    let mut x = PartialPlan::default();
    for &t in &space.t {
        x.t = Some(t);
        if let Err(r) = prune(pctx, &x) {
            reject(r);
            continue;
        }
        for &c in &space.c {
            x.c = Some(c);
            if let Err(r) = prune(pctx, &x) {
                reject(r);
                continue;
            }
            for &p in &space.p {
                x.p = Some(p);
                if let Err(r) = prune(pctx, &x) {
                    reject(r);
                    continue;
                }
                for &e in &space.e {
                    x.e = Some(e);
                    if let Err(r) = prune(pctx, &x) {
                        reject(r);
                        continue;
                    }
                    for &d in &space.d {
                        x.d = Some(d);
                        if let Err(r) = prune(pctx, &x) {
                            reject(r);
                            continue;
                        }
                        for &m_bs in &space.m_bs {
                            x.m_bs = Some(m_bs);
                            if let Err(r) = prune(pctx, &x) {
                                reject(r);
                                continue;
                            }
                            for v in space.v_values(pctx.arch.layers, p) {
                                x.v = Some(v);
                                if let Err(r) = prune(pctx, &x) {
                                    reject(r);
                                    continue;
                                }
                                let plan = ParallelPlan::new(t, c, p, e, d, m_bs, space.g_bs, v);
                                leaves.extend((0..n_opts).map(|k| (plan, k)));
                            }
                            x.v = None;
                        }
                        x.m_bs = None;
                    }
                    x.d = None;
                }
                x.e = None;
            }
            x.p = None;
        }
        x.c = None;
    }
    leaves
}

/// Every leaf of the raw cartesian product, checked with all rules at once.
/// Exists to cross-check the pruned search.
pub fn enumerate_exhaustive(space: &SearchSpace, pctx: &PruneContext<'_>) -> Vec<(ParallelPlan, usize)> {
    let n_opts = space.optimization_sets().len();
    let mut out = Vec::new();
    for &t in &space.t {
        for &c in &space.c {
            for &p in &space.p {
                for &e in &space.e {
                    for &d in &space.d {
                        for &m_bs in &space.m_bs {
                            for v in space.v_values(pctx.arch.layers, p) {
                                let plan = ParallelPlan::new(t, c, p, e, d, m_bs, space.g_bs, v);
                                if prune(pctx, &PartialPlan::from(&plan)).is_ok() {
                                    out.extend((0..n_opts).map(|k| (plan, k)));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Total order used for ranking: step time, then plan key, then feature-set index.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.cost
        .t_step
        .total_cmp(&b.cost.t_step)
        .then_with(|| a.plan.sort_key().cmp(&b.plan.sort_key()))
        .then_with(|| a.optimization_index.cmp(&b.optimization_index))
}

/// Evaluates leaves in parallel and keeps feasible ones, in ranking order.
fn evaluate_leaves(
    ctx: &EvalContext<'_>,
    leaves: &[(ParallelPlan, usize)],
    opts: &[OptimizationSet],
    rejections: &mut BTreeMap<String, u64>,
) -> Vec<Candidate> {
    let results: Vec<std::result::Result<Evaluation, Rejection>> = leaves
        .par_iter()
        .map(|(plan, k)| {
            let ev = evaluate(ctx, plan, &opts[*k]).map_err(|_| Rejection::Evaluation)?;
            if ev.memory.m_peak > ctx.hw.gpu_memory {
                return Err(Rejection::Memory);
            }
            Ok(ev)
        })
        .collect();
    let mut out = Vec::new();
    for ((_, k), r) in leaves.iter().zip(results) {
        match r {
            Ok(ev) => out.push(Candidate {
                rank: 0,
                plan: ev.plan,
                optimization: ev.optimization,
                optimization_index: *k,
                features: ev.features,
                cost: ev.cost,
                memory: ev.memory,
                warnings: ev.warnings,
                e2e: None,
            }),
            Err(r) => *rejections.entry(r.name().to_string()).or_insert(0) += 1,
        }
    }
    out.sort_by(rank_order);
    out
}

fn prune_context<'a>(ctx: &EvalContext<'a>, space: &SearchSpace) -> PruneContext<'a> {
    PruneContext {
        arch: ctx.arch,
        gpus_per_node: ctx.hw.gpus_per_node,
        g_n: space.g_n,
        g_bs: space.g_bs,
    }
}

fn all_feasible(ctx: &EvalContext<'_>, space: &SearchSpace, exhaustive: bool) -> Result<TuneResult> {
    space.validate()?;
    let opts = space.optimization_sets();
    let pctx = prune_context(ctx, space);
    let mut rejections = BTreeMap::new();
    let leaves = if exhaustive {
        enumerate_exhaustive(space, &pctx)
    } else {
        enumerate(space, &pctx, opts.len(), &mut rejections)
    };
    let evaluated = leaves.len() as u64;
    let candidates = evaluate_leaves(ctx, &leaves, &opts, &mut rejections);
    Ok(TuneResult {
        feasible: candidates.len() as u64,
        candidates,
        evaluated,
        rejections,
    })
}

fn finish(mut result: TuneResult, top_k: usize) -> TuneResult {
    result.candidates.truncate(top_k);
    for (i, c) in result.candidates.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    result
}

/// Pruned DFS minimizing `T_step`; returns the best `top_k`.
pub fn tune_step(ctx: &EvalContext<'_>, space: &SearchSpace, top_k: usize) -> Result<TuneResult> {
    Ok(finish(all_feasible(ctx, space, false)?, top_k))
}

/// Unpruned enumeration with the same ranking, for cross-checking.
pub fn tune_step_exhaustive(ctx: &EvalContext<'_>, space: &SearchSpace, top_k: usize) -> Result<TuneResult> {
    Ok(finish(all_feasible(ctx, space, true)?, top_k))
}

/// Fault inputs for the end-to-end search. The node count follows each
/// candidate's plan unless pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eSpec {
    pub fault: FaultModel,
    pub t_save: f64,
    pub steps: u64,
    /// Fixed interval; `None` picks the optimum per candidate.
    #[serde(default)]
    pub interval: Option<u64>,
    /// Pin the node count instead of deriving it from the plan.
    #[serde(default)]
    pub n_nodes: Option<u64>,
}

/// Interval, ETTR and `G` of one step time on `n_nodes` nodes.
pub fn annotate_e2e(spec: &E2eSpec, t_step: f64, n_nodes: u64) -> E2eAnnotation {
    let fault = FaultModel {
        n_nodes: spec.n_nodes.unwrap_or(n_nodes),
        ..spec.fault.clone()
    };
    let policy = CheckpointPolicy {
        interval: spec.interval.unwrap_or(1),
        t_save: spec.t_save,
        steps: spec.steps,
        t_step,
    };
    let nodes = fault.n_nodes;
    let chosen = match spec.interval {
        Some(i) => Ok((i, "fixed".to_string())),
        None => optimal_ckpt_interval(&fault, &policy).map(|c| {
            let note = match c.note {
                IntervalNote::Optimal => "optimal",
                IntervalNote::NoFailures => "no-failures",
                IntervalNote::NoOptimum => "no-optimum",
            };
            (c.interval, note.to_string())
        }),
    };
    match chosen {
        Ok((interval, note)) => {
            let p = policy.with_interval(interval);
            match (ettr_closed_form(&fault, &p), e2e_objective(&fault, &p)) {
                (Ok(ettr), Ok(g)) => E2eAnnotation {
                    n_nodes: nodes,
                    interval,
                    ettr: Some(ettr),
                    t_e2e: Some(g),
                    note,
                },
                (Err(e), _) | (_, Err(e)) => E2eAnnotation {
                    n_nodes: nodes,
                    interval,
                    ettr: None,
                    t_e2e: None,
                    note: e.to_string(),
                },
            }
        }
        Err(e) => E2eAnnotation {
            n_nodes: nodes,
            interval: policy.interval,
            ettr: None,
            t_e2e: None,
            note: e.to_string(),
        },
    }
}

/// Step search followed by a per-candidate interval choice; every feasible
/// candidate is ranked by `T_e2e`, infeasible fault regimes last.
pub fn tune_e2e(ctx: &EvalContext<'_>, space: &SearchSpace, spec: &E2eSpec, top_k: usize) -> Result<TuneResult> {
    spec.fault.validate()?;
    let mut result = all_feasible(ctx, space, false)?;
    let per_node = ctx.hw.gpus_per_node;
    result.candidates.par_iter_mut().for_each(|c| {
        c.e2e = Some(annotate_e2e(spec, c.cost.t_step, c.plan.nodes(per_node)));
    });
    result.candidates.sort_by(|a, b| {
        let g = |c: &Candidate| c.e2e.as_ref().and_then(|x| x.t_e2e);
        match (g(a), g(b)) {
            (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| rank_order(a, b)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => rank_order(a, b),
        }
    });
    Ok(finish(result, top_k))
}

/// `T_step` of the smaller cluster over that of the larger one.
pub fn linearity(t_small: f64, t_large: f64) -> Result<f64> {
    if !(t_small > 0.0 && t_large > 0.0) {
        return Err(Error::input("step times must be > 0"));
    }
    Ok(t_small / t_large)
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "v")]
    V,
    #[serde(rename = "g_bs")]
    GlobalBatch,
    #[serde(rename = "g_n")]
    Gpus,
    /// GPUs per node.
    #[serde(rename = "N")]
    NodeSize,
    #[serde(rename = "t")]
    T,
    #[serde(rename = "c")]
    C,
    #[serde(rename = "p")]
    P,
    #[serde(rename = "e")]
    E,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "m_bs")]
    MicroBatch,
    #[serde(rename = "optimizer")]
    Optimizer,
    #[serde(rename = "dp_overlap")]
    DpOverlap,
    #[serde(rename = "r_f")]
    FailureRate,
    #[serde(rename = "u_b")]
    RepairTime,
    #[serde(rename = "T_save")]
    SaveTime,
    #[serde(rename = "N_nodes")]
    Nodes,
    #[serde(rename = "I_ckpt")]
    Interval,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::input(format!("unknown sweep parameter `{s}`")))
    }
}

impl SweepParam {
    fn needs_fault(&self) -> bool {
        matches!(
            self,
            SweepParam::FailureRate | SweepParam::RepairTime | SweepParam::SaveTime | SweepParam::Nodes | SweepParam::Interval
        )
    }
}

/// One row of a sweep: the best candidate at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub plan: Option<ParallelPlan>,
    pub optimization: Option<String>,
    #[serde(rename = "T_step")]
    pub t_step: Option<f64>,
    #[serde(rename = "TFLOPS")]
    pub tflops: Option<f64>,
    #[serde(rename = "M_peak")]
    pub m_peak: Option<f64>,
    pub ettr: Option<f64>,
    #[serde(rename = "I_ckpt")]
    pub interval: Option<u64>,
    #[serde(rename = "T_e2e")]
    pub t_e2e: Option<f64>,
    /// `T_step` of the first row over this row's.
    pub linearity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn parse_num<T: std::str::FromStr>(param: SweepParam, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::input(format!("bad value `{s}` for sweep parameter {param:?}")))
}

/// Re-tunes the space at each value of `param` and reports the best candidate.
pub fn sweep(
    ctx: &EvalContext<'_>,
    space: &SearchSpace,
    e2e: Option<&E2eSpec>,
    param: SweepParam,
    values: &[String],
) -> Result<Vec<SweepRow>> {
    if param.needs_fault() && e2e.is_none() {
        return Err(Error::input(format!("sweep over {param:?} needs a fault configuration")));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut s = space.clone();
        let mut hw = ctx.hw.clone();
        let mut spec = e2e.cloned();
        match param {
            SweepParam::V => s.v = vec![parse_num(param, value)?],
            SweepParam::GlobalBatch => s.g_bs = parse_num(param, value)?,
            SweepParam::Gpus => s.g_n = parse_num(param, value)?,
            SweepParam::NodeSize => hw.gpus_per_node = parse_num(param, value)?,
            SweepParam::T => s.t = vec![parse_num(param, value)?],
            SweepParam::C => s.c = vec![parse_num(param, value)?],
            SweepParam::P => s.p = vec![parse_num(param, value)?],
            SweepParam::E => s.e = vec![parse_num(param, value)?],
            SweepParam::D => s.d = vec![parse_num(param, value)?],
            SweepParam::MicroBatch => s.m_bs = vec![parse_num(param, value)?],
            SweepParam::Optimizer => {
                let want: OptimizerStrategy = serde_json::from_value(serde_json::Value::String(value.clone()))
                    .map_err(|_| Error::input(format!("unknown optimizer strategy `{value}`")))?;
                s.optimizations = s.optimization_sets().into_iter().filter(|o| o.optimizer == want).collect();
                if s.optimizations.is_empty() {
                    return Err(Error::input(format!("no feature set uses optimizer `{value}`")));
                }
            }
            SweepParam::DpOverlap => {
                let setting = match value.as_str() {
                    "off" | "none" | "false" => None,
                    "on" | "true" | "exposed-only" => Some(DpOverlapMode::ExposedOnly),
                    "max-form" => Some(DpOverlapMode::MaxForm),
                    other => return Err(Error::input(format!("bad dp_overlap value `{other}`"))),
                };
                s.optimizations = s
                    .optimization_sets()
                    .into_iter()
                    .map(|mut o| {
                        o.dp_overlap = setting.map(|mode| DpOverlap {
                            mode,
                            ..o.dp_overlap.unwrap_or_default()
                        });
                        o
                    })
                    .collect();
            }
            SweepParam::FailureRate => {
                if let Some(x) = spec.as_mut() {
                    x.fault.r_f_per_node_day = parse_num(param, value)?;
                }
            }
            SweepParam::RepairTime => {
                if let Some(x) = spec.as_mut() {
                    let u: f64 = parse_num(param, value)?;
                    x.fault.u_bc = u;
                    x.fault.u_bp = u;
                    x.fault.u_bj = u;
                }
            }
            SweepParam::SaveTime => {
                if let Some(x) = spec.as_mut() {
                    x.t_save = parse_num(param, value)?;
                }
            }
            SweepParam::Nodes => {
                if let Some(x) = spec.as_mut() {
                    x.n_nodes = Some(parse_num(param, value)?);
                }
            }
            SweepParam::Interval => {
                if let Some(x) = spec.as_mut() {
                    x.interval = Some(parse_num(param, value)?);
                }
            }
        }
        let local = EvalContext { hw: &hw, ..*ctx };
        let result = match &spec {
            Some(sp) => tune_e2e(&local, &s, sp, 1)?,
            None => tune_step(&local, &s, 1)?,
        };
        let row = match result.candidates.first() {
            Some(best) => SweepRow {
                value: value.clone(),
                plan: Some(best.plan),
                optimization: Some(best.optimization.clone()),
                t_step: Some(best.cost.t_step),
                tflops: Some(best.cost.tflops),
                m_peak: Some(best.memory.m_peak),
                ettr: best.e2e.as_ref().and_then(|x| x.ettr),
                interval: best.e2e.as_ref().map(|x| x.interval),
                t_e2e: best.e2e.as_ref().and_then(|x| x.t_e2e),
                linearity: None,
                note: best.e2e.as_ref().map(|x| x.note.clone()),
            },
            None => SweepRow {
                value: value.clone(),
                plan: None,
                optimization: None,
                t_step: None,
                tflops: None,
                m_peak: None,
                ettr: None,
                interval: None,
                t_e2e: None,
                linearity: None,
                note: Some("no feasible candidate".into()),
            },
        };
        rows.push(row);
    }
    let reference = rows.first().and_then(|r| r.t_step);
    for row in &mut rows {
        row.linearity = match (reference, row.t_step) {
            (Some(a), Some(b)) => linearity(a, b).ok(),
            _ => None,
        };
    }
    Ok(rows)
}

/// Fault-parameter sweep at a fixed step time, with no plan search.
pub fn sweep_fault(spec: &E2eSpec, t_step: f64, n_nodes: u64, param: SweepParam, values: &[String]) -> Result<Vec<SweepRow>> {
    if !param.needs_fault() {
        return Err(Error::input(format!("{param:?} is not a fault parameter")));
    }
    spec.fault.validate()?;
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut sp = spec.clone();
        let mut nodes = n_nodes;
        match param {
            SweepParam::FailureRate => sp.fault.r_f_per_node_day = parse_num(param, value)?,
            SweepParam::RepairTime => {
                let u: f64 = parse_num(param, value)?;
                sp.fault.u_bc = u;
                sp.fault.u_bp = u;
                sp.fault.u_bj = u;
            }
            SweepParam::SaveTime => sp.t_save = parse_num(param, value)?,
            SweepParam::Nodes => {
                nodes = parse_num(param, value)?;
                sp.n_nodes = None;
            }
            SweepParam::Interval => sp.interval = Some(parse_num(param, value)?),
            _ => unreachable!("checked by needs_fault"),
        }
        let ann = annotate_e2e(&sp, t_step, nodes);
        rows.push(SweepRow {
            value: value.clone(),
            plan: None,
            optimization: None,
            t_step: Some(t_step),
            tflops: None,
            m_peak: None,
            ettr: ann.ettr,
            interval: Some(ann.interval),
            t_e2e: ann.t_e2e,
            linearity: None,
            note: Some(ann.note),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::Settings;
    use crate::profile::{Collective, CommEntry, ComputeEntry, HardwareSpec, ProfileDb};

    fn hw() -> HardwareSpec {
        HardwareSpec {
            h2d_bandwidth: Some(32e9),
            d2h_bandwidth: Some(32e9),
            disk_load_bandwidth: None,
            disk_write_bandwidth: None,
            cpu_memory: Some(512e9),
            cpu_ops: Some(1e11),
            gpu_peak_flops: 400e12,
            gpu_memory: 80e9,
            gpus_per_node: 8,
            hbm_bandwidth: 2e12,
            optimizer_throughput: 2e10,
        }
    }

    fn profile(tp_bw: f64) -> ProfileDb {
        let mut comm = Vec::new();
        for c in [
            Collective::AllGather,
            Collective::ReduceScatter,
            Collective::AllReduce,
            Collective::AllToAll,
            Collective::P2p,
        ] {
            comm.push(CommEntry {
                collective: c,
                group_size: None,
                message_bytes: 1e6,
                bandwidth: 100e9,
                beta: 1.0,
                lambda: None,
            });
        }
        // Small groups are TP groups in these fixtures.
        for c in [Collective::AllGather, Collective::ReduceScatter] {
            for g in [2, 4, 8] {
                comm.push(CommEntry {
                    collective: c,
                    group_size: Some(g),
                    message_bytes: 1e6,
                    bandwidth: tp_bw,
                    beta: 1.0,
                    lambda: None,
                });
            }
        }
        ProfileDb {
            compute: vec![ComputeEntry::uniform("*", 200e12)],
            comm,
        }
    }

    fn arch() -> ModelArchitecture {
        ModelArchitecture::dense(8, 1024, 2048, 16, 4096, 32000)
    }

    fn tiny_space() -> SearchSpace {
        SearchSpace {
            t: vec![1, 2],
            c: vec![1],
            p: vec![1, 2],
            e: vec![1],
            d: vec![1, 2],
            m_bs: vec![1],
            v: vec![1],
            g_n: 8,
            g_bs: 8,
            optimizations: vec![OptimizationSet::baseline()],
        }
    }

    #[test]
    fn prune_examples() {
        let a = arch();
        let ctx = PruneContext {
            arch: &a,
            gpus_per_node: 8,
            g_n: 64,
            g_bs: 16,
        };
        let x = PartialPlan {
            m_bs: Some(3),
            d: Some(1),
            ..PartialPlan::default()
        };
        assert_eq!(prune(&ctx, &x), Err(Rejection::BatchDivisibility));
        let x = PartialPlan {
            t: Some(16),
            ..PartialPlan::default()
        };
        assert_eq!(prune(&ctx, &x), Err(Rejection::TpExceedsNode));
        let x = PartialPlan {
            m_bs: Some(2),
            p: Some(8),
            d: Some(1),
            ..PartialPlan::default()
        };
        assert_eq!(prune(&ctx, &x), Ok(()));
        let x = PartialPlan {
            m_bs: Some(4),
            p: Some(8),
            ..PartialPlan::default()
        };
        assert_eq!(prune(&ctx, &x), Err(Rejection::TooFewMicroBatches));
    }

    #[test]
    fn pruned_equals_exhaustive_on_tiny_space() {
        let (a, h, prof, st) = (arch(), hw(), profile(100e9), Settings::default());
        let ctx = EvalContext {
            arch: &a,
            hw: &h,
            profile: &prof,
            settings: &st,
        };
        let pruned = tune_step(&ctx, &tiny_space(), 8).unwrap();
        let full = tune_step_exhaustive(&ctx, &tiny_space(), 8).unwrap();
        assert_eq!(
            serde_json::to_string(&pruned.candidates).unwrap(),
            serde_json::to_string(&full.candidates).unwrap()
        );
        assert!(!pruned.candidates.is_empty());
    }

    #[test]
    fn zero_memory_rejects_everything() {
        let (a, mut h, prof, st) = (arch(), hw(), profile(100e9), Settings::default());
        h.gpu_memory = 0.0;
        let ctx = EvalContext {
            arch: &a,
            hw: &h,
            profile: &prof,
            settings: &st,
        };
        let r = tune_step(&ctx, &tiny_space(), 4).unwrap();
        assert!(r.candidates.is_empty());
        assert_eq!(r.rejections.get("memory").copied(), Some(r.evaluated));
    }

    #[test]
    fn slow_tp_prefers_no_tp() {
        let (a, h, prof, st) = (arch(), hw(), profile(1e6), Settings::default());
        let ctx = EvalContext {
            arch: &a,
            hw: &h,
            profile: &prof,
            settings: &st,
        };
        let r = tune_step(&ctx, &tiny_space(), 1).unwrap();
        assert_eq!(r.candidates[0].plan.t, 1);
    }

    #[test]
    fn e2e_without_failures_keeps_step_order() {
        let (a, h, prof, st) = (arch(), hw(), profile(100e9), Settings::default());
        let ctx = EvalContext {
            arch: &a,
            hw: &h,
            profile: &prof,
            settings: &st,
        };
        let spec = E2eSpec {
            fault: FaultModel::with_repair_time(0.0, 1, 100.0),
            t_save: 0.0,
            steps: 1000,
            interval: None,
            n_nodes: None,
        };
        let step = tune_step(&ctx, &tiny_space(), 8).unwrap();
        let e2e = tune_e2e(&ctx, &tiny_space(), &spec, 8).unwrap();
        let key = |r: &TuneResult| r.candidates.iter().map(|c| (c.plan, c.optimization_index)).collect::<Vec<_>>();
        assert_eq!(key(&step), key(&e2e));
    }

    #[test]
    fn linearity_examples() {
        assert_eq!(linearity(60.0, 75.0).unwrap(), 0.8);
        assert_eq!(linearity(5.0, 5.0).unwrap(), 1.0);
        assert!(linearity(0.0, 1.0).is_err());
    }

    #[test]
    fn failure_rate_sweep_lowers_ettr() {
        let spec = E2eSpec {
            fault: FaultModel::with_defaults(0.001, 16),
            t_save: 4.0,
            steps: 100_000,
            interval: Some(20),
            n_nodes: None,
        };
        let values: Vec<String> = ["0.001", "0.005", "0.01", "0.02"].iter().map(|s| s.to_string()).collect();
        let rows = sweep_fault(&spec, 20.0, 16, SweepParam::FailureRate, &values).unwrap();
        let ettr: Vec<f64> = rows.iter().map(|r| r.ettr.unwrap()).collect();
        assert!(ettr.windows(2).all(|w| w[1] < w[0]), "{ettr:?}");
        assert!(sweep_fault(&spec, 20.0, 16, SweepParam::V, &values).is_err());
    }

    #[test]
    fn sweep_param_names() {
        assert_eq!("g_bs".parse::<SweepParam>().unwrap(), SweepParam::GlobalBatch);
        assert_eq!("T_save".parse::<SweepParam>().unwrap(), SweepParam::SaveTime);
        assert!("bogus".parse::<SweepParam>().is_err());
    }
}
