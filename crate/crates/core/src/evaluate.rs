//! Assembles the full cost and memory model for one plan under one
//! optimization set: profile lookups, layer times with overlaps, pipeline
//! phases, optimizer time and memory strategies.

use serde::{Deserialize, Serialize};

use crate::arch::{decompose, model_flops_total, Decomposition, ModelArchitecture, ModuleKind, ModuleRole, ModuleShape};
use crate::basecost::{
    activation_factor, peak_memory, pipeline_time_with_steady_pp, step_time, tflops, CostReport, MemoryReport,
    PipelineShape, StageTimes, TflopsConvention,
};
use crate::error::{Error, Result};
use crate::optim::{
    apply_activation_strategy, apply_optimizer_strategy, cp_overlap, dp_overlap, ep_overlap, pp_overlap,
    scaled_throughput, tp_overlap, ActivationInputs, ActivationStrategy, DpOverlapInputs, OptimizationSet,
    OptimizerInputs,
};
use crate::plan::ParallelPlan;
use crate::profile::{
    comm_time, comm_volume, invocations_per_layer, roofline_at_intensity, shape_signature, Collective, Dtypes,
    HardwareSpec, ProfileDb, VolumeKind,
};

/// Model-wide numeric conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    #[serde(default)]
    pub dtypes: Dtypes,
    /// Backward FLOPs as a multiple of forward FLOPs, unless a profile entry overrides it.
    #[serde(default = "two")]
    pub bwd_flops_ratio: f64,
    #[serde(default)]
    pub tflops: TflopsConvention,
    /// Pipeline stage whose memory is reported; stage 0 holds the most activations.
    #[serde(default)]
    pub r_pp: u32,
}

fn two() -> f64 {
    2.0
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            dtypes: Dtypes::default(),
            bwd_flops_ratio: 2.0,
            tflops: TflopsConvention::default(),
            r_pp: 0,
        }
    }
}

/// Everything an evaluation needs besides the plan and the feature set.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub arch: &'a ModelArchitecture,
    pub hw: &'a HardwareSpec,
    pub profile: &'a ProfileDb,
    pub settings: &'a Settings,
}

/// Result of evaluating one plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub plan: ParallelPlan,
    pub optimization: String,
    /// Active feature families, e.g. `LO[tp-overlap] PO[-] OO[-] MO[-]`.
    pub features: String,
    pub cost: CostReport,
    pub memory: MemoryReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Exposed per-layer time split into compute and each communication family.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct LayerSplit {
    compute: f64,
    tp: f64,
    cp: f64,
    ep: f64,
}

impl LayerSplit {
    fn total(&self) -> f64 {
        self.compute + self.tp + self.cp + self.ep
    }
}

/// Forward and backward compute time of each module in one layer.
struct ModuleTimes {
    fwd: Vec<f64>,
    bwd: Vec<f64>,
}

/// Forward/backward compute time of a single module.
fn module_time(ctx: &EvalContext<'_>, opts: &OptimizationSet, m: &ModuleShape, signature: &str) -> Result<(f64, f64)> {
    if m.flops_fwd == 0.0 {
        return Ok((0.0, 0.0));
    }
    let entry = ctx.profile.compute_entry(m.kind.name(), signature)?;
    let lambda = opts.compute_lambda(m.kind.name()) * entry.lambda.unwrap_or(1.0);
    let cap = entry
        .intensity
        .map(|i| roofline_at_intensity(i, ctx.hw))
        .unwrap_or(ctx.hw.gpu_peak_flops);
    let p_fwd = scaled_throughput(entry.fwd, lambda, cap);
    let p_bwd = scaled_throughput(entry.bwd_throughput(), lambda, cap);
    let ratio = entry.bwd_flops_ratio.unwrap_or(ctx.settings.bwd_flops_ratio);
    if !(p_fwd > 0.0 && p_bwd > 0.0) {
        return Err(Error::input(format!("non-positive throughput for `{}`", m.kind)));
    }
    Ok((m.flops_fwd / p_fwd, ratio * m.flops_fwd / p_bwd))
}

fn collective_time(
    ctx: &EvalContext<'_>,
    opts: &OptimizationSet,
    collective: Collective,
    group: u32,
    bytes: f64,
) -> Result<f64> {
    if group <= 1 || bytes == 0.0 {
        return Ok(0.0);
    }
    let link = ctx.profile.link(collective, group, bytes)?;
    comm_time(bytes, link.bandwidth * opts.comm_lambda(collective), link.beta)
}

/// TP slot a module's compute is paired with in the sequence-parallel
/// layout: all-gather before QKV and the first MLP linear, reduce-scatter
/// after the output projection and the second MLP linear.
fn tp_slot(m: &ModuleShape) -> Option<usize> {
    match (&m.kind, m.role) {
        (_, ModuleRole::Qkv) => Some(0),
        (ModuleKind::OProjection, _) | (ModuleKind::Custom(_), ModuleRole::Other) => Some(1),
        (ModuleKind::MlpLinear1, _) => Some(2),
        (ModuleKind::MlpLinear2, _) => Some(3),
        _ => None,
    }
}

/// Layer time with TP, CP and EP overlaps applied in that order.
fn overlapped_layer(
    opts: &OptimizationSet,
    decomp: &Decomposition,
    compute: &[f64],
    tp_comm: &[f64; 4],
    cp_comm: f64,
    ep_comm: f64,
    c: u32,
) -> LayerSplit {
    let base: f64 = compute.iter().sum();

    let with_tp = match &opts.tp_overlap {
        Some(tp) => {
            let mut slot_comp = [0.0f64; 4];
            let mut rest = 0.0;
            for (m, t) in decomp.layer.iter().zip(compute) {
                match tp_slot(m) {
                    Some(k) => slot_comp[k] += t,
                    None => rest += t,
                }
            }
            rest + slot_comp
                .iter()
                .zip(tp_comm)
                .map(|(&comp, &comm)| {
                    if comm == 0.0 {
                        comp
                    } else {
                        tp_overlap(comp, comm, tp.splits, tp.coeffs.alpha, tp.coeffs.beta)
                    }
                })
                .sum::<f64>()
        }
        None => base + tp_comm.iter().sum::<f64>(),
    };

    let with_cp = match &opts.cp_overlap {
        Some(k) if cp_comm > 0.0 => {
            let attention: f64 = decomp
                .layer
                .iter()
                .zip(compute)
                .filter(|(m, _)| m.role == ModuleRole::Attention)
                .map(|(_, t)| t)
                .sum();
            with_tp - attention + cp_overlap(attention, cp_comm, c, k.alpha, k.beta)
        }
        _ => with_tp + cp_comm,
    };

    let with_ep = match &opts.ep_overlap {
        Some(k) if ep_comm > 0.0 => ep_overlap(with_cp, ep_comm, k.alpha, k.beta),
        _ => with_cp + ep_comm,
    };

    LayerSplit {
        compute: base,
        tp: (with_tp - base).max(0.0),
        cp: (with_cp - with_tp).max(0.0),
        ep: (with_ep - with_cp).max(0.0),
    }
}

fn role_time(decomp: &Decomposition, times: &[f64], role: ModuleRole) -> f64 {
    decomp
        .layer
        .iter()
        .zip(times)
        .filter(|(m, _)| m.role == role)
        .map(|(_, t)| t)
        .sum()
}

/// Evaluates the cost and memory model for one plan and feature set.
pub fn evaluate(ctx: &EvalContext<'_>, plan: &ParallelPlan, opts: &OptimizationSet) -> Result<Evaluation> {
    let arch = ctx.arch;
    let dtypes = &ctx.settings.dtypes;
    arch.validate()?;
    plan.validate(arch)?;
    opts.validate()?;
    let mut warnings = Vec::new();

    let decomp = decompose(arch, plan, dtypes.activation)?;
    let shape = PipelineShape::from_plan(plan, arch.layers)?;
    let signature = shape_signature(arch, plan);

    let mut times = ModuleTimes {
        fwd: Vec::with_capacity(decomp.layer.len()),
        bwd: Vec::with_capacity(decomp.layer.len()),
    };
    for m in &decomp.layer {
        let (f, b) = module_time(ctx, opts, m, &signature)?;
        times.fwd.push(f);
        times.bwd.push(b);
    }
    let (embed_f, embed_b) = module_time(ctx, opts, &decomp.embedding, &signature)?;
    let (head_f, head_b) = module_time(ctx, opts, &decomp.head, &signature)?;

    // Per-invocation communication; the backward pass mirrors the forward.
    let per_call = |kind: VolumeKind, collective: Collective, group: u32| -> Result<f64> {
        if invocations_per_layer(kind, plan, arch) == 0 {
            return Ok(0.0);
        }
        collective_time(ctx, opts, collective, group, comm_volume(kind, plan, arch, dtypes)?)
    };
    let ag = per_call(VolumeKind::TpAllGather, Collective::AllGather, plan.t)?;
    let rs = per_call(VolumeKind::TpReduceScatter, Collective::ReduceScatter, plan.t)?;
    let tp_comm = [ag, rs, ag, rs];
    let cp_comm =
        invocations_per_layer(VolumeKind::CpP2p, plan, arch) as f64 * per_call(VolumeKind::CpP2p, Collective::P2p, 2)?;
    let ep_comm = invocations_per_layer(VolumeKind::EpAllToAll, plan, arch) as f64
        * per_call(VolumeKind::EpAllToAll, Collective::AllToAll, plan.e)?;
    let pp_hop = if plan.p > 1 {
        collective_time(
            ctx,
            opts,
            Collective::P2p,
            2,
            comm_volume(VolumeKind::PpP2p, plan, arch, dtypes)?,
        )?
    } else {
        0.0
    };

    let fwd_split = overlapped_layer(opts, &decomp, &times.fwd, &tp_comm, cp_comm, ep_comm, plan.c);
    let bwd_split = overlapped_layer(opts, &decomp, &times.bwd, &tp_comm, cp_comm, ep_comm, plan.c);

    // Memory-level activation strategy; its time changes count as compute.
    let (factor, clamped) = activation_factor(plan.v, plan.p, ctx.settings.r_pp)?;
    if clamped {
        warnings.push(format!(
            "activation factor negative at r_pp = {}; clamped to 0",
            ctx.settings.r_pp
        ));
    }
    let input_act = plan.m_bs as f64 * (arch.seq_len as f64 / plan.c as f64) * arch.hidden as f64 * dtypes.activation
        / plan.t as f64;
    let act = apply_activation_strategy(
        opts.activation,
        &ActivationInputs {
            factor,
            layers_per_unit: shape.l as f64,
            layer_act: decomp.layer_act_bytes(),
            attention_act: decomp.act_bytes_with_role(ModuleRole::Attention),
            input_act,
            fwd: fwd_split.total(),
            bwd: bwd_split.total(),
            qkv_time: role_time(&decomp, &times.fwd, ModuleRole::Qkv),
            attention_time: role_time(&decomp, &times.fwd, ModuleRole::Attention),
        },
        ctx.hw,
    )?;
    let fwd_split = LayerSplit {
        compute: fwd_split.compute + (act.fwd - fwd_split.total()),
        ..fwd_split
    };
    let bwd_split = LayerSplit {
        compute: bwd_split.compute + (act.bwd - bwd_split.total()),
        ..bwd_split
    };
    if matches!(opts.activation, ActivationStrategy::Offload(_)) && factor == 0.0 {
        warnings.push("activation offload reported with a zero in-flight factor".into());
    }

    let stage = StageTimes {
        fwd: act.fwd,
        bwd: act.bwd,
        embed: embed_f,
        embed_bwd: embed_b,
        head: head_f,
        head_bwd: head_b,
        pp: pp_hop,
    };
    let l = shape.l as f64;
    let steady_pp = match &opts.pp_overlap {
        Some(k) => {
            0.5 * (pp_overlap(pp_hop, l * stage.fwd, k.alpha, k.beta) + pp_overlap(pp_hop, l * stage.bwd, k.alpha, k.beta))
        }
        None => pp_hop,
    };
    let phases = pipeline_time_with_steady_pp(&stage, &shape, steady_pp)?;
    if phases.degenerate {
        warnings.push(format!(
            "degenerate pipeline: m_b = {} < p = {}",
            shape.m_b, plan.p
        ));
    }

    // Linear projections of the pipeline formula onto each component.
    let project = |fwd: f64, bwd: f64, with_ends: bool| -> Result<f64> {
        let t = StageTimes {
            fwd,
            bwd,
            embed: if with_ends { embed_f } else { 0.0 },
            embed_bwd: if with_ends { embed_b } else { 0.0 },
            head: if with_ends { head_f } else { 0.0 },
            head_bwd: if with_ends { head_b } else { 0.0 },
            pp: 0.0,
        };
        Ok(pipeline_time_with_steady_pp(&t, &shape, 0.0)?.total)
    };
    let t_cal = project(fwd_split.compute, bwd_split.compute, true)?;
    let t_tp = project(fwd_split.tp, bwd_split.tp, false)?;
    let t_cp = project(fwd_split.cp, bwd_split.cp, false)?;
    let t_ep = project(fwd_split.ep, bwd_split.ep, false)?;
    let t_pp = (phases.total - t_cal - t_tp - t_cp - t_ep).max(0.0);

    // Optimizer level.
    let layer_params = decomp.layer_params();
    let stage_params = plan.v as f64 * l * layer_params;
    let t_dp = if plan.d <= 1 || stage_params == 0.0 {
        0.0
    } else if let Some(dp) = &opts.dp_overlap {
        let rs = collective_time(ctx, opts, Collective::ReduceScatter, plan.d, dtypes.grad * l * layer_params)?;
        let ag = collective_time(ctx, opts, Collective::AllGather, plan.d, dtypes.param * l * layer_params)?;
        let rs_chunks = vec![rs; plan.v as usize];
        let ag_chunks = vec![ag; plan.v as usize];
        dp_overlap(
            &DpOverlapInputs {
                rs: &rs_chunks,
                ag: &ag_chunks,
                fwd: stage.fwd,
                bwd: stage.bwd,
                p: plan.p,
                layers_per_chunk: shape.l,
            },
            dp,
        )?
    } else {
        collective_time(ctx, opts, Collective::AllReduce, plan.d, dtypes.grad * stage_params)?
    };
    let update_lambda = opts.compute_scale.get("optimizer").copied().unwrap_or(1.0);
    let base_update = stage_params / (ctx.hw.optimizer_throughput * update_lambda);
    let (optimizer_bytes, t_update) = apply_optimizer_strategy(
        opts.optimizer,
        &OptimizerInputs {
            stage_params,
            layer_params,
            d: plan.d,
            base_update,
        },
        dtypes,
        ctx.hw,
    )?;
    let t_opt = t_dp + t_update;
    let t_step = step_time(phases.total, t_opt)?;
    let fwd_flops = model_flops_total(arch, plan)?;
    let achieved = tflops(fwd_flops, plan.world_size(), t_step, ctx.settings.tflops)?;

    let param_bytes = dtypes.param * stage_params;
    let grad_bytes = dtypes.grad * stage_params;
    let m_sta = param_bytes + grad_bytes + optimizer_bytes;
    let memory = MemoryReport {
        m_sta,
        m_act: act.memory,
        m_peak: peak_memory(m_sta, act.memory),
        param_bytes,
        grad_bytes,
        optimizer_bytes,
        d_para: dtypes.param,
        d_grad: dtypes.grad,
        d_opt: dtypes.optimizer,
        r_pp: ctx.settings.r_pp,
    };

    let cost = CostReport {
        t_fwd: stage.fwd,
        t_bwd: stage.bwd,
        t_embed: embed_f,
        t_head: head_f,
        t_pp_hop: pp_hop,
        t_warmup: phases.warmup,
        t_steady: phases.steady,
        t_cooldown: phases.cooldown,
        t_pipeline: phases.total,
        t_dp,
        t_update,
        t_opt,
        t_step,
        tflops: achieved,
        t_cal,
        t_tp,
        t_cp,
        t_ep,
        t_pp,
    };
    cost.check()?;

    Ok(Evaluation {
        plan: *plan,
        optimization: opts.name.clone(),
        features: opts.feature_labels().to_string(),
        cost,
        memory,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{OptimizerStrategy, OverlapCoeffs, TpOverlap};
    use crate::profile::{CommEntry, ComputeEntry};

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

    fn profile() -> ProfileDb {
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
        ProfileDb {
            compute: vec![ComputeEntry::uniform("*", 200e12)],
            comm,
        }
    }

    fn model() -> ModelArchitecture {
        ModelArchitecture::dense(8, 1024, 2048, 16, 4096, 32000)
    }

    fn run(plan: ParallelPlan, opts: &OptimizationSet) -> Evaluation {
        let arch = model();
        let hw = hw();
        let prof = profile();
        let settings = Settings::default();
        let ctx = EvalContext {
            arch: &arch,
            hw: &hw,
            profile: &prof,
            settings: &settings,
        };
        evaluate(&ctx, &plan, opts).unwrap()
    }

    #[test]
    fn identities_hold() {
        let e = run(ParallelPlan::new(2, 1, 2, 1, 2, 1, 16, 2), &OptimizationSet::baseline());
        let c = &e.cost;
        assert!((c.t_step - (c.t_pipeline + c.t_opt)).abs() < 1e-12);
        let parts = c.t_cal + c.t_tp + c.t_cp + c.t_ep + c.t_pp;
        assert!((parts - c.t_pipeline).abs() < 1e-9 * c.t_pipeline);
        assert!(c.t_tp > 0.0 && c.t_dp > 0.0);
        assert!((e.memory.m_peak - e.memory.m_sta - e.memory.m_act).abs() < 1.0);
    }

    #[test]
    fn single_device_has_no_communication() {
        let e = run(ParallelPlan::new(1, 1, 1, 1, 1, 1, 4, 1), &OptimizationSet::baseline());
        assert_eq!(e.cost.t_tp, 0.0);
        assert_eq!(e.cost.t_dp, 0.0);
        assert_eq!(e.cost.t_pp_hop, 0.0);
        assert!(e.cost.t_pp.abs() < 1e-12);
    }

    #[test]
    fn tp_overlap_never_slower() {
        let plan = ParallelPlan::new(4, 1, 1, 1, 1, 1, 4, 1);
        let base = run(plan, &OptimizationSet::baseline());
        let over = OptimizationSet {
            name: "tp".into(),
            tp_overlap: Some(TpOverlap {
                splits: 4,
                coeffs: OverlapCoeffs::default(),
            }),
            ..OptimizationSet::default()
        };
        let e = run(plan, &over);
        assert!(e.cost.t_step <= base.cost.t_step);
    }

    #[test]
    fn distributed_optimizer_cuts_memory() {
        let plan = ParallelPlan::new(1, 1, 1, 1, 4, 1, 8, 1);
        let base = run(plan, &OptimizationSet::baseline());
        let dist = OptimizationSet {
            optimizer: OptimizerStrategy::Distributed,
            ..OptimizationSet::baseline()
        };
        let e = run(plan, &dist);
        assert!((e.memory.optimizer_bytes * 4.0 - base.memory.optimizer_bytes).abs() < 1.0);
        assert!(e.cost.t_update < base.cost.t_update);
    }

    #[test]
    fn missing_profile_entry_is_lookup_error() {
        let arch = model();
        let hw = hw();
        let prof = ProfileDb::default();
        let settings = Settings::default();
        let ctx = EvalContext {
            arch: &arch,
            hw: &hw,
            profile: &prof,
            settings: &settings,
        };
        let err = evaluate(&ctx, &ParallelPlan::new(1, 1, 1, 1, 1, 1, 1, 1), &OptimizationSet::baseline());
        assert!(matches!(err, Err(Error::Lookup(_))));
    }
}
