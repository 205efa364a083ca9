//! Base cost model: per-layer time, interleaved 1F1B pipeline phases,
//! optimizer time, step time, TFLOPS and memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::ParallelPlan;
use crate::profile::Dtypes;

/// One layer's latency: compute plus serialized communication.
pub fn layer_time(compute: &[f64], comm: &[f64]) -> f64 {
    compute.iter().sum::<f64>() + comm.iter().sum::<f64>()
}

/// Per-stage latencies entering the pipeline formulas.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    /// Forward time of one layer.
    pub fwd: f64,
    /// Backward time of one layer.
    pub bwd: f64,
    pub embed: f64,
    pub embed_bwd: f64,
    pub head: f64,
    pub head_bwd: f64,
    /// One pipeline point-to-point hop.
    pub pp: f64,
}

/// Pipeline dimensions: stages, chunks per stage, layers per chunk, micro-batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineShape {
    pub p: u32,
    pub v: u32,
    pub l: u32,
    pub m_b: u32,
}

impl PipelineShape {
    pub fn from_plan(plan: &ParallelPlan, layers: u32) -> Result<Self> {
        Ok(Self {
            p: plan.p,
            v: plan.v,
            l: plan.layers_per_chunk(layers)?,
            m_b: plan.micro_batches()?,
        })
    }

    /// Number of PP hops charged in the steady phase.
    pub fn steady_pp_hops(&self) -> f64 {
        let (m_b, v, p) = (self.m_b as f64, self.v as f64, self.p as f64);
        4.0 * m_b * v - 2.0 * m_b + 2.0 * p - 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelinePhases {
    pub warmup: f64,
    pub steady: f64,
    pub cooldown: f64,
    pub total: f64,
    /// Fewer micro-batches than stages: the formulas are still evaluated
    /// as written, but the schedule they describe does not exist.
    pub degenerate: bool,
}

/// Warmup, steady and cooldown time of interleaved 1F1B.
pub fn pipeline_time(times: &StageTimes, shape: &PipelineShape) -> Result<PipelinePhases> {
    pipeline_time_with_steady_pp(times, shape, times.pp)
}

/// As [`pipeline_time`], with a separate per-hop PP cost for the steady
/// phase (used when PP traffic overlaps computation there).
pub fn pipeline_time_with_steady_pp(
    times: &StageTimes,
    shape: &PipelineShape,
    steady_pp: f64,
) -> Result<PipelinePhases> {
    if shape.m_b == 0 || shape.p == 0 || shape.v == 0 {
        return Err(Error::input("pipeline needs m_b, p and v >= 1"));
    }
    let p = shape.p as f64;
    let v = shape.v as f64;
    let l = shape.l as f64;
    let m_b = shape.m_b as f64;
    let t = times;
    let extra = v * p - p - 1.0;

    let warmup = p * (t.embed + l * t.fwd + t.pp) + extra * (l * t.fwd + t.pp);
    let heads = t.head + t.head_bwd;
    let steady = p * (l * t.fwd + heads + l * t.bwd)
        + (m_b - p) * (v * l * t.fwd + heads + l * t.bwd)
        + shape.steady_pp_hops() * steady_pp;
    let cooldown = p * (t.embed_bwd + l * t.bwd + t.pp) + extra * (l * t.bwd + t.pp);
    Ok(PipelinePhases {
        warmup,
        steady,
        cooldown,
        total: warmup + steady + cooldown,
        degenerate: shape.m_b < shape.p,
    })
}

/// `(T_DP, T_update, T_Opt)` of the unmodified optimizer.
///
/// `dp_bandwidth` is the effective (decayed) bandwidth of the gradient
/// exchange; it is ignored when `d = 1`.
pub fn optimizer_time(
    plan: &ParallelPlan,
    layers_per_chunk: u32,
    layer_params: f64,
    grad_bytes: f64,
    dp_bandwidth: f64,
    optimizer_throughput: f64,
) -> Result<(f64, f64, f64)> {
    let params = plan.v as f64 * layers_per_chunk as f64 * layer_params;
    let t_dp = if plan.d <= 1 || params == 0.0 {
        0.0
    } else {
        if !(dp_bandwidth > 0.0) {
            return Err(Error::input("data-parallel bandwidth must be > 0"));
        }
        grad_bytes * params / dp_bandwidth
    };
    if !(optimizer_throughput > 0.0) {
        return Err(Error::input("optimizer throughput must be > 0"));
    }
    let t_update = params / optimizer_throughput;
    Ok((t_dp, t_update, t_dp + t_update))
}

pub fn step_time(pipeline: f64, optimizer: f64) -> Result<f64> {
    let step = pipeline + optimizer;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Invariant(format!("step time must be positive, got {step}")));
    }
    Ok(step)
}

/// How forward FLOPs are turned into achieved TFLOPS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TflopsConvention {
    /// Forward plus backward (3× forward), per device.
    #[default]
    FwdBwdPerDevice,
    /// Forward FLOPs over the whole cluster, no multiplier.
    Raw,
}

/// Achieved TFLOPS given forward FLOPs of one global batch.
pub fn tflops(model_fwd_flops: f64, world_size: u64, step: f64, convention: TflopsConvention) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Invariant(format!("step time must be positive, got {step}")));
    }
    Ok(match convention {
        TflopsConvention::FwdBwdPerDevice => 3.0 * model_fwd_flops / (1e12 * world_size.max(1) as f64 * step),
        TflopsConvention::Raw => model_fwd_flops / (1e12 * step),
    })
}

/// `(D_para + D_grad + 4·D_opt) · v·l·ΣS`.
pub fn static_memory(v: u32, layers_per_chunk: u32, layer_params: f64, dtypes: &Dtypes) -> f64 {
    (dtypes.param + dtypes.grad + 4.0 * dtypes.optimizer) * v as f64 * layers_per_chunk as f64 * layer_params
}

/// In-flight factor `vp + p − 2r_pp − 1` and whether it had to be clamped at 0.
pub fn activation_factor(v: u32, p: u32, r_pp: u32) -> Result<(f64, bool)> {
    if r_pp >= p {
        return Err(Error::input(format!("stage index r_pp = {r_pp} must be < p = {p}")));
    }
    let raw = v as f64 * p as f64 + p as f64 - 2.0 * r_pp as f64 - 1.0;
    Ok((raw.max(0.0), raw < 0.0))
}

/// Activation bytes held by stage `r_pp` at the end of warmup; `unit` is the
/// activation of one in-flight micro-batch on one model chunk.
pub fn activation_memory(v: u32, p: u32, r_pp: u32, unit: f64) -> Result<(f64, Option<String>)> {
    let (factor, clamped) = activation_factor(v, p, r_pp)?;
    let warning = clamped.then(|| format!("activation factor negative at r_pp = {r_pp}; clamped to 0"));
    Ok((factor * unit, warning))
}

pub fn peak_memory(static_bytes: f64, activation_bytes: f64) -> f64 {
    static_bytes + activation_bytes
}

/// Per-step latency breakdown in seconds (TFLOPS per device).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    #[serde(rename = "T_FWD")]
    pub t_fwd: f64,
    #[serde(rename = "T_BWD")]
    pub t_bwd: f64,
    #[serde(rename = "T_Embed")]
    pub t_embed: f64,
    #[serde(rename = "T_Head")]
    pub t_head: f64,
    #[serde(rename = "T_PP_hop")]
    pub t_pp_hop: f64,
    #[serde(rename = "T_Warmup")]
    pub t_warmup: f64,
    #[serde(rename = "T_Steady")]
    pub t_steady: f64,
    #[serde(rename = "T_Cooldown")]
    pub t_cooldown: f64,
    #[serde(rename = "T_Pipeline")]
    pub t_pipeline: f64,
    #[serde(rename = "T_DP")]
    pub t_dp: f64,
    #[serde(rename = "T_update")]
    pub t_update: f64,
    #[serde(rename = "T_Opt")]
    pub t_opt: f64,
    #[serde(rename = "T_step")]
    pub t_step: f64,
    #[serde(rename = "TFLOPS")]
    pub tflops: f64,
    #[serde(rename = "T_cal")]
    pub t_cal: f64,
    #[serde(rename = "T_TP")]
    pub t_tp: f64,
    #[serde(rename = "T_CP")]
    pub t_cp: f64,
    #[serde(rename = "T_EP")]
    pub t_ep: f64,
    #[serde(rename = "T_PP")]
    pub t_pp: f64,
}

impl CostReport {
    /// Checks the additive identities and non-negativity.
    pub fn check(&self) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        if !close(self.t_pipeline, self.t_warmup + self.t_steady + self.t_cooldown) {
            return Err(Error::Invariant("T_Pipeline != T_Warmup + T_Steady + T_Cooldown".into()));
        }
        if !close(self.t_step, self.t_pipeline + self.t_opt) {
            return Err(Error::Invariant("T_step != T_Pipeline + T_Opt".into()));
        }
        let parts = [
            self.t_fwd,
            self.t_bwd,
            self.t_pipeline,
            self.t_dp,
            self.t_update,
            self.t_cal,
            self.t_tp,
            self.t_cp,
            self.t_ep,
            self.t_pp,
        ];
        if parts.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Invariant("negative time component".into()));
        }
        Ok(())
    }
}

/// Per-device memory of the reported stage, in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    #[serde(rename = "M_sta")]
    pub m_sta: f64,
    #[serde(rename = "M_act")]
    pub m_act: f64,
    #[serde(rename = "M_peak")]
    pub m_peak: f64,
    pub param_bytes: f64,
    pub grad_bytes: f64,
    pub optimizer_bytes: f64,
    #[serde(rename = "D_para")]
    pub d_para: f64,
    #[serde(rename = "D_grad")]
    pub d_grad: f64,
    #[serde(rename = "D_opt")]
    pub d_opt: f64,
    /// Pipeline stage whose peak is reported.
    pub r_pp: u32,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(p: u32, v: u32, l: u32, m_b: u32) -> PipelineShape {
        PipelineShape { p, v, l, m_b }
    }

    fn fb(fwd: f64, bwd: f64) -> StageTimes {
        StageTimes {
            fwd,
            bwd,
            ..StageTimes::default()
        }
    }

    #[test]
    fn layer_time_sums() {
        assert_eq!(layer_time(&[1.0, 0.5], &[0.25]), 1.75);
        assert_eq!(layer_time(&[1.0, 0.5], &[]), 1.5);
        // Backward at 2× FLOPs and equal throughput doubles compute only.
        assert_eq!(layer_time(&[2.0, 1.0], &[0.25]), 3.25);
    }

    #[test]
    fn pipeline_examples() {
        let ph = pipeline_time(&fb(1.0, 2.0), &shape(2, 1, 1, 4)).unwrap();
        assert_eq!((ph.warmup, ph.steady, ph.cooldown, ph.total), (1.0, 12.0, 2.0, 15.0));
        assert!(!ph.degenerate);

        let ph = pipeline_time(&fb(1.0, 1.0), &shape(1, 1, 1, 1)).unwrap();
        assert_eq!(ph.total, 2.0);

        let ph = pipeline_time(&fb(1.0, 1.0), &shape(4, 1, 1, 2)).unwrap();
        assert!(ph.degenerate);
    }

    #[test]
    fn optimizer_example() {
        let plan = ParallelPlan::new(1, 1, 1, 1, 2, 1, 2, 1);
        let (dp, up, opt) = optimizer_time(&plan, 1, 10.0, 2.0, 20.0, 5.0).unwrap();
        assert_eq!((dp, up, opt), (1.0, 2.0, 3.0));
        let single = ParallelPlan::new(1, 1, 1, 1, 1, 1, 1, 1);
        assert_eq!(optimizer_time(&single, 1, 10.0, 2.0, 0.0, 5.0).unwrap().0, 0.0);
        assert_eq!(optimizer_time(&plan, 1, 0.0, 2.0, 20.0, 5.0).unwrap().2, 0.0);
    }

    #[test]
    fn step_and_tflops() {
        assert_eq!(step_time(15.0, 3.0).unwrap(), 18.0);
        assert!(matches!(step_time(0.0, 0.0), Err(Error::Invariant(_))));
        assert_eq!(tflops(6e12, 1, 18.0, TflopsConvention::FwdBwdPerDevice).unwrap(), 1.0);
        assert!((tflops(6e12, 1, 18.0, TflopsConvention::Raw).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn memory_examples() {
        let dt = Dtypes::default();
        assert_eq!(static_memory(1, 1, 10.0, &dt), 200.0);
        assert_eq!(static_memory(1, 1, 0.0, &dt), 0.0);
        assert_eq!(static_memory(2, 1, 10.0, &dt), 400.0);
        assert_eq!(activation_memory(2, 4, 0, 1e9).unwrap().0, 11e9);
        assert_eq!(activation_memory(1, 1, 0, 7.0).unwrap().0, 7.0);
        assert!(activation_memory(1, 2, 2, 1.0).is_err());
        assert_eq!(peak_memory(200.0, 300.0), 500.0);
        assert_eq!(peak_memory(0.0, 0.0), 0.0);
    }

    #[test]
    fn last_stage_holds_one_unit() {
        let (bytes, warning) = activation_memory(1, 3, 2, 5.0).unwrap();
        assert_eq!(bytes, 5.0);
        assert!(warning.is_none());
    }

    proptest! {
        #[test]
        fn classic_1f1b_closed_form(p in 1u32..9, extra in 0u32..12, l in 1u32..4, f in 0.01f64..5.0, b in 0.01f64..5.0) {
            let m_b = p + extra;
            let ph = pipeline_time(&fb(f, b), &shape(p, 1, l, m_b)).unwrap();
            let expect = (m_b + p - 1) as f64 * (l as f64 * f + l as f64 * b);
            prop_assert!((ph.total - expect).abs() <= 1e-9 * expect);
        }

        #[test]
        fn factor_positive_for_valid_stages(v in 1u32..9, p in 1u32..17, r in 0u32..16) {
            prop_assume!(r < p);
            let (f, clamped) = activation_factor(v, p, r).unwrap();
            prop_assert!(f >= 1.0 && !clamped);
        }

        #[test]
        fn step_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0, da in 0.0f64..1.0) {
            prop_assume!(a + b > 0.0);
            prop_assert!(step_time(a + da, b).unwrap() >= step_time(a, b).unwrap());
        }

        #[test]
        fn bubble_shrinks_with_more_micro_batches(p in 2u32..9, m in 1u32..20) {
            let frac = |m_b: u32| 1.0 - m_b as f64 / (m_b + p - 1) as f64;
            prop_assert!(frac(m + 1) < frac(m));
        }

        #[test]
        fn memory_linear(params in 0.0f64..1e9, k in 1u32..5) {
            let dt = Dtypes::default();
            let one = static_memory(1, 1, params, &dt);
            prop_assert!((static_memory(1, 1, params * k as f64, &dt) - k as f64 * one).abs() <= 1e-6 * one.max(1.0));
        }
    }
}
