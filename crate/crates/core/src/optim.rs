//! Optimization features layered on the base cost model: throughput and
//! bandwidth scaling, communication/computation overlap at the layer,
//! pipeline and optimizer levels, and memory-saving strategies.
//!
//! Every `α`/`β` is a time-increase coefficient (≥ 1) that models resource
//! contention while two activities share a device.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{Collective, Dtypes, HardwareSpec};

/// Time-increase coefficients for one overlapped pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapCoeffs {
    /// Coefficient on the computation side.
    #[serde(default = "unit")]
    pub alpha: f64,
    /// Coefficient on the communication side.
    #[serde(default = "unit")]
    pub beta: f64,
}

impl Default for OverlapCoeffs {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

fn unit() -> f64 {
    1.0
}

fn one_split() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpOverlap {
    /// Number of pipelined split stages.
    #[serde(default = "one_split")]
    pub splits: u32,
    #[serde(flatten)]
    pub coeffs: OverlapCoeffs,
}

impl Default for TpOverlap {
    fn default() -> Self {
        Self {
            splits: 1,
            coeffs: OverlapCoeffs::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpOverlapMode {
    /// Only the communication left uncovered by pipeline compute is charged.
    #[default]
    ExposedOnly,
    /// Max form: its max terms also re-count pipeline compute.
    MaxForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpOverlap {
    #[serde(default = "unit")]
    pub alpha_rs: f64,
    #[serde(default = "unit")]
    pub beta_bwd: f64,
    #[serde(default = "unit")]
    pub alpha_ag: f64,
    #[serde(default = "unit")]
    pub beta_fwd: f64,
    #[serde(default)]
    pub mode: DpOverlapMode,
}

impl Default for DpOverlap {
    fn default() -> Self {
        Self {
            alpha_rs: 1.0,
            beta_bwd: 1.0,
            alpha_ag: 1.0,
            beta_fwd: 1.0,
            mode: DpOverlapMode::ExposedOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerStrategy {
    #[default]
    None,
    /// Optimizer states sharded across the data-parallel group.
    Distributed,
    /// Optimizer states and update on the host.
    Cpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadCoeffs {
    #[serde(default = "unit")]
    pub alpha_offload: f64,
    #[serde(default = "unit")]
    pub beta_offload: f64,
    #[serde(default = "unit")]
    pub alpha_fetch: f64,
    #[serde(default = "unit")]
    pub beta_fetch: f64,
}

impl Default for OffloadCoeffs {
    fn default() -> Self {
        Self {
            alpha_offload: 1.0,
            beta_offload: 1.0,
            alpha_fetch: 1.0,
            beta_fetch: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActivationStrategy {
    #[default]
    None,
    SelectiveRecompute,
    FullRecompute,
    Offload(#[serde(default)] OffloadCoeffs),
}

impl ActivationStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ActivationStrategy::None => "none",
            ActivationStrategy::SelectiveRecompute => "selective-recompute",
            ActivationStrategy::FullRecompute => "full-recompute",
            ActivationStrategy::Offload(_) => "offload",
        }
    }
}

impl OptimizerStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerStrategy::None => "none",
            OptimizerStrategy::Distributed => "distributed",
            OptimizerStrategy::Cpu => "cpu",
        }
    }
}

/// A named combination of optimization features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizationSet {
    #[serde(default)]
    pub name: String,
    /// Throughput multipliers per module name; `*` applies to every module.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub compute_scale: BTreeMap<String, f64>,
    /// Bandwidth multipliers per collective.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub comm_scale: BTreeMap<Collective, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tp_overlap: Option<TpOverlap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cp_overlap: Option<OverlapCoeffs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ep_overlap: Option<OverlapCoeffs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pp_overlap: Option<OverlapCoeffs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_overlap: Option<DpOverlap>,
    #[serde(default)]
    pub optimizer: OptimizerStrategy,
    #[serde(default)]
    pub activation: ActivationStrategy,
}

impl OptimizationSet {
    pub fn baseline() -> Self {
        Self {
            name: "baseline".into(),
            ..Self::default()
        }
    }

    /// Every overlap enabled with unit coefficients, plus the given strategies.
    pub fn all_overlaps(name: &str, optimizer: OptimizerStrategy, activation: ActivationStrategy) -> Self {
        Self {
            name: name.into(),
            tp_overlap: Some(TpOverlap::default()),
            cp_overlap: Some(OverlapCoeffs::default()),
            ep_overlap: Some(OverlapCoeffs::default()),
            pp_overlap: Some(OverlapCoeffs::default()),
            dp_overlap: Some(DpOverlap::default()),
            optimizer,
            activation,
            ..Self::default()
        }
    }

    /// Default search allowlist: all overlaps on, every optimizer strategy
    /// crossed with every activation strategy.
    pub fn default_allowlist() -> Vec<Self> {
        let mut out = Vec::new();
        for opt in [OptimizerStrategy::None, OptimizerStrategy::Distributed, OptimizerStrategy::Cpu] {
            for act in [
                ActivationStrategy::None,
                ActivationStrategy::SelectiveRecompute,
                ActivationStrategy::FullRecompute,
                ActivationStrategy::Offload(OffloadCoeffs::default()),
            ] {
                let name = format!("overlap+opt:{}+act:{}", opt.name(), act.name());
                out.push(Self::all_overlaps(&name, opt, act));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("optimization `{}`: {what}", self.name)));
        if self.compute_scale.values().chain(self.comm_scale.values()).any(|l| !(*l > 0.0)) {
            return bad("scaling factors must be > 0");
        }
        let mut coeffs: Vec<f64> = Vec::new();
        if let Some(tp) = &self.tp_overlap {
            if tp.splits == 0 {
                return bad("tp overlap split count must be >= 1");
            }
            coeffs.extend([tp.coeffs.alpha, tp.coeffs.beta]);
        }
        for c in [self.cp_overlap, self.ep_overlap, self.pp_overlap].into_iter().flatten() {
            coeffs.extend([c.alpha, c.beta]);
        }
        if let Some(dp) = &self.dp_overlap {
            coeffs.extend([dp.alpha_rs, dp.beta_bwd, dp.alpha_ag, dp.beta_fwd]);
        }
        if let ActivationStrategy::Offload(o) = &self.activation {
            coeffs.extend([o.alpha_offload, o.beta_offload, o.alpha_fetch, o.beta_fetch]);
        }
        if coeffs.iter().any(|c| !(*c >= 1.0)) {
            return bad("overlap coefficients must be >= 1");
        }
        Ok(())
    }

    pub fn compute_lambda(&self, module: &str) -> f64 {
        self.compute_scale
            .get(module)
            .or_else(|| self.compute_scale.get("*"))
            .copied()
            .unwrap_or(1.0)
    }

    pub fn comm_lambda(&self, collective: Collective) -> f64 {
        self.comm_scale.get(&collective).copied().unwrap_or(1.0)
    }

    /// Which feature families are active, in layer/pipeline/optimizer/memory order.
    pub fn feature_labels(&self) -> FeatureLabels {
        let mut lo = Vec::new();
        if !self.compute_scale.is_empty() {
            lo.push("compute-scaling");
        }
        if !self.comm_scale.is_empty() {
            lo.push("bandwidth-scaling");
        }
        if self.tp_overlap.is_some() {
            lo.push("tp-overlap");
        }
        if self.cp_overlap.is_some() {
            lo.push("cp-overlap");
        }
        if self.ep_overlap.is_some() {
            lo.push("ep-overlap");
        }
        let po = self.pp_overlap.map(|_| vec!["pp-overlap"]).unwrap_or_default();
        let oo = self.dp_overlap.map(|_| vec!["dp-overlap"]).unwrap_or_default();
        let mut mo = Vec::new();
        match self.optimizer {
            OptimizerStrategy::None => {}
            OptimizerStrategy::Distributed => mo.push("distributed-optimizer"),
            OptimizerStrategy::Cpu => mo.push("cpu-optimizer"),
        }
        match self.activation {
            ActivationStrategy::None => {}
            other => mo.push(other.name()),
        }
        FeatureLabels { lo, po, oo, mo }
    }
}

/// Active features grouped as LO / PO / OO / MO.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLabels {
    pub lo: Vec<&'static str>,
    pub po: Vec<&'static str>,
    pub oo: Vec<&'static str>,
    pub mo: Vec<&'static str>,
}

impl fmt::Display for FeatureLabels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let group = |v: &Vec<&str>| if v.is_empty() { "-".to_string() } else { v.join(",") };
        write!(
            f,
            "LO[{}] PO[{}] OO[{}] MO[{}]",
            group(&self.lo),
            group(&self.po),
            group(&self.oo),
            group(&self.mo)
        )
    }
}

/// `λ·x`, the scaled throughput or bandwidth.
pub fn apply_scaling(value: f64, lambda: f64) -> f64 {
    value * lambda
}

/// `min(λ·P, ceiling)`: scaled throughput capped by the roofline.
pub fn scaled_throughput(value: f64, lambda: f64, ceiling: f64) -> f64 {
    apply_scaling(value, lambda).min(ceiling)
}

/// Exposed time of a computation pipelined with a TP collective over `splits` stages.
pub fn tp_overlap(comp: f64, comm: f64, splits: u32, alpha: f64, beta: f64) -> f64 {
    comp.min(comm) / splits.max(1) as f64 + (alpha * comp).max(beta * comm)
}

/// Ring-attention overlap of attention compute with CP point-to-point traffic.
pub fn cp_overlap(attention: f64, comm: f64, c: u32, alpha: f64, beta: f64) -> f64 {
    attention.min(comm) / c.max(1) as f64 + (alpha * attention).max(beta * comm)
}

/// Forward/backward interleaving hides EP all-to-all behind the layer's compute.
pub fn ep_overlap(comp_sum: f64, comm_sum: f64, alpha: f64, beta: f64) -> f64 {
    (alpha * comp_sum).max(beta * comm_sum)
}

/// Steady-phase PP hop left exposed after overlapping with adjacent layer work.
pub fn pp_overlap(pp: f64, overlapped_layers: f64, alpha: f64, beta: f64) -> f64 {
    (beta * pp - alpha * overlapped_layers).max(0.0)
}

/// Inputs to the data-parallel overlap model.
#[derive(Debug, Clone, PartialEq)]
pub struct DpOverlapInputs<'a> {
    /// Reduce-scatter time of each model chunk, chunk 1 first.
    pub rs: &'a [f64],
    /// All-gather time of each model chunk.
    pub ag: &'a [f64],
    pub fwd: f64,
    pub bwd: f64,
    pub p: u32,
    pub layers_per_chunk: u32,
}

/// DP time when chunk `i`'s backward (forward) hides chunk `i+1`'s
/// reduce-scatter (all-gather).
pub fn dp_overlap(input: &DpOverlapInputs<'_>, coeffs: &DpOverlap) -> Result<f64> {
    if input.rs.is_empty() || input.rs.len() != input.ag.len() {
        return Err(Error::input("dp overlap needs one rs and one ag time per chunk"));
    }
    let v = input.rs.len() as f64;
    let first = input.rs[0] + input.ag[0];
    let rest_rs: f64 = input.rs[1..].iter().sum();
    let rest_ag: f64 = input.ag[1..].iter().sum();
    let cover = input.p as f64 * input.layers_per_chunk as f64 * (v - 1.0);
    let cover_bwd = coeffs.beta_bwd * cover * input.bwd;
    let cover_fwd = coeffs.beta_fwd * cover * input.fwd;
    let rs_term = coeffs.alpha_rs * rest_rs;
    let ag_term = coeffs.alpha_ag * rest_ag;
    Ok(match coeffs.mode {
        DpOverlapMode::MaxForm => first + rs_term.max(cover_bwd) + ag_term.max(cover_fwd),
        DpOverlapMode::ExposedOnly => first + (rs_term - cover_bwd).max(0.0) + (ag_term - cover_fwd).max(0.0),
    })
}

/// Optimizer-state quantities feeding a memory strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerInputs {
    /// `v·l·ΣS`: parameters held by one device.
    pub stage_params: f64,
    /// `ΣS`: parameters of one layer on one device.
    pub layer_params: f64,
    pub d: u32,
    /// `T_update` of the unmodified optimizer.
    pub base_update: f64,
}

/// Returns `(optimizer-state bytes, T_update)` under the chosen strategy.
pub fn apply_optimizer_strategy(
    strategy: OptimizerStrategy,
    input: &OptimizerInputs,
    dtypes: &Dtypes,
    hw: &HardwareSpec,
) -> Result<(f64, f64)> {
    let states = 4.0 * dtypes.optimizer * input.stage_params;
    match strategy {
        OptimizerStrategy::None => Ok((states, input.base_update)),
        OptimizerStrategy::Distributed => {
            let d = input.d.max(1) as f64;
            Ok((states / d, input.base_update / d))
        }
        OptimizerStrategy::Cpu => {
            let missing = |f: &str| Error::config(format!("cpu optimizer needs hardware field {f}"));
            let cpu_mem = hw.cpu_memory.ok_or_else(|| missing("M_CPU"))?;
            let cpu_ops = hw.cpu_ops.ok_or_else(|| missing("F_CPU"))?;
            let h2d = hw.h2d_bandwidth.ok_or_else(|| missing("B_H2D"))?;
            let d2h = hw.d2h_bandwidth.ok_or_else(|| missing("B_D2H"))?;
            let memory = (states - cpu_mem).max(0.0);
            let update = input.layer_params / cpu_ops
                + dtypes.grad * input.stage_params / h2d
                + dtypes.param * input.stage_params / d2h;
            Ok((memory, update))
        }
    }
}

/// Activation quantities feeding a memory strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationInputs {
    /// In-flight micro-batch factor `vp + p − 2r_pp − 1`.
    pub factor: f64,
    /// Layers retained per in-flight unit.
    pub layers_per_unit: f64,
    /// `ΣM_i` for one layer.
    pub layer_act: f64,
    /// Attention-internal activations of one layer.
    pub attention_act: f64,
    /// Input activation of one layer.
    pub input_act: f64,
    pub fwd: f64,
    pub bwd: f64,
    /// Forward time of the QKV projection.
    pub qkv_time: f64,
    /// Forward time of the attention core.
    pub attention_time: f64,
}

/// Activation memory and adjusted per-layer forward/backward time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationOutcome {
    pub memory: f64,
    pub fwd: f64,
    pub bwd: f64,
}

pub fn apply_activation_strategy(
    strategy: ActivationStrategy,
    input: &ActivationInputs,
    hw: &HardwareSpec,
) -> Result<ActivationOutcome> {
    let units = input.factor * input.layers_per_unit;
    match strategy {
        ActivationStrategy::None => Ok(ActivationOutcome {
            memory: units * input.layer_act,
            fwd: input.fwd,
            bwd: input.bwd,
        }),
        ActivationStrategy::SelectiveRecompute => Ok(ActivationOutcome {
            memory: units * (input.layer_act - input.attention_act),
            fwd: input.fwd,
            bwd: input.bwd + input.qkv_time + input.attention_time,
        }),
        ActivationStrategy::FullRecompute => Ok(ActivationOutcome {
            memory: units * input.input_act,
            fwd: input.fwd,
            bwd: input.bwd + input.fwd,
        }),
        ActivationStrategy::Offload(c) => {
            let missing = |f: &str| Error::config(format!("activation offload needs hardware field {f}"));
            let d2h = hw.d2h_bandwidth.ok_or_else(|| missing("B_D2H"))?;
            let h2d = hw.h2d_bandwidth.ok_or_else(|| missing("B_H2D"))?;
            let memory = input.layer_act;
            Ok(ActivationOutcome {
                memory,
                fwd: (c.alpha_offload * memory / d2h).max(c.beta_offload * input.fwd),
                bwd: (c.alpha_fetch * memory / h2d).max(c.beta_fetch * input.bwd),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hw() -> HardwareSpec {
        HardwareSpec {
            h2d_bandwidth: Some(32e9),
            d2h_bandwidth: Some(32e9),
            disk_load_bandwidth: None,
            disk_write_bandwidth: None,
            cpu_memory: Some(200e9),
            cpu_ops: Some(1e9),
            gpu_peak_flops: 512e12,
            gpu_memory: 32e9,
            gpus_per_node: 8,
            hbm_bandwidth: 2e12,
            optimizer_throughput: 5.0,
        }
    }

    #[test]
    fn scaling() {
        assert_eq!(apply_scaling(100.0, 1.2), 120.0);
        assert_eq!(apply_scaling(7.5, 1.0), 7.5);
        assert_eq!(scaled_throughput(400e12, 1.5, 512e12), 512e12);
    }

    #[test]
    fn tp_overlap_examples() {
        assert_eq!(tp_overlap(8.0, 4.0, 4, 1.0, 1.0), 9.0);
        assert_eq!(tp_overlap(0.0, 4.0, 4, 1.0, 2.0), 8.0);
        let limit = tp_overlap(8.0, 4.0, u32::MAX, 1.0, 1.0);
        assert!((limit - 8.0).abs() < 1e-8);
    }

    #[test]
    fn cp_overlap_examples() {
        assert_eq!(cp_overlap(6.0, 2.0, 2, 1.0, 1.0), 7.0);
        assert_eq!(cp_overlap(6.0, 0.0, 4, 1.0, 1.0), 6.0);
        assert_eq!(cp_overlap(6.0, 2.0, 1, 1.0, 1.0), 8.0);
    }

    #[test]
    fn ep_and_pp_examples() {
        assert_eq!(ep_overlap(10.0, 4.0, 1.0, 1.0), 10.0);
        assert_eq!(ep_overlap(0.0, 4.0, 1.0, 1.0), 4.0);
        assert_eq!(ep_overlap(10.0, 4.0, 2.0, 1.0), 20.0);
        assert_eq!(pp_overlap(3.0, 5.0, 1.0, 1.0), 0.0);
        assert_eq!(pp_overlap(7.0, 5.0, 1.0, 1.0), 2.0);
        assert_eq!(pp_overlap(7.0, 0.0, 1.0, 1.0), 7.0);
    }

    #[test]
    fn dp_overlap_modes() {
        let input = DpOverlapInputs {
            rs: &[1.0, 1.0],
            ag: &[1.0, 1.0],
            fwd: 1.0,
            bwd: 3.0,
            p: 2,
            layers_per_chunk: 1,
        };
        let max_form = DpOverlap {
            mode: DpOverlapMode::MaxForm,
            ..DpOverlap::default()
        };
        assert_eq!(dp_overlap(&input, &max_form).unwrap(), 10.0);
        assert_eq!(dp_overlap(&input, &DpOverlap::default()).unwrap(), 2.0);
        let single = DpOverlapInputs {
            rs: &[1.0],
            ag: &[1.0],
            ..input
        };
        assert_eq!(dp_overlap(&single, &DpOverlap::default()).unwrap(), 2.0);
        let bad = DpOverlapInputs {
            rs: &[1.0],
            ag: &[],
            ..input
        };
        assert!(dp_overlap(&bad, &DpOverlap::default()).is_err());
    }

    #[test]
    fn optimizer_strategies() {
        let dt = Dtypes {
            activation: 2.0,
            param: 2.0,
            grad: 2.0,
            optimizer: 4.0,
        };
        let input = OptimizerInputs {
            stage_params: 10.0,
            layer_params: 10.0,
            d: 4,
            base_update: 8.0,
        };
        let (m, t) = apply_optimizer_strategy(OptimizerStrategy::Distributed, &input, &dt, &hw()).unwrap();
        assert_eq!((m, t), (40.0, 2.0));

        let big = OptimizerInputs {
            stage_params: 10e9,
            layer_params: 10e9,
            d: 1,
            base_update: 0.0,
        };
        // 4·4·10e9 = 160e9 bytes of states against 200e9 of host memory.
        let (m, _) = apply_optimizer_strategy(OptimizerStrategy::Cpu, &big, &dt, &hw()).unwrap();
        assert_eq!(m, 0.0);

        let cpu = OptimizerInputs {
            stage_params: 1e9,
            layer_params: 1e9,
            d: 1,
            base_update: 0.0,
        };
        let (_, t) = apply_optimizer_strategy(OptimizerStrategy::Cpu, &cpu, &dt, &hw()).unwrap();
        assert!((t - 1.125).abs() < 1e-12);

        let mut no_cpu = hw();
        no_cpu.cpu_ops = None;
        assert!(matches!(
            apply_optimizer_strategy(OptimizerStrategy::Cpu, &cpu, &dt, &no_cpu),
            Err(Error::Config(_))
        ));
    }

    fn act_inputs() -> ActivationInputs {
        ActivationInputs {
            factor: 3.0,
            layers_per_unit: 1.0,
            layer_act: 10.0,
            attention_act: 4.0,
            input_act: 2.0,
            fwd: 3.0,
            bwd: 5.0,
            qkv_time: 1.0,
            attention_time: 2.0,
        }
    }

    #[test]
    fn activation_strategies() {
        let hw = hw();
        let sel = apply_activation_strategy(ActivationStrategy::SelectiveRecompute, &act_inputs(), &hw).unwrap();
        assert_eq!((sel.memory, sel.fwd, sel.bwd), (18.0, 3.0, 8.0));
        let full = apply_activation_strategy(ActivationStrategy::FullRecompute, &act_inputs(), &hw).unwrap();
        assert_eq!((full.memory, full.fwd, full.bwd), (6.0, 3.0, 8.0));
        let off_in = ActivationInputs {
            layer_act: 32e9,
            fwd: 0.8,
            ..act_inputs()
        };
        let off = apply_activation_strategy(ActivationStrategy::Offload(OffloadCoeffs::default()), &off_in, &hw).unwrap();
        assert_eq!(off.fwd, 1.0);
        assert_eq!(off.memory, 32e9);
        let mut no_link = hw.clone();
        no_link.d2h_bandwidth = None;
        assert!(apply_activation_strategy(ActivationStrategy::Offload(OffloadCoeffs::default()), &off_in, &no_link).is_err());
    }

    #[test]
    fn labels() {
        let set = OptimizationSet::all_overlaps("x", OptimizerStrategy::Cpu, ActivationStrategy::FullRecompute);
        assert_eq!(
            set.feature_labels().to_string(),
            "LO[tp-overlap,cp-overlap,ep-overlap] PO[pp-overlap] OO[dp-overlap] MO[cpu-optimizer,full-recompute]"
        );
        assert_eq!(OptimizationSet::baseline().feature_labels().to_string(), "LO[-] PO[-] OO[-] MO[-]");
    }

    #[test]
    fn validation_rejects_sub_unit_coefficients() {
        let mut set = OptimizationSet::baseline();
        set.pp_overlap = Some(OverlapCoeffs { alpha: 0.5, beta: 1.0 });
        assert!(set.validate().is_err());
        set.pp_overlap = None;
        set.compute_scale.insert("qkv".into(), 0.0);
        assert!(set.validate().is_err());
        assert_eq!(OptimizationSet::default_allowlist().len(), 12);
        for s in OptimizationSet::default_allowlist() {
            s.validate().unwrap();
        }
    }

    proptest! {
        #[test]
        fn overlaps_lie_between_max_and_sum(a in 0.0f64..1e3, b in 0.0f64..1e3, n in 1u32..64) {
            let tp = tp_overlap(a, b, n, 1.0, 1.0);
            prop_assert!(a.max(b) <= tp && tp <= a + b + 1e-9);
            let cp = cp_overlap(a, b, n, 1.0, 1.0);
            prop_assert!(a.max(b) <= cp && cp <= a + b + 1e-9);
            let ep = ep_overlap(a, b, 1.0, 1.0);
            prop_assert!(a.max(b) <= ep && ep <= a + b);
            let pp = pp_overlap(a, b, 1.0, 1.0);
            prop_assert!(0.0 <= pp && pp <= a);
        }

        #[test]
        fn overlaps_monotone(a in 0.0f64..1e3, b in 0.0f64..1e3, da in 0.0f64..10.0, alpha in 1.0f64..3.0, beta in 1.0f64..3.0) {
            prop_assert!(tp_overlap(a + da, b, 4, alpha, beta) >= tp_overlap(a, b, 4, alpha, beta));
            prop_assert!(tp_overlap(a, b + da, 4, alpha, beta) >= tp_overlap(a, b, 4, alpha, beta));
            prop_assert!(tp_overlap(a, b, 4, alpha + da, beta) >= tp_overlap(a, b, 4, alpha, beta));
            prop_assert!(ep_overlap(a + da, b, alpha, beta) >= ep_overlap(a, b, alpha, beta));
            prop_assert!(pp_overlap(a + da, b, alpha, beta) >= pp_overlap(a, b, alpha, beta));
        }

        #[test]
        fn cp_single_rank_is_plain_sum(a in 0.0f64..1e3, b in 0.0f64..1e3) {
            prop_assert!((cp_overlap(a, b, 1, 1.0, 1.0) - (a + b)).abs() <= 1e-9 * (a + b).max(1.0));
        }

        #[test]
        fn full_recompute_adds_exactly_forward(fk in 0u32..1 << 20, bk in 0u32..1 << 20) {
            // Dyadic inputs keep the subtraction free of rounding.
            let (fwd, bwd) = (fk as f64 / 1024.0, bk as f64 / 1024.0);
            let input = ActivationInputs { fwd, bwd, ..act_inputs() };
            let out = apply_activation_strategy(ActivationStrategy::FullRecompute, &input, &hw()).unwrap();
            prop_assert_eq!(out.bwd - bwd, fwd);
        }

        #[test]
        fn memory_strategies_never_increase_activation_memory(
            layer in 1.0f64..1e9, attn_frac in 0.0f64..1.0, input_frac in 0.0f64..1.0, factor in 1.0f64..20.0
        ) {
            let input = ActivationInputs {
                factor,
                layer_act: layer,
                attention_act: layer * attn_frac,
                input_act: layer * input_frac,
                ..act_inputs()
            };
            let hw = hw();
            let none = apply_activation_strategy(ActivationStrategy::None, &input, &hw).unwrap().memory;
            for s in [ActivationStrategy::SelectiveRecompute, ActivationStrategy::FullRecompute, ActivationStrategy::Offload(OffloadCoeffs::default())] {
                prop_assert!(apply_activation_strategy(s, &input, &hw).unwrap().memory <= none);
            }
        }
    }
}
