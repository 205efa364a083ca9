//! Hardware description, profiled operator throughputs and collective
//! bandwidths, plus the primitive latency functions built on them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arch::{decompose, ModelArchitecture, StructureKind};
use crate::error::{Error, Result};
use crate::plan::ParallelPlan;

const GB: f64 = 1e9;
const TERA: f64 = 1e12;

/// Hardware capabilities in SI units (bytes, bytes/s, FLOP/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    /// Host-to-device bandwidth.
    pub h2d_bandwidth: Option<f64>,
    /// Device-to-host bandwidth.
    pub d2h_bandwidth: Option<f64>,
    pub disk_load_bandwidth: Option<f64>,
    pub disk_write_bandwidth: Option<f64>,
    pub cpu_memory: Option<f64>,
    /// CPU update throughput in operations per second.
    pub cpu_ops: Option<f64>,
    pub gpu_peak_flops: f64,
    pub gpu_memory: f64,
    pub gpus_per_node: u32,
    pub hbm_bandwidth: f64,
    /// Optimizer update throughput in parameters per second.
    pub optimizer_throughput: f64,
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<()> {
        let required = [
            ("P_GPU", self.gpu_peak_flops),
            ("M_GPU", self.gpu_memory),
            ("B_HBM", self.hbm_bandwidth),
            ("P_opt", self.optimizer_throughput),
        ];
        for (name, value) in required {
            if !(value > 0.0) {
                return Err(Error::config(format!("hardware field {name} must be > 0")));
            }
        }
        let optional = [
            ("B_H2D", self.h2d_bandwidth),
            ("B_D2H", self.d2h_bandwidth),
            ("B_DL", self.disk_load_bandwidth),
            ("B_DW", self.disk_write_bandwidth),
            ("M_CPU", self.cpu_memory),
            ("F_CPU", self.cpu_ops),
        ];
        for (name, value) in optional {
            if let Some(v) = value {
                if !(v > 0.0) {
                    return Err(Error::config(format!("hardware field {name} must be > 0")));
                }
            }
        }
        if self.gpus_per_node == 0 {
            return Err(Error::config("hardware field N must be >= 1"));
        }
        Ok(())
    }
}

/// Hardware file layout, in the units practitioners quote: GB/s, GB, GHz,
/// TFLOPS, and billions of parameters per second for the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct HardwareFile {
    #[serde(default)]
    pub B_H2D: Option<f64>,
    #[serde(default)]
    pub B_D2H: Option<f64>,
    #[serde(default)]
    pub B_DL: Option<f64>,
    #[serde(default)]
    pub B_DW: Option<f64>,
    #[serde(default)]
    pub M_CPU: Option<f64>,
    #[serde(default)]
    pub F_CPU: Option<f64>,
    pub P_GPU: f64,
    pub M_GPU: f64,
    pub N: u32,
    pub B_HBM: f64,
    pub P_opt: f64,
}

impl From<&HardwareFile> for HardwareSpec {
    fn from(f: &HardwareFile) -> Self {
        HardwareSpec {
            h2d_bandwidth: f.B_H2D.map(|x| x * GB),
            d2h_bandwidth: f.B_D2H.map(|x| x * GB),
            disk_load_bandwidth: f.B_DL.map(|x| x * GB),
            disk_write_bandwidth: f.B_DW.map(|x| x * GB),
            cpu_memory: f.M_CPU.map(|x| x * GB),
            cpu_ops: f.F_CPU.map(|x| x * 1e9),
            gpu_peak_flops: f.P_GPU * TERA,
            gpu_memory: f.M_GPU * GB,
            gpus_per_node: f.N,
            hbm_bandwidth: f.B_HBM * GB,
            optimizer_throughput: f.P_opt * 1e9,
        }
    }
}

/// `S / P`: compute latency from FLOPs and throughput.
pub fn op_time(flops: f64, throughput: f64) -> Result<f64> {
    if !(throughput > 0.0) {
        return Err(Error::input(format!("throughput must be > 0, got {throughput}")));
    }
    Ok(flops / throughput)
}

/// `S / (β·B)`: communication latency with bandwidth decay.
pub fn comm_time(bytes: f64, bandwidth: f64, beta: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::input(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::input(format!("decay factor must lie in (0, 1], got {beta}")));
    }
    Ok(bytes / (beta * bandwidth))
}

/// `min(S_c/S_m · B_HBM, P_GPU)`. Zero memory traffic means compute-bound.
pub fn roofline_bound(flops: f64, bytes: f64, hw: &HardwareSpec) -> f64 {
    if bytes <= 0.0 {
        return hw.gpu_peak_flops;
    }
    roofline_at_intensity(flops / bytes, hw)
}

pub fn roofline_at_intensity(intensity: f64, hw: &HardwareSpec) -> f64 {
    (intensity * hw.hbm_bandwidth).min(hw.gpu_peak_flops)
}

/// Empirical roofline: a linear fit on the memory-bound arm, capped at a
/// ceiling (the device peak when none is given). Values in FLOP/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflineFit {
    /// FLOP/s gained per FLOP/byte of intensity.
    pub slope: f64,
    pub intercept: f64,
    #[serde(default)]
    pub ceiling: Option<f64>,
}

impl RooflineFit {
    pub fn bound(&self, intensity: f64, hw: &HardwareSpec) -> f64 {
        let cap = self.ceiling.unwrap_or(hw.gpu_peak_flops);
        (self.slope * intensity + self.intercept).min(cap).max(0.0)
    }
}

/// A measured operator: arithmetic intensity and achieved throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub label: String,
    /// FLOP per byte.
    pub intensity: f64,
    /// Achieved FLOP/s.
    pub achieved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineAssessment {
    pub label: String,
    pub intensity: f64,
    pub achieved: f64,
    pub theoretical_bound: f64,
    pub modified_bound: f64,
    /// `achieved / modified_bound`.
    pub efficiency: f64,
    /// Relative gain available by reaching the modified bound.
    pub headroom: f64,
    pub outlier: bool,
}

/// Compares profiled operators against both rooflines; points whose
/// efficiency against the modified roofline falls below `threshold` are
/// flagged.
pub fn assess_roofline(
    points: &[RooflinePoint],
    hw: &HardwareSpec,
    fit: &RooflineFit,
    threshold: f64,
) -> Vec<RooflineAssessment> {
    points
        .iter()
        .map(|pt| {
            let theoretical = roofline_at_intensity(pt.intensity, hw);
            let modified = fit.bound(pt.intensity, hw);
            let efficiency = if modified > 0.0 { pt.achieved / modified } else { 1.0 };
            RooflineAssessment {
                label: pt.label.clone(),
                intensity: pt.intensity,
                achieved: pt.achieved,
                theoretical_bound: theoretical,
                modified_bound: modified,
                efficiency,
                headroom: if pt.achieved > 0.0 { modified / pt.achieved - 1.0 } else { 0.0 },
                outlier: efficiency < threshold,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Collective {
    AllGather,
    ReduceScatter,
    AllReduce,
    AllToAll,
    P2p,
}

impl Collective {
    pub fn name(&self) -> &'static str {
        match self {
            Collective::AllGather => "all-gather",
            Collective::ReduceScatter => "reduce-scatter",
            Collective::AllReduce => "all-reduce",
            Collective::AllToAll => "all-to-all",
            Collective::P2p => "p2p",
        }
    }
}

impl fmt::Display for Collective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Collective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-gather" => Ok(Collective::AllGather),
            "reduce-scatter" => Ok(Collective::ReduceScatter),
            "all-reduce" => Ok(Collective::AllReduce),
            "all-to-all" => Ok(Collective::AllToAll),
            "p2p" => Ok(Collective::P2p),
            other => Err(Error::input(format!("unknown collective `{other}`"))),
        }
    }
}

/// Measured forward/backward throughput of one module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeEntry {
    pub module: String,
    /// Shape signature this measurement applies to; `None` matches any shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    /// Forward FLOP/s.
    pub fwd: f64,
    /// Backward FLOP/s; defaults to `fwd`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bwd: Option<f64>,
    /// Backward-to-forward FLOPs ratio; defaults to the model setting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bwd_flops_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// FLOP/byte of the kernel, used to cap scaled throughput at the roofline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
}

impl ComputeEntry {
    pub fn uniform(module: &str, throughput: f64) -> Self {
        Self {
            module: module.to_string(),
            shape: None,
            fwd: throughput,
            bwd: None,
            bwd_flops_ratio: None,
            lambda: None,
            intensity: None,
        }
    }

    pub fn bwd_throughput(&self) -> f64 {
        self.bwd.unwrap_or(self.fwd)
    }
}

/// Measured algorithm bandwidth of one collective at one message size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommEntry {
    pub collective: Collective,
    /// Group size; `None` matches any group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_size: Option<u32>,
    pub message_bytes: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    #[serde(default = "unit")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

/// Bandwidth parameters resolved for one message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    /// Bandwidth after profile-level scaling, bytes/s.
    pub bandwidth: f64,
    pub beta: f64,
}

/// Profiled operator and collective performance. Immutable after load.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileDb {
    #[serde(default)]
    pub compute: Vec<ComputeEntry>,
    #[serde(default)]
    pub comm: Vec<CommEntry>,
}

impl ProfileDb {
    pub fn validate(&self) -> Result<()> {
        for c in &self.compute {
            if !(c.fwd > 0.0) || c.bwd.is_some_and(|b| !(b > 0.0)) {
                return Err(Error::config(format!("throughput for `{}` must be > 0", c.module)));
            }
            if c.lambda.is_some_and(|l| !(l > 0.0)) || c.bwd_flops_ratio.is_some_and(|r| r < 0.0) {
                return Err(Error::config(format!("invalid scaling for `{}`", c.module)));
            }
        }
        for c in &self.comm {
            if !(c.bandwidth > 0.0) {
                return Err(Error::config(format!("bandwidth for {} must be > 0", c.collective)));
            }
            if !(c.beta > 0.0 && c.beta <= 1.0) {
                return Err(Error::config(format!(
                    "decay factor for {} must lie in (0, 1], got {}",
                    c.collective, c.beta
                )));
            }
            if !(c.message_bytes > 0.0) {
                return Err(Error::config(format!("message size for {} must be > 0", c.collective)));
            }
        }
        Ok(())
    }

    /// Finds the throughput entry for a module: exact shape, then any shape
    /// for the module, then the `*` wildcard module.
    pub fn compute_entry(&self, module: &str, signature: &str) -> Result<&ComputeEntry> {
        let exact = self
            .compute
            .iter()
            .find(|e| e.module == module && e.shape.as_deref() == Some(signature));
        exact
            .or_else(|| self.compute.iter().find(|e| e.module == module && e.shape.is_none()))
            .or_else(|| self.compute.iter().find(|e| e.module == "*" && e.shape.is_none()))
            .ok_or_else(|| Error::Lookup(format!("module `{module}` at shape `{signature}`")))
    }

    /// Interpolated bandwidth and decay for a collective. Entries for the exact
    /// group size win over group-agnostic ones; between profiled message
    /// sizes the curve is linear in log(size), and it is clamped beyond them.
    pub fn link(&self, collective: Collective, group: u32, bytes: f64) -> Result<LinkSample> {
        let mut curve: Vec<&CommEntry> = self
            .comm
            .iter()
            .filter(|e| e.collective == collective && e.group_size == Some(group))
            .collect();
        if curve.is_empty() {
            curve = self
                .comm
                .iter()
                .filter(|e| e.collective == collective && e.group_size.is_none())
                .collect();
        }
        if curve.is_empty() {
            return Err(Error::Lookup(format!("{collective} at group size {group}")));
        }
        curve.sort_by(|a, b| a.message_bytes.total_cmp(&b.message_bytes));
        let scaled = |e: &CommEntry| e.bandwidth * e.lambda.unwrap_or(1.0);
        let first = curve[0];
        let last = curve[curve.len() - 1];
        if bytes <= first.message_bytes {
            return Ok(LinkSample {
                bandwidth: scaled(first),
                beta: first.beta,
            });
        }
        if bytes >= last.message_bytes {
            return Ok(LinkSample {
                bandwidth: scaled(last),
                beta: last.beta,
            });
        }
        let upper = curve.partition_point(|e| e.message_bytes <= bytes);
        let (lo, hi) = (curve[upper - 1], curve[upper]);
        let w = (bytes.ln() - lo.message_bytes.ln()) / (hi.message_bytes.ln() - lo.message_bytes.ln());
        Ok(LinkSample {
            bandwidth: scaled(lo) + w * (scaled(hi) - scaled(lo)),
            beta: lo.beta + w * (hi.beta - lo.beta),
        })
    }
}

/// Shape signature used to key compute measurements: `b{m_bs}s{s/c}h{h}t{t}`.
pub fn shape_signature(arch: &ModelArchitecture, plan: &ParallelPlan) -> String {
    format!(
        "b{}s{}h{}t{}",
        plan.m_bs,
        arch.seq_len / plan.c.max(1),
        arch.hidden,
        plan.t
    )
}

/// Profile file layout: throughputs in TFLOPS, bandwidths in GB/s, message sizes in bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    #[serde(default)]
    pub compute: Vec<ComputeEntry>,
    #[serde(default)]
    pub comm: Vec<CommEntry>,
}

impl From<&ProfileFile> for ProfileDb {
    fn from(f: &ProfileFile) -> Self {
        ProfileDb {
            compute: f
                .compute
                .iter()
                .map(|e| ComputeEntry {
                    fwd: e.fwd * TERA,
                    bwd: e.bwd.map(|b| b * TERA),
                    ..e.clone()
                })
                .collect(),
            comm: f
                .comm
                .iter()
                .map(|e| CommEntry {
                    bandwidth: e.bandwidth * GB,
                    ..e.clone()
                })
                .collect(),
        }
    }
}

/// Communication pattern whose per-invocation volume is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeKind {
    TpAllGather,
    TpReduceScatter,
    PpP2p,
    Dp,
    EpAllToAll,
    CpP2p,
}

impl FromStr for VolumeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tp-all-gather" => Ok(VolumeKind::TpAllGather),
            "tp-reduce-scatter" => Ok(VolumeKind::TpReduceScatter),
            "pp-p2p" => Ok(VolumeKind::PpP2p),
            "dp" => Ok(VolumeKind::Dp),
            "ep-all-to-all" => Ok(VolumeKind::EpAllToAll),
            "cp-p2p" => Ok(VolumeKind::CpP2p),
            other => Err(Error::input(format!("unknown communication kind `{other}`"))),
        }
    }
}

/// Element widths in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dtypes {
    #[serde(default = "two")]
    pub activation: f64,
    #[serde(default = "two")]
    pub param: f64,
    #[serde(default = "two")]
    pub grad: f64,
    #[serde(default = "four")]
    pub optimizer: f64,
}

fn two() -> f64 {
    2.0
}

fn four() -> f64 {
    4.0
}

impl Default for Dtypes {
    fn default() -> Self {
        Self {
            activation: 2.0,
            param: 2.0,
            grad: 2.0,
            optimizer: 4.0,
        }
    }
}

/// Bytes moved by one invocation of the given pattern.
pub fn comm_volume(kind: VolumeKind, plan: &ParallelPlan, arch: &ModelArchitecture, dtypes: &Dtypes) -> Result<f64> {
    let b = plan.m_bs as f64;
    let s_local = arch.seq_len as f64 / plan.c as f64;
    let h = arch.hidden as f64;
    let dt = dtypes.activation;
    Ok(match kind {
        VolumeKind::TpAllGather | VolumeKind::TpReduceScatter => b * s_local * h * dt,
        VolumeKind::PpP2p | VolumeKind::CpP2p => b * s_local * h * dt,
        VolumeKind::EpAllToAll => b * s_local * arch.top_k.unwrap_or(1) as f64 * h * dt,
        VolumeKind::Dp => {
            let layers = plan.layers_per_chunk(arch.layers)? as f64;
            let params = decompose(arch, plan, dt)?.layer_params();
            dtypes.grad * plan.v as f64 * layers * params
        }
    })
}

/// `D_grad · v · l · ΣS` from already-known parameter counts.
pub fn dp_volume(grad_bytes: f64, v: u32, layers_per_chunk: u32, layer_params: f64) -> f64 {
    grad_bytes * v as f64 * layers_per_chunk as f64 * layer_params
}

/// Invocations of `kind` in one layer's forward pass (the backward mirrors it).
pub fn invocations_per_layer(kind: VolumeKind, plan: &ParallelPlan, arch: &ModelArchitecture) -> u32 {
    match kind {
        // Sequence-parallel layout: one all-gather and one reduce-scatter
        // around each of the attention and MLP blocks.
        VolumeKind::TpAllGather | VolumeKind::TpReduceScatter => {
            if plan.t > 1 {
                2
            } else {
                0
            }
        }
        VolumeKind::CpP2p => plan.c.saturating_sub(1),
        VolumeKind::EpAllToAll => {
            if plan.e > 1 && arch.structure == StructureKind::Moe {
                2
            } else {
                0
            }
        }
        VolumeKind::PpP2p | VolumeKind::Dp => 0,
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
            cpu_memory: Some(2e9),
            cpu_ops: Some(1e9),
            gpu_peak_flops: 512e12,
            gpu_memory: 32e9,
            gpus_per_node: 8,
            hbm_bandwidth: 2000e9,
            optimizer_throughput: 1e10,
        }
    }

    #[test]
    fn op_time_examples() {
        assert_eq!(op_time(2e12, 1e12).unwrap(), 2.0);
        assert_eq!(op_time(0.0, 1e12).unwrap(), 0.0);
        let t = op_time(1.649e12, 2e14).unwrap();
        assert!((t - 8.245e-3).abs() < 1e-6);
        assert!(op_time(1.0, 0.0).is_err());
        assert!(op_time(1.0, -3.0).is_err());
    }

    #[test]
    fn comm_time_examples() {
        assert_eq!(comm_time(10e9, 100e9, 1.0).unwrap(), 0.1);
        assert_eq!(comm_time(10e9, 100e9, 0.5).unwrap(), 0.2);
        assert_eq!(comm_time(0.0, 100e9, 1.0).unwrap(), 0.0);
        assert!(comm_time(1.0, 1.0, 0.0).is_err());
        assert!(comm_time(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn roofline_examples() {
        let hw = hw();
        assert_eq!(roofline_bound(100.0, 1.0, &hw), 2.0e14);
        assert_eq!(roofline_bound(1e9, 1.0, &hw), hw.gpu_peak_flops);
        assert_eq!(roofline_bound(5.0, 0.0, &hw), hw.gpu_peak_flops);
    }

    #[test]
    fn modified_roofline_flags_underperforming_kernel() {
        let mut hw = hw();
        hw.gpu_peak_flops = 1024e12;
        // Fit passing through the recovered position of the slow kernel.
        let fit = RooflineFit {
            slope: 389.3e12 / 937.2,
            intercept: 0.0,
            ceiling: None,
        };
        let points = vec![
            RooflinePoint {
                label: "slow".into(),
                intensity: 937.2,
                achieved: 178.8e12,
            },
            RooflinePoint {
                label: "tuned".into(),
                intensity: 937.2,
                achieved: 389.3e12,
            },
        ];
        let out = assess_roofline(&points, &hw, &fit, 0.8);
        assert!(out[0].outlier);
        assert!(!out[1].outlier);
        assert!((out[0].headroom - 1.1773).abs() < 1e-4);
    }

    fn profile() -> ProfileDb {
        ProfileDb {
            compute: vec![
                ComputeEntry::uniform("qkv", 100e12),
                ComputeEntry {
                    shape: Some("b1s4096h8192t8".into()),
                    ..ComputeEntry::uniform("qkv", 200e12)
                },
                ComputeEntry::uniform("*", 50e12),
            ],
            comm: vec![
                CommEntry {
                    collective: Collective::AllGather,
                    group_size: Some(8),
                    message_bytes: 1e6,
                    bandwidth: 10e9,
                    beta: 1.0,
                    lambda: None,
                },
                CommEntry {
                    collective: Collective::AllGather,
                    group_size: Some(8),
                    message_bytes: 1e8,
                    bandwidth: 30e9,
                    beta: 0.5,
                    lambda: None,
                },
                CommEntry {
                    collective: Collective::P2p,
                    group_size: None,
                    message_bytes: 1e6,
                    bandwidth: 20e9,
                    beta: 1.0,
                    lambda: Some(2.0),
                },
            ],
        }
    }

    #[test]
    fn compute_lookup_precedence() {
        let db = profile();
        assert_eq!(db.compute_entry("qkv", "b1s4096h8192t8").unwrap().fwd, 200e12);
        assert_eq!(db.compute_entry("qkv", "other").unwrap().fwd, 100e12);
        assert_eq!(db.compute_entry("softmax", "other").unwrap().fwd, 50e12);
        let empty = ProfileDb::default();
        match empty.compute_entry("qkv", "x") {
            Err(Error::Lookup(key)) => assert!(key.contains("qkv")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bandwidth_interpolates_in_log_size_and_clamps() {
        let db = profile();
        let mid = db.link(Collective::AllGather, 8, 1e7).unwrap();
        assert!((mid.bandwidth - 20e9).abs() < 1.0);
        assert!((mid.beta - 0.75).abs() < 1e-12);
        assert_eq!(db.link(Collective::AllGather, 8, 10.0).unwrap().bandwidth, 10e9);
        assert_eq!(db.link(Collective::AllGather, 8, 1e12).unwrap().bandwidth, 30e9);
        // group-agnostic fallback with profile-level scaling
        assert_eq!(db.link(Collective::P2p, 2, 5.0).unwrap().bandwidth, 40e9);
        assert!(matches!(db.link(Collective::AllToAll, 8, 1.0), Err(Error::Lookup(_))));
        assert!(matches!(db.link(Collective::AllGather, 4, 1.0), Err(Error::Lookup(_))));
    }

    #[test]
    fn volumes() {
        let arch = ModelArchitecture::dense(8, 8192, 4096, 64, 28672, 32000);
        let plan = ParallelPlan::new(1, 1, 2, 1, 1, 1, 8, 1);
        let dt = Dtypes::default();
        assert_eq!(comm_volume(VolumeKind::PpP2p, &plan, &arch, &dt).unwrap(), 67_108_864.0);
        assert_eq!(dp_volume(2.0, 1, 1, 10.0), 20.0);
        assert_eq!(invocations_per_layer(VolumeKind::TpAllGather, &plan, &arch), 0);
        let tp = ParallelPlan::new(8, 1, 2, 1, 1, 1, 8, 1);
        assert_eq!(invocations_per_layer(VolumeKind::TpAllGather, &tp, &arch), 2);
        assert_eq!(invocations_per_layer(VolumeKind::TpReduceScatter, &tp, &arch), 2);
        assert!("broadcast".parse::<VolumeKind>().is_err());
        assert!("gossip".parse::<Collective>().is_err());
    }

    #[test]
    fn dp_volume_matches_decomposition() {
        let arch = ModelArchitecture::dense(8, 64, 32, 4, 128, 100);
        let plan = ParallelPlan::new(2, 1, 2, 1, 2, 1, 8, 2);
        let dt = Dtypes::default();
        let params = decompose(&arch, &plan, 2.0).unwrap().layer_params();
        let got = comm_volume(VolumeKind::Dp, &plan, &arch, &dt).unwrap();
        assert_eq!(got, 2.0 * 2.0 * 2.0 * params);
    }

    #[test]
    fn hardware_units_convert_to_si() {
        let file = HardwareFile {
            B_H2D: Some(32.0),
            B_D2H: Some(32.0),
            B_DL: None,
            B_DW: None,
            M_CPU: Some(2.0),
            F_CPU: Some(2.5),
            P_GPU: 512.0,
            M_GPU: 32.0,
            N: 8,
            B_HBM: 1600.0,
            P_opt: 10.0,
        };
        let hw = HardwareSpec::from(&file);
        assert_eq!(hw.gpu_peak_flops, 512e12);
        assert_eq!(hw.gpu_memory, 32e9);
        assert_eq!(hw.cpu_ops, Some(2.5e9));
        assert_eq!(hw.h2d_bandwidth, Some(32e9));
        hw.validate().unwrap();
    }

    proptest! {
        #[test]
        fn comm_time_linear_and_monotone(bytes in 0.0f64..1e12, bw in 1.0f64..1e12, beta in 0.01f64..1.0, k in 1.0f64..4.0) {
            let base = comm_time(bytes, bw, beta).unwrap();
            let scaled = comm_time(bytes * k, bw, beta).unwrap();
            prop_assert!((scaled - k * base).abs() <= 1e-9 * scaled.max(1e-300));
            let faster = comm_time(bytes, bw * k, beta).unwrap();
            prop_assert!(faster <= base);
        }

        #[test]
        fn roofline_never_exceeds_peak(intensity in 0.0f64..1e6) {
            let hw = hw();
            let bound = roofline_at_intensity(intensity, &hw);
            prop_assert!(bound <= hw.gpu_peak_flops);
            let ridge = hw.gpu_peak_flops / hw.hbm_bandwidth;
            prop_assert_eq!(bound == hw.gpu_peak_flops, intensity >= ridge);
        }

        #[test]
        fn interpolation_is_continuous(x in 6.0f64..8.0) {
            let db = profile();
            let size = 10f64.powf(x);
            let eps = size * 1e-9;
            let a = db.link(Collective::AllGather, 8, size).unwrap().bandwidth;
            let b = db.link(Collective::AllGather, 8, size + eps).unwrap().bandwidth;
            prop_assert!((a - b).abs() < 1e3);
        }
    }
}
