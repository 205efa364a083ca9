//! Model architecture description and its three-level decomposition into
//! per-module FLOPs, retained activations and per-device parameter counts.
//!
//! Every per-layer row is linear in the micro-batch size `b`. Sequence terms
//! use the context-parallel local length `s/c` (the quadratic attention rows
//! included), and every row is divided by the tensor-parallel size `t`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::ParallelPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    #[serde(rename = "MHA")]
    Mha,
    #[serde(rename = "GQA")]
    Gqa,
    /// Attention accounted from a user-supplied module table.
    #[serde(rename = "MLA", alias = "MLA-plugin")]
    MlaPlugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StructureKind {
    #[default]
    Dense,
    #[serde(rename = "MoE")]
    Moe,
}

/// Which recompute bucket a custom attention module falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleRole {
    Qkv,
    Attention,
    #[default]
    Other,
}

/// Per-token cost of one module in an attention variant that the built-in
/// table does not cover. Totals are `(per_token + per_token_per_seq·s)·b·s / t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleOverride {
    pub name: String,
    #[serde(default)]
    pub flops_per_token: f64,
    #[serde(default)]
    pub flops_per_token_per_seq: f64,
    /// Retained activation elements per token.
    #[serde(default)]
    pub act_per_token: f64,
    #[serde(default)]
    pub act_per_token_per_seq: f64,
    /// Unsharded weight count.
    #[serde(default)]
    pub params: f64,
    #[serde(default)]
    pub role: ModuleRole,
}

/// Transformer hyperparameters. Field names on the wire follow the usual
/// `L, s, h, a, q, g_d, g_e, t_k, V, r` notation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchitecture {
    #[serde(rename = "L")]
    pub layers: u32,
    #[serde(rename = "h")]
    pub hidden: u32,
    #[serde(rename = "s")]
    pub seq_len: u32,
    #[serde(rename = "a")]
    pub heads: u32,
    #[serde(rename = "q", default, skip_serializing_if = "Option::is_none")]
    pub query_groups: Option<u32>,
    #[serde(rename = "g_d")]
    pub dense_ffn: u32,
    #[serde(rename = "g_e", default, skip_serializing_if = "Option::is_none")]
    pub expert_ffn: Option<u32>,
    #[serde(rename = "t_k", default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_experts: Option<u32>,
    #[serde(rename = "r", default, skip_serializing_if = "Option::is_none")]
    pub latent_rank: Option<u32>,
    #[serde(rename = "V")]
    pub vocab: u32,
    #[serde(rename = "attention", alias = "attention_type")]
    pub attention: AttentionKind,
    #[serde(default)]
    pub structure: StructureKind,
    /// Module table replacing the attention block when `attention` is MLA.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attention_modules: Vec<ModuleOverride>,
    /// Use `g_e` instead of `g_d` in the first expert linear.
    #[serde(default)]
    pub moe_linear1_expert_width: bool,
}

impl ModelArchitecture {
    /// A dense multi-head-attention model; the other fields take neutral values.
    pub fn dense(layers: u32, hidden: u32, seq_len: u32, heads: u32, dense_ffn: u32, vocab: u32) -> Self {
        Self {
            layers,
            hidden,
            seq_len,
            heads,
            query_groups: None,
            dense_ffn,
            expert_ffn: None,
            top_k: None,
            num_experts: None,
            latent_rank: None,
            vocab,
            attention: AttentionKind::Mha,
            structure: StructureKind::Dense,
            attention_modules: Vec::new(),
            moe_linear1_expert_width: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("L", self.layers),
            ("h", self.hidden),
            ("s", self.seq_len),
            ("a", self.heads),
            ("V", self.vocab),
        ] {
            if value == 0 {
                return Err(Error::input(format!("model field {name} must be > 0")));
            }
        }
        if self.attention == AttentionKind::Gqa {
            let q = self
                .query_groups
                .ok_or_else(|| Error::input("GQA model requires q (query groups)"))?;
            if q == 0 || !self.heads.is_multiple_of(q) {
                return Err(Error::shape("q", format!("a = {} is not divisible by q = {q}", self.heads)));
            }
        }
        if self.attention == AttentionKind::MlaPlugin && self.attention_modules.is_empty() {
            return Err(Error::input(
                "MLA attention requires an `attention_modules` table",
            ));
        }
        if self.structure == StructureKind::Moe {
            let (Some(g_e), Some(t_k), Some(n)) = (self.expert_ffn, self.top_k, self.num_experts) else {
                return Err(Error::input("MoE model requires g_e, t_k and num_experts"));
            };
            if g_e == 0 || t_k == 0 || n == 0 {
                return Err(Error::input("MoE fields g_e, t_k, num_experts must be > 0"));
            }
            if t_k > n {
                return Err(Error::input(format!("t_k = {t_k} exceeds num_experts = {n}")));
            }
        }
        Ok(())
    }

    fn kv_ratio(&self) -> f64 {
        match (self.attention, self.query_groups) {
            (AttentionKind::Gqa, Some(q)) => q as f64 / self.heads as f64,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModuleKind {
    Embedding,
    Norm,
    Qkv,
    AttentionMap,
    Softmax,
    AttentionOnValue,
    OProjection,
    Router,
    MlpLinear1,
    Swiglu,
    MlpLinear2,
    Head,
    Custom(String),
}

impl ModuleKind {
    /// Identifier used for profile lookups.
    pub fn name(&self) -> &str {
        match self {
            ModuleKind::Embedding => "embedding",
            ModuleKind::Norm => "norm",
            ModuleKind::Qkv => "qkv",
            ModuleKind::AttentionMap => "attention-map",
            ModuleKind::Softmax => "softmax",
            ModuleKind::AttentionOnValue => "attention-on-value",
            ModuleKind::OProjection => "o-projection",
            ModuleKind::Router => "router",
            ModuleKind::MlpLinear1 => "mlp-linear-1",
            ModuleKind::Swiglu => "swiglu",
            ModuleKind::MlpLinear2 => "mlp-linear-2",
            ModuleKind::Head => "head",
            ModuleKind::Custom(name) => name,
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cost of one module for one micro-batch on one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleShape {
    pub kind: ModuleKind,
    pub flops_fwd: f64,
    pub act_bytes: f64,
    pub param_count: f64,
    /// Weights sharded over the expert-parallel group.
    #[serde(default)]
    pub expert: bool,
    #[serde(default)]
    pub role: ModuleRole,
}

impl ModuleShape {
    fn new(kind: ModuleKind, flops_fwd: f64, act_bytes: f64, param_count: f64) -> Self {
        let role = match kind {
            ModuleKind::Qkv => ModuleRole::Qkv,
            ModuleKind::AttentionMap | ModuleKind::Softmax | ModuleKind::AttentionOnValue => {
                ModuleRole::Attention
            }
            _ => ModuleRole::Other,
        };
        Self {
            kind,
            flops_fwd,
            act_bytes,
            param_count,
            expert: false,
            role,
        }
    }
}

/// Local work shape seen by one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShardShape {
    /// Micro-batch size `b`.
    pub batch: f64,
    /// Local sequence length `s/c`.
    pub seq: f64,
    pub tp: f64,
    pub ep: f64,
}

impl ShardShape {
    pub fn from_plan(arch: &ModelArchitecture, plan: &ParallelPlan) -> Self {
        Self {
            batch: plan.m_bs as f64,
            seq: arch.seq_len as f64 / plan.c as f64,
            tp: plan.t as f64,
            ep: plan.e as f64,
        }
    }

    /// Whole micro-batch on a single device.
    pub fn unsharded(arch: &ModelArchitecture, batch: f64) -> Self {
        Self {
            batch,
            seq: arch.seq_len as f64,
            tp: 1.0,
            ep: 1.0,
        }
    }
}

/// Embedding, one transformer layer, and head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub embedding: ModuleShape,
    pub layer: Vec<ModuleShape>,
    pub head: ModuleShape,
}

impl Decomposition {
    pub fn layer_flops(&self) -> f64 {
        self.layer.iter().map(|m| m.flops_fwd).sum()
    }

    pub fn layer_act_bytes(&self) -> f64 {
        self.layer.iter().map(|m| m.act_bytes).sum()
    }

    pub fn layer_params(&self) -> f64 {
        self.layer.iter().map(|m| m.param_count).sum()
    }

    pub fn module(&self, kind: &ModuleKind) -> Option<&ModuleShape> {
        self.layer.iter().find(|m| &m.kind == kind)
    }

    pub fn act_bytes_with_role(&self, role: ModuleRole) -> f64 {
        self.layer
            .iter()
            .filter(|m| m.role == role)
            .map(|m| m.act_bytes)
            .sum()
    }
}

/// Decomposes the model for the local shard described by `plan`.
pub fn decompose(arch: &ModelArchitecture, plan: &ParallelPlan, act_dtype_bytes: f64) -> Result<Decomposition> {
    arch.validate()?;
    check_sharding(arch, plan)?;
    Ok(decompose_shard(arch, &ShardShape::from_plan(arch, plan), act_dtype_bytes))
}

fn check_sharding(arch: &ModelArchitecture, plan: &ParallelPlan) -> Result<()> {
    let checks: [(&'static str, u32, u32); 3] = [
        ("h", arch.hidden, plan.t),
        ("a", arch.heads, plan.t),
        ("s", arch.seq_len, plan.c),
    ];
    for (dim, value, by) in checks {
        if by == 0 || value % by != 0 {
            return Err(Error::shape(dim, format!("{value} is not divisible by {by}")));
        }
    }
    if arch.structure == StructureKind::Moe {
        let n = arch.num_experts.unwrap_or(0);
        if plan.e == 0 || !n.is_multiple_of(plan.e) {
            return Err(Error::shape(
                "n_experts",
                format!("{n} experts are not divisible by e = {}", plan.e),
            ));
        }
    }
    Ok(())
}

/// Evaluates the module table at an explicit local shape. Infallible: the
/// caller is responsible for the divisibility checks in [`decompose`].
pub fn decompose_shard(arch: &ModelArchitecture, shard: &ShardShape, act_dtype_bytes: f64) -> Decomposition {
    let b = shard.batch;
    let s = shard.seq;
    let h = arch.hidden as f64;
    let t = shard.tp;
    let v = arch.vocab as f64;
    let dt = act_dtype_bytes;
    let bsh = b * s * h;

    let norm = || ModuleShape::new(ModuleKind::Norm, bsh / t, 2.0 * bsh * dt / t, 0.0);

    let mut layer = vec![norm()];
    match arch.attention {
        AttentionKind::Mha | AttentionKind::Gqa => {
            // K and V projections shrink by q/a under grouped-query attention.
            let qkv_width = 1.0 + 2.0 * arch.kv_ratio();
            layer.push(ModuleShape::new(
                ModuleKind::Qkv,
                2.0 * qkv_width * bsh * h / t,
                2.0 * bsh * dt / t,
                qkv_width * h * h / t,
            ));
            layer.push(ModuleShape::new(
                ModuleKind::AttentionMap,
                2.0 * b * s * s * h / t,
                6.0 * bsh * dt / t,
                0.0,
            ));
            layer.push(ModuleShape::new(
                ModuleKind::Softmax,
                0.0,
                2.0 * b * s * s * dt / t,
                0.0,
            ));
            layer.push(ModuleShape::new(
                ModuleKind::AttentionOnValue,
                2.0 * b * s * s * h / t,
                2.0 * b * s * s * dt / t,
                0.0,
            ));
            layer.push(ModuleShape::new(
                ModuleKind::OProjection,
                2.0 * bsh * h / t,
                2.0 * bsh * dt / t,
                h * h / t,
            ));
        }
        AttentionKind::MlaPlugin => {
            for m in &arch.attention_modules {
                let mut shape = ModuleShape::new(
                    ModuleKind::Custom(m.name.clone()),
                    (m.flops_per_token + m.flops_per_token_per_seq * s) * b * s / t,
                    (m.act_per_token + m.act_per_token_per_seq * s) * b * s * dt / t,
                    m.params / t,
                );
                shape.role = m.role;
                layer.push(shape);
            }
        }
    }
    layer.push(norm());

    match arch.structure {
        StructureKind::Dense => {
            let g = arch.dense_ffn as f64;
            layer.push(ModuleShape::new(
                ModuleKind::MlpLinear1,
                4.0 * bsh * g / t,
                2.0 * bsh * dt / t,
                2.0 * h * g / t,
            ));
            layer.push(ModuleShape::new(
                ModuleKind::Swiglu,
                b * s * g / t,
                b * s * g * dt / t,
                0.0,
            ));
            layer.push(ModuleShape::new(
                ModuleKind::MlpLinear2,
                2.0 * bsh * g / t,
                b * s * g * dt / t,
                h * g / t,
            ));
        }
        StructureKind::Moe => {
            let g_e = arch.expert_ffn.unwrap_or(0) as f64;
            // The first expert linear uses g_d by default; the flag switches it to g_e.
            let g_lin1 = if arch.moe_linear1_expert_width {
                g_e
            } else {
                arch.dense_ffn as f64
            };
            let top_k = arch.top_k.unwrap_or(1) as f64;
            let local_experts = arch.num_experts.unwrap_or(1) as f64 / shard.ep;
            // EP ranks share each micro-batch; every rank runs 1/e of the routed copies.
            let routed = top_k / shard.ep;
            layer.push(ModuleShape::new(ModuleKind::Router, 0.0, 0.0, 0.0));
            let mut lin1 = ModuleShape::new(
                ModuleKind::MlpLinear1,
                routed * 4.0 * bsh * g_lin1 / t,
                2.0 * bsh * dt / t,
                local_experts * 2.0 * h * g_e / t,
            );
            lin1.expert = true;
            let mut swiglu = ModuleShape::new(
                ModuleKind::Swiglu,
                routed * b * s * g_e / t,
                b * s * g_e * dt / t,
                0.0,
            );
            swiglu.expert = true;
            let mut lin2 = ModuleShape::new(
                ModuleKind::MlpLinear2,
                routed * 2.0 * bsh * g_e / t,
                b * s * g_e * dt / t,
                local_experts * h * g_e / t,
            );
            lin2.expert = true;
            layer.extend([lin1, swiglu, lin2]);
        }
    }

    let embedding = ModuleShape::new(ModuleKind::Embedding, bsh / t, 2.0 * bsh * dt / t, v * h / t);
    let head = ModuleShape::new(ModuleKind::Head, 2.0 * bsh * v / t, bsh * dt / t, v * h / t);
    Decomposition {
        embedding,
        layer,
        head,
    }
}

/// Forward FLOPs of one transformer layer on one device for one micro-batch.
pub fn layer_flops_total(arch: &ModelArchitecture, plan: &ParallelPlan) -> Result<f64> {
    Ok(decompose(arch, plan, 2.0)?.layer_flops())
}

/// `(embed + head + L·layer) · m_b · d`.
pub fn model_flops_from_parts(embed: f64, head: f64, layer: f64, layers: u32, micro_batches: u32, d: u32) -> f64 {
    (embed + head + layers as f64 * layer) * micro_batches as f64 * d as f64
}

/// Forward FLOPs of one global batch, counted on the unsharded model.
pub fn model_flops_total(arch: &ModelArchitecture, plan: &ParallelPlan) -> Result<f64> {
    arch.validate()?;
    let m_b = plan.micro_batches()?;
    let full = decompose_shard(arch, &ShardShape::unsharded(arch, plan.m_bs as f64), 2.0);
    Ok(model_flops_from_parts(
        full.embedding.flops_fwd,
        full.head.flops_fwd,
        full.layer_flops(),
        arch.layers,
        m_b,
        plan.d,
    ))
}

/// Retained activation bytes of one layer for one micro-batch on one device.
pub fn activation_bytes_per_layer(arch: &ModelArchitecture, plan: &ParallelPlan, dtype_bytes: f64) -> Result<f64> {
    Ok(decompose(arch, plan, dtype_bytes)?.layer_act_bytes())
}
